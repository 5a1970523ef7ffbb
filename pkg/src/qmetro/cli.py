"""Command line: ``qmetro run | fit | husimi``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .metrology import husimi
from .sweep import (ConfigError, ExperimentConfig, FitError, analyse, emit_outputs, fit_rows,
                    load_state, read_rows, run_sweep)


def _grid(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 64x128, got {text!r}") from None


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = Path(args.out or cfg.out or "results")
    cfg = dataclasses.replace(cfg, out=str(out))
    rows, errors, states = run_sweep(cfg, out, threads=args.threads)
    families, fits = analyse(rows, cfg) if rows else ([], [])
    emit_outputs(out, rows, cfg, families, fits, states, errors)
    print(f"{len(rows)} rows written to {out / 'results.csv'}"
          + (f"; {len(errors)} failed points in errors.csv" if errors else ""))
    return 0


def cmd_fit(args) -> int:
    rows = read_rows(args.input)
    fit = fit_rows(rows, args.column, args.model)
    print(json.dumps(dataclasses.asdict(fit), indent=2))
    return 0


def cmd_husimi(args) -> int:
    grid = husimi(load_state(args.state), args.grid)
    if args.out:
        grid.save(args.out)
        print(f"integral {grid.integral():.9f}; grid written to {args.out}")
    else:
        n_t, n_p = grid.shape
        sys.stdout.write(f"{n_t} {n_p}\n")
        for row in grid.values:
            sys.stdout.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmetro", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="optimise a sweep described by a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fit", help="fit a scaling law in N to one results column")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--model", choices=("power", "logform"), required=True)
    f.add_argument("--column", required=True,
                   help="column name, or a product such as gamma_over_chi*ces_over_pi")
    f.set_defaults(func=cmd_fit)

    h = sub.add_parser("husimi", help="Husimi-like distribution of a saved state")
    h.add_argument("--state", required=True, help=".npz written by a husimi-enabled run")
    h.add_argument("--grid", type=_grid, default=(64, 128))
    h.add_argument("--out")
    h.set_defaults(func=cmd_husimi)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FitError, KeyError, ValueError, OSError) as exc:
        print(f"qmetro: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
