"""Run a sweep config and print the per-layer table and detected thresholds.

    python3 scripts/thresholds.py scripts/configs/oat_thresholds.toml --out runs/oat
"""
import argparse
from pathlib import Path

from qmetro.sweep import ExperimentConfig, analyse, emit_outputs, run_sweep


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1)
    a = p.parse_args()

    cfg = ExperimentConfig.load(a.config)
    out = Path(a.out or cfg.out or Path("runs") / Path(a.config).stem)
    rows, errors, states = run_sweep(cfg, out, threads=a.threads)
    families, fits = analyse(rows, cfg)
    emit_outputs(out, rows, cfg, families, fits, states, errors)

    print(f"{'N':>3} {'n':>2} {'gamma/chi':>10} {'F_Q/N^2':>8} {'GHZ':>6} {'TF':>6} {'CES/pi':>7}")
    for r in rows:
        print(f"{r.N:>3} {r.n:>2} {r.gamma_over_chi:>10.4g} {r.qfi_over_N2:>8.4f} "
              f"{r.ghz_fidelity:>6.3f} {r.tf_fidelity:>6.3f} {r.ces_over_pi:>7.4f}")
    for fam in families:
        print(f"alpha={fam['alpha']} N={fam['N']}: gamma1={fam.get('gamma1')} "
              f"gamma2={fam.get('gamma2')}")
    if errors:
        print(f"{len(errors)} failed points, see {out / 'errors.csv'}")


if __name__ == "__main__":
    main()
