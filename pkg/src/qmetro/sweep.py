"""Seeded parameter sweeps, threshold detection, scaling fits and output files."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .lindblad import IntegratorConfig, NoiseSpec
from .metrology import (collectivity, diagnostics, ghz_fidelity_max, husimi, qfi, squeezing,
                        tf_fidelity)
from .optimize import BayesConfig, QNConfig, bounded_quasi_newton, optimize_pipeline
from .perm import BlockState
from .spin import SpinSystem
from .vqc import KIND_ALIASES, CircuitSpec, check_state, cumulative, run_circuit, value_and_gradient

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class FitError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    kind: str = "ising"
    alpha: list = field(default_factory=lambda: [0.0])
    N: list = field(default_factory=lambda: [8])
    layers: list = field(default_factory=lambda: [1])
    gamma_min: float = 1e-2
    gamma_max: float = 1e1
    gamma_count: int = 12
    solver: str = "auto"               # auto | dense | perm
    coupling_norm: str = "unit-mean"
    rate_scale: float = 0.25
    method: str = "auto"               # auto | RK45 | DOP853 | expm
    rtol: float = 1e-8
    atol: float = 1e-10
    restarts: int = 8
    budget: int = 0                    # 0 -> 10 (2n + 3)
    init_samples: int = 5
    seed: int = 0
    continuation: bool = True
    cfi: bool = True
    cfi_axis: str = "y"
    husimi: bool = False
    husimi_grid: list = field(default_factory=lambda: [64, 128])
    fits: list = field(default_factory=list)   # [{column = "...", model = "power"}]
    out: str = ""

    def __post_init__(self):
        if KIND_ALIASES.get(str(self.kind).lower()) is None:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        for name in ("alpha", "N", "layers"):
            val = getattr(self, name)
            if not isinstance(val, list):
                setattr(self, name, [val])
            if not getattr(self, name):
                raise ConfigError(f"{name} grid is empty")
        self.alpha = [float(a) for a in self.alpha]
        self.N = [int(n) for n in self.N]
        self.layers = [int(n) for n in self.layers]
        if not (0 < self.gamma_min <= self.gamma_max) or self.gamma_count < 1:
            raise ConfigError("gamma grid needs 0 < gamma_min <= gamma_max and gamma_count >= 1")
        if self.solver not in ("auto", "dense", "perm"):
            raise ConfigError(f"solver must be auto, dense or perm, got {self.solver!r}")
        if self.solver == "perm" and any(a != 0 for a in self.alpha):
            raise ConfigError("perm solver requires alpha = 0")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        for f in self.fits:
            if set(f) - {"column", "model"} or f.get("model") not in ("power", "logform"):
                raise ConfigError(f"bad fit entry {f!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def echo(self) -> dict:
        return dataclasses.asdict(self)

    def gammas(self) -> np.ndarray:
        if self.gamma_count == 1:
            return np.array([self.gamma_min])
        return np.geomspace(self.gamma_min, self.gamma_max, self.gamma_count)

    def points(self):
        """Grid points in deterministic order (alpha, N, n, gamma)."""
        out = []
        for a in self.alpha:
            for N in self.N:
                for n in self.layers:
                    for g in self.gammas():
                        out.append((float(g), a, N, n))
        return out

    def circuit(self, gamma, alpha, N, n) -> CircuitSpec:
        solver = self.solver
        if solver == "auto":
            solver = "perm" if alpha == 0 else "dense"
        method = self.method
        if method == "auto":
            method = "expm" if solver == "perm" else "RK45"
        return CircuitSpec(SpinSystem(N, alpha), self.kind, n, NoiseSpec.uniform(gamma), solver,
                           IntegratorConfig(self.rtol, self.atol, np.inf, method),
                           coupling_norm=self.coupling_norm, rate_scale=self.rate_scale)


def point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


BASE_COLUMNS = ["gamma_over_chi", "alpha", "N", "n", "qfi_over_N2", "cfi_over_N", "ces_over_pi",
                "cra_over_pi", "ghz_fidelity", "tf_fidelity", "squeezing_inv", "collectivity"]


@dataclass
class SweepRow:
    gamma_over_chi: float
    alpha: float
    N: int
    n: int
    qfi_over_N2: float
    cfi_over_N: float
    ces_over_pi: float
    cra_over_pi: float
    ghz_fidelity: float
    tf_fidelity: float
    squeezing_inv: float
    collectivity: float
    x_opt: list
    seed: int
    wall_time: float = 0.0

    def check(self):
        if not (self.qfi_over_N2 <= 1 + 1e-6 and self.qfi_over_N2 >= -1e-9):
            raise AssertionError(f"F_Q/N^2 = {self.qfi_over_N2} outside [0, 1]")
        if not math.isnan(self.cfi_over_N):
            if self.cfi_over_N * self.N > self.qfi_over_N2 * self.N**2 + 1e-6:
                raise AssertionError("cfi exceeds qfi")
        for name in ("ghz_fidelity", "tf_fidelity"):
            v = getattr(self, name)
            if not math.isnan(v) and not 0 <= v <= 1:
                raise AssertionError(f"{name} = {v} outside [0, 1]")
        if not 0 <= self.collectivity <= 1 + 1e-9:
            raise AssertionError("collectivity outside [0, 1]")


def evaluate_point(cfg: ExperimentConfig, gamma, alpha, N, n, seed, extra_starts=()):
    """Optimise one grid point; returns (row, final state)."""
    t0 = time.perf_counter()
    spec = cfg.circuit(gamma, alpha, N, n)
    bayes = BayesConfig(budget=cfg.budget or 10 * spec.n_params,
                        init_samples=cfg.init_samples)
    res = optimize_pipeline(spec, cfg.restarts, seed, bayes, QNConfig(), extra_starts)
    return _finish_point(cfg, spec, (gamma, alpha, N, n), res.x_opt, seed, t0)


def continue_point(cfg: ExperimentConfig, gamma, alpha, N, n, seed, x_start):
    """One L-BFGS-B chain from ``x_start`` (the continuation chain); returns (row, state)."""
    t0 = time.perf_counter()
    spec = cfg.circuit(gamma, alpha, N, n)
    res = bounded_quasi_newton(lambda x: value_and_gradient(spec, x), spec.bounds.clip(x_start),
                               spec.bounds, QNConfig())
    return _finish_point(cfg, spec, (gamma, alpha, N, n), res.x_opt, seed, t0)


def _finish_point(cfg, spec, point, x_opt, seed, t0):
    gamma, alpha, N, n = point
    rho = run_circuit(spec, x_opt)
    check_state(rho)
    d = diagnostics(rho, cfg.cfi_axis) if cfg.cfi else None
    if d is None:
        qf, cf = qfi(rho), float("nan")
        ghz = ghz_fidelity_max(rho)[0]
        tf = tf_fidelity(rho) if N % 2 == 0 else float("nan")
        sq, coll = squeezing(rho), collectivity(rho)
    else:
        qf, cf, ghz, tf, sq, coll = d.qfi, d.cfi, d.ghz_fidelity, d.tf_fidelity, d.squeezing_inv, d.collectivity
    ces, cra = cumulative(x_opt)
    row = SweepRow(gamma, alpha, N, n, qf / N**2, cf / N, ces / np.pi, cra / np.pi, ghz, tf, sq,
                   coll, [float(v) for v in x_opt], seed, time.perf_counter() - t0)
    row.check()
    return row, rho


def _point_task(args):
    cfg_dict, idx, point, start = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        seed = point_seed(cfg.seed, idx)
        if start is None:
            row, rho = evaluate_point(cfg, *point, seed)
        else:
            row, rho = continue_point(cfg, *point, seed, start)
        return idx, row, rho, None
    except Exception as exc:  # recorded in the errors sidecar
        return idx, None, None, f"{type(exc).__name__}: {exc}"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


class RowWriter:
    """Append-only CSV; each row flushed to disk as soon as it is final."""

    def __init__(self, path, max_layers: int):
        self.path = Path(path)
        self.n_x = 2 * max_layers + 3
        self.header = BASE_COLUMNS + [f"x{i}" for i in range(self.n_x)] + ["seed"]
        with open(self.path, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(self.header) + "\n")

    def append(self, row: SweepRow):
        vals = [_fmt(getattr(row, c)) for c in BASE_COLUMNS]
        xs = [_fmt(v) for v in row.x_opt] + [""] * (self.n_x - len(row.x_opt))
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(",".join(vals + xs + [str(row.seed)]) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            if v == "":
                continue
            conv[k] = int(v) if k in ("N", "n", "seed") else float(v)
        out.append(conv)
    return out


def run_sweep(cfg: ExperimentConfig, out_dir, threads: int = 1):
    """Optimise every grid point; returns (rows, errors, states).

    Pass 1 runs the seeded multi-start chains for every point (in parallel when
    threads > 1).  With continuation on, pass 2 walks each (alpha, N, n) family
    in increasing gamma and runs one more L-BFGS-B chain started from the previous
    point's optimum, keeping it when it beats pass 1; rows are written to results.csv in grid order as each
    point is finalised.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points = cfg.points()
    cfg_dict = cfg.echo()
    writer = RowWriter(out_dir / "results.csv", max(cfg.layers))
    errors = {}
    first = {}
    tasks = [(cfg_dict, i, p, None) for i, p in enumerate(points)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_point_task, tasks))
    else:
        results = map(_point_task, tasks)
    for idx, row, rho, err in results:
        if err is not None:
            errors[idx] = err
            log.warning("point %s failed: %s", points[idx], err)
        else:
            first[idx] = (row, rho)
            if not cfg.continuation:
                writer.append(row)

    final = dict(first)
    if cfg.continuation:
        prev_x, prev_family = None, None
        for idx, p in enumerate(points):
            family = p[1:]
            if family != prev_family:
                prev_x, prev_family = None, family
            if idx not in first:
                prev_x = None
                continue
            row, rho = first[idx]
            if prev_x is not None:
                _, row2, rho2, err = _point_task((cfg_dict, idx, p, prev_x))
                if err is None and row2.qfi_over_N2 > row.qfi_over_N2:
                    row2.wall_time += row.wall_time
                    row, rho = row2, rho2
                elif err is not None:
                    log.warning("continuation at %s failed: %s", p, err)
                final[idx] = (row, rho)
            writer.append(row)
            prev_x = row.x_opt

    if errors:
        with open(out_dir / "errors.csv", "w", encoding="utf-8") as fh:
            fh.write("index,gamma_over_chi,alpha,N,n,error\n")
            for idx, msg in sorted(errors.items()):
                g, a, N, n = points[idx]
                fh.write(f"{idx},{_fmt(g)},{_fmt(a)},{N},{n},\"{msg.replace(chr(34), chr(39))}\"\n")
    rows = [final[i][0] for i in sorted(final)]
    states = [final[i][1] for i in sorted(final)]
    return rows, errors, states


# --- analysis -------------------------------------------------------------------

def _as_dict(r):
    return dataclasses.asdict(r) if isinstance(r, SweepRow) else r


def _cross(g_a, v_a, g_b, v_b, level):
    """log-linear interpolation of the gamma at which v crosses ``level``."""
    if v_a == v_b:
        return float(g_b)
    t = (level - v_a) / (v_b - v_a)
    return float(np.exp(np.log(g_a) + t * (np.log(g_b) - np.log(g_a))))


def _family(rows, n):
    sel = sorted((r for r in rows if r["n"] == n), key=lambda r: r["gamma_over_chi"])
    return sel


def detect_thresholds(rows) -> dict:
    """gamma1 (1-layer GHZ fidelity below 0.5), gamma2 (1-layer CES reaches 0), mir.

    Fields whose criterion is never crossed inside the grid are omitted.
    """
    rows = [_as_dict(r) for r in rows]
    out = {}
    one = _family(rows, 1)
    if not one:
        raise ValueError("threshold detection needs 1-layer rows")
    for prev, cur in zip(one, one[1:]):
        if prev["ghz_fidelity"] >= 0.5 > cur["ghz_fidelity"]:
            out["gamma1"] = _cross(prev["gamma_over_chi"], prev["ghz_fidelity"],
                                   cur["gamma_over_chi"], cur["ghz_fidelity"], 0.5)
            break
    tol = 1e-3
    for i, (prev, cur) in enumerate(zip(one, one[1:])):
        if prev["ces_over_pi"] > tol >= cur["ces_over_pi"]:
            g_lo, g_hi = prev["gamma_over_chi"], cur["gamma_over_chi"]
            # the upper point sits at zero, so interpolating to zero would just return it;
            # extend the trend of the last two nonzero points instead, kept inside the bracket
            before = one[i - 1] if i > 0 else None
            if before is not None and before["ces_over_pi"] > prev["ces_over_pi"]:
                g = _cross(before["gamma_over_chi"], before["ces_over_pi"], g_lo, prev["ces_over_pi"], 0.0)
            else:
                g = _cross(g_lo, prev["ces_over_pi"], g_hi, cur["ces_over_pi"], 0.0)
            out["gamma2"] = min(max(g, g_lo), g_hi)
            break
    base = {r["gamma_over_chi"]: r["qfi_over_N2"] for r in one}
    mir = None
    for n in sorted({r["n"] for r in rows} - {1}):
        pts = [(r["gamma_over_chi"], r["qfi_over_N2"] / base[r["gamma_over_chi"]] - 1.02)
               for r in _family(rows, n) if r["gamma_over_chi"] in base and base[r["gamma_over_chi"]] > 0]
        inside = [i for i, (_, d) in enumerate(pts) if d > 0]
        if not inside:
            continue
        i0, i1 = inside[0], inside[-1]
        lo = pts[i0][0] if i0 == 0 else _cross(pts[i0 - 1][0], pts[i0 - 1][1], pts[i0][0], pts[i0][1], 0.0)
        hi = pts[i1][0] if i1 == len(pts) - 1 else _cross(pts[i1][0], pts[i1][1], pts[i1 + 1][0], pts[i1 + 1][1], 0.0)
        mir = (lo, hi) if mir is None else (min(mir[0], lo), max(mir[1], hi))
    if mir is not None:
        out["mir"] = mir
    return out


@dataclass
class ScalingFit:
    model: str
    a: float
    b: float
    a_err: float
    b_err: float
    residual: float
    points: int

    def predict(self, N):
        N = np.asarray(N, dtype=float)
        if self.model == "power":
            return self.a * N ** (-self.b)
        return np.log(self.a * N) / (self.b * N)


def _logform(p, N):
    a, b = p
    return np.log(a * N) / (b * N)


def _logform_jac(p, N):
    a, b = p
    return np.stack([1.0 / (a * b * N), -np.log(a * N) / (b**2 * N)], axis=1)


def fit_scaling(points, model: str = "power") -> ScalingFit:
    """Least-squares fit of y(N) to a N^-b (log-log regression) or log(a N)/(b N) (Gauss-Newton)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 4:
        raise FitError("scaling fit needs at least 4 (N, y) points")
    N, y = pts[:, 0], pts[:, 1]
    if np.any(y <= 0) or np.any(N <= 0):
        raise FitError("scaling fit needs positive N and y")
    dof = len(N) - 2
    if model == "power":
        X = np.stack([np.ones_like(N), -np.log(N)], axis=1)
        coef, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
        if np.linalg.matrix_rank(X) < 2:
            raise FitError("singular design: need at least two distinct N")
        res = np.log(y) - X @ coef
        cov = (res @ res / dof) * np.linalg.inv(X.T @ X)
        a = float(np.exp(coef[0]))
        se = np.sqrt(np.diag(cov))
        return ScalingFit("power", a, float(coef[1]), a * float(se[0]), float(se[1]),
                          float(np.linalg.norm(y - a * N ** -coef[1])), len(N))
    if model != "logform":
        raise FitError(f"unknown model {model!r}")
    # coarse grid start restricted to a N > 1 over the data so the log stays positive
    best, p = np.inf, None
    for a in np.geomspace(1e-2, 1e2, 81):
        if np.any(a * N <= 0):
            continue
        for b in np.geomspace(1e-3, 1e2, 101):
            r = np.sum((_logform((a, b), N) - y) ** 2)
            if r < best:
                best, p = r, np.array([a, b])
    for _ in range(200):
        r = _logform(p, N) - y
        J = _logform_jac(p, N)
        try:
            step = np.linalg.solve(J.T @ J, -J.T @ r)
        except np.linalg.LinAlgError:
            raise FitError(f"singular Gauss-Newton system at a={p[0]:.4g}, b={p[1]:.4g}") from None
        t, rss = 1.0, r @ r
        while t > 1e-10:
            q = p + t * step
            if q[0] > 0 and q[1] > 0:
                rq = _logform(q, N) - y
                if rq @ rq <= rss:
                    break
            t /= 2
        else:
            break
        p = q
        if np.max(np.abs(t * step) / np.abs(p)) < 1e-14:
            break
    r = _logform(p, N) - y
    J = _logform_jac(p, N)
    if not np.all(np.isfinite(r)):
        raise FitError("Gauss-Newton diverged")
    cov = (r @ r / dof) * np.linalg.pinv(J.T @ J)
    se = np.sqrt(np.abs(np.diag(cov)))
    return ScalingFit("logform", float(p[0]), float(p[1]), float(se[0]), float(se[1]),
                      float(np.linalg.norm(r)), len(N))


def column_values(row: dict, column: str) -> float:
    """Column lookup allowing products such as ``gamma_over_chi*ces_over_pi``."""
    val = 1.0
    for part in column.split("*"):
        part = part.strip()
        if part not in row:
            raise KeyError(f"no column {part!r}")
        val *= row[part]
    return val


def fit_rows(rows, column: str, model: str) -> ScalingFit:
    rows = [_as_dict(r) for r in rows]
    return fit_scaling([(r["N"], column_values(r, column)) for r in rows], model)


def _json_clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_json_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_clean(x) for k, x in v.items()}
    return v


def analyse(rows, cfg: ExperimentConfig) -> tuple[list, list]:
    """Per-family thresholds and the configured scaling fits."""
    dicts = [_as_dict(r) for r in rows]
    families = []
    for a in cfg.alpha:
        for N in cfg.N:
            fam = [r for r in dicts if r["alpha"] == a and r["N"] == N]
            if any(r["n"] == 1 for r in fam):
                families.append({"alpha": a, "N": N, **detect_thresholds(fam)})
    fits = []
    for spec in cfg.fits:
        for a in cfg.alpha:
            for n in cfg.layers:
                sel = [r for r in dicts if r["alpha"] == a and r["n"] == n]
                for g in sorted({r["gamma_over_chi"] for r in sel}):
                    pts = [r for r in sel if r["gamma_over_chi"] == g]
                    entry = {"column": spec["column"], "model": spec["model"], "alpha": a,
                             "n": n, "gamma_over_chi": g}
                    try:
                        entry.update(dataclasses.asdict(fit_rows(pts, spec["column"], spec["model"])))
                    except (FitError, KeyError) as exc:
                        entry["error"] = str(exc)
                    fits.append(entry)
    return families, fits


def emit_outputs(out_dir, rows, cfg: ExperimentConfig, families, fits, states=(), errors=None):
    """analysis.json (plus Husimi grids when enabled); results.csv is written by run_sweep."""
    out_dir = Path(out_dir)
    top = families[0] if families else {}
    analysis = {
        "gamma1": top.get("gamma1"),
        "gamma2": top.get("gamma2"),
        "mir": top.get("mir"),
        "families": families,
        "fits": fits,
        "config_echo": cfg.echo(),
        "seed": cfg.seed,
        "tool_version": __version__,
        "wall_times": [r.wall_time for r in rows],
        "failed_points": len(errors or {}),
    }
    with open(out_dir / "analysis.json", "w", encoding="utf-8") as fh:
        json.dump(_json_clean(analysis), fh, indent=2)
    written = []
    if cfg.husimi:
        for i, (row, rho) in enumerate(zip(rows, states)):
            grid = husimi(rho, tuple(cfg.husimi_grid))
            path = out_dir / f"husimi_{i:03d}.txt"
            grid.save(path)
            save_state(out_dir / f"state_{i:03d}.npz", rho)
            written.append(path)
    return written


def save_state(path, rho):
    if isinstance(rho, BlockState):
        np.savez(path, N=rho.N, **{f"block_{k}": b for k, b in enumerate(rho.blocks)})
    else:
        np.savez(path, rho=np.asarray(rho))


def load_state(path):
    data = np.load(path)
    if "rho" in data:
        return data["rho"]
    N = int(data["N"])
    blocks = tuple(data[f"block_{k}"] for k in range(N // 2 + 1))
    return BlockState(N, blocks)
