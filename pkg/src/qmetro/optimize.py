"""Global-then-local maximisation: Gaussian-process warmstart, then bounded L-BFGS."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern

from .vqc import Bounds, CircuitSpec, objective, value_and_gradient

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, causes):
        super().__init__("all optimisation chains failed: " + "; ".join(causes))
        self.causes = causes


@dataclass(frozen=True)
class BayesConfig:
    budget: int = 50
    init_samples: int = 5
    rng_seed: int = 0
    xi: float = 0.01              # EI exploration margin (in standardised units)
    acq_candidates: int = 2000
    acq_restarts: int = 5

    def __post_init__(self):
        if not (self.budget >= self.init_samples >= 2):
            raise ValueError("need budget >= init_samples >= 2")

    @classmethod
    def for_dim(cls, dim: int, **kw) -> "BayesConfig":
        return cls(budget=10 * dim, **kw)


@dataclass(frozen=True)
class QNConfig:
    memory: int = 10
    grad_tol: float = 1e-8
    max_iters: int = 500
    ftol: float = 1e-12

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass
class OptResult:
    x_opt: np.ndarray
    f_opt: float
    history: list = field(default_factory=list)
    restarts_used: int = 1
    seed: int = 0
    x_start: np.ndarray | None = None
    f_start: float = -np.inf


def expected_improvement(mu, sigma, best, xi=0.01):
    sigma = np.maximum(sigma, 1e-12)
    imp = mu - best - xi
    z = imp / sigma
    return imp * ndtr(z) + sigma * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


def _surrogate(dim: int, seed: int) -> GaussianProcessRegressor:
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(
        length_scale=np.full(dim, 0.3), length_scale_bounds=(1e-2, 1e2), nu=2.5)
    return GaussianProcessRegressor(kernel=kernel, alpha=1e-8, normalize_y=True,
                                    n_restarts_optimizer=0, random_state=seed)


def _next_point(gp, best, dim, rng, cfg: BayesConfig, seen):
    """Maximise EI: random candidates, then shrinking Gaussian local search around the top few."""
    def acq(u):
        mu, sd = gp.predict(u, return_std=True)
        return expected_improvement(mu, sd, best, cfg.xi)

    cand = rng.uniform(size=(cfg.acq_candidates, dim))
    vals = acq(cand)
    top = np.argsort(-vals)[:cfg.acq_restarts]
    starts, start_vals = cand[top], vals[top]
    per = max(1, cfg.acq_candidates // (4 * cfg.acq_restarts))
    for scale in (0.1, 0.03, 0.01, 0.003):
        trial = starts[:, None, :] + scale * rng.standard_normal((len(starts), per, dim))
        trial = np.clip(trial, 0.0, 1.0).reshape(-1, dim)
        tv = acq(trial).reshape(len(starts), per)
        k = np.argmax(tv, axis=1)
        better = tv[np.arange(len(starts)), k] > start_vals
        starts[better] = trial.reshape(len(starts), per, dim)[better, k[better]]
        start_vals[better] = tv[better, k[better]]
    best_u = starts[np.argmax(start_vals)]
    if min(np.linalg.norm(seen - best_u, axis=1)) < 1e-6:
        best_u = rng.uniform(size=dim)   # acquisition collapsed onto a sampled point
    return best_u


def bayes_warmstart(f, bounds: Bounds, cfg: BayesConfig):
    """Best point after exactly ``cfg.budget`` evaluations of ``f`` (maximised).

    Returns (x_best, f_best, evaluations) where evaluations lists every (x, f).
    """
    dim = len(bounds)
    rng = np.random.default_rng(cfg.rng_seed)
    U, Y, evals = [], [], []

    def call(u):
        x = bounds.from_unit(u)
        try:
            y = float(f(x))
            if not np.isfinite(y):
                raise FloatingPointError("non-finite objective")
        except Exception as exc:  # a failed point must not end the search
            log.warning("objective failed at %s: %s", x, exc)
            y = -np.inf
        U.append(u)
        Y.append(y)
        evals.append((x, y))

    for _ in range(cfg.init_samples):
        call(rng.uniform(size=dim))
    gp = _surrogate(dim, int(rng.integers(2**31)))
    while len(Y) < cfg.budget:
        ok = np.isfinite(Y)
        if ok.sum() < 2:
            call(rng.uniform(size=dim))
            continue
        Ua, Ya = np.array(U)[ok], np.array(Y)[ok]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gp.fit(Ua, Ya)
        call(_next_point(gp, Ya.max(), dim, rng, cfg, np.array(U)))
    k = int(np.argmax(Y))
    if not np.isfinite(Y[k]):
        raise RuntimeError("every warmstart evaluation failed")
    return evals[k][0], Y[k], evals


class _Abort(Exception):
    pass


def bounded_quasi_newton(f_and_grad, x0, bounds: Bounds, cfg: QNConfig = QNConfig()) -> OptResult:
    """Maximise with L-BFGS-B on -f; stops on non-finite values with the last good iterate."""
    x0 = np.asarray(x0, dtype=float)
    if not bounds.contains(x0):
        raise ValueError("x0 outside bounds")
    last = {"x": x0.copy(), "f": -np.inf}
    history = []

    def fun(x):
        x = bounds.clip(x)
        val, g = f_and_grad(x)
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            raise _Abort
        if val > last["f"]:
            last["x"], last["f"] = x.copy(), float(val)
        return -val, -np.asarray(g, dtype=float)

    def callback(xk):
        history.append((len(history) + 1, last["f"]))

    f0 = None
    try:
        f0 = float(f_and_grad(x0)[0])
        history.append((0, f0))
        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(bounds.lower, bounds.upper)), callback=callback,
                       options={"maxcor": cfg.memory, "gtol": cfg.grad_tol,
                                "maxiter": cfg.max_iters, "ftol": cfg.ftol})
        x, fx = bounds.clip(res.x), -float(res.fun)
        if last["f"] > fx:
            x, fx = last["x"], last["f"]
    except _Abort:
        x, fx = last["x"], last["f"]
    return OptResult(x_opt=x, f_opt=fx, history=history, x_start=x0,
                     f_start=f0 if f0 is not None else -np.inf)


def chain_seeds(seed: int, restarts: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(restarts)]


def optimize_pipeline(spec: CircuitSpec, restarts: int = 8, seed: int = 0,
                      bayes: BayesConfig | None = None, qn: QNConfig = QNConfig(),
                      extra_starts=()) -> OptResult:
    """Best of ``restarts`` (warmstart -> L-BFGS-B) chains, plus one L-BFGS-B chain per extra start."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    bounds = spec.bounds

    def f(x):
        assert bounds.contains(x, 1e-12), "infeasible evaluation"
        return objective(spec, x)

    def fg(x):
        assert bounds.contains(x, 1e-12), "infeasible evaluation"
        return value_and_gradient(spec, x)

    results, causes = [], []
    for i, sub in enumerate(chain_seeds(seed, restarts)):
        cfg = bayes if bayes is not None else BayesConfig.for_dim(spec.n_params)
        cfg = BayesConfig(cfg.budget, min(cfg.init_samples, cfg.budget), sub, cfg.xi,
                          cfg.acq_candidates, cfg.acq_restarts)
        try:
            x0, _, _ = bayes_warmstart(f, bounds, cfg)
            results.append((i, bounded_quasi_newton(fg, x0, bounds, qn)))
        except Exception as exc:
            causes.append(f"chain {i}: {exc}")
    for k, x0 in enumerate(extra_starts):
        try:
            results.append((restarts + k, bounded_quasi_newton(fg, bounds.clip(x0), bounds, qn)))
        except Exception as exc:
            causes.append(f"chain {restarts + k}: {exc}")
    if not results:
        raise PipelineError(causes)
    # ties broken by the lower chain index
    idx, best = max(results, key=lambda r: (r[1].f_opt, -r[0]))
    best.restarts_used = len(results)
    best.seed = seed
    return best
