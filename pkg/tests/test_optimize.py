import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from qmetro.lindblad import IntegratorConfig, NoiseSpec
from qmetro.optimize import (BayesConfig, PipelineError, bayes_warmstart, bounded_quasi_newton,
                             chain_seeds, expected_improvement, optimize_pipeline)
from qmetro.spin import SpinSystem
from qmetro.vqc import Bounds, CircuitSpec


def _box(lo, hi):
    return Bounds(np.asarray(lo, float), np.asarray(hi, float))


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(0.01, 3), st.floats(-3, 3))
def test_expected_improvement_closed_form(mu, sd, best):
    # EI = E[max(Y - best - xi, 0)] for Y ~ N(mu, sd^2)
    xi = 0.01
    z = (mu - best - xi) / sd
    ref = (mu - best - xi) * norm.cdf(z) + sd * norm.pdf(z)
    assert np.isclose(expected_improvement(np.array([mu]), np.array([sd]), best, xi)[0], ref, atol=1e-12)


def test_warmstart_finds_quadratic_peak():
    c = np.array([0.2, 0.7, 0.55])
    box = _box([0, 0, 0], [1, 1, 1])
    calls = []

    def f(x):
        calls.append(x)
        return -np.sum((x - c) ** 2)

    x, fx, evals = bayes_warmstart(f, box, BayesConfig(budget=50, rng_seed=3))
    assert len(calls) == 50 == len(evals)
    assert fx >= -0.05 * 3
    assert np.isclose(fx, f(x))


def test_warmstart_is_deterministic():
    f = lambda x: np.sin(3 * x[0]) * np.cos(2 * x[1])
    box = _box([0, 0], [2, 2])
    a = bayes_warmstart(f, box, BayesConfig(budget=15, rng_seed=9))[2]
    b = bayes_warmstart(f, box, BayesConfig(budget=15, rng_seed=9))[2]
    assert all(np.array_equal(p[0], q[0]) and p[1] == q[1] for p, q in zip(a, b))


def test_budget_equal_to_init_returns_best_sample():
    f = lambda x: -abs(x[0] - 0.4)
    x, fx, evals = bayes_warmstart(f, _box([0], [1]), BayesConfig(budget=6, init_samples=6, rng_seed=1))
    assert len(evals) == 6
    assert fx == max(v for _, v in evals)


def test_failed_points_are_skipped():
    def f(x):
        if x[0] < 0.5:
            raise RuntimeError("boom")
        return x[0]

    x, fx, evals = bayes_warmstart(f, _box([0], [1]), BayesConfig(budget=12, rng_seed=0))
    assert x[0] >= 0.5 and np.isfinite(fx)
    assert any(v == -np.inf for _, v in evals)


def test_quasi_newton_interior_quadratic():
    fg = lambda x: (-(x[0] - 0.3) ** 2, np.array([-2 * (x[0] - 0.3)]))
    r = bounded_quasi_newton(fg, [0.9], _box([0], [1]))
    assert abs(r.x_opt[0] - 0.3) < 1e-6


def test_quasi_newton_active_bound():
    r = bounded_quasi_newton(lambda x: (x[0], np.array([1.0])), [0.2], _box([0], [1]))
    assert r.x_opt[0] == 1.0


def test_quasi_newton_rosenbrock():
    def fg(x):
        a, b = x
        f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
        return -f, -g

    r = bounded_quasi_newton(fg, [-1.2, 1.0], _box([-2, -2], [2, 2]))
    assert np.allclose(r.x_opt, [1, 1], atol=1e-4)
    fs = [f for _, f in r.history]
    assert all(b >= a - 1e-12 for a, b in zip(fs, fs[1:]))


def test_quasi_newton_aborts_on_nan():
    def fg(x):
        if x[0] > 0.6:
            return np.nan, np.array([np.nan])
        return x[0], np.array([1.0])

    r = bounded_quasi_newton(fg, [0.1], _box([0], [1]))
    assert np.isfinite(r.f_opt) and 0.1 <= r.x_opt[0] <= 0.6
    with pytest.raises(ValueError):
        bounded_quasi_newton(fg, [2.0], _box([0], [1]))


def test_chain_seeds_are_stable_and_distinct():
    assert chain_seeds(4, 5) == chain_seeds(4, 5)
    assert len(set(chain_seeds(4, 5))) == 5
    assert chain_seeds(4, 2) == chain_seeds(4, 5)[:2]


def _small_spec(gamma=0.05):
    return CircuitSpec(SpinSystem(4), "oat", 1, NoiseSpec.uniform(gamma), "perm",
                       IntegratorConfig(method="expm"))


def test_pipeline_best_of_restarts_is_monotone():
    spec = _small_spec()
    cfg = BayesConfig(budget=12)
    one = optimize_pipeline(spec, 1, seed=5, bayes=cfg)
    three = optimize_pipeline(spec, 3, seed=5, bayes=cfg)
    assert three.f_opt >= one.f_opt
    assert three.restarts_used == 3 and spec.bounds.contains(three.x_opt)
    again = optimize_pipeline(spec, 3, seed=5, bayes=cfg)
    assert np.array_equal(again.x_opt, three.x_opt)


def test_pipeline_extra_start_and_failure(monkeypatch):
    spec = _small_spec()
    cfg = BayesConfig(budget=10)
    base = optimize_pipeline(spec, 1, seed=1, bayes=cfg)
    cont = optimize_pipeline(spec, 1, seed=1, bayes=cfg, extra_starts=[base.x_opt])
    assert cont.f_opt >= base.f_opt and cont.restarts_used == 2

    def broken(spec, x):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr("qmetro.optimize.value_and_gradient", broken)
    with pytest.raises(PipelineError) as err:
        optimize_pipeline(spec, 2, seed=1, bayes=cfg)
    assert len(err.value.causes) == 2 and "solver blew up" in err.value.causes[0]
