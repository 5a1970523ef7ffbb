import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmetro import sweep
from qmetro.sweep import (BASE_COLUMNS, ConfigError, ExperimentConfig, FitError, ScalingFit, analyse,
                          detect_thresholds, emit_outputs, fit_scaling, read_rows, run_sweep)

NS = np.array([8, 10, 12, 14, 16], dtype=float)


def _row(g, n=1, ghz=0.9, ces=0.3, qfi=0.5):
    return {"gamma_over_chi": g, "n": n, "ghz_fidelity": ghz, "ces_over_pi": ces, "qfi_over_N2": qfi}


def test_power_fit_recovers_generator():
    fit = fit_scaling(np.c_[NS, 0.70 * NS ** -0.59], "power")
    assert abs(fit.a - 0.70) < 1e-6 and abs(fit.b - 0.59) < 1e-6
    assert fit.residual < 1e-12 and fit.points == 5
    assert np.allclose(fit.predict(NS), 0.70 * NS ** -0.59)


def test_logform_fit_recovers_generator():
    y = np.log(0.71 * NS) / (0.37 * NS)
    fit = fit_scaling(np.c_[NS, y], "logform")
    assert abs(fit.a - 0.71) < 1e-6 and abs(fit.b - 0.37) < 1e-6
    assert math.isfinite(fit.a_err) and math.isfinite(fit.b_err)


@settings(max_examples=25)
@given(st.floats(0.1, 5), st.floats(0.1, 1.5), st.floats(1e-3, 1e3))
def test_power_exponent_invariant_under_rescaling(a, b, c):
    y = a * NS ** -b * (1 + 0.05 * np.sin(NS))
    f1 = fit_scaling(np.c_[NS, y], "power")
    f2 = fit_scaling(np.c_[NS, c * y], "power")
    assert abs(f1.b - f2.b) < 1e-9
    assert np.isclose(f2.a, c * f1.a, rtol=1e-9)


def test_fit_errors():
    with pytest.raises(FitError):
        fit_scaling([[8, 1], [10, 1], [12, 1]], "power")
    with pytest.raises(FitError):
        fit_scaling([[8, 1], [8, 0.9], [8, 0.8], [8, 0.7]], "power")
    with pytest.raises(FitError):
        fit_scaling(np.c_[NS, -NS], "power")
    with pytest.raises(FitError):
        fit_scaling(np.c_[NS, NS], "cubic")


def test_thresholds_from_synthetic_curves():
    gs = np.geomspace(0.01, 100, 12)
    ghz = np.where(gs < 0.3, 0.9, 0.1)
    ces = np.clip(0.5 - 0.05 * gs, 0, None)
    rows = [_row(g, ghz=f, ces=c) for g, f, c in zip(gs, ghz, ces)]
    out = detect_thresholds(rows)
    i = np.searchsorted(gs, 0.3)
    assert gs[i - 1] < out["gamma1"] < gs[i]
    j = np.argmax(ces <= 1e-3)
    assert gs[j - 1] < out["gamma2"] <= gs[j]
    assert "mir" not in out


def test_threshold_interpolation_is_log_linear():
    rows = [_row(0.1, ghz=0.7), _row(1.0, ghz=0.3)]
    assert np.isclose(detect_thresholds(rows)["gamma1"], 10 ** -0.5)


def test_gamma2_extends_the_ces_trend():
    # CES falls linearly in log gamma and reaches zero at 10 between grid points 4.64 and 21.5
    gs = np.geomspace(0.01, 100, 7)
    ces = np.clip(0.1 * np.log(10 / gs), 0, None)
    g2 = detect_thresholds([_row(g, ces=c) for g, c in zip(gs, ces)])["gamma2"]
    assert np.isclose(g2, 10.0)


def test_absent_thresholds_are_not_invented():
    rows = [_row(g, ghz=0.9) for g in np.geomspace(0.01, 10, 6)]
    out = detect_thresholds(rows)
    assert "gamma1" not in out and "gamma2" not in out
    with pytest.raises(ValueError):
        detect_thresholds([_row(0.1, n=3)])


def test_mir_from_layer_comparison():
    gs = [0.01, 0.03, 0.1, 0.3, 1.0]
    one = [_row(g, qfi=0.5) for g in gs]
    three = [_row(g, n=3, qfi=q) for g, q in zip(gs, [0.6, 0.6, 0.6, 0.5, 0.5])]
    lo, hi = detect_thresholds(one + three)["mir"]
    assert lo == 0.01 and 0.1 < hi < 0.3


@settings(max_examples=20)
@given(st.permutations(range(10)))
def test_thresholds_ignore_row_order(perm):
    gs = np.geomspace(0.01, 30, 10)
    rows = [_row(g, ghz=1 - g / 3, ces=max(0.0, 0.2 - g / 20)) for g in gs]
    rows += [_row(g, n=3, qfi=0.5 + 0.1 * (g < 0.5)) for g in gs]
    ref = detect_thresholds(rows)
    shuffled = [rows[i] for i in perm] + [rows[i] for i in range(10, 20)][::-1]
    assert detect_thresholds(shuffled) == ref


def test_config_rejects_unknown_and_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "oat", "gama_max": 3})
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="heisenberg")
    with pytest.raises(ConfigError):
        ExperimentConfig(solver="perm", alpha=[3.0])
    with pytest.raises(ConfigError):
        ExperimentConfig(gamma_min=2, gamma_max=1)
    p = tmp_path / "c.toml"
    p.write_text('kind = "tat"\nN = [4, 6]\ngamma_count = 3\n')
    cfg = ExperimentConfig.load(p)
    assert cfg.kind == "tat" and cfg.N == [4, 6] and len(cfg.points()) == 6
    p.write_text("kind = \n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)


def _tiny(tmp_path, **kw):
    base = dict(kind="oat", N=[4], layers=[1], gamma_min=0.05, gamma_max=5.0, gamma_count=3,
                restarts=2, budget=10, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_small_sweep_rows_and_determinism(tmp_path):
    cfg = _tiny(tmp_path)
    rows, errors, states = run_sweep(cfg, tmp_path / "a")
    assert len(rows) == 3 and not errors
    q = [r.qfi_over_N2 for r in rows]
    assert q[0] >= q[1] >= q[2]
    for r in rows:
        assert r.cfi_over_N * r.N <= r.qfi_over_N2 * r.N**2 + 1e-6
    header = (tmp_path / "a" / "results.csv").read_text().splitlines()[0].split(",")
    assert header[:len(BASE_COLUMNS)] == BASE_COLUMNS and header[-1] == "seed"
    back = read_rows(tmp_path / "a" / "results.csv")
    assert back[0]["qfi_over_N2"] == rows[0].qfi_over_N2       # 17 significant digits round-trip
    run_sweep(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_sweep_without_cfi_still_has_qfi_and_x(tmp_path):
    cfg = _tiny(tmp_path, cfi=False, gamma_count=1, continuation=False)
    rows, _, _ = run_sweep(cfg, tmp_path)
    assert math.isnan(rows[0].cfi_over_N) and rows[0].qfi_over_N2 > 0 and len(rows[0].x_opt) == 5


def test_failed_points_go_to_sidecar(tmp_path, monkeypatch):
    real = sweep.evaluate_point

    def flaky(cfg, gamma, *a, **kw):
        if gamma > 1:
            raise RuntimeError("integrator exploded")
        return real(cfg, gamma, *a, **kw)

    monkeypatch.setattr(sweep, "evaluate_point", flaky)
    cfg = _tiny(tmp_path)
    rows, errors, _ = run_sweep(cfg, tmp_path)
    assert len(rows) == 2 and len(errors) == 1
    assert "integrator exploded" in (tmp_path / "errors.csv").read_text()


def test_outputs_and_state_snapshots(tmp_path):
    cfg = _tiny(tmp_path, husimi=True, husimi_grid=[16, 32], gamma_count=2)
    rows, errors, states = run_sweep(cfg, tmp_path)
    families, fits = analyse(rows, cfg)
    written = emit_outputs(tmp_path, rows, cfg, families, fits, states, errors)
    data = json.loads((tmp_path / "analysis.json").read_text())
    for key in ("gamma1", "gamma2", "mir", "fits", "config_echo", "seed", "tool_version"):
        assert key in data
    assert data["config_echo"]["kind"] == "oat"
    assert len(written) == 2
    assert (tmp_path / "husimi_000.txt").read_text().startswith("16 32\n")
    st_ = sweep.load_state(tmp_path / "state_000.npz")
    assert np.isclose(st_.trace(), 1)


def test_analyse_runs_configured_fits():
    cfg = ExperimentConfig(kind="oat", N=[8, 10, 12, 14], fits=[{"column": "gamma_over_chi*ces_over_pi",
                                                                   "model": "power"}])
    rows = [dict(gamma_over_chi=0.25, alpha=0.0, N=N, n=1, ces_over_pi=0.7 * N ** -0.59 / 0.25,
                 ghz_fidelity=0.9, qfi_over_N2=0.5) for N in (8, 10, 12, 14)]
    _, fits = analyse(rows, cfg)
    assert len(fits) == 1 and abs(fits[0]["b"] - 0.59) < 1e-9
