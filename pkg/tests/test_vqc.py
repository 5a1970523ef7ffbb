import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmetro.lindblad import IntegratorConfig, NoiseSpec
from qmetro.metrology import diagnostics, qfi
from qmetro.perm import to_dense
from qmetro.spin import SpinSystem, reference_state
from qmetro.vqc import (Bounds, CircuitSpec, DomainError, check_state, cumulative, fd_gradient,
                        objective, run_circuit, value_and_gradient)


def _spec(N=4, kind="oat", n=1, gamma=0.1, solver="perm", alpha=0.0, **kw):
    return CircuitSpec(SpinSystem(N, alpha), kind, n, NoiseSpec.uniform(gamma), solver, **kw)


def _interior(rng, n):
    b = Bounds.for_layers(n)
    return b.from_unit(rng.uniform(0.05, 0.95, len(b)))


def test_bounds_layout():
    b = Bounds.for_layers(3)
    assert len(b) == 9
    assert b.upper[1] == 2 * np.pi and np.all(np.delete(b.upper, 1) == np.pi)
    x = np.linspace(0, 3, 9)
    assert np.allclose(b.from_unit(b.to_unit(x)), x)


def test_domain_errors():
    with pytest.raises(DomainError):
        _spec(alpha=3.0)
    with pytest.raises(DomainError):
        CircuitSpec(SpinSystem(4), "oat", 1, NoiseSpec(0.1, 0.2, 0.3), "perm")
    with pytest.raises(DomainError):
        _spec(N=10, solver="dense")
    with pytest.raises(ValueError):
        _spec(kind="heisenberg")
    spec = _spec()
    with pytest.raises(ValueError):
        run_circuit(spec, np.zeros(4))
    with pytest.raises(ValueError):
        run_circuit(spec, np.full(5, 4.0))


def test_cumulative():
    x = [0.1, 0.2, 1.0, 2.0, 3.0, 4.0, 0.5]
    assert cumulative(x) == (4.0, 6.0)


def test_zero_angles_leave_all_down():
    rho = run_circuit(_spec(solver="dense"), np.zeros(5))
    assert np.isclose(rho[0, 0].real, 1)


def test_closed_ghz_protocol():
    # equator along y, twist for the GHZ time, quarter turn about x: GHZ along z
    N = 6
    spec = _spec(N=N, gamma=0.0)
    x = np.array([np.pi / 2, 0.0, np.pi / 2, np.pi / 2, 0.0])
    rho = run_circuit(spec, x)
    assert np.isclose(qfi(rho), N**2, atol=1e-6)
    assert np.isclose(diagnostics(rho).ghz_fidelity, 1, atol=1e-6)


@pytest.mark.parametrize("kind", ["oat", "tat"])
@pytest.mark.parametrize("n", [1, 2])
def test_dense_and_block_circuits_agree(kind, n):
    rng = np.random.default_rng(7)
    x = _interior(rng, n)
    for norm in ("unit-mean", "kac"):
        d = run_circuit(_spec(kind=kind, n=n, solver="dense", coupling_norm=norm), x)
        b = run_circuit(_spec(kind=kind, n=n, solver="perm", coupling_norm=norm), x)
        assert np.allclose(to_dense(b), d, atol=1e-7)


@pytest.mark.parametrize("kind,solver,alpha", [("oat", "perm", 0), ("tat", "perm", 0),
                                               ("ising", "dense", 3), ("ftat", "dense", 3)])
def test_adjoint_gradient_matches_fd(kind, solver, alpha):
    rng = np.random.default_rng(11)
    spec = _spec(N=4, kind=kind, n=2, gamma=0.2, solver=solver, alpha=alpha)
    x = _interior(rng, 2)
    F, g = value_and_gradient(spec, x)
    assert np.isclose(F, objective(spec, x))
    fd = fd_gradient(spec, x)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-6)


def test_gradient_at_bounds_is_finite():
    spec = _spec()
    F, g = value_and_gradient(spec, np.zeros(5))
    assert np.all(np.isfinite(g))
    F, g = value_and_gradient(spec, spec.bounds.upper)
    assert np.all(np.isfinite(g))


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 10), st.sampled_from(["oat", "tat"]), st.floats(0, 3),
       st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_circuit_outputs_are_states(N, kind, gamma, u):
    spec = _spec(N=N, kind=kind, gamma=gamma, integrator=IntegratorConfig(method="expm"))
    rho = run_circuit(spec, spec.bounds.from_unit(u))
    check_state(rho)
    assert 0 <= qfi(rho) <= N**2 + 1e-8


def test_unit_mean_is_rescaled_kac():
    N = 4
    k = _spec(N=N, gamma=0.0, solver="dense", coupling_norm="kac")
    u = _spec(N=N, gamma=0.0, solver="dense", coupling_norm="unit-mean")
    assert np.allclose(u.hamiltonian, k.hamiltonian * N / 4)
    x = np.array([1.0, 0.3, 0.4, 0.5, 0.6])
    xk = x.copy()
    xk[2] *= N / 4
    assert np.allclose(run_circuit(u, x), run_circuit(k, xk), atol=1e-8)


def test_check_state_rejects_bad_matrices():
    with pytest.raises(AssertionError):
        check_state(np.diag([0.6, 0.6]).astype(complex))
    with pytest.raises(AssertionError):
        check_state(np.diag([1.1, -0.1]).astype(complex))
    check_state(np.outer(reference_state("ghz", 2), reference_state("ghz", 2).conj()))


def test_rate_scale_divides_gamma():
    x = np.array([1.0, 0.3, 0.4, 0.5, 0.6])
    a = run_circuit(_spec(gamma=0.8, rate_scale=0.25), x)
    b = run_circuit(_spec(gamma=0.2, rate_scale=1.0), x)
    assert np.allclose(a.vector(), b.vector(), atol=1e-10)
    with pytest.raises(ValueError):
        _spec(rate_scale=0.0)
