import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from math import comb

from qmetro.lindblad import IntegratorConfig, NoiseSpec, evolve
from qmetro.perm import (BlockState, UnsupportedConfigurationError, degeneracy, down_state, from_dense,
                         layout, maximally_mixed, perm_evolve, perm_qfi, perm_rotate, propagator,
                         spin_labels, spin_matrices, to_dense)
from qmetro.spin import SpinSystem, build_couplings, build_hamiltonian, collective_operators, rotation


@given(st.integers(1, 30))
def test_block_dimensions_cover_hilbert_space(N):
    lay = layout(N)
    assert sum(d * g for d, g in zip(lay.dims, lay.degens)) == 2**N
    assert lay.labels[0] == N / 2


def test_degeneracy_formula():
    # d_j = C(N, N/2 - j) - C(N, N/2 - j - 1)
    for N in range(1, 9):
        for j in spin_labels(N):
            k = int(N / 2 - j)
            assert degeneracy(N, j) == comb(N, k) - (comb(N, k - 1) if k >= 1 else 0)


@pytest.mark.parametrize("j2", [1, 2, 3, 6])
def test_spin_matrices_algebra(j2):
    sx, sy, sz = spin_matrices(__import__("fractions").Fraction(j2, 2))
    assert np.allclose(sx @ sy - sy @ sx, 1j * sz)
    assert sz[0, 0].real == j2 / 2      # m descending


def _random_sym_state(N, rng):
    rho = np.zeros((2**N, 2**N), dtype=complex)
    for _ in range(3):
        th, ph = rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)
        U = rotation("initial", N, th, ph).matrix
        psi = U[:, 0]
        rho += rng.uniform(0.2, 1) * np.outer(psi, psi.conj())
    return rho / np.trace(rho)


@pytest.mark.parametrize("kind", ["ising", "ftat"])
@pytest.mark.parametrize("N", [2, 3, 4, 5])
def test_block_evolution_matches_dense(kind, N):
    rng = np.random.default_rng(N)
    rho = _random_sym_state(N, rng)
    H = build_hamiltonian(kind, build_couplings(SpinSystem(N))).matrix
    noise = NoiseSpec.uniform(0.4)
    dense = evolve(rho, H, noise, 0.8)
    for method in ("RK45", "expm"):
        blocks = perm_evolve(from_dense(rho), kind, noise, 0.8, IntegratorConfig(method=method))
        assert np.allclose(to_dense(blocks), dense, atol=1e-7)


def test_dense_roundtrip_and_mixed_state():
    N = 4
    mm = maximally_mixed(N)
    assert np.allclose(to_dense(mm), np.eye(16) / 16)
    assert np.isclose(mm.trace(), 1)
    psi = rotation("initial", N, 1.0, 0.3).matrix[:, 0]
    rho = np.outer(psi, psi.conj())
    assert np.allclose(to_dense(from_dense(rho)), rho)


def test_down_state_and_rotation():
    N = 6
    st_ = perm_rotate(down_state(N), "initial", np.pi / 2, 0.7)
    dense = rotation("initial", N, np.pi / 2, 0.7).matrix[:, 0]
    assert np.allclose(to_dense(st_), np.outer(dense, dense.conj()))


def test_qfi_matches_dense_for_mixed_blocks():
    from qmetro.metrology import qfi
    N = 4
    rng = np.random.default_rng(5)
    rho = evolve(_random_sym_state(N, rng), np.zeros((16, 16)), NoiseSpec.uniform(0.5), 0.6)
    assert np.isclose(perm_qfi(from_dense(rho)), qfi(rho), atol=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 12), st.floats(0, 3), st.floats(0.05, 2))
def test_block_channel_is_trace_preserving(N, gamma, t):
    st_ = perm_rotate(down_state(N), "initial", 1.1, 0.2)
    out = perm_evolve(st_, "ftat", NoiseSpec.uniform(gamma), t, IntegratorConfig(method="expm"))
    out.check(tol=1e-8)


def test_weighted_adjoint_identity():
    N = 5
    prop = propagator(N, "ising", NoiseSpec.uniform(0.3))
    rng = np.random.default_rng(0)
    vec = perm_rotate(down_state(N), "initial", 0.9, 0.4).vector()
    obs = rng.normal(size=vec.shape) + 1j * rng.normal(size=vec.shape)
    w = layout(N).weights()
    for method in ("RK45", "expm"):
        cfg = IntegratorConfig(method=method)
        lhs = np.vdot(obs * w, prop.propagate(vec, 0.7, cfg))
        rhs = np.vdot(prop.propagate(obs, 0.7, cfg, adjoint=True) * w, vec)
        assert np.isclose(lhs, rhs, atol=1e-8)


def test_anisotropic_noise_rejected():
    with pytest.raises(UnsupportedConfigurationError):
        propagator(4, "ising", NoiseSpec(0.1, 0.2, 0.1))


def test_large_N_runs():
    st_ = perm_rotate(down_state(20), "initial", np.pi / 2)
    out = perm_evolve(st_, "ising", NoiseSpec.uniform(0.1), 0.3, IntegratorConfig(method="expm"))
    out.check()
    assert 0 < perm_qfi(out) <= 400
