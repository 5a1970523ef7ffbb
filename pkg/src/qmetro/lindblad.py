"""Dense Lindblad propagation with local Pauli dephasing, L = sigma^nu / 2.

The dissipator is applied elementwise on the density matrix through bit flips,
never as a 4^N x 4^N superoperator.  Diagonal Hamiltonians are integrated in
the interaction picture so the adaptive step is set by the dissipation rate
rather than by the spectral width of H.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.integrate import solve_ivp

from .spin import bit_signs, collective_operators, hermitian_expm, is_diagonal


class PropagationError(RuntimeError):
    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good t = {last_time:.6g})")
        self.last_time = last_time


@dataclass(frozen=True)
class NoiseSpec:
    gamma_x: float = 0.0
    gamma_y: float = 0.0
    gamma_z: float = 0.0

    def __post_init__(self):
        for g in self.rates:
            if not np.isfinite(g) or g < 0:
                raise ValueError(f"dephasing rates must be finite and >= 0, got {self.rates}")

    @classmethod
    def uniform(cls, gamma: float) -> "NoiseSpec":
        return cls(gamma, gamma, gamma)

    @property
    def rates(self) -> tuple[float, float, float]:
        return (self.gamma_x, self.gamma_y, self.gamma_z)

    @property
    def isotropic(self) -> bool:
        return self.gamma_x == self.gamma_y == self.gamma_z

    @property
    def silent(self) -> bool:
        return not any(self.rates)


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances for the adaptive embedded Runge-Kutta solve.

    ``method`` is a scipy ``solve_ivp`` tag (RK45 = Dormand-Prince 5(4)) or
    ``"expm"`` for exact sector-wise exponentials in the block solver.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = np.inf
    method: str = "RK45"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")


@numba.njit(cache=True)
def _dissipate(rho, u, signs, gx, gy, gz, out):
    # out = conj(U) D(U rho U^dag) U with U = diag(u); u = 1 means lab frame
    D = rho.shape[0]
    N = signs.shape[1]
    loss = 0.25 * N * (gx + gy + gz)
    lab = np.empty_like(rho)
    for a in range(D):
        ua = u[a]
        for b in range(D):
            lab[a, b] = ua * rho[a, b] * np.conj(u[b])
            # sum_j z_a^j z_b^j = N - 2 popcount(a ^ b)
            diff = a ^ b
            pc = 0
            while diff:
                diff &= diff - 1
                pc += 1
            out[a, b] = (0.25 * gz * (N - 2 * pc) - loss) * lab[a, b]
    if gx != 0.0 or gy != 0.0:
        for j in range(N):
            m = 1 << (N - 1 - j)
            for a in range(D):
                a2 = a ^ m
                sa = signs[a, j]
                for b in range(D):
                    out[a, b] += 0.25 * (gx + gy * sa * signs[b, j]) * lab[a2, b ^ m]
    for a in range(D):
        ca = np.conj(u[a])
        for b in range(D):
            out[a, b] *= ca * u[b]
    return out


def dissipator(rho: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """sum_{nu,j} gamma_nu (L rho L - {L L, rho}/2) with L = sigma_j^nu / 2."""
    D = rho.shape[0]
    N = D.bit_length() - 1
    rho = np.ascontiguousarray(rho, dtype=complex)
    out = np.empty_like(rho)
    return _dissipate(rho, np.ones(D, dtype=complex), bit_signs(N), *noise.rates, out)


def liouvillian(rho: np.ndarray, H, noise: NoiseSpec) -> np.ndarray:
    H = np.asarray(H)
    return -1j * (H @ rho - rho @ H) + dissipator(rho, noise)


def _validate_inputs(rho, H, duration):
    if duration < 0 or not np.isfinite(duration):
        raise ValueError(f"duration must be finite and >= 0, got {duration}")
    H = np.asarray(H)
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-10:
        raise ValueError("Hamiltonian must be Hermitian")
    if rho.shape != H.shape:
        raise ValueError(f"state shape {rho.shape} does not match H {H.shape}")
    return H


def _integrate(rhs, y0, duration, cfg: IntegratorConfig):
    if cfg.method == "expm":
        raise ValueError("the dense solver integrates with Runge-Kutta; 'expm' is block-solver only")
    sol = solve_ivp(rhs, (0.0, duration), y0, method=cfg.method, rtol=cfg.rtol,
                    atol=cfg.atol, max_step=cfg.max_step)
    if sol.status < 0:
        raise PropagationError(sol.message, float(sol.t[-1]))
    return sol.y[:, -1]


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + rho.conj().T)


def _propagate(rho, H, noise, duration, cfg, sign):
    # sign=+1: Schroedinger-picture forward; sign=-1: adjoint (Heisenberg) map.
    # Hermitian jump operators make the dissipator self-adjoint, so only the
    # Hamiltonian term flips sign.
    D = rho.shape[0]
    N = D.bit_length() - 1
    rho = np.asarray(rho, dtype=complex)
    if duration == 0:
        return rho.copy()
    signs = bit_signs(N)
    g = noise.rates
    if is_diagonal(H):
        h = sign * np.real(np.diag(H))
        if noise.silent:
            u = np.exp(-1j * h * duration)
            return u[:, None] * rho * u.conj()[None, :]
        scratch = np.empty((D, D), dtype=complex)

        def rhs(t, y):
            u = np.exp(-1j * h * t)
            return _dissipate(y.reshape(D, D), u, signs, *g, scratch).ravel().copy()

        y = _integrate(rhs, rho.ravel(), duration, cfg).reshape(D, D)
        u = np.exp(-1j * h * duration)
        return u[:, None] * y * u.conj()[None, :]

    Hs = sign * H
    if noise.silent:
        U = hermitian_expm(Hs, -duration)
        return U @ rho @ U.conj().T
    ones = np.ones(D, dtype=complex)
    scratch = np.empty((D, D), dtype=complex)

    def rhs(t, y):
        r = y.reshape(D, D)
        out = _dissipate(r, ones, signs, *g, scratch)
        out = out - 1j * (Hs @ r - r @ Hs)
        return out.ravel()

    return _integrate(rhs, rho.ravel(), duration, cfg).reshape(D, D)


def evolve(rho: np.ndarray, H, noise: NoiseSpec, duration: float,
           cfg: IntegratorConfig = IntegratorConfig()) -> np.ndarray:
    """Solve the master equation for ``duration`` and re-Hermitise the result."""
    H = _validate_inputs(np.asarray(rho), H, duration)
    return hermitize(_propagate(rho, H, noise, duration, cfg, +1))


def evolve_adjoint(obs: np.ndarray, H, noise: NoiseSpec, duration: float,
                   cfg: IntegratorConfig = IntegratorConfig()) -> np.ndarray:
    """Heisenberg-picture map: Tr(obs evolve(rho)) = Tr(evolve_adjoint(obs) rho)."""
    H = _validate_inputs(np.asarray(obs), H, duration)
    return hermitize(_propagate(obs, H, noise, duration, cfg, -1))


def apply_unitary(rho: np.ndarray, U) -> np.ndarray:
    U = np.asarray(U)
    if np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) > 1e-8:
        raise ValueError("apply_unitary needs a unitary matrix")
    return U @ rho @ U.conj().T


def evolve_driven(psi: np.ndarray, chi: float, omega: float, duration: float) -> np.ndarray:
    """Exact evolution of a collective ket under chi S_z^2 + Omega S_x."""
    psi = np.asarray(psi, dtype=complex)
    N = psi.shape[0].bit_length() - 1
    ops = collective_operators(N)
    H = chi * ops.sz.matrix @ ops.sz.matrix + omega * ops.sx.matrix
    return hermitian_expm(H, -duration) @ psi


def trotter_check(chi: float, omega: float, duration: float, layers: int, N: int = 4) -> float:
    """Spectral-norm distance between n alternating twist/turn layers and the driven propagator."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    ops = collective_operators(N)
    sz2 = ops.sz.matrix @ ops.sz.matrix
    sx = ops.sx.matrix
    exact = hermitian_expm(chi * sz2 + omega * sx, -duration)
    twist = hermitian_expm(sz2, -chi * duration / layers)
    turn = hermitian_expm(sx, -omega * duration / layers)
    step = twist @ turn
    return float(np.linalg.norm(np.linalg.matrix_power(step, layers) - exact, 2))
