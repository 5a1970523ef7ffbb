"""State diagnostics: quantum and classical Fisher information, target fidelities,
squeezing, collectivity and the spin-sector-weighted Husimi distribution.

Every function accepts either a dense density matrix or a ``BlockState``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import perm
from .perm import BlockState
from .spin import collective_operators, hermitian_expm, reference_state

EIG_CUTOFF = 1e-12
POP_FLOOR = 1e-12


class InvalidStateError(ValueError):
    pass


def _qubits(rho) -> int:
    if isinstance(rho, BlockState):
        return rho.N
    return rho.shape[0].bit_length() - 1


def _check_dense(rho: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] & (rho.shape[0] - 1):
        raise InvalidStateError(f"expected a 2^N square density matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise InvalidStateError("density matrix is not Hermitian")
    return rho


def _sylvester(rho: np.ndarray, G: np.ndarray, cut: float = EIG_CUTOFF):
    # F = 2 Tr(C X) with C = i[G, rho] and rho X + X rho = C on the support
    return perm.block_qfi_terms(rho, G, cut)


def qfi(rho, G=None) -> float:
    """Quantum Fisher information of ``rho`` for generator ``G`` (default S_z)."""
    if isinstance(rho, BlockState):
        if G is not None:
            raise ValueError("block states only support the collective S_z generator")
        return perm.perm_qfi(rho)
    rho = _check_dense(rho)
    G = collective_operators(_qubits(rho)).sz.matrix if G is None else np.asarray(G)
    return _sylvester(0.5 * (rho + rho.conj().T), G)[0]


def qfi_about(rho, axis: str = "z") -> float:
    """QFI for the collective generator S_axis (works for block states too)."""
    if axis == "z":
        return qfi(rho)
    # a quarter turn maps S_y (about x) or S_x (about y) onto +-S_z; the sign drops out
    turn = "x" if axis == "y" else "y"
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    return qfi(_rotated(rho if isinstance(rho, BlockState) else _check_dense(rho), turn, np.pi / 2))


def qfi_sensitivity(rho, G=None):
    """QFI and the matrix Lam with dF = Tr(Lam d rho) (per block for block states).

    Lam = 4i[X, G] - 4X^2 where X solves rho X + X rho = i[G, rho].
    """
    if isinstance(rho, BlockState):
        F, lams = 0.0, []
        for g, b, Gj in zip(rho.degens, rho.blocks, perm.collective_blocks(rho.N, "sz")):
            Fj, X = _sylvester(b, Gj)
            F += g * Fj
            lams.append(4j * (X @ Gj - Gj @ X) - 4 * X @ X)
        return F, lams
    rho = _check_dense(rho)
    G = collective_operators(_qubits(rho)).sz.matrix if G is None else np.asarray(G)
    F, X = _sylvester(rho, G)
    return F, 4j * (X @ G - G @ X) - 4 * X @ X


def _level_sums(rho) -> np.ndarray:
    # Tr(rho Pi_m) for each S_z level; rho may be any Hermitian matrix, e.g. a derivative
    N = _qubits(rho)
    P = np.zeros(N + 1)
    if isinstance(rho, BlockState):
        for g, j, b in zip(rho.degens, rho.labels, rho.blocks):
            d = b.shape[0]
            m = (float(j) - np.arange(d) + N / 2).round().astype(int)
            np.add.at(P, m, g * np.real(np.diag(b)))
    else:
        ups = np.array([bin(a).count("1") for a in range(rho.shape[0])])
        np.add.at(P, ups, np.real(np.diag(rho)))
    return P


def sz_distribution(rho) -> np.ndarray:
    """P(m_z) for m_z = -N/2 .. N/2."""
    return np.clip(_level_sums(rho), 0.0, None)


def _rotated(rho, axis: str, angle: float):
    if isinstance(rho, BlockState):
        return perm.perm_rotate(rho, axis, angle)
    ops = collective_operators(_qubits(rho))
    U = hermitian_expm(getattr(ops, "s" + axis).matrix, -angle)
    return U @ rho @ U.conj().T


def _support_projected(rho, cut: float = EIG_CUTOFF):
    """rho rebuilt from eigenpairs with eigenvalue > cut (per block for block states)."""
    def clean(b):
        w, v = np.linalg.eigh(0.5 * (b + b.conj().T))
        keep = w > cut
        return (v[:, keep] * w[keep]) @ v[:, keep].conj().T

    if isinstance(rho, BlockState):
        return BlockState(rho.N, tuple(clean(b) for b in rho.blocks))
    return clean(rho)


def _rotation_derivatives(rho, axis: str):
    """Level sums of d rho/d theta and d^2 rho/d theta^2 for rho(theta) = e^{-i theta S} rho e^{i theta S}."""
    def pair(b, G):
        c = G @ b - b @ G
        return -1j * c, -(G @ c - c @ G)

    if isinstance(rho, BlockState):
        d1, d2 = zip(*(pair(b, G) for b, G in zip(rho.blocks, perm.collective_blocks(rho.N, "s" + axis))))
        return _level_sums(BlockState(rho.N, d1)), _level_sums(BlockState(rho.N, d2))
    d1, d2 = pair(rho, getattr(collective_operators(_qubits(rho)), "s" + axis).matrix)
    return _level_sums(d1), _level_sums(d2)


def cfi(rho, encoding_axis: str = "y", theta_probe: float | None = None) -> float:
    """Classical Fisher information of S_z readout after a small encoding rotation.

    Default: the theta -> 0 limit of 4 sum (d sqrt P_m / d theta)^2, evaluated
    from the first two rotation derivatives of the level populations. Occupied
    levels give P'^2 / P; empty ones (P < POP_FLOOR) give the limit 2 P''.

    With ``theta_probe`` the limit is estimated instead from the Hellinger form
    4/theta^2 sum (sqrt P_theta - sqrt P_0)^2 at theta, theta/2, theta/4 with
    two Richardson levels. That estimate converges only for theta much smaller
    than any small-but-nonzero amplitude, so near-pure states with almost-empty
    levels bias it (it overshoots the QFI bound by ~5e-5 near-GHZ at N = 8).
    """
    if theta_probe is not None and not theta_probe > 0:
        raise ValueError("theta_probe must be positive")
    if encoding_axis not in ("x", "y", "z"):
        raise ValueError(f"encoding axis must be x, y or z, got {encoding_axis!r}")
    if not isinstance(rho, BlockState):
        rho = _check_dense(rho)
    # roundoff coherences beside empty levels violate positivity; drop them with the QFI cutoff
    rho = _support_projected(rho)
    P = _level_sums(rho)

    if theta_probe is None:
        d1, d2 = _rotation_derivatives(rho, encoding_axis)
        occupied = P >= POP_FLOOR
        val = np.sum(d1[occupied] ** 2 / P[occupied]) + 2 * np.sum(np.clip(d2[~occupied], 0.0, None))
        return max(0.0, float(val))

    def amplitudes(r):
        Q = _level_sums(r)
        Q[Q < POP_FLOOR] = 0.0
        return np.sqrt(Q)

    sq0 = amplitudes(rho)

    def hellinger(t):
        sq = amplitudes(_rotated(rho, encoding_axis, t))
        return 4.0 / t**2 * float(np.sum((sq - sq0) ** 2))

    h1, h2, h4 = (hellinger(theta_probe / k) for k in (1, 2, 4))
    r1, r2 = 2 * h2 - h1, 2 * h4 - h2
    return max(0.0, (4 * r2 - r1) / 3)


def fidelity(rho, target: np.ndarray) -> float:
    """<psi|rho|psi> clamped to [0, 1]. Block states take a symmetric-subspace ket (length N+1)."""
    target = np.asarray(target, dtype=complex)
    if isinstance(rho, BlockState):
        top = rho.blocks[0]
        if target.shape != (top.shape[0],):
            raise ValueError(f"target length {target.shape} does not match symmetric block {top.shape[0]}")
        val = target.conj() @ top @ target
    else:
        if target.shape != (rho.shape[0],):
            raise ValueError(f"target length {target.shape} does not match state dim {rho.shape[0]}")
        val = target.conj() @ rho @ target
    return float(min(1.0, max(0.0, np.real(val))))


def _extremes(rho):
    """(rho_uu, rho_dd, rho_ud) for the all-up / all-down pair."""
    if isinstance(rho, BlockState):
        top = rho.blocks[0]
        return top[0, 0].real, top[-1, -1].real, top[0, -1]
    return rho[-1, -1].real, rho[0, 0].real, rho[-1, 0]


def ghz_fidelity_max(rho) -> tuple[float, float]:
    """Best fidelity with (|up..up> + e^{i phase}|down..down>)/sqrt2 over the phase."""
    uu, dd, ud = _extremes(rho)
    f = 0.5 * (uu + dd) + abs(ud)
    return float(min(1.0, max(0.0, f))), float(-np.angle(ud))


def twin_fock_ket(N: int, symmetric: bool = False) -> np.ndarray:
    if N % 2:
        raise ValueError("twin-Fock state needs an even qubit count")
    if symmetric:
        psi = np.zeros(N + 1, dtype=complex)
        psi[N // 2] = 1.0
        return psi
    return reference_state("twin_fock", N)


def symmetric_block(rho) -> np.ndarray:
    """rho restricted to the maximal-spin (symmetric) subspace, m descending."""
    if isinstance(rho, BlockState):
        return rho.blocks[0]
    N = _qubits(rho)
    B = perm.dicke_basis(N)[perm.spin_labels(N)[0]][:, :, 0]
    return B.conj().T @ rho @ B


def tf_fidelity(rho) -> float:
    return tf_fidelity_max(rho)[0]


def tf_fidelity_max(rho) -> tuple[float, tuple[float, float]]:
    """Best overlap with a twin-Fock state whose quantisation axis points along (theta, phi).

    The twin-Fock state is invariant under rotations about its own axis, so the
    axis direction is the only free orientation.
    """
    N = _qubits(rho)
    if N % 2:
        raise ValueError("twin-Fock state needs an even qubit count")
    top = symmetric_block(rho)
    j = perm.spin_labels(N)[0]
    _, sy, sz = perm.spin_matrices(j)
    w, V = np.linalg.eigh(sy)
    m = np.real(np.diag(sz))
    e0 = np.zeros(N + 1)
    e0[N // 2] = 1.0
    c0 = V.conj().T @ e0

    def overlap(p):
        v = np.exp(-1j * m * p[1]) * (V @ (np.exp(-1j * p[0] * w) * c0))
        return float(np.real(v.conj() @ top @ v))

    grid = [(t, f) for t in np.linspace(0, np.pi / 2, 10) for f in np.linspace(0, 2 * np.pi, 24, endpoint=False)]
    start = max(grid, key=overlap)
    res = minimize(lambda p: -overlap(p), start, method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 2000})
    best = max(-res.fun, overlap(start))
    return float(min(1.0, max(0.0, best))), (float(res.x[0]), float(res.x[1]))


def spin_moments(rho):
    """Mean spin vector and symmetrised second moments <{S_a, S_b}>/2."""
    names = ("sx", "sy", "sz")
    if isinstance(rho, BlockState):
        ops = [perm.collective_blocks(rho.N, n) for n in names]
        mean = np.array([rho.expect(o) for o in ops])
        second = np.empty((3, 3))
        for a in range(3):
            for b in range(a, 3):
                prod = [0.5 * (A @ B + B @ A) for A, B in zip(ops[a], ops[b])]
                second[a, b] = second[b, a] = rho.expect(prod)
        return mean, second
    c = collective_operators(_qubits(rho))
    ops = [getattr(c, n).matrix for n in names]
    mean = np.array([np.real(np.trace(o @ rho)) for o in ops])
    second = np.empty((3, 3))
    for a in range(3):
        for b in range(a, 3):
            second[a, b] = second[b, a] = np.real(np.trace(0.5 * (ops[a] @ ops[b] + ops[b] @ ops[a]) @ rho))
    return mean, second


def squeezing(rho) -> float:
    """Inverse scaled Wineland parameter (N xi^2)^-1; 0 for a depolarised mean spin."""
    N = _qubits(rho)
    mean, second = spin_moments(rho)
    norm = np.linalg.norm(mean)
    if norm < 1e-6 * N:
        return 0.0
    n = mean / norm
    # orthonormal basis of the plane perpendicular to the mean spin
    helper = np.eye(3)[np.argmin(np.abs(n))]
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    E = np.stack([e1, e2], axis=1)
    cov = second - np.outer(mean, mean)
    lam_min = np.linalg.eigvalsh(E.T @ cov @ E)[0]
    return float(norm**2 / (N**2 * max(lam_min, 1e-15)))


def collectivity(rho) -> float:
    N = _qubits(rho)
    smax = (N / 2) * (N / 2 + 1)
    if isinstance(rho, BlockState):
        s2 = rho.expect(perm.collective_blocks(N, "s2"))
    else:
        s2 = np.real(np.trace(collective_operators(N).s2.matrix @ rho))
    return float(s2 / smax)


@dataclass
class DiagnosticsReport:
    qfi: float
    cfi: float
    ghz_fidelity: float
    ghz_phase: float
    tf_fidelity: float
    squeezing_inv: float
    collectivity: float
    mean_spin: np.ndarray = field(repr=False)
    cfi_bound: float = np.inf       # QFI about the CFI encoding axis

    def check(self, tol: float = 1e-6):
        for name in ("ghz_fidelity", "tf_fidelity"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) and not np.isnan(v):
                raise AssertionError(f"{name} = {v} outside [0, 1]")
        if not (0.0 <= self.cfi <= self.cfi_bound + tol):
            raise AssertionError(f"cfi {self.cfi} exceeds the encoding-axis qfi {self.cfi_bound}")
        if not (0.0 <= self.collectivity <= 1 + 1e-9):
            raise AssertionError(f"collectivity {self.collectivity} outside [0, 1]")


def diagnostics(rho, cfi_axis: str = "y", theta_probe: float | None = None) -> DiagnosticsReport:
    N = _qubits(rho)
    f_ghz, phase = ghz_fidelity_max(rho)
    mean, _ = spin_moments(rho)
    rep = DiagnosticsReport(
        qfi=qfi(rho),
        cfi=cfi(rho, cfi_axis, theta_probe),
        ghz_fidelity=f_ghz,
        ghz_phase=phase,
        tf_fidelity=tf_fidelity(rho) if N % 2 == 0 else float("nan"),
        squeezing_inv=squeezing(rho),
        collectivity=collectivity(rho),
        mean_spin=mean,
        cfi_bound=qfi_about(rho, cfi_axis),
    )
    rep.check()
    return rep


# --- Husimi-like distribution -------------------------------------------------

@dataclass
class HusimiGrid:
    """Values on Gauss-Legendre polar nodes x uniform azimuths; ``integral`` is the sphere quadrature."""

    theta: np.ndarray
    phi: np.ndarray
    values: np.ndarray
    theta_weights: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def integral(self) -> float:
        dphi = 2 * np.pi / len(self.phi)
        return float(self.theta_weights @ self.values.sum(axis=1) * dphi)

    def save(self, path):
        n_t, n_p = self.shape
        with open(path, "w") as fh:
            fh.write(f"{n_t} {n_p}\n")
            for row in self.values:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "HusimiGrid":
        lines = Path(path).read_text().split("\n", 1)
        n_t, n_p = (int(v) for v in lines[0].split())
        values = np.array(lines[1].split(), dtype=float).reshape(n_t, n_p)
        theta, phi, w = sphere_grid(n_t, n_p)
        return cls(theta, phi, values, w)


def sphere_grid(n_theta: int, n_phi: int):
    if n_theta < 8 or n_phi < 8:
        raise ValueError(f"Husimi grid needs at least 8 points per axis, got {n_theta}x{n_phi}")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    order = np.argsort(-x)              # ascending theta
    theta = np.arccos(x[order])
    return theta, 2 * np.pi * np.arange(n_phi) / n_phi, w[order]


def _coherent_amplitudes(S: float, theta, phi) -> np.ndarray:
    """<S, m | R(theta, phi) | S, S> for m descending, shape (n_theta, n_phi, 2S+1)."""
    two_s = int(round(2 * S))
    m = S - np.arange(two_s + 1)
    k = np.arange(two_s + 1)                      # k = S - m
    binom = np.sqrt([comb(two_s, int(i)) for i in k])
    c = np.cos(theta / 2)[:, None]
    s = np.sin(theta / 2)[:, None]
    polar = binom * c ** (two_s - k) * s ** k    # (n_theta, 2S+1)
    azim = np.exp(-1j * np.outer(phi, m))         # (n_phi, 2S+1)
    return polar[:, None, :] * azim[None, :, :]


def _summed_blocks(rho):
    """(S, sum over copies of the per-copy S blocks) pairs."""
    if isinstance(rho, BlockState):
        return [(float(j), g * b) for j, g, b in zip(rho.labels, rho.degens, rho.blocks)]
    basis = perm.dicke_basis(_qubits(rho))
    out = []
    for j, B in basis.items():
        acc = sum(B[:, :, xi].conj().T @ rho @ B[:, :, xi] for xi in range(B.shape[2]))
        out.append((float(j), acc))
    return out


def husimi(rho, grid: tuple[int, int] = (64, 128)) -> HusimiGrid:
    theta, phi, w = sphere_grid(*grid)
    if not isinstance(rho, BlockState):
        rho = _check_dense(rho)
    vals = np.zeros((len(theta), len(phi)))
    for S, block in _summed_blocks(rho):
        amp = _coherent_amplitudes(S, theta, phi)
        q = np.einsum("tpm,mn,tpn->tp", amp.conj(), block, amp).real
        vals += (2 * S + 1) / (4 * np.pi) * q
    return HusimiGrid(theta, phi, np.clip(vals, 0.0, None), w)
