"""Spin operators, power-law couplings, rotations and reference states.

Basis convention: computational index ``a`` over N qubits, qubit 0 is the most
significant bit, and bit value 1 is spin up (sigma_z = +1).  The all-down
state is therefore index 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

MAX_DENSE_QUBITS = 8


class InvalidSystemError(ValueError):
    pass


@dataclass(frozen=True)
class SpinSystem:
    """N qubits on the integer lattice 0..N-1 (open chain) with power-law exponent alpha."""

    N: int
    alpha: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidSystemError(f"N must be a positive integer, got {self.N}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidSystemError(f"alpha must be finite and >= 0, got {self.alpha}")

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.N, dtype=float)


@dataclass(frozen=True)
class CouplingMatrix:
    chi: float
    entries: np.ndarray = field(repr=False)
    kac: float

    @property
    def N(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class Operator:
    matrix: np.ndarray = field(repr=False)
    hermitian: bool = False

    def __post_init__(self):
        if self.hermitian:
            m = self.matrix
            if np.max(np.abs(m - m.conj().T), initial=0.0) >= 1e-12:
                raise ValueError("matrix flagged hermitian is not Hermitian")

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def build_couplings(system: SpinSystem, chi: float = 1.0) -> CouplingMatrix:
    """Kac-normalised power-law couplings chi_ij = chi / (N_alpha |r_i - r_j|^alpha).

    N_alpha = (N-1)^-1 sum_{i != j} |r_i - r_j|^-alpha, so that the ordered-pair
    sum of chi_ij equals chi (N - 1) for every alpha.
    """
    N = system.N
    if N < 2:
        raise InvalidSystemError("couplings need at least two qubits")
    r = system.positions
    dist = np.abs(r[:, None] - r[None, :])
    off = ~np.eye(N, dtype=bool)
    inv = np.zeros((N, N))
    inv[off] = dist[off] ** (-system.alpha)
    kac = inv.sum() / (N - 1)
    return CouplingMatrix(chi=float(chi), entries=chi * inv / kac, kac=float(kac))


# single-qubit Paulis in the (down, up) = (bit 0, bit 1) ordering
_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, 1j], [-1j, 0]], dtype=complex)
_SZ = np.array([[-1, 0], [0, 1]], dtype=complex)
PAULI = {"x": _SX, "y": _SY, "z": _SZ}


def bit_signs(N: int) -> np.ndarray:
    """(2^N, N) array of sigma_z eigenvalues per basis index and qubit."""
    idx = np.arange(2**N)
    bits = (idx[:, None] >> (N - 1 - np.arange(N))) & 1
    return (2 * bits - 1).astype(np.int8)


def local_pauli(axis: str, site: int, N: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for q in range(N):
        out = np.kron(out, PAULI[axis] if q == site else np.eye(2))
    return out


def _check_dense(N: int):
    if N > MAX_DENSE_QUBITS:
        raise InvalidSystemError(
            f"dense operators limited to N <= {MAX_DENSE_QUBITS}; use the permutation-invariant solver"
        )


def build_hamiltonian(kind: str, couplings: CouplingMatrix) -> Operator:
    """Ising (sum chi_ij sz sz) or FTAT (sum chi_ij (sx sy + sy sx)/2) over ordered pairs."""
    kind = kind.lower()
    N = couplings.N
    _check_dense(N)
    J = couplings.entries
    if kind == "ising":
        z = bit_signs(N).astype(float)
        diag = np.einsum("ai,ij,aj->a", z, J, z)
        return Operator(np.diag(diag).astype(complex), hermitian=True)
    if kind == "ftat":
        H = np.zeros((2**N, 2**N), dtype=complex)
        for i, j in combinations(range(N), 2):
            # (i,j) and (j,i) terms together: J_ij (sx_i sy_j + sy_i sx_j)
            xy = local_pauli("x", i, N) @ local_pauli("y", j, N)
            yx = local_pauli("y", i, N) @ local_pauli("x", j, N)
            H += J[i, j] * (xy + yx)
        H = 0.5 * (H + H.conj().T)
        return Operator(H, hermitian=True)
    raise ValueError(f"unknown Hamiltonian kind {kind!r}")


def is_diagonal(H) -> bool:
    m = np.asarray(H)
    return not np.any(m - np.diag(np.diag(m)))


class CollectiveOps(NamedTuple):
    sx: Operator
    sy: Operator
    sz: Operator
    s2: Operator
    s_plus: Operator
    s_minus: Operator


@lru_cache(maxsize=16)
def _collective_arrays(N: int):
    D = 2**N
    z = bit_signs(N).astype(float)
    sz = np.diag(0.5 * z.sum(axis=1)).astype(complex)
    sx = np.zeros((D, D), dtype=complex)
    sy = np.zeros((D, D), dtype=complex)
    idx = np.arange(D)
    for q in range(N):
        flipped = idx ^ (1 << (N - 1 - q))
        sx[flipped, idx] += 0.5
        # <a^q| sy |a> = 0.5 * (-i) if bit q of a is 0 (down -> up), +i otherwise
        sy[flipped, idx] += 0.5 * np.where(z[:, q] < 0, -1j, 1j)
    s2 = sx @ sx + sy @ sy + sz @ sz
    for a in (sx, sy, sz, s2):
        a.setflags(write=False)
    return sx, sy, sz, s2


def collective_operators(N: int) -> CollectiveOps:
    """Collective S_beta = sum_j sigma_j^beta / 2 on the full 2^N space."""
    if N < 1:
        raise InvalidSystemError("N must be >= 1")
    _check_dense(N)
    sx, sy, sz, s2 = _collective_arrays(N)
    sp = sx + 1j * sy
    return CollectiveOps(
        Operator(sx, True), Operator(sy, True), Operator(sz, True), Operator(s2, True),
        Operator(sp), Operator(sp.conj().T),
    )


def rotation(kind: str, N: int, theta: float, phi: float = 0.0) -> Operator:
    """Global rotation unitaries.

    ``initial``: prod_j exp(-i theta sigma_j^phi / 2) with sigma^phi = cos(phi) sx + sin(phi) sy.
    ``x``, ``y``, ``z``: exp(-i theta S_axis).
    """
    if not (np.isfinite(theta) and np.isfinite(phi)):
        raise ValueError("rotation angles must be finite")
    ops = collective_operators(N)
    if kind == "initial":
        gen = np.cos(phi) * ops.sx.matrix + np.sin(phi) * ops.sy.matrix
    elif kind in ("x", "y", "z"):
        gen = getattr(ops, "s" + kind).matrix
    else:
        raise ValueError(f"unknown rotation kind {kind!r}")
    return Operator(hermitian_expm(gen, -theta))


def hermitian_expm(gen: np.ndarray, coef: float) -> np.ndarray:
    """exp(1j * coef * gen) for Hermitian gen via eigendecomposition."""
    w, v = np.linalg.eigh(gen)
    return (v * np.exp(1j * coef * w)) @ v.conj().T


def reference_state(kind: str, N: int, *, phase: float = 0.0, theta: float = 0.0,
                    phi: float = 0.0) -> np.ndarray:
    """Normalised reference kets: down_all, ghz (with phase), twin_fock, coherent(theta, phi)."""
    if N < 1:
        raise InvalidSystemError("N must be >= 1")
    D = 2**N
    psi = np.zeros(D, dtype=complex)
    if kind == "down_all":
        psi[0] = 1.0
    elif kind == "ghz":
        psi[D - 1] = 1 / np.sqrt(2)
        psi[0] = np.exp(1j * phase) / np.sqrt(2)
    elif kind == "twin_fock":
        if N % 2:
            raise ValueError("twin-Fock state needs an even qubit count")
        ones = np.array([bin(a).count("1") for a in range(D)])
        psi[ones == N // 2] = 1.0
        psi /= np.linalg.norm(psi)
    elif kind == "coherent":
        # exp(-i phi Sz) exp(-i theta Sy) applied to all-up
        up = np.array([0.0, 1.0], dtype=complex)
        ry = expm(-0.5j * theta * _SY)
        rz = expm(-0.5j * phi * _SZ)
        single = rz @ ry @ up
        psi = np.ones(1, dtype=complex)
        for _ in range(N):
            psi = np.kron(psi, single)
    else:
        raise ValueError(f"unknown reference state {kind!r}")
    return psi


def expect(rho: np.ndarray, op) -> float:
    return float(np.real(np.trace(np.asarray(op) @ rho)))
