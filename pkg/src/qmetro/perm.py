"""Permutation-invariant density matrices in the Dicke (j, m, xi) block form.

A permutation-invariant state is rho = (+)_j rho_j (x) I_{d_j}; only the per-copy
blocks rho_j are stored and d_j is carried as an explicit weight, so
Tr rho = sum_j d_j Tr rho_j.

Local single-site channels are mapped onto the blocks by splitting off the
last qubit: spin j of N qubits is coupled from spin j1 = j -+ 1/2 of N-1 qubits
and one spin-1/2 with Clebsch-Gordan isometries, the single-site operator acts
on the spin-1/2 factor, and the permutation twirl is a weighted partial trace
over the multiplicity space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .lindblad import IntegratorConfig, NoiseSpec, PropagationError
from .spin import MAX_DENSE_QUBITS, collective_operators, hermitian_expm


class UnsupportedConfigurationError(ValueError):
    pass


def spin_labels(N: int) -> list[Fraction]:
    """Total-spin labels N/2, N/2-1, ..., down to 0 or 1/2."""
    top = Fraction(N, 2)
    return [top - k for k in range(N // 2 + 1)]


def degeneracy(N: int, j) -> int:
    """Multiplicity of spin-j irreps in (1/2)^(x)N."""
    k = int(Fraction(N, 2) - Fraction(j))
    if k < 0 or k > N // 2:
        return 0
    return comb(N, k) - (comb(N, k - 1) if k >= 1 else 0)


@lru_cache(maxsize=None)
def spin_matrices(j: Fraction):
    """(Sx, Sy, Sz) for spin j in the descending-m basis m = j, ..., -j."""
    dim = int(2 * j + 1)
    m = np.array([float(j) - k for k in range(dim)])
    sp = np.zeros((dim, dim))
    for k in range(1, dim):
        mk = m[k]
        sp[k - 1, k] = np.sqrt(float(j) * (float(j) + 1) - mk * (mk + 1))
    sx = (sp + sp.T) / 2
    sy = (sp - sp.T) / 2j
    sz = np.diag(m).astype(complex)
    for a in (sx, sy, sz):
        a.setflags(write=False)
    return sx.astype(complex), sy, sz


@lru_cache(maxsize=None)
def _cg_isometry(j1: Fraction, j: Fraction) -> np.ndarray:
    """Columns |j m> (m descending) expanded in |j1 m1> (x) |s>, s in (up, down)."""
    d1 = int(2 * j1 + 1)
    dj = int(2 * j + 1)
    V = np.zeros((2 * d1, dj))
    J1 = float(j1)
    norm = 2 * J1 + 1
    for k in range(dj):
        m = float(j) - k
        # |j1, m - 1/2>|up>  and  |j1, m + 1/2>|down>
        i_up = int(round(J1 - (m - 0.5)))
        i_dn = int(round(J1 - (m + 0.5)))
        if j == j1 + Fraction(1, 2):
            c_up = np.sqrt((J1 + m + 0.5) / norm)
            c_dn = np.sqrt((J1 - m + 0.5) / norm)
        else:
            c_up = -np.sqrt((J1 - m + 0.5) / norm)
            c_dn = np.sqrt((J1 + m + 0.5) / norm)
        if 0 <= i_up < d1:
            V[2 * i_up, k] = c_up
        if 0 <= i_dn < d1:
            V[2 * i_dn + 1, k] = c_dn
    return V


_PAULI_UD = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class BlockLayout:
    """Index bookkeeping for the vectorised per-copy blocks."""

    N: int
    labels: tuple = field(init=False)
    dims: tuple = field(init=False)
    degens: tuple = field(init=False)
    offsets: tuple = field(init=False)

    def __post_init__(self):
        labels = tuple(spin_labels(self.N))
        dims = tuple(int(2 * j + 1) for j in labels)
        offs, acc = [], 0
        for d in dims:
            offs.append(acc)
            acc += d * d
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "degens", tuple(degeneracy(self.N, j) for j in labels))
        object.__setattr__(self, "offsets", tuple(offs))

    @property
    def size(self) -> int:
        return self.offsets[-1] + self.dims[-1] ** 2

    def weights(self) -> np.ndarray:
        """Per-entry multiplicity d_j, the metric of the block inner product."""
        return np.concatenate([np.full(d * d, g, dtype=float) for d, g in zip(self.dims, self.degens)])

    def split(self, vec: np.ndarray) -> list[np.ndarray]:
        return [vec[o:o + d * d].reshape(d, d) for o, d in zip(self.offsets, self.dims)]

    def join(self, blocks) -> np.ndarray:
        return np.concatenate([np.asarray(b, dtype=complex).ravel() for b in blocks])


@lru_cache(maxsize=None)
def layout(N: int) -> BlockLayout:
    return BlockLayout(N)


@dataclass(frozen=True)
class BlockState:
    N: int
    blocks: tuple = field(repr=False)

    @property
    def layout(self) -> BlockLayout:
        return layout(self.N)

    @property
    def degens(self) -> tuple:
        return self.layout.degens

    @property
    def labels(self) -> tuple:
        return self.layout.labels

    def vector(self) -> np.ndarray:
        return self.layout.join(self.blocks)

    @classmethod
    def from_vector(cls, N: int, vec: np.ndarray) -> "BlockState":
        return cls(N, tuple(b.copy() for b in layout(N).split(vec)))

    def trace(self) -> float:
        return float(sum(g * np.real(np.trace(b)) for g, b in zip(self.degens, self.blocks)))

    def expect(self, ops) -> float:
        """sum_j d_j Tr(A_j rho_j) for a list of per-block operators."""
        return float(sum(g * np.real(np.trace(a @ b)) for g, a, b in zip(self.degens, ops, self.blocks)))

    def hermitized(self) -> "BlockState":
        return BlockState(self.N, tuple(0.5 * (b + b.conj().T) for b in self.blocks))

    def check(self, tol: float = 1e-8):
        if abs(self.trace() - 1) > tol:
            raise ValueError(f"block trace {self.trace()} != 1")
        for b in self.blocks:
            if np.max(np.abs(b - b.conj().T), initial=0) > 1e-10:
                raise ValueError("non-Hermitian block")
            if b.size and np.linalg.eigvalsh(b).min() < -tol:
                raise ValueError("block has negative eigenvalue")


def down_state(N: int) -> BlockState:
    lay = layout(N)
    blocks = [np.zeros((d, d), dtype=complex) for d in lay.dims]
    blocks[0][-1, -1] = 1.0
    return BlockState(N, tuple(blocks))


def symmetric_state(psi: np.ndarray) -> BlockState:
    """Embed a ket of the maximal-spin block (length N+1, m descending)."""
    psi = np.asarray(psi, dtype=complex)
    N = psi.shape[0] - 1
    lay = layout(N)
    blocks = [np.zeros((d, d), dtype=complex) for d in lay.dims]
    blocks[0] = np.outer(psi, psi.conj())
    return BlockState(N, tuple(blocks))


def maximally_mixed(N: int) -> BlockState:
    lay = layout(N)
    return BlockState(N, tuple(np.eye(d, dtype=complex) / 2**N for d in lay.dims))


def collective_blocks(N: int, name: str) -> list[np.ndarray]:
    out = []
    for j in layout(N).labels:
        sx, sy, sz = spin_matrices(j)
        out.append({"sx": sx, "sy": sy, "sz": sz,
                    "s2": np.eye(sx.shape[0]) * float(j) * (float(j) + 1)}[name])
    return out


def hamiltonian_blocks(N: int, kind: str, scale: float = 1.0) -> list[np.ndarray]:
    """alpha = 0 Ising / FTAT in block form, matching the dense Kac-normalised operators.

    Ising: sum_{i!=j} (chi/N) sz sz = (4/N) S_z^2 - 1.  FTAT: (2/N)(SxSy + SySx).
    """
    kind = kind.lower()
    out = []
    for j in layout(N).labels:
        sx, sy, sz = spin_matrices(j)
        if kind in ("ising", "oat"):
            h = (4.0 / N) * (sz @ sz) - np.eye(sz.shape[0])
        elif kind in ("ftat", "tat"):
            h = (2.0 / N) * (sx @ sy + sy @ sx)
        else:
            raise ValueError(f"unknown Hamiltonian kind {kind!r}")
        out.append(scale * h)
    return out


def _kron_rowmajor(A, B):
    # vec_r(A X B) = (A kron B^T) vec_r(X)
    return np.kron(A, B.T)


@lru_cache(maxsize=64)
def pauli_sandwich(N: int, axis: str) -> np.ndarray:
    """Matrix of rho -> sum_i sigma_i^axis rho sigma_i^axis on the block vector."""
    lay = layout(N)
    if N == 1:
        s = _PAULI_UD[axis]
        return _kron_rowmajor(s, s)
    sub = spin_labels(N - 1)
    sub_deg = {j1: degeneracy(N - 1, j1) for j1 in sub}
    index = {j: k for k, j in enumerate(lay.labels)}
    T = np.zeros((lay.size, lay.size), dtype=complex)
    s = _PAULI_UD[axis]
    half = Fraction(1, 2)
    for j1 in sub:
        d1 = int(2 * j1 + 1)
        act = np.kron(np.eye(d1), s)
        act_sup = _kron_rowmajor(act, act)
        parents = [j for j in (j1 + half, j1 - half) if j in index]
        for jin in parents:
            Vin = _cg_isometry(j1, jin)
            embed = _kron_rowmajor(Vin, Vin.T)          # rho_jin -> M_{j1}
            for jout in parents:
                Vout = _cg_isometry(j1, jout)
                project = _kron_rowmajor(Vout.T, Vout)  # M'_{j1} -> block jout
                ko, ki = index[jout], index[jin]
                w = N * sub_deg[j1] / lay.degens[ko]
                oo, oi = lay.offsets[ko], lay.offsets[ki]
                do, di = lay.dims[ko] ** 2, lay.dims[ki] ** 2
                T[oo:oo + do, oi:oi + di] += w * (project @ act_sup @ embed)
    return T


def commutator_matrix(N: int, H_blocks) -> np.ndarray:
    lay = layout(N)
    L = np.zeros((lay.size, lay.size), dtype=complex)
    for o, d, h in zip(lay.offsets, lay.dims, H_blocks):
        eye = np.eye(d)
        L[o:o + d * d, o:o + d * d] = -1j * (_kron_rowmajor(h, eye) - _kron_rowmajor(eye, h))
    return L


def block_liouvillian(N: int, H_blocks, noise: NoiseSpec) -> np.ndarray:
    L = commutator_matrix(N, H_blocks)
    for axis, g in zip("xyz", noise.rates):
        if g:
            L += 0.25 * g * (pauli_sandwich(N, axis) - N * np.eye(L.shape[0]))
    return L


class BlockPropagator:
    """Evolution under a fixed block Liouvillian.

    Exact propagation splits the Liouvillian into its decoupled sectors (for
    OAT these are the fixed m - m' sectors) and exponentiates each one.
    """

    def __init__(self, N: int, H_blocks, noise: NoiseSpec):
        self.N = N
        self.L = block_liouvillian(N, H_blocks, noise)
        self.weights = layout(N).weights()
        ncomp, lab = connected_components(csr_matrix(np.abs(self.L) > 0), directed=False)
        self.sectors = [np.flatnonzero(lab == c) for c in range(ncomp)]
        self.sectors = [s for s in self.sectors if len(s)]
        self._sub = [self.L[np.ix_(s, s)] for s in self.sectors]

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.L @ vec

    def apply_adjoint(self, vec: np.ndarray) -> np.ndarray:
        # adjoint w.r.t. <A, B> = sum_j d_j Tr(A_j^dag B_j)
        return (self.L.conj().T @ (self.weights * vec)) / self.weights

    def _exact(self, vec, t, adjoint):
        out = np.empty_like(vec)
        w = self.weights
        for s, Ls in zip(self.sectors, self._sub):
            if adjoint:
                E = expm(t * Ls).conj().T
                out[s] = (E @ (w[s] * vec[s])) / w[s]
            else:
                out[s] = expm(t * Ls) @ vec[s]
        return out

    def propagate(self, vec: np.ndarray, t: float, cfg: IntegratorConfig, adjoint: bool = False):
        vec = np.asarray(vec, dtype=complex)
        if t == 0:
            return vec.copy()
        if cfg.method == "expm":
            return self._exact(vec, t, adjoint)
        f = self.apply_adjoint if adjoint else self.apply
        sol = solve_ivp(lambda _t, y: f(y), (0.0, t), vec, method=cfg.method,
                        rtol=cfg.rtol, atol=cfg.atol, max_step=cfg.max_step)
        if sol.status < 0:
            raise PropagationError(sol.message, float(sol.t[-1]))
        return sol.y[:, -1]


@lru_cache(maxsize=32)
def _propagator(N: int, kind: str, scale: float, rates: tuple) -> BlockPropagator:
    return BlockPropagator(N, hamiltonian_blocks(N, kind, scale), NoiseSpec(*rates))


def propagator(N: int, kind: str, noise: NoiseSpec, scale: float = 1.0) -> BlockPropagator:
    if not noise.isotropic:
        raise UnsupportedConfigurationError(
            "block solver needs equal x/y/z dephasing rates; unequal rates break the symmetry"
        )
    return _propagator(N, kind.lower(), float(scale), noise.rates)


def perm_evolve(state: BlockState, kind: str, noise: NoiseSpec, duration: float,
                cfg: IntegratorConfig = IntegratorConfig(), scale: float = 1.0) -> BlockState:
    """Master-equation evolution of a block state under alpha = 0 Ising (OAT) or FTAT (TAT)."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    prop = propagator(state.N, kind, noise, scale)
    vec = prop.propagate(state.vector(), duration, cfg)
    return BlockState.from_vector(state.N, vec).hermitized()


@lru_cache(maxsize=None)
def _block_eig(j: Fraction, axis: str):
    sx, sy, sz = spin_matrices(j)
    return np.linalg.eigh({"x": sx, "y": sy, "z": sz}[axis])


def block_rotations(N: int, axis: str, angle: float, phi: float = 0.0) -> list[np.ndarray]:
    """Per-block exp(-i angle S_axis); axis 'initial' uses cos(phi) Sx + sin(phi) Sy."""
    out = []
    for j in layout(N).labels:
        if axis == "initial":
            sx, sy, _ = spin_matrices(j)
            out.append(hermitian_expm(np.cos(phi) * sx + np.sin(phi) * sy, -angle))
        elif axis == "z":
            m = np.diag(spin_matrices(j)[2]).real
            out.append(np.diag(np.exp(-1j * angle * m)))
        else:
            w, v = _block_eig(j, axis)
            out.append((v * np.exp(-1j * angle * w)) @ v.conj().T)
    return out


def perm_rotate(state: BlockState, axis: str, angle: float, phi: float = 0.0) -> BlockState:
    Us = block_rotations(state.N, axis, angle, phi)
    return BlockState(state.N, tuple(U @ b @ U.conj().T for U, b in zip(Us, state.blocks)))


def block_qfi_terms(block: np.ndarray, G: np.ndarray, cut: float = 1e-12):
    """QFI of one block and the Hermitian X solving rho X + X rho = i[G, rho]."""
    lam, vec = np.linalg.eigh(block)
    Ge = vec.conj().T @ G @ vec
    diff = lam[None, :] - lam[:, None]          # lam_j - lam_i
    tot = lam[:, None] + lam[None, :]
    keep = tot > cut
    C = 1j * diff * Ge
    Xe = np.where(keep, C / np.where(keep, tot, 1.0), 0.0)
    F = 2.0 * float(np.real(np.sum(np.where(keep, diff**2 / np.where(keep, tot, 1.0), 0.0) * np.abs(Ge) ** 2)))
    return F, vec @ Xe @ vec.conj().T


def perm_qfi(state: BlockState, generator: str = "sz") -> float:
    """sum_j d_j F_Q(rho_j; S_z^(j)); cross-block and cross-copy terms vanish."""
    Gs = collective_blocks(state.N, generator)
    return float(sum(g * block_qfi_terms(b, G)[0] for g, b, G in zip(state.degens, state.blocks, Gs)))


@lru_cache(maxsize=8)
def dicke_basis(N: int):
    """Dense columns |j, m, xi> (m descending) per spin label, from S^2 and S_z eigenspaces."""
    if N > MAX_DENSE_QUBITS:
        raise ValueError(f"dense embedding limited to N <= {MAX_DENSE_QUBITS}")
    ops = collective_operators(N)
    sz = np.real(np.diag(ops.sz.matrix))
    s2 = ops.s2.matrix
    sminus = ops.s_minus.matrix
    basis = {}
    for j in spin_labels(N):
        J = float(j)
        # highest weight: S_z = j inside the S^2 = j(j+1) eigenspace
        sel = np.flatnonzero(np.isclose(sz, J))
        sub = s2[np.ix_(sel, sel)]
        w, v = np.linalg.eigh(sub)
        hw = v[:, np.isclose(w, J * (J + 1), atol=1e-8)]
        tops = np.zeros((2**N, hw.shape[1]), dtype=complex)
        tops[sel] = hw
        ladders = [tops]
        cur = tops
        for k in range(1, int(2 * j) + 1):
            m = J - k + 1
            cur = sminus @ cur / np.sqrt(J * (J + 1) - m * (m - 1))
            ladders.append(cur)
        basis[j] = np.stack(ladders, axis=1)     # (2^N, 2j+1, d_j)
    return basis


def to_dense(state: BlockState) -> np.ndarray:
    """Embed per-copy blocks into d_j orthogonal copies of the computational basis."""
    if state.N > MAX_DENSE_QUBITS:
        raise ValueError(f"to_dense limited to N <= {MAX_DENSE_QUBITS}")
    basis = dicke_basis(state.N)
    D = 2**state.N
    rho = np.zeros((D, D), dtype=complex)
    for j, b in zip(state.labels, state.blocks):
        B = basis[j]
        for xi in range(B.shape[2]):
            V = B[:, :, xi]
            rho += V @ b @ V.conj().T
    return rho


def from_dense(rho: np.ndarray) -> BlockState:
    """Per-copy blocks of a permutation-invariant dense state (copy-averaged)."""
    N = rho.shape[0].bit_length() - 1
    basis = dicke_basis(N)
    blocks = []
    for j in spin_labels(N):
        B = basis[j]
        acc = sum(B[:, :, xi].conj().T @ rho @ B[:, :, xi] for xi in range(B.shape[2]))
        blocks.append(acc / B.shape[2])
    return BlockState(N, tuple(blocks))
