"""Layered entangle-rotate circuit: objective (QFI for S_z) and its adjoint gradient.

Parameter vector layout: (theta_1, phi_1, thetaI_1, thetax_1, ..., thetaI_n, thetax_n, theta_y).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import perm
from .lindblad import IntegratorConfig, NoiseSpec, evolve, evolve_adjoint, liouvillian
from .metrology import qfi_sensitivity
from .perm import BlockState
from .spin import (MAX_DENSE_QUBITS, SpinSystem, build_couplings, build_hamiltonian,
                   collective_operators, rotation)

KIND_ALIASES = {"ising": "ising", "oat": "ising", "ftat": "ftat", "tat": "ftat"}
COUPLING_NORMS = ("unit-mean", "kac")


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if np.any(self.lower >= self.upper):
            raise ValueError("bounds need lower < upper componentwise")

    @classmethod
    def for_layers(cls, n: int) -> "Bounds":
        lo = np.zeros(2 * n + 3)
        hi = np.full(2 * n + 3, np.pi)
        hi[1] = 2 * np.pi
        return cls(lo, hi)

    def __len__(self):
        return len(self.lower)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def to_unit(self, x):
        return (np.asarray(x) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        return self.lower + np.asarray(u) * (self.upper - self.lower)


@dataclass(frozen=True)
class CircuitSpec:
    """Circuit definition. ``noise`` rates are in units of ``chi``.

    ``coupling_norm``: ``"kac"`` uses the Kac-normalised Pauli Hamiltonian as
    built by ``build_hamiltonian``; ``"unit-mean"`` rescales it by N/4, i.e.
    couplings averaging chi acting on spin-1/2 operators (alpha = 0 gives
    chi S_z^2 and chi (SxSy + SySx) up to constants).

    ``rate_scale`` multiplies every dephasing rate before integration. 1 keeps
    jump operators sigma/2 at rate gamma; 1/4 is the same as jump operators
    sigma/4, which is the calibrated default (see README).
    """

    system: SpinSystem
    kind: str = "ising"
    layers: int = 1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    solver: str = "dense"
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    chi: float = 1.0
    coupling_norm: str = "unit-mean"
    rate_scale: float = 0.25

    def __post_init__(self):
        kind = KIND_ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise ValueError(f"unknown interaction kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.chi <= 0:
            raise ValueError("chi must be positive")
        if not (np.isfinite(self.rate_scale) and self.rate_scale > 0):
            raise ValueError("rate_scale must be positive")
        if self.coupling_norm not in COUPLING_NORMS:
            raise ValueError(f"coupling_norm must be one of {COUPLING_NORMS}")
        if self.solver == "perm":
            if self.system.alpha != 0:
                raise DomainError("block solver needs alpha = 0")
            if not self.noise.isotropic:
                raise DomainError("block solver needs equal dephasing rates on x, y, z")
        elif self.solver == "dense":
            if self.system.N > MAX_DENSE_QUBITS:
                raise DomainError(f"dense solver limited to N <= {MAX_DENSE_QUBITS}")
        else:
            raise ValueError(f"solver must be 'dense' or 'perm', got {self.solver!r}")

    @property
    def N(self) -> int:
        return self.system.N

    @property
    def n_params(self) -> int:
        return 2 * self.layers + 3

    @property
    def bounds(self) -> Bounds:
        return Bounds.for_layers(self.layers)

    @property
    def scale(self) -> float:
        return self.N / 4 if self.coupling_norm == "unit-mean" else 1.0

    @property
    def effective_noise(self) -> NoiseSpec:
        """Rates actually integrated: gamma/chi values times chi times rate_scale."""
        return NoiseSpec(*(g * self.chi * self.rate_scale for g in self.noise.rates))

    @cached_property
    def hamiltonian(self) -> np.ndarray:
        H = build_hamiltonian(self.kind, build_couplings(self.system, self.chi)).matrix
        return self.scale * H

    @property
    def block_kind(self) -> str:
        return "oat" if self.kind == "ising" else "tat"


def cumulative(x) -> tuple[float, float]:
    """Total entangling strength and total x-rotation angle over all layers."""
    x = np.asarray(x)
    inner = x[2:-1]
    return float(inner[0::2].sum()), float(inner[1::2].sum())


def split_params(x):
    x = np.asarray(x, dtype=float)
    inner = x[2:-1]
    return x[0], x[1], inner[0::2], inner[1::2], x[-1]


class _Backend:
    """Stage operations shared by the forward and adjoint passes."""

    def __init__(self, spec: CircuitSpec):
        self.spec = spec

    def check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.spec.n_params,):
            raise DomainError(f"expected {self.spec.n_params} parameters, got shape {x.shape}")
        if not np.all(np.isfinite(x)) or not self.spec.bounds.contains(x, 1e-12):
            raise DomainError(f"parameters outside bounds: {x}")
        return x


class DenseBackend(_Backend):
    def __init__(self, spec):
        super().__init__(spec)
        ops = collective_operators(spec.N)
        self.sx, self.sy, self.sz = ops.sx.matrix, ops.sy.matrix, ops.sz.matrix
        self.H = spec.hamiltonian
        self.noise = spec.effective_noise

    def initial(self):
        D = 2**self.spec.N
        rho = np.zeros((D, D), dtype=complex)
        rho[0, 0] = 1.0
        return rho

    def rotate(self, rho, axis, angle, phi=0.0):
        U = rotation(axis, self.spec.N, angle, phi).matrix
        return U @ rho @ U.conj().T

    def unrotate(self, lam, axis, angle, phi=0.0):
        U = rotation(axis, self.spec.N, angle, phi).matrix
        return U.conj().T @ lam @ U

    def entangle(self, rho, duration):
        return evolve(rho, self.H, self.noise, duration, self.spec.integrator)

    def entangle_adjoint(self, lam, duration):
        return evolve_adjoint(lam, self.H, self.noise, duration, self.spec.integrator)

    def generator(self, rho):
        return liouvillian(rho, self.H, self.noise)

    def spin_op(self, axis, phi=0.0):
        if axis == "initial":
            return np.cos(phi) * self.sx + np.sin(phi) * self.sy
        return {"x": self.sx, "y": self.sy, "z": self.sz}[axis]

    def rot_derivative(self, rho, axis, phi=0.0):
        G = self.spin_op(axis, phi)
        return -1j * (G @ rho - rho @ G)

    @staticmethod
    def pair(lam, drho) -> float:
        return float(np.real(np.sum(lam.T * drho)))


class BlockBackend(_Backend):
    def __init__(self, spec):
        super().__init__(spec)
        N = spec.N
        self.prop = perm.propagator(N, spec.block_kind, spec.effective_noise, spec.scale * spec.chi)
        self.ops = {a: perm.collective_blocks(N, "s" + a) for a in "xyz"}
        self.degens = perm.layout(N).degens

    def initial(self):
        return perm.down_state(self.spec.N)

    def rotate(self, st, axis, angle, phi=0.0):
        return perm.perm_rotate(st, axis, angle, phi)

    def unrotate(self, lam, axis, angle, phi=0.0):
        Us = perm.block_rotations(self.spec.N, axis, angle, phi)
        return [U.conj().T @ L @ U for U, L in zip(Us, lam)]

    def entangle(self, st, duration):
        vec = self.prop.propagate(st.vector(), duration, self.spec.integrator)
        return BlockState.from_vector(st.N, vec).hermitized()

    def entangle_adjoint(self, lam, duration):
        lay = perm.layout(self.spec.N)
        vec = self.prop.propagate(lay.join(lam), duration, self.spec.integrator, adjoint=True)
        return [0.5 * (b + b.conj().T) for b in lay.split(vec)]

    def generator(self, st):
        return perm.layout(st.N).split(self.prop.apply(st.vector()))

    def spin_op(self, axis, phi=0.0):
        if axis == "initial":
            return [np.cos(phi) * a + np.sin(phi) * b for a, b in zip(self.ops["x"], self.ops["y"])]
        return self.ops[axis]

    def rot_derivative(self, st, axis, phi=0.0):
        return [-1j * (G @ b - b @ G) for G, b in zip(self.spin_op(axis, phi), st.blocks)]

    def pair(self, lam, drho) -> float:
        return float(sum(g * np.real(np.sum(L.T * d)) for g, L, d in zip(self.degens, lam, drho)))


def backend(spec: CircuitSpec) -> _Backend:
    return BlockBackend(spec) if spec.solver == "perm" else DenseBackend(spec)


def _forward(be: _Backend, x):
    th1, ph1, thI, thx, thy = split_params(x)
    chi = be.spec.chi
    rho = be.rotate(be.initial(), "initial", th1, ph1)
    trace = [rho]
    for tI, tx in zip(thI, thx):
        rho = be.entangle(rho, tI / chi)
        trace.append(rho)
        rho = be.rotate(rho, "x", tx)
        trace.append(rho)
    rho = be.rotate(rho, "y", thy)
    return rho, trace


def run_circuit(spec: CircuitSpec, x):
    be = backend(spec)
    return _forward(be, be.check_x(x))[0]


def check_state(rho, tol: float = 1e-8):
    """Trace, Hermiticity and positivity of a circuit output (raises AssertionError)."""
    if isinstance(rho, BlockState):
        try:
            rho.check(tol)
        except ValueError as exc:
            raise AssertionError(str(exc)) from None
        return
    if abs(np.trace(rho).real - 1) > tol:
        raise AssertionError(f"trace {np.trace(rho).real} != 1")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise AssertionError("output not Hermitian")
    if np.linalg.eigvalsh(rho)[0] < -tol:
        raise AssertionError("output has a negative eigenvalue")


def objective(spec: CircuitSpec, x) -> float:
    return qfi_sensitivity(run_circuit(spec, x))[0]


def value_and_gradient(spec: CircuitSpec, x):
    """QFI and its gradient by one forward pass and one adjoint (backward) pass."""
    be = backend(spec)
    x = be.check_x(x)
    th1, ph1, thI, thx, thy = split_params(x)
    chi = spec.chi
    rho, trace = _forward(be, x)
    F, lam = qfi_sensitivity(rho)
    n = spec.layers
    grad = np.zeros_like(x)

    grad[-1] = be.pair(lam, be.rot_derivative(rho, "y"))
    lam = be.unrotate(lam, "y", thy)
    for k in reversed(range(n)):
        after_rot = trace[2 * k + 2]
        after_ent = trace[2 * k + 1]
        grad[3 + 2 * k] = be.pair(lam, be.rot_derivative(after_rot, "x"))
        lam = be.unrotate(lam, "x", thx[k])
        grad[2 + 2 * k] = be.pair(lam, be.generator(after_ent)) / chi
        lam = be.entangle_adjoint(lam, thI[k] / chi)
    first = trace[0]
    grad[0] = be.pair(lam, be.rot_derivative(first, "initial", ph1))
    grad[1] = be.pair(lam, be.rot_derivative(first, "z"))
    if not np.all(np.isfinite(grad)):
        grad = fd_gradient(spec, x)
    return F, grad


def gradient(spec: CircuitSpec, x) -> np.ndarray:
    return value_and_gradient(spec, x)[1]


def fd_gradient(spec: CircuitSpec, x, step: float = 1e-5) -> np.ndarray:
    """Central differences; one-sided at active bounds."""
    x = np.asarray(x, dtype=float)
    lo, hi = spec.bounds.lower, spec.bounds.upper
    g = np.zeros_like(x)
    for i in range(len(x)):
        up, dn = x.copy(), x.copy()
        up[i] = min(x[i] + step, hi[i])
        dn[i] = max(x[i] - step, lo[i])
        g[i] = (objective(spec, up) - objective(spec, dn)) / (up[i] - dn[i])
    return g
