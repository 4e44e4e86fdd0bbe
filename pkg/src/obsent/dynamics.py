"""Piecewise-constant driving protocols, their propagators, and the
anti-unitary time-reversal construction.

Protocols are sequences of Hamiltonians, one per time step, with exact
per-step exponentials.  This makes the time-reversal identity
Theta^-1 U_Theta Theta = U^dag exact up to eigendecomposition error rather
than Trotter error, so reversal tests carry tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .linalg import (
    DensityMatrix,
    HermitianOperator,
    as_hermitian,
    conjugate_by,
    propagator_step,
)


class Protocol:
    """Piecewise-constant map from time to Hamiltonian.

    Step k governs the window [k dt, (k+1) dt) with dt = duration / steps.
    Steps are either held explicitly or produced on demand by a builder,
    which keeps long drives on large Hilbert spaces out of memory.
    """

    __slots__ = ("duration", "n_steps", "metadata", "is_constant",
                 "_steps", "_builder", "_first")

    def __init__(self, duration, hamiltonians=None, *, builder=None,
                 n_steps=None, metadata=None, constant=None):
        self.duration = float(duration)
        self.metadata = dict(metadata or {})
        if hamiltonians is not None:
            steps = tuple(as_hermitian(h) for h in hamiltonians)
            if not steps:
                raise DimensionMismatch("a protocol needs at least one step")
            dim = steps[0].dim
            if any(h.dim != dim for h in steps):
                raise DimensionMismatch("all protocol steps must share a dimension")
            self._steps = steps
            self._builder = None
            self.n_steps = len(steps)
            self._first = steps[0]
            if constant is None:
                constant = all(h is steps[0]
                               or np.array_equal(h.matrix, steps[0].matrix)
                               for h in steps[1:])
        else:
            if builder is None or not n_steps or n_steps < 1:
                raise DimensionMismatch("builder protocols need n_steps >= 1")
            self._steps = None
            self._builder = builder
            self.n_steps = int(n_steps)
            self._first = as_hermitian(builder(0))
            constant = bool(constant)
        self.is_constant = bool(constant)

    @property
    def dim(self) -> int:
        return self._first.dim

    @property
    def dt(self) -> float:
        return self.duration / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.n_steps + 1)

    def hamiltonian_at(self, k: int) -> HermitianOperator:
        if not 0 <= k < self.n_steps:
            raise IndexError(f"step {k} outside 0..{self.n_steps - 1}")
        if self._steps is not None:
            return self._steps[k]
        if k == 0 or self.is_constant:
            return self._first
        return as_hermitian(self._builder(k))

    def grid_hamiltonian(self, k: int) -> HermitianOperator:
        """Hamiltonian in force at grid point k (last step holds at the end)."""
        return self.hamiltonian_at(min(k, self.n_steps - 1))


def constant_protocol(h, duration: float, steps: int = 1,
                      metadata=None) -> Protocol:
    h = as_hermitian(h)
    return Protocol(duration, (h,) * steps, metadata=metadata or {"drive": "none"},
                    constant=True)


@dataclass(frozen=True)
class Propagator:
    """Unitary for a span of a protocol."""

    matrix: np.ndarray
    span: tuple[float, float]
    step_count: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def trotter_propagator(p: Protocol) -> Propagator:
    """Ordered product exp(-i H_{N-1} dt) ... exp(-i H_0 dt).

    Constant protocols collapse to a single exact exponential.
    """
    if p.duration == 0.0:
        return Propagator(np.eye(p.dim, dtype=np.complex128), (0.0, 0.0),
                          p.n_steps)
    if p.is_constant:
        u = propagator_step(p.hamiltonian_at(0), p.duration)
        return Propagator(u, (0.0, p.duration), p.n_steps)
    dt = p.dt
    u = np.eye(p.dim, dtype=np.complex128)
    last_h, last_step = None, None
    for k in range(p.n_steps):
        h = p.hamiltonian_at(k)
        if last_h is None or not np.array_equal(h.matrix, last_h.matrix):
            last_h, last_step = h, propagator_step(h, dt)
        u = last_step @ u
    return Propagator(u, (0.0, p.duration), p.n_steps)


def evolve(rho: DensityMatrix, u) -> DensityMatrix:
    """U rho U^dag; trace and spectrum are preserved."""
    m = u.matrix if isinstance(u, Propagator) else np.asarray(u)
    return conjugate_by(rho, m)


def time_reverse_state(rho: DensityMatrix) -> DensityMatrix:
    """Theta rho Theta^-1: entrywise conjugation in the computational basis."""
    return DensityMatrix(rho.matrix.conj(), rho.dims, validate=False)


def reverse_operator(o: np.ndarray) -> np.ndarray:
    """Theta O Theta^-1 for a matrix in the computational basis."""
    return o.conj()


def reversed_protocol(p: Protocol) -> Protocol:
    """Protocol of the time-reversed process.

    Step k of the output is the conjugated step N-1-k of the input, so the
    reversed propagator runs the drive backwards with conjugated Hamiltonians.
    """
    meta = dict(p.metadata)
    meta["reversed"] = not meta.get("reversed", False)
    n = p.n_steps

    def builder(k):
        return HermitianOperator(p.hamiltonian_at(n - 1 - k).matrix.conj())

    return Protocol(p.duration, builder=builder, n_steps=n, metadata=meta,
                    constant=p.is_constant)


def recovery_check(rho0: DensityMatrix, p: Protocol) -> float:
    """Residual of recovering rho(0) through the time-reversed process.

    Runs the forward protocol, time-reverses the final state, propagates it
    with the reversed protocol, reverses again, and returns the max-norm
    deviation from the initial state.
    """
    u_fwd = trotter_propagator(p)
    rho_t = evolve(rho0, u_fwd)
    u_rev = trotter_propagator(reversed_protocol(p))
    recon = time_reverse_state(evolve(time_reverse_state(rho_t), u_rev))
    return float(np.max(np.abs(rho0.matrix - recon.matrix)))
