"""Dense complex-matrix substrate: Hermitian eigendecompositions, unitary
propagation, tensor products, partial trace and block dephasing.

All operators are dense ``numpy`` arrays of complex doubles.  Everything here
is pure and deterministic for fixed input bits; wrapper objects are immutable
after construction.
"""

from __future__ import annotations

import numpy as np

from . import tolerances as tol
from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NotADensityMatrix,
    NotHermitian,
)


def as_complex_matrix(m) -> np.ndarray:
    """Coerce to a C-contiguous complex128 matrix with finite entries."""
    a = np.ascontiguousarray(m, dtype=np.complex128)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a.view(np.float64))):
        raise ValueError("matrix contains non-finite entries")
    return a


def _max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


class HermitianOperator:
    """A Hermitian matrix with a lazily cached eigendecomposition.

    The spectrum, once computed, is reused by every downstream consumer
    (Gibbs states, propagators, energy grainings), so the operator is the
    natural unit of sharing for exact-diagonalization work.
    """

    __slots__ = ("matrix", "_eig")

    def __init__(self, matrix):
        a = as_complex_matrix(matrix)
        if a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"operator must be square, got {a.shape}")
        dev = _max_abs(a - a.conj().T)
        if dev > tol.HERMITICITY_RTOL * max(1.0, _max_abs(a)):
            raise NotHermitian(f"Hermiticity violated by {dev:.3e}")
        a = (a + a.conj().T) / 2
        a.setflags(write=False)
        self.matrix = a
        self._eig = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues ascending and the unitary matrix of eigenvectors."""
        return eig_hermitian(self)

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim})"


def as_hermitian(h) -> HermitianOperator:
    return h if isinstance(h, HermitianOperator) else HermitianOperator(h)


class DensityMatrix:
    """Positive unit-trace Hermitian operator on a tensor-product space.

    ``dims`` records the factor dimensions so partial traces know the
    tensor structure.  Validation can be skipped by trusted internal
    callers (unitary conjugation preserves every invariant).
    """

    __slots__ = ("matrix", "dims")

    def __init__(self, matrix, dims=None, *, validate=True):
        a = as_complex_matrix(matrix)
        n = a.shape[0]
        if a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"state must be square, got {a.shape}")
        if dims is None:
            dims = (n,)
        dims = tuple(int(d) for d in dims)
        if int(np.prod(dims)) != n:
            raise DimensionMismatch(f"dims {dims} do not multiply to {n}")
        if validate:
            dev = _max_abs(a - a.conj().T)
            if dev > tol.HERMITICITY_RTOL * max(1.0, _max_abs(a)):
                raise NotHermitian(f"state Hermiticity violated by {dev:.3e}")
            a = (a + a.conj().T) / 2
            tr = complex(np.trace(a))
            if abs(tr - 1.0) > tol.TRACE_ONE:
                raise NotADensityMatrix(f"trace is {tr}, not 1")
            lo = float(np.linalg.eigvalsh(a)[0])
            if lo < tol.DENSITY_EIG_FLOOR:
                raise NotADensityMatrix(f"negative eigenvalue {lo:.3e}")
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        self.matrix = a
        self.dims = dims

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def __repr__(self):
        return f"DensityMatrix(dims={self.dims})"


def kron(a, b) -> np.ndarray:
    """Tensor product (a x b)[(i*rb+k),(j*cb+l)] = a[i,j] b[k,l]."""
    return np.kron(as_complex_matrix(a), as_complex_matrix(b))


def trace_product(a: np.ndarray, b: np.ndarray) -> complex:
    """tr(a b) without forming the product."""
    return complex(np.sum(a * b.T))


def kron_all(factors) -> np.ndarray:
    out = as_complex_matrix(factors[0])
    for f in factors[1:]:
        out = np.kron(out, as_complex_matrix(f))
    return out


def eig_hermitian(h) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian operator.

    Returns eigenvalues sorted ascending and a unitary whose columns are the
    matching eigenvectors.  Bases inside degenerate subspaces are whatever the
    backend produces, but deterministic for identical input bits.
    """
    h = as_hermitian(h)
    if h._eig is None:
        try:
            w, v = np.linalg.eigh(h.matrix)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceFailure(str(exc)) from exc
        w = np.ascontiguousarray(w)
        v = np.ascontiguousarray(v)
        w.setflags(write=False)
        v.setflags(write=False)
        h._eig = (w, v)
    return h._eig


def propagator_step(h, dt: float) -> np.ndarray:
    """exp(-i h dt) through the eigendecomposition of h."""
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    h = as_hermitian(h)
    w, v = h.eig()
    phases = np.exp(-1j * w * dt)
    return (v * phases) @ v.conj().T


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Reduced state on the factors listed in ``keep`` (original order)."""
    keep = sorted(set(int(k) for k in keep))
    dims = rho.dims
    n = len(dims)
    if not keep or any(k < 0 or k >= n for k in keep):
        raise DimensionMismatch(f"keep={keep} invalid for {n} factors")
    if len(keep) == n:
        return rho
    keep_set = set(keep)
    # merge adjacent factors with the same keep/trace status
    grouped_dims, grouped_keep = [], []
    for k in range(n):
        flag = k in keep_set
        if grouped_keep and grouped_keep[-1] == flag:
            grouped_dims[-1] *= dims[k]
        else:
            grouped_dims.append(dims[k])
            grouped_keep.append(flag)
    traced = [i for i, flag in enumerate(grouped_keep) if not flag]
    t = rho.matrix.reshape(tuple(grouped_dims) * 2)
    for offset, k in enumerate(traced):
        ax = k - offset  # axes shift as we consume them
        t = np.trace(t, axis1=ax, axis2=ax + t.ndim // 2)
    d_keep = int(np.prod([dims[k] for k in keep]))
    out = np.ascontiguousarray(t.reshape(d_keep, d_keep))
    return DensityMatrix(out, tuple(dims[k] for k in keep), validate=False)


def dephase(rho: DensityMatrix, x) -> DensityMatrix:
    """Pinch rho to the block-diagonal form sum_x Pi_x rho Pi_x.

    ``x`` is a coarse-graining exposing ``basis`` (unitary whose column
    blocks span the outcomes) and ``slices`` (per-outcome column ranges).
    """
    if x.dim != rho.dim:
        raise DimensionMismatch(
            f"graining dim {x.dim} vs state dim {rho.dim}")
    b = x.basis
    r = b.conj().T @ rho.matrix @ b
    out = np.zeros_like(r)
    for sl in x.slices:
        out[sl, sl] = r[sl, sl]
    m = b @ out @ b.conj().T
    return DensityMatrix(m, rho.dims, validate=False)


def conjugate_by(rho: DensityMatrix, u: np.ndarray) -> DensityMatrix:
    """u rho u^dag with the tensor structure carried along."""
    if u.shape[0] != rho.dim:
        raise DimensionMismatch(f"propagator dim {u.shape[0]} vs state {rho.dim}")
    m = u @ rho.matrix @ u.conj().T
    return DensityMatrix(m, rho.dims, validate=False)
