"""Coarse-grainings: complete orthogonal projector families with volumes.

A coarse-graining is stored as a single orthonormal basis (one unitary) whose
columns are grouped into contiguous blocks, one block per outcome.  The
projector for outcome x is B_x B_x^dag where B_x is the column block; the
block widths are the volume terms V_x.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import tolerances as tol
from .errors import (
    DimensionMismatch,
    NonCommuting,
    NotNormalized,
    NotOrthonormal,
    UnknownOutcome,
)
from .linalg import DensityMatrix, as_hermitian, eig_hermitian, kron_all


class CoarseGraining:
    """Complete family of mutually orthogonal projectors with outcome labels.

    Parameters
    ----------
    basis : unitary matrix whose column blocks span the outcome subspaces
    slices : per-outcome column ranges into ``basis``
    labels : hashable outcome descriptors, one per slice
    kind : "energy" | "rank1" | "product" | "energy_particle" | "custom"
    delta : bin width when labels are energy-window lower edges
    """

    __slots__ = ("basis", "slices", "labels", "kind", "delta", "_index")

    def __init__(self, basis, slices, labels, kind="custom", delta=None,
                 validate=True):
        basis = np.ascontiguousarray(basis, dtype=np.complex128)
        if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
            raise DimensionMismatch(f"basis must be square, got {basis.shape}")
        if validate:
            gram_dev = float(np.max(np.abs(
                basis.conj().T @ basis - np.eye(basis.shape[0]))))
            if gram_dev > tol.COMPLETENESS:
                raise NotOrthonormal(
                    f"graining basis not orthonormal (dev {gram_dev:.3e})")
        slices = tuple(slices)
        labels = tuple(labels)
        if len(slices) != len(labels):
            raise DimensionMismatch("one label per projector required")
        covered = 0
        for sl in slices:
            if sl.start != covered:
                raise DimensionMismatch("outcome slices must tile the basis")
            covered = sl.stop
        if covered != basis.shape[0]:
            raise DimensionMismatch("outcome slices must cover the basis")
        basis.setflags(write=False)
        self.basis = basis
        self.slices = slices
        self.labels = labels
        self.kind = kind
        self.delta = delta
        self._index = {lab: i for i, lab in enumerate(labels)}
        if len(self._index) != len(labels):
            raise DimensionMismatch("outcome labels must be unique")

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.labels)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([sl.stop - sl.start for sl in self.slices], dtype=np.int64)

    def outcome_index(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownOutcome(f"no outcome labeled {label!r}") from None

    def projector(self, label) -> np.ndarray:
        """Dense projector for one outcome (built on demand)."""
        sl = self.slices[self.outcome_index(label)]
        block = self.basis[:, sl]
        return block @ block.conj().T

    def conjugated(self) -> "CoarseGraining":
        """Entrywise complex conjugate of every projector (time reversal)."""
        return CoarseGraining(self.basis.conj(), self.slices, self.labels,
                              kind=self.kind, delta=self.delta)

    def __repr__(self):
        return (f"CoarseGraining(kind={self.kind!r}, dim={self.dim}, "
                f"outcomes={self.n_outcomes})")


class OutcomeDistribution:
    """Probabilities over the outcomes of a coarse-graining."""

    __slots__ = ("labels", "probabilities", "volumes")

    def __init__(self, labels, probabilities, volumes):
        p = np.asarray(probabilities, dtype=np.float64)
        v = np.asarray(volumes, dtype=np.int64)
        labels = tuple(labels)
        if not (len(labels) == p.size == v.size):
            raise DimensionMismatch("labels/probabilities/volumes must align")
        if float(p.min(initial=0.0)) < tol.PROB_NEGATIVE_CLIP:
            raise NotNormalized(f"negative probability {p.min():.3e}")
        p = np.where(p < 0.0, 0.0, p)
        s = float(p.sum())
        if abs(s - 1.0) > tol.PROB_NORMALIZATION:
            raise NotNormalized(f"probabilities sum to {s}")
        p.setflags(write=False)
        v.setflags(write=False)
        self.labels = labels
        self.probabilities = p
        self.volumes = v

    def __len__(self):
        return len(self.labels)

    def probability(self, label) -> float:
        return float(self.probabilities[self.labels.index(label)])


def _bin_energies(energies, delta, anchor):
    """Bin indices for half-open windows [anchor + k*delta, anchor + (k+1)*delta).

    Values within the edge-snap tolerance of an upper edge go to the upper bin.
    """
    return np.floor((energies - anchor + tol.BIN_EDGE_SNAP) / delta).astype(np.int64)


def energy_graining(h, delta: float, anchor: float | None = None) -> CoarseGraining:
    """Windows of width ``delta`` over the spectrum of ``h``.

    Labels carry the window's lower edge.  Empty windows are dropped; the
    anchor defaults to the smallest eigenvalue so the ground state sits at a
    bin edge.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    h = as_hermitian(h)
    w, v = h.eig()
    if anchor is None:
        anchor = float(w[0])
    bins = _bin_energies(w, delta, anchor)
    slices, labels = [], []
    start = 0
    for k in np.unique(bins):
        count = int(np.sum(bins == k))
        slices.append(slice(start, start + count))
        labels.append(float(anchor + k * delta))
        start += count
    # eigh sorts ascending, so each window's eigenvectors are already contiguous
    return CoarseGraining(v, slices, labels, kind="energy", delta=float(delta))


def rank1_graining(basis) -> CoarseGraining:
    """One projector per vector of a complete orthonormal basis."""
    b = np.ascontiguousarray(np.column_stack(basis) if isinstance(basis, (list, tuple))
                             else basis, dtype=np.complex128)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise NotOrthonormal(f"need a complete basis, got shape {b.shape}")
    gram_dev = float(np.max(np.abs(b.conj().T @ b - np.eye(b.shape[0]))))
    if gram_dev > tol.GRAM_IDENTITY:
        raise NotOrthonormal(f"Gram matrix deviates by {gram_dev:.3e}")
    d = b.shape[0]
    return CoarseGraining(b, [slice(i, i + 1) for i in range(d)],
                          list(range(d)), kind="rank1")


def _mixed_radix_columns(col_ranges, dims):
    """Kron-ordering column indices for a cartesian product of column sets."""
    strides = np.ones(len(dims), dtype=np.int64)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    idx = np.zeros(1, dtype=np.int64)
    for cols, stride in zip(col_ranges, strides):
        idx = (idx[:, None] + np.asarray(cols, dtype=np.int64)[None, :] * stride).ravel()
    return idx


def product_graining(parts, dims=None, validate=True) -> CoarseGraining:
    """Tensor product of coarse-grainings; labels become tuples.

    Parts are individually validated at construction, so products built from
    them may skip the (redundant) orthonormality re-check.
    """
    parts = list(parts)
    part_dims = [p.dim for p in parts]
    total = int(np.prod(part_dims))
    if dims is not None and int(np.prod(tuple(dims))) != total:
        raise DimensionMismatch(
            f"dims {tuple(dims)} do not multiply to {total}")
    big = kron_all([p.basis for p in parts])
    order = []
    slices, labels = [], []
    start = 0
    for combo in itertools.product(*[range(p.n_outcomes) for p in parts]):
        ranges = [range(p.slices[i].start, p.slices[i].stop)
                  for p, i in zip(parts, combo)]
        cols = _mixed_radix_columns(ranges, part_dims)
        order.append(cols)
        slices.append(slice(start, start + cols.size))
        labels.append(tuple(p.labels[i] for p, i in zip(parts, combo)))
        start += cols.size
    perm = np.concatenate(order)
    return CoarseGraining(big[:, perm], slices, labels, kind="product",
                          validate=validate)


def _cluster_values(values, atol=1e-8):
    """Group sorted values into clusters separated by more than atol."""
    clusters = []
    current = [values[0]]
    for v in values[1:]:
        if v - current[-1] > atol:
            clusters.append(current)
            current = [v]
        else:
            current.append(v)
    clusters.append(current)
    return clusters


def energy_particle_graining(h, n, delta_e: float,
                             anchor: float | None = None) -> CoarseGraining:
    """Joint (energy window, particle number) graining for commuting h, n.

    A simultaneous eigenbasis is built by diagonalizing h inside each
    eigenspace of n; outcomes are labeled (window lower edge, N) and
    V_{E,N} counts the joint eigenvectors in the window and sector.
    """
    if not delta_e > 0:
        raise ValueError("delta_e must be positive")
    h = as_hermitian(h)
    n = as_hermitian(n)
    if h.dim != n.dim:
        raise DimensionMismatch("h and n must act on the same space")
    comm = h.matrix @ n.matrix - n.matrix @ h.matrix
    dev = float(np.max(np.abs(comm)))
    if dev > tol.COMMUTATOR:
        raise NonCommuting(f"[h, n] deviates by {dev:.3e}")

    wn, vn = n.eig()
    sector_values = []
    columns, energies, numbers = [], [], []
    pos = 0
    for cluster in _cluster_values(list(wn)):
        size = len(cluster)
        block = vn[:, pos:pos + size]
        pos += size
        mean = float(np.mean(cluster))
        label = int(round(mean)) if abs(mean - round(mean)) <= 1e-8 else mean
        sector_values.append(label)
        hb = block.conj().T @ h.matrix @ block
        hb = (hb + hb.conj().T) / 2
        we, ve = np.linalg.eigh(hb)
        columns.append(block @ ve)
        energies.append(we)
        numbers.append(np.full(size, len(sector_values) - 1, dtype=np.int64))

    all_cols = np.concatenate(columns, axis=1)
    all_e = np.concatenate(energies)
    all_n = np.concatenate(numbers)
    if anchor is None:
        anchor = float(all_e.min())
    bins = _bin_energies(all_e, delta_e, anchor)
    # deterministic outcome order: by energy window, then particle sector
    keys = sorted(set(zip(bins.tolist(), all_n.tolist())))
    order, slices, labels = [], [], []
    start = 0
    for k, sec in keys:
        idx = np.flatnonzero((bins == k) & (all_n == sec))
        order.append(idx)
        slices.append(slice(start, start + idx.size))
        labels.append((float(anchor + k * delta_e), sector_values[sec]))
        start += idx.size
    perm = np.concatenate(order)
    return CoarseGraining(all_cols[:, perm], slices, labels,
                          kind="energy_particle", delta=float(delta_e))


def outcome_distribution(rho: DensityMatrix, x: CoarseGraining) -> OutcomeDistribution:
    """p_x = tr{Pi_x rho} for every outcome of the graining."""
    if rho.dim != x.dim:
        raise DimensionMismatch(f"state dim {rho.dim} vs graining dim {x.dim}")
    m = x.basis.conj().T @ rho.matrix
    d = np.einsum("ij,ji->i", m, x.basis).real
    p = np.array([float(d[sl].sum()) for sl in x.slices])
    return OutcomeDistribution(x.labels, p, x.volumes)
