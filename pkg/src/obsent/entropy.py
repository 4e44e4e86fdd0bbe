"""Entropy and information functionals.

All values are in nats (k_B = 1).  The continuity convention 0 ln 0 = 0 is
applied everywhere; probabilities and eigenvalues at or below 1e-14 are
treated as exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tolerances as tol
from .errors import DimensionMismatch, InfiniteDivergence, NotNormalized
from .graining import CoarseGraining, OutcomeDistribution, outcome_distribution
from .linalg import DensityMatrix, partial_trace


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > tol.PROB_ZERO
    out[mask] = p[mask] * np.log(p[mask])
    return out


def shannon(p) -> float:
    """Shannon entropy -sum p ln p of a classical distribution."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if np.any(p < -tol.PROB_ZERO):
        raise NotNormalized(f"negative entry {p.min():.3e}")
    s = float(p.sum())
    if abs(s - 1.0) > 1e-8:
        raise NotNormalized(f"probabilities sum to {s}")
    return float(-_xlogx(np.clip(p, 0.0, None)).sum())


def vn_entropy(rho: DensityMatrix) -> float:
    """von Neumann entropy -tr(rho ln rho)."""
    lam = np.clip(rho.eigenvalues(), 0.0, None)
    return float(-_xlogx(lam).sum())


def obs_entropy(rho: DensityMatrix, x: CoarseGraining) -> float:
    """Observational entropy sum_x p_x (-ln p_x + ln V_x)."""
    return obs_entropy_shannon_form(outcome_distribution(rho, x))


def obs_entropy_shannon_form(p: OutcomeDistribution) -> float:
    """Shannon entropy of the outcomes plus the average Boltzmann entropy."""
    probs = p.probabilities
    return float(-_xlogx(probs).sum() + np.dot(probs, np.log(p.volumes)))


def boltzmann_entropy(x: CoarseGraining, outcome) -> float:
    """ln V_x for one outcome."""
    i = x.outcome_index(outcome)
    return float(np.log(x.volumes[i]))


def relative_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Quantum relative entropy D(rho || sigma) = tr rho (ln rho - ln sigma).

    Signals InfiniteDivergence when rho has weight outside sigma's support.
    """
    if rho.dim != sigma.dim:
        raise DimensionMismatch("states must share a Hilbert space")
    ws, vs = np.linalg.eigh(sigma.matrix)
    ws = np.clip(ws, 0.0, None)
    support = ws > tol.PROB_ZERO
    rho_in_sigma = np.einsum("ij,jk,ki->i", vs.conj().T, rho.matrix, vs,
                             optimize=True).real
    leak = float(rho_in_sigma[~support].sum()) if np.any(~support) else 0.0
    if leak > tol.SUPPORT_LEAK:
        raise InfiniteDivergence(
            f"rho has weight {leak:.3e} outside the support of sigma")
    lam = np.clip(rho.eigenvalues(), 0.0, None)
    tr_rho_ln_rho = float(_xlogx(lam).sum())
    tr_rho_ln_sigma = float(np.dot(rho_in_sigma[support], np.log(ws[support])))
    return tr_rho_ln_rho - tr_rho_ln_sigma


def _check_table(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -tol.PROB_ZERO):
        raise NotNormalized(f"negative entry {p.min():.3e}")
    s = float(p.sum())
    if abs(s - 1.0) > 1e-8:
        raise NotNormalized(f"table sums to {s}")
    return np.clip(p, 0.0, None)


def mutual_information_classical(joint) -> float:
    """I(X:Y) = S(p_x) + S(p_y) - S(p_xy) for a 2D probability table."""
    p = _check_table(joint)
    if p.ndim != 2:
        raise DimensionMismatch(f"expected a 2D table, got ndim {p.ndim}")
    return (shannon(p.sum(axis=1)) + shannon(p.sum(axis=0))
            - float(-_xlogx(p.ravel()).sum()))


def total_information(joint) -> float:
    """Sum of marginal Shannon entropies minus the joint entropy."""
    p = _check_table(joint)
    marginal_sum = 0.0
    for axis in range(p.ndim):
        other = tuple(a for a in range(p.ndim) if a != axis)
        marginal_sum += shannon(p.sum(axis=other))
    return marginal_sum - float(-_xlogx(p.ravel()).sum())


def mutual_information_quantum(rho: DensityMatrix, cut) -> float:
    """I(X:Y) = S(rho_X) + S(rho_Y) - S(rho_XY) for a declared bipartition.

    ``cut`` lists the tensor factors forming side X; the complement is Y.
    """
    cut = sorted(set(int(c) for c in cut))
    n = len(rho.dims)
    if not cut or len(cut) >= n or any(c < 0 or c >= n for c in cut):
        raise DimensionMismatch(f"cut {cut} is not a proper bipartition of {n} factors")
    rest = [k for k in range(n) if k not in cut]
    return (vn_entropy(partial_trace(rho, cut))
            + vn_entropy(partial_trace(rho, rest)) - vn_entropy(rho))


@dataclass(frozen=True)
class EntropyDecomposition:
    """Split of observational entropy into a dephased von Neumann part and
    an average relative-entropy part."""

    dephased_vn: float
    avg_relative: float
    per_outcome_relative: dict

    @property
    def total(self) -> float:
        return self.dephased_vn + self.avg_relative


def decompose_obs_entropy(rho: DensityMatrix, x: CoarseGraining) -> EntropyDecomposition:
    """S_obs = S_vN[sum_x p_x rho(x)] + sum_x p_x D[rho(x) || omega(x)].

    rho(x) is the normalized post-measurement block, omega(x) the flat state
    on the outcome subspace.  Outcomes with p_x = 0 are skipped.
    """
    if rho.dim != x.dim:
        raise DimensionMismatch(f"state dim {rho.dim} vs graining dim {x.dim}")
    r = x.basis.conj().T @ rho.matrix @ x.basis
    dephased_eigs = []
    per_outcome = {}
    avg = 0.0
    for sl, label in zip(x.slices, x.labels):
        block = r[sl, sl]
        p = float(np.trace(block).real)
        if p <= tol.PROB_ZERO:
            continue
        lam = np.clip(np.linalg.eigvalsh(block), 0.0, None)
        dephased_eigs.append(lam)
        s_block = float(-_xlogx(lam / p).sum())
        d = float(np.log(sl.stop - sl.start)) - s_block
        per_outcome[label] = d
        avg += p * d
    lam_all = np.concatenate(dephased_eigs) if dephased_eigs else np.zeros(1)
    dephased_vn = float(-_xlogx(np.clip(lam_all, 0.0, None)).sum())
    return EntropyDecomposition(dephased_vn, avg, per_outcome)


def microcanonical_state(x: CoarseGraining, outcome) -> DensityMatrix:
    """omega(x) = Pi_x / V_x, the maximally ignorant state given outcome x."""
    i = x.outcome_index(outcome)
    sl = x.slices[i]
    block = x.basis[:, sl]
    m = (block @ block.conj().T) / (sl.stop - sl.start)
    return DensityMatrix(m, validate=False)


def equilibrium_projection(p: OutcomeDistribution, x: CoarseGraining) -> DensityMatrix:
    """The equilibrium-set state sum_x p_x Pi_x / V_x for given weights."""
    if len(p) != x.n_outcomes or p.labels != x.labels:
        raise DimensionMismatch("distribution does not match the graining")
    diag = np.zeros(x.dim)
    for prob, sl in zip(p.probabilities, x.slices):
        diag[sl] = prob / (sl.stop - sl.start)
    m = (x.basis * diag) @ x.basis.conj().T
    return DensityMatrix(m, validate=False)


def is_equilibrium_member(rho: DensityMatrix, x: CoarseGraining,
                          tolerance: float) -> tuple[bool, float]:
    """Whether rho equals sum_x p_x omega(x) with its own outcome weights.

    Returns the verdict together with the max-norm residual, which callers
    record regardless of the verdict.
    """
    p = outcome_distribution(rho, x)
    sigma = equilibrium_projection(p, x)
    residual = float(np.max(np.abs(rho.matrix - sigma.matrix)))
    return residual <= tolerance, residual
