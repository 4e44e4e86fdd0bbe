"""Exact two-point-measurement statistics and fluctuation theorems.

All joint distributions are computed by exact summation over outcome pairs
(coarse grainings keep the pair count small), so the integral and detailed
fluctuation theorems can be checked to near machine precision.
"""

from __future__ import annotations

import numpy as np

from . import tolerances as tol
from .dynamics import Propagator, Protocol, reversed_protocol, trotter_propagator
from .entropy import equilibrium_projection, is_equilibrium_member
from .errors import (
    DimensionMismatch,
    LabelMismatch,
    NotNormalized,
    PreconditionViolated,
)
from .graining import CoarseGraining, OutcomeDistribution, outcome_distribution
from .linalg import DensityMatrix


class TwoPointDistribution:
    """Joint outcome statistics of an initial and a final coarse measurement.

    ``delta_s`` holds the stochastic observational-entropy change per pair;
    for reversed-process distributions it is the (negated) forward value the
    pair contributes to, which is what the detailed theorem compares.
    Pairs whose entropy change is undefined (an outcome of probability zero)
    carry NaN and set ``flag_zero_probability``.
    """

    def __init__(self, pairs, probabilities, delta_s, direction, grainings,
                 initial_marginal, final_marginal, membership_ok,
                 membership_residual, flag_zero_probability):
        p = np.asarray(probabilities, dtype=np.float64)
        ds = np.asarray(delta_s, dtype=np.float64)
        pairs = tuple(pairs)
        if not (len(pairs) == p.size == ds.size):
            raise DimensionMismatch("pairs/probabilities/delta_s must align")
        if abs(float(p.sum()) - 1.0) > tol.PROB_NORMALIZATION:
            raise NotNormalized(f"joint probabilities sum to {p.sum()}")
        bad = ~np.isfinite(ds) & (p > tol.PROB_ZERO)
        if np.any(bad) and not flag_zero_probability:
            raise NotNormalized("undefined entropy change on a realized pair "
                                "without the zero-probability flag")
        p.setflags(write=False)
        ds.setflags(write=False)
        self.pairs = pairs
        self.probabilities = p
        self.delta_s = ds
        self.direction = direction
        self.grainings = grainings
        self.initial_marginal = initial_marginal
        self.final_marginal = final_marginal
        self.membership_ok = membership_ok
        self.membership_residual = membership_residual
        self.flag_zero_probability = flag_zero_probability
        self._index = {pair: i for i, pair in enumerate(pairs)}

    def __len__(self):
        return len(self.pairs)

    def probability(self, pair) -> float:
        return float(self.probabilities[self._index[pair]])

    def mean_delta_s(self) -> float:
        mask = np.isfinite(self.delta_s)
        return float(np.dot(self.probabilities[mask], self.delta_s[mask]))


def outcome_entropy_values(p: OutcomeDistribution) -> np.ndarray:
    """s_obs(x) = -ln p_x + ln V_x per outcome (NaN where p_x = 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.log(p.probabilities) + np.log(p.volumes.astype(np.float64))
    out[p.probabilities <= tol.PROB_ZERO] = np.nan
    return out


def entropy_change_matrix(p0: OutcomeDistribution,
                          pt: OutcomeDistribution) -> np.ndarray:
    """ds[t_idx, 0_idx] = s_obs(x_t, t) - s_obs(x_0, 0).

    A single float subtraction of per-outcome values, so swapping the two
    measurements negates every entry exactly.
    """
    s0 = outcome_entropy_values(p0)
    st = outcome_entropy_values(pt)
    return st[:, None] - s0[None, :]


def _joint_probabilities(rho: DensityMatrix, u_matrix: np.ndarray,
                         x0: CoarseGraining, xt: CoarseGraining) -> np.ndarray:
    """p[t_idx, 0_idx] = tr{Pi_xt U Pi_x0 rho Pi_x0 U^dag} for all pairs."""
    rho0 = x0.basis.conj().T @ rho.matrix @ x0.basis
    u_t0 = xt.basis.conj().T @ u_matrix @ x0.basis
    out = np.zeros((xt.n_outcomes, x0.n_outcomes))
    for j, sl0 in enumerate(x0.slices):
        block = rho0[sl0, sl0]
        a = u_t0[:, sl0]
        diag = np.einsum("ij,jk,ik->i", a, block, a.conj(),
                         optimize=True).real
        for i, slt in enumerate(xt.slices):
            out[i, j] = float(diag[slt].sum())
    return np.clip(out, 0.0, None)


def forward_two_point(rho0: DensityMatrix, u, x0: CoarseGraining,
                      xt: CoarseGraining) -> TwoPointDistribution:
    """Exact joint distribution of the two-point measurement scheme.

    The per-pair entropy change uses the outcome statistics of the evolved,
    undisturbed state for the final measurement, matching the definition of
    the stochastic observational entropy.
    """
    u_matrix = u.matrix if isinstance(u, Propagator) else np.asarray(u)
    if rho0.dim != x0.dim or u_matrix.shape[0] != rho0.dim or xt.dim != rho0.dim:
        raise DimensionMismatch("state, propagator and grainings must match")
    p0 = outcome_distribution(rho0, x0)
    rho_t = DensityMatrix(u_matrix @ rho0.matrix @ u_matrix.conj().T,
                          rho0.dims, validate=False)
    pt = outcome_distribution(rho_t, xt)
    member_ok, member_res = is_equilibrium_member(rho0, x0, tol.MEMBERSHIP_TOL)

    joint = _joint_probabilities(rho0, u_matrix, x0, xt)
    ds = entropy_change_matrix(p0, pt)
    zero_initial = bool(np.any(p0.probabilities <= tol.PROB_ZERO))
    realized_undefined = bool(np.any(~np.isfinite(ds) & (joint > tol.PROB_ZERO)))
    flag = zero_initial or realized_undefined

    pairs, probs, deltas = [], [], []
    for i, lt in enumerate(xt.labels):
        for j, l0 in enumerate(x0.labels):
            pairs.append((l0, lt))
            probs.append(joint[i, j])
            deltas.append(ds[i, j])
    return TwoPointDistribution(pairs, probs, deltas, "forward", (x0, xt),
                                p0, pt, member_ok, member_res, flag)


def ift_average(d: TwoPointDistribution) -> float:
    """<exp(-delta_s)> by exact summation over outcome pairs.

    Raises PreconditionViolated (with the value attached) when zero
    probability outcomes were excluded; equality with 1 is only a theorem
    for membership-passing initial states, so callers should consult
    ``d.membership_ok`` before asserting.
    """
    mask = np.isfinite(d.delta_s)
    value = float(np.dot(d.probabilities[mask], np.exp(-d.delta_s[mask])))
    if d.flag_zero_probability:
        exc = PreconditionViolated(
            "zero-probability outcomes excluded; integral theorem domain violated")
        exc.value = value
        raise exc
    return value


def reversed_two_point(forward: TwoPointDistribution,
                       p: Protocol) -> TwoPointDistribution:
    """Statistics of the time-reversed process.

    The reversed run starts from the conjugated final graining loaded with
    the forward final-measurement statistics, evolves with the reversed
    protocol, and measures the conjugated initial graining.
    """
    x0, xt = forward.grainings
    x0_rev = x0.conjugated()
    xt_rev = xt.conjugated()
    u_rev = trotter_propagator(reversed_protocol(p))
    rho_tr = equilibrium_projection(
        OutcomeDistribution(xt_rev.labels, forward.final_marginal.probabilities,
                            xt_rev.volumes), xt_rev)
    # reversed joint over (x0 outcome observed last, xt outcome observed first)
    joint = _joint_probabilities(rho_tr, u_rev.matrix, xt_rev, x0_rev)
    p_first = outcome_distribution(rho_tr, xt_rev)
    rho_end = DensityMatrix(u_rev.matrix @ rho_tr.matrix @ u_rev.matrix.conj().T,
                            rho_tr.dims, validate=False)
    p_last = outcome_distribution(rho_end, x0_rev)

    index = {pair: k for k, pair in enumerate(forward.pairs)}
    pairs, probs, deltas = [], [], []
    for i, l0 in enumerate(x0_rev.labels):
        for j, lt in enumerate(xt_rev.labels):
            pair = (l0, lt)
            pairs.append(pair)
            probs.append(joint[i, j])
            deltas.append(-forward.delta_s[index[pair]])
    return TwoPointDistribution(pairs, probs, deltas, "reversed",
                                (x0_rev, xt_rev), p_first, p_last,
                                forward.membership_ok,
                                forward.membership_residual,
                                forward.flag_zero_probability)


def central_relation_check(fwd: TwoPointDistribution,
                           rev: TwoPointDistribution) -> float:
    """max over pairs of |p_fw - exp(delta_s) p_rev|."""
    if set(fwd.pairs) != set(rev.pairs):
        raise LabelMismatch("forward and reversed runs cover different pairs")
    residual = 0.0
    for k, pair in enumerate(fwd.pairs):
        p_f = float(fwd.probabilities[k])
        p_r = rev.probability(pair)
        ds = float(fwd.delta_s[k])
        if not np.isfinite(ds):
            if p_f > tol.PROB_ZERO or p_r > tol.PROB_ZERO:
                return float("inf")
            continue
        residual = max(residual, abs(p_f - np.exp(ds) * p_r))
    return residual


def detailed_ft_histograms(fwd: TwoPointDistribution,
                           rev: TwoPointDistribution):
    """Per-value histograms P_fw, Q_tr and their ratio table.

    Outcome sets are finite, so grouping is by exact delta-s value (merging
    float-identical values); Q_tr(-ds) sums the reversed probabilities over
    exactly the pairs whose forward change is ds, and the ratio
    P_fw(ds) / Q_tr(-ds) is compared with exp(ds) per distinct value.
    Returns (table, condition_holds) where each table row is
    (delta_s, p_forward, q_reversed, ratio, expected_ratio) and
    condition_holds records whether the reversed process reproduces the
    forward initial statistics (then Q_tr is a genuine P_tr).
    """
    if set(fwd.pairs) != set(rev.pairs):
        raise LabelMismatch("forward and reversed runs cover different pairs")
    rev_index = {pair: k for k, pair in enumerate(rev.pairs)}
    idxs = np.flatnonzero(np.isfinite(fwd.delta_s))
    order = idxs[np.argsort(fwd.delta_s[idxs], kind="stable")]
    groups = []
    for k in order:
        v = float(fwd.delta_s[k])
        if groups:
            head = float(fwd.delta_s[groups[-1][0]])
            if abs(v - head) <= tol.DELTA_S_GROUP_RTOL * max(1.0, abs(v), abs(head)):
                groups[-1].append(k)
                continue
        groups.append([k])

    table = []
    for group in groups:
        value = float(fwd.delta_s[group[0]])
        p_w = float(sum(fwd.probabilities[k] for k in group))
        q_w = float(sum(rev.probabilities[rev_index[fwd.pairs[k]]]
                        for k in group))
        ratio = p_w / q_w if q_w > tol.PROB_ZERO else float("inf")
        table.append((value, p_w, q_w, ratio, float(np.exp(value))))

    diff = np.abs(fwd.initial_marginal.probabilities
                  - rev.final_marginal.probabilities)
    condition_holds = bool(np.max(diff) <= 1e-9)
    return table, condition_holds


def export_histograms_csv(table, path) -> None:
    """CSV with columns (delta_s, p_forward, q_reversed, ratio, expected_ratio)."""
    lines = ["delta_s,p_forward,q_reversed,ratio,expected_ratio"]
    for row in table:
        lines.append(",".join(format(float(x), ".17g") for x in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
