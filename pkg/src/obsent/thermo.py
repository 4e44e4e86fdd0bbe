"""Equilibrium ensembles, effective nonequilibrium temperatures and chemical
potentials, and the heat/work/Clausius bookkeeping primitives.

Effective temperatures invert the strictly monotone map beta -> tr{H pi(beta)}
by bisection; the grand-canonical pair (beta*, mu*) is found by a damped
Newton iteration on the covariance Jacobian with a nested-bisection fallback.

Most quantities have a ``*_from_levels`` variant working directly on a cached
spectrum; run loops use those to avoid re-diagonalizing static operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tolerances as tol
from .errors import (
    DimensionMismatch,
    EnergyOutOfRange,
    GridMismatch,
    LengthMismatch,
    NonCommuting,
    SaturatedTemperature,
    SupportMismatch,
    Unsolvable,
    WrongLabelKind,
)
from .graining import CoarseGraining, OutcomeDistribution
from .linalg import DensityMatrix, as_hermitian, trace_product


# ---------------------------------------------------------------------------
# spectral helpers


def boltzmann_weights(levels: np.ndarray, beta: float) -> np.ndarray:
    """exp(-beta E)/Z over a list of levels, shifted for overflow safety."""
    a = -beta * np.asarray(levels, dtype=np.float64)
    w = np.exp(a - a.max())
    return w / w.sum()


def grand_weights(levels, numbers, beta: float, mu: float) -> np.ndarray:
    a = -beta * (np.asarray(levels, dtype=np.float64)
                 - mu * np.asarray(numbers, dtype=np.float64))
    w = np.exp(a - a.max())
    return w / w.sum()


def _weights_entropy(p: np.ndarray) -> float:
    mask = p > tol.PROB_ZERO
    return float(-np.sum(p[mask] * np.log(p[mask])))


def _weights_relative(p1: np.ndarray, p0: np.ndarray) -> float:
    mask = p1 > tol.PROB_ZERO
    return float(np.sum(p1[mask] * (np.log(p1[mask]) - np.log(p0[mask]))))


def gibbs_energy_levels(levels, beta: float) -> float:
    w = np.asarray(levels, dtype=np.float64)
    return float(np.dot(boltzmann_weights(w, beta), w))


def gibbs_entropy_levels(levels, beta: float) -> float:
    return _weights_entropy(boltzmann_weights(levels, beta))


def gibbs_relative_entropy_levels(levels, beta1: float, beta0: float) -> float:
    return _weights_relative(boltzmann_weights(levels, beta1),
                             boltzmann_weights(levels, beta0))


def grand_entropy_levels(levels, numbers, beta: float, mu: float) -> float:
    return _weights_entropy(grand_weights(levels, numbers, beta, mu))


def grand_relative_entropy_levels(levels, numbers, beta1, mu1,
                                  beta0, mu0) -> float:
    return _weights_relative(grand_weights(levels, numbers, beta1, mu1),
                             grand_weights(levels, numbers, beta0, mu0))


# ---------------------------------------------------------------------------
# ensembles as states


def gibbs_state(h, beta: float) -> DensityMatrix:
    """Canonical ensemble exp(-beta H)/Z."""
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    h = as_hermitian(h)
    w, v = h.eig()
    p = boltzmann_weights(w, beta)
    return DensityMatrix((v * p) @ v.conj().T, validate=False)


def gibbs_energy(h, beta: float) -> float:
    """tr{H pi(beta)} from the spectrum."""
    w, _ = as_hermitian(h).eig()
    return gibbs_energy_levels(w, beta)


def gibbs_entropy(h, beta: float) -> float:
    """S_vN[pi(beta)] computed spectrally."""
    w, _ = as_hermitian(h).eig()
    return gibbs_entropy_levels(w, beta)


def gibbs_relative_entropy(h, beta1: float, beta0: float) -> float:
    """D[pi(beta1) || pi(beta0)] for Gibbs states of the same Hamiltonian."""
    w, _ = as_hermitian(h).eig()
    return gibbs_relative_entropy_levels(w, beta1, beta0)


def heat_capacity(h, beta: float) -> float:
    """C(beta) = beta^2 [tr{H^2 pi} - tr{H pi}^2]; non-negative."""
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    w, _ = as_hermitian(h).eig()
    p = boltzmann_weights(w, beta)
    mean = float(np.dot(p, w))
    var = float(np.dot(p, (w - mean) ** 2))
    return beta * beta * var


def joint_spectrum(h, n) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simultaneous eigenlevels (E_i, n_i) and the joint eigenbasis."""
    h = as_hermitian(h)
    n = as_hermitian(n)
    if h.dim != n.dim:
        raise DimensionMismatch("h and n must act on the same space")
    comm = h.matrix @ n.matrix - n.matrix @ h.matrix
    dev = float(np.max(np.abs(comm)))
    if dev > tol.COMMUTATOR:
        raise NonCommuting(f"[h, n] deviates by {dev:.3e}")
    wn, vn = n.eig()
    cols, energies, numbers = [], [], []
    pos = 0
    values = list(wn)
    while pos < len(values):
        stop = pos + 1
        while stop < len(values) and values[stop] - values[stop - 1] <= 1e-8:
            stop += 1
        block = vn[:, pos:stop]
        hb = block.conj().T @ h.matrix @ block
        hb = (hb + hb.conj().T) / 2
        we, ve = np.linalg.eigh(hb)
        cols.append(block @ ve)
        energies.append(we)
        numbers.append(np.full(stop - pos, float(np.mean(values[pos:stop]))))
        pos = stop
    return (np.concatenate(energies), np.concatenate(numbers),
            np.concatenate(cols, axis=1))


def grand_canonical_state(h, n, beta: float, mu: float) -> DensityMatrix:
    """Grand canonical ensemble exp(-beta (H - mu N))/Z."""
    e, num, basis = joint_spectrum(h, n)
    p = grand_weights(e, num, beta, mu)
    return DensityMatrix((basis * p) @ basis.conj().T, validate=False)


def grand_canonical_entropy(h, n, beta: float, mu: float) -> float:
    e, num, _ = joint_spectrum(h, n)
    return grand_entropy_levels(e, num, beta, mu)


def grand_relative_entropy(h, n, beta1, mu1, beta0, mu0) -> float:
    """D[Xi(beta1, mu1) || Xi(beta0, mu0)] for shared (h, n)."""
    e, num, _ = joint_spectrum(h, n)
    return grand_relative_entropy_levels(e, num, beta1, mu1, beta0, mu0)


# ---------------------------------------------------------------------------
# effective temperature


@dataclass(frozen=True)
class EffectiveTemperature:
    """Inverse temperature of the fictitious Gibbs state matching an energy."""

    beta_star: float
    achieved_energy: float
    residual: float
    saturated: bool

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta_star


def effective_beta_from_levels(levels, target: float) -> EffectiveTemperature:
    """Invert the strictly decreasing map beta -> <H>_beta by bisection."""
    levels = np.sort(np.asarray(levels, dtype=np.float64))
    lo, hi = float(levels[0]), float(levels[-1])
    width = hi - lo
    scale = max(1.0, abs(lo), abs(hi))
    if width <= 1e-14 * scale:
        if abs(target - lo) <= 1e-9 * scale:
            return EffectiveTemperature(0.0, lo, target - lo, True)
        raise EnergyOutOfRange("Hamiltonian has zero spectral width")
    if target < lo - 1e-12 * scale or target > hi + 1e-12 * scale:
        raise EnergyOutOfRange(
            f"target {target} outside spectral range [{lo}, {hi}]")
    beta_max = tol.BETA_MAX_SCALE / width
    if target - lo <= tol.SPECTRAL_EDGE * scale:
        u = gibbs_energy_levels(levels, beta_max)
        return EffectiveTemperature(beta_max, u, u - target, True)
    if hi - target <= tol.SPECTRAL_EDGE * scale:
        u = gibbs_energy_levels(levels, -beta_max)
        return EffectiveTemperature(-beta_max, u, u - target, True)

    def energy(beta):
        return gibbs_energy_levels(levels, beta)

    # U(beta) is strictly decreasing; expand the bracket until it straddles
    b = 1.0 / width
    b_lo, b_hi = -b, b
    while energy(b_lo) < target:
        b_lo *= 2.0
        if b_lo < -beta_max:
            u = energy(-beta_max)
            return EffectiveTemperature(-beta_max, u, u - target, True)
    while energy(b_hi) > target:
        b_hi *= 2.0
        if b_hi > beta_max:
            u = energy(beta_max)
            return EffectiveTemperature(beta_max, u, u - target, True)

    stop = tol.BETA_RESIDUAL_REL * width
    beta = 0.5 * (b_lo + b_hi)
    u = energy(beta)
    for _ in range(tol.BETA_MAX_ITER):
        if abs(u - target) <= stop:
            break
        if u > target:
            b_lo = beta
        else:
            b_hi = beta
        beta = 0.5 * (b_lo + b_hi)
        u = energy(beta)
    return EffectiveTemperature(beta, u, u - target, False)


def effective_beta(h, target_energy: float) -> EffectiveTemperature:
    """beta* with tr{H pi(beta*)} equal to the target energy."""
    w, _ = as_hermitian(h).eig()
    return effective_beta_from_levels(w, float(target_energy))


@dataclass(frozen=True)
class GrandPotentialPoint:
    """Solution of the two moment-matching equations for (beta*, mu*)."""

    beta_star: float
    mu_star: float
    residuals: tuple[float, float]


def effective_beta_mu_from_levels(levels, numbers, target_u: float,
                                  target_n: float) -> GrandPotentialPoint:
    """(beta*, mu*) matching energy and particle number on a joint spectrum.

    Damped Newton on the covariance Jacobian; nested bisection on mu (outer)
    and beta (inner) as a fallback.  Raises Unsolvable (with the residuals
    attached) when the total iteration budget runs out.
    """
    e = np.asarray(levels, dtype=np.float64)
    num = np.asarray(numbers, dtype=np.float64)
    width_e = float(e.max() - e.min())
    width_n = float(num.max() - num.min())
    scale_u = max(1.0, float(np.max(np.abs(e))))
    scale_n = max(1.0, float(np.max(np.abs(num))))

    if width_n <= 1e-12:
        # constant particle number: reduce to a pure beta solve
        if abs(target_n - float(num[0])) > 1e-8 * scale_n:
            raise Unsolvable("constant particle number cannot match target",
                             residuals=(0.0, target_n - float(num[0])))
        eff = effective_beta_from_levels(e, target_u)
        return GrandPotentialPoint(eff.beta_star, 0.0, (eff.residual, 0.0))

    if width_e <= 1e-14 * scale_u:
        raise Unsolvable("Hamiltonian has zero spectral width",
                         residuals=(target_u - float(e[0]), 0.0))

    tol_u = tol.GRAND_RESIDUAL_REL * width_e
    tol_n = tol.GRAND_RESIDUAL_REL * width_n

    def moments(beta, mu):
        p = grand_weights(e, num, beta, mu)
        return float(np.dot(p, e)), float(np.dot(p, num))

    def residual(beta, mu):
        u, nn = moments(beta, mu)
        return u - target_u, nn - target_n

    beta, mu = 1.0 / width_e, 0.0
    iterations = 0
    newton_failures = 0
    ru, rn = residual(beta, mu)
    while iterations < tol.GRAND_TOTAL_ITER:
        if abs(ru) <= tol_u and abs(rn) <= tol_n:
            return GrandPotentialPoint(beta, mu, (ru, rn))
        if newton_failures >= tol.GRAND_NEWTON_ITER:
            break
        p = grand_weights(e, num, beta, mu)
        me, mn = float(np.dot(p, e)), float(np.dot(p, num))
        cee = float(np.dot(p, (e - me) ** 2))
        cnn = float(np.dot(p, (num - mn) ** 2))
        cen = float(np.dot(p, (e - me) * (num - mn)))
        jac = np.array([[-(cee - mu * cen), beta * cen],
                        [-(cen - mu * cnn), beta * cnn]])
        try:
            step = np.linalg.solve(jac, np.array([ru, rn]))
        except np.linalg.LinAlgError:
            newton_failures = tol.GRAND_NEWTON_ITER
            break
        improved = False
        damping = 1.0
        norm_old = np.hypot(ru / width_e, rn / width_n)
        for _ in range(25):
            cand = (beta - damping * step[0], mu - damping * step[1])
            iterations += 1
            cu, cn = residual(*cand)
            if np.hypot(cu / width_e, cn / width_n) < norm_old:
                beta, mu = cand
                ru, rn = cu, cn
                improved = True
                break
            damping *= 0.5
        if not improved:
            newton_failures += 1

    # fallback: outer bisection on mu, inner bisection on beta matching
    # the monotone combination <H - mu N> = U - mu N_target
    def n_mismatch(mu_val):
        k = e - mu_val * num
        eff = effective_beta_from_levels(k, target_u - mu_val * target_n)
        p = grand_weights(e, num, eff.beta_star, mu_val)
        return eff.beta_star, float(np.dot(p, num)) - target_n

    span = max(width_e / max(width_n, 1e-12), 1.0)
    mu_lo, mu_hi = -2.0 * span, 2.0 * span
    try:
        _, f_lo = n_mismatch(mu_lo)
        _, f_hi = n_mismatch(mu_hi)
        for _ in range(60):
            iterations += 1
            if f_lo == 0.0 or f_lo * f_hi < 0:
                break
            mu_lo *= 2.0
            mu_hi *= 2.0
            _, f_lo = n_mismatch(mu_lo)
            _, f_hi = n_mismatch(mu_hi)
    except EnergyOutOfRange as exc:
        raise Unsolvable(f"targets unreachable: {exc}", residuals=(ru, rn)) from exc
    if f_lo * f_hi > 0:
        raise Unsolvable("could not bracket mu*", residuals=(ru, rn))
    while iterations < tol.GRAND_TOTAL_ITER:
        iterations += 1
        mu_mid = 0.5 * (mu_lo + mu_hi)
        b_mid, f_mid = n_mismatch(mu_mid)
        ru, rn = residual(b_mid, mu_mid)
        if abs(ru) <= tol_u and abs(rn) <= tol_n:
            return GrandPotentialPoint(b_mid, mu_mid, (ru, rn))
        if f_lo * f_mid <= 0:
            mu_hi, f_hi = mu_mid, f_mid
        else:
            mu_lo, f_lo = mu_mid, f_mid
    raise Unsolvable("iteration budget exceeded", residuals=(ru, rn))


def effective_beta_mu(h, n, target_u: float, target_n: float) -> GrandPotentialPoint:
    """(beta*, mu*) such that the grand ensemble matches energy and number."""
    e, num, _ = joint_spectrum(h, n)
    return effective_beta_mu_from_levels(e, num, float(target_u), float(target_n))


# ---------------------------------------------------------------------------
# coarse ensembles, energies, work


def coarse_gibbs_probabilities(x: CoarseGraining, beta: float) -> OutcomeDistribution:
    """pi_E(beta) = V_E exp(-beta E)/Z over energy-window outcomes.

    The representative energy of a window is its lower-edge label.
    """
    if x.kind != "energy":
        raise WrongLabelKind(
            f"need energy-window labels, got kind {x.kind!r}")
    energies = np.array([float(lab) for lab in x.labels])
    vols = x.volumes.astype(np.float64)
    a = -beta * energies + np.log(vols)
    w = np.exp(a - a.max())
    return OutcomeDistribution(x.labels, w / w.sum(), x.volumes)


def internal_energy(h_at_t, rho: DensityMatrix) -> float:
    """U = tr{H rho}; the imaginary residue must be negligible."""
    h = as_hermitian(h_at_t)
    if h.dim != rho.dim:
        raise DimensionMismatch(f"operator dim {h.dim} vs state dim {rho.dim}")
    val = trace_product(h.matrix, rho.matrix)
    scale = max(1.0, abs(val))
    if abs(val.imag) > 1e-10 * scale:
        raise ValueError(f"internal energy has imaginary residue {val.imag:.3e}")
    return float(val.real)


def internal_energy_open(hs_at_t, v_sb, rho_sb: DensityMatrix) -> float:
    """U_S = tr{(H_S + V_SB) rho_SB} with both operators on the full space."""
    hs = as_hermitian(hs_at_t)
    v = np.asarray(v_sb.matrix if hasattr(v_sb, "matrix") else v_sb)
    if hs.dim != rho_sb.dim or v.shape[0] != rho_sb.dim:
        raise DimensionMismatch("open-system operators must live on the full space")
    return float(trace_product(hs.matrix + v, rho_sb.matrix).real)


def work_integral(times, powers) -> float:
    """Trapezoidal integral of the instantaneous power over a uniform grid."""
    t = np.asarray(times, dtype=np.float64)
    p = np.asarray(powers, dtype=np.float64)
    if t.size != p.size or t.size < 2:
        raise GridMismatch("need matching time and power series of length >= 2")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(dt[0]), 1e-30):
        raise GridMismatch("time grid is not uniform")
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(p, t))


def piecewise_work(hamiltonians, states) -> float:
    """Exact work for a piecewise-constant protocol.

    The Hamiltonian jumps from step k-1 to step k at grid point k while the
    state is rho(t_k); within a step the energy is conserved, so the jumps
    carry all the work.
    """
    hs = list(hamiltonians)
    rhos = list(states)
    if len(hs) != len(rhos):
        raise GridMismatch("need one state per grid point")
    w = 0.0
    for k in range(1, len(hs)):
        dh = as_hermitian(hs[k]).matrix - as_hermitian(hs[k - 1]).matrix
        w += float(trace_product(dh, rhos[k].matrix).real)
    return w


def clausius_integral(u_values, beta_values, saturated=None) -> float:
    """Midpoint-rule integral of beta* dU along a run.

    Preserves the telescoping of the equilibrium-entropy identity
    dS(beta*) = beta* dU to second order in the step size.
    """
    u = np.asarray(u_values, dtype=np.float64)
    b = np.asarray(beta_values, dtype=np.float64)
    if u.size != b.size or u.size < 2:
        raise LengthMismatch("need matching series of length >= 2")
    if saturated is not None and any(saturated):
        raise SaturatedTemperature("saturated beta* in the Clausius series")
    if not np.all(np.isfinite(b)):
        raise SaturatedTemperature("non-finite beta* in the Clausius series")
    mid = 0.5 * (b[:-1] + b[1:])
    return float(np.dot(mid, np.diff(u)))


def chemical_work_increment(mu_star, dn) -> float:
    """sum_nu mu*_nu dN_nu for one step; dN counts particles gained by the system."""
    mu = np.asarray(mu_star, dtype=np.float64)
    d = np.asarray(dn, dtype=np.float64)
    if mu.size != d.size:
        raise LengthMismatch("need one dN per chemical potential")
    return float(np.dot(mu, d))


def perturbation_scale(p_now: OutcomeDistribution,
                       p_init: OutcomeDistribution) -> float:
    """eps-hat = max_x |p_now(x)/p_init(x) - 1| over a shared outcome set."""
    if p_now.labels != p_init.labels:
        raise SupportMismatch("distributions are over different outcome sets")
    if float(p_init.probabilities.min()) <= tol.PROB_ZERO:
        raise SupportMismatch("initial distribution must be strictly positive")
    ratio = p_now.probabilities / p_init.probabilities
    return float(np.max(np.abs(ratio - 1.0)))


@dataclass(frozen=True)
class EnergyLedgerEntry:
    """One grid point of the energy bookkeeping."""

    time: float
    u_system: float
    u_baths: tuple[float, ...]
    work: float
    work_chemical: float
    heats: tuple[float, ...]
    beta_stars: tuple[float, ...]
    mu_stars: tuple[float, ...] | None
    epsilon_hat: float
