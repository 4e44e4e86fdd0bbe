"""Experiment orchestration: isolated, open, multi-bath and particle runs.

A run threads the exact state over a time grid aligned with the protocol
steps and records, per grid point, the entropy bookkeeping needed for the
four-level entropy-production hierarchy, its gap identities, and the first
law.  Results come back as immutable ledgers with CSV/JSON serialization.

Conventions
-----------
* Heat counts energy flowing into the system as positive: dQ_nu = -dU_nu
  (minus mu* dN_nu for particle exchange).
* Work is exact quench bookkeeping: the Hamiltonian jumps between steps
  while the state is caught at the grid point, so the first law closes to
  float precision.
* The Clausius integral uses the midpoint rule in beta*; its measured
  closure against the equilibrium-entropy endpoints sets the run's
  quadrature tolerance.
* All "sigma >= 0" checks carry slack = max(1e-9, 2 r_delta), where r_delta
  is the measured observational-vs-von-Neumann gap of the initial state.
"""

from __future__ import annotations

import json

import numpy as np

from . import tolerances as tol
from .dynamics import Protocol, evolve
from .entropy import (
    equilibrium_projection,
    is_equilibrium_member,
    obs_entropy_shannon_form,
    shannon,
    total_information,
    vn_entropy,
)
from .errors import (
    DimensionMismatch,
    GridMismatch,
    InvalidInitialState,
    NonConserving,
    NotNormalized,
)
from .graining import (
    CoarseGraining,
    OutcomeDistribution,
    energy_graining,
    energy_particle_graining,
    outcome_distribution,
    product_graining,
    rank1_graining,
)
from .linalg import (DensityMatrix, kron_all, partial_trace,
                     propagator_step, trace_product)
from .models import BuiltModel
from .thermo import (
    effective_beta_from_levels,
    effective_beta_mu_from_levels,
    gibbs_entropy_levels,
    gibbs_relative_entropy_levels,
    gibbs_state,
    grand_canonical_state,
    grand_entropy_levels,
    grand_relative_entropy_levels,
    internal_energy,
    internal_energy_open,
    joint_spectrum,
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _finite_max(values):
    finite = [float(v) for v in values if np.isfinite(v)]
    return max(finite) if finite else None


class ThermoLedger:
    """Time-indexed record of one run: energies, entropies, hierarchy terms."""

    def __init__(self, run_kind, columns, scalars, flags, model_dict, grid,
                 graining_initial=None, graining_final=None, initial_state=None):
        self.run_kind = run_kind
        self.columns = dict(columns)
        self.scalars = dict(scalars)
        self.flags = dict(flags)
        self.model = model_dict
        self.grid = tuple(grid)
        self.graining_initial = graining_initial
        self.graining_final = graining_final
        self.initial_state = initial_state
        n = len(self.columns["time"])
        for name, col in self.columns.items():
            if len(col) != n:
                raise DimensionMismatch(f"column {name} has wrong length")
        t = self.columns["time"]
        if np.any(np.diff(t) <= 0):
            raise GridMismatch("time grid must be strictly increasing")

    @property
    def times(self) -> np.ndarray:
        return self.columns["time"]

    def series(self, name) -> np.ndarray:
        return self.columns[name]

    @property
    def slack(self) -> float:
        return self.scalars["slack"]

    @property
    def quadrature_tolerance(self) -> float:
        return self.scalars["quadrature_tolerance"]

    def to_csv(self, path) -> None:
        names = list(self.columns)
        lines = [",".join(names)]
        n = len(self.columns["time"])
        for i in range(n):
            lines.append(",".join(_fmt(self.columns[name][i]) for name in names))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary(self) -> dict:
        final = {name: float(col[-1]) for name, col in self.columns.items()
                 if name != "time"}
        return {
            "run": self.run_kind,
            "grid": {"t_max": self.grid[0], "steps": self.grid[1]},
            "model": self.model,
            "scalars": {k: (float(v) if isinstance(v, (int, float, np.floating))
                            else v)
                        for k, v in self.scalars.items()},
            "flags": self.flags,
            "final": final,
        }

    def save_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _validate_grid(protocol: Protocol, grid) -> tuple[float, int]:
    t_max, steps = float(grid[0]), int(grid[1])
    if steps != protocol.n_steps:
        raise GridMismatch(
            f"grid steps {steps} != protocol steps {protocol.n_steps}")
    if abs(t_max - protocol.duration) > 1e-9 * max(1.0, abs(t_max)):
        raise GridMismatch(
            f"grid span {t_max} != protocol duration {protocol.duration}")
    return t_max, steps


def _system_state(rho_s0, d_s: int) -> DensityMatrix:
    if rho_s0 is None:
        m = np.zeros((d_s, d_s), dtype=np.complex128)
        m[0, 0] = 1.0
        return DensityMatrix(m)
    if isinstance(rho_s0, DensityMatrix):
        return rho_s0
    arr = np.asarray(rho_s0, dtype=np.complex128)
    if arr.ndim == 1:
        return DensityMatrix(np.diag(arr))
    return DensityMatrix(arr)


def _system_graining(rho_s: DensityMatrix, mode: str) -> CoarseGraining:
    if mode == "eigenbasis":
        _, v = np.linalg.eigh(rho_s.matrix)
        return rank1_graining(v)
    return rank1_graining(np.eye(rho_s.dim, dtype=np.complex128))


class _Bath:
    """Per-bath static data: graining, cached levels, reference ensembles."""

    def __init__(self, model, index, delta, anchor, beta0, mu0, particle):
        self.factors = model.bath_factors[index]
        self.beta0 = float(beta0)
        self.mu0 = None if mu0 is None else float(mu0)
        h_b = model.h_baths[index]
        if particle:
            n_b = model.n_baths[index]
            self.graining = energy_particle_graining(h_b, n_b, delta, anchor)
            e, num, _ = joint_spectrum(h_b, n_b)
            self.levels, self.numbers = e, num
            self.init_state = grand_canonical_state(h_b, n_b, beta0, mu0)
            self.entropy_eq0 = grand_entropy_levels(e, num, beta0, mu0)
        else:
            self.graining = energy_graining(h_b, delta, anchor)
            self.levels = np.asarray(h_b.eig()[0])
            self.numbers = None
            self.init_state = gibbs_state(h_b, beta0)
            self.entropy_eq0 = gibbs_entropy_levels(self.levels, beta0)
        self.h_op = h_b
        self.n_op = model.n_baths[index] if particle else None
        self.r_delta_eq = abs(
            obs_entropy_shannon_form(outcome_distribution(self.init_state,
                                                          self.graining))
            - vn_entropy(self.init_state))
        self.binned_energies = np.array(
            [lab[0] if isinstance(lab, tuple) else lab
             for lab in self.graining.labels], dtype=np.float64)

    def solve_effective(self, u, n=None):
        if self.numbers is None:
            eff = effective_beta_from_levels(self.levels, u)
            return eff.beta_star, None, eff.saturated
        pt = effective_beta_mu_from_levels(self.levels, self.numbers, u, n)
        return pt.beta_star, pt.mu_star, False

    def eq_entropy(self, beta, mu):
        if self.numbers is None:
            return gibbs_entropy_levels(self.levels, beta)
        return grand_entropy_levels(self.levels, self.numbers, beta, mu)

    def eq_relative(self, beta, mu):
        if self.numbers is None:
            return gibbs_relative_entropy_levels(self.levels, beta, self.beta0)
        return grand_relative_entropy_levels(self.levels, self.numbers,
                                             beta, mu, self.beta0, self.mu0)


def _run_open_family(model: BuiltModel, protocol: Protocol, grid, delta,
                     betas, *, mus=None, initial_joint=None, rho_s0=None,
                     system_basis="eigenbasis", anchor=None,
                     run_kind="open") -> ThermoLedger:
    t_max, steps = _validate_grid(protocol, grid)
    dt = protocol.dt
    nb = model.n_baths_count
    particle = mus is not None
    if len(tuple(betas)) != nb or (particle and len(tuple(mus)) != nb):
        raise DimensionMismatch("need one beta (and mu) per bath")
    if system_basis not in ("eigenbasis", "fixed"):
        raise ValueError(f"unknown system basis mode {system_basis!r}")
    d_s = int(np.prod([model.dims[f] for f in model.system_factors]))

    baths = [_Bath(model, i, delta, anchor, betas[i],
                   mus[i] if particle else None, particle)
             for i in range(nb)]

    if particle:
        n_tot = model.n_total_full
        for k in range(steps):
            h_k = protocol.hamiltonian_at(k)
            dev = float(np.max(np.abs(h_k.matrix @ n_tot.matrix
                                      - n_tot.matrix @ h_k.matrix)))
            if dev > tol.COMMUTATOR:
                raise NonConserving(
                    f"step {k} violates total particle conservation by {dev:.3e}")
            if protocol.is_constant:
                break

    # initial state
    x_s0_fixed = rank1_graining(np.eye(d_s, dtype=np.complex128))
    if initial_joint is not None:
        table0 = np.asarray(initial_joint, dtype=np.float64)
        want = (d_s,) + tuple(b.graining.n_outcomes for b in baths)
        if table0.shape != want:
            raise DimensionMismatch(
                f"initial joint table has shape {table0.shape}, want {want}")
        if abs(float(table0.sum()) - 1.0) > tol.PROB_NORMALIZATION:
            raise NotNormalized(f"initial joint sums to {table0.sum()}")
        x_joint0 = product_graining([x_s0_fixed] + [b.graining for b in baths])
        dist0 = OutcomeDistribution(x_joint0.labels, table0.ravel(),
                                    x_joint0.volumes)
        rho = DensityMatrix(equilibrium_projection(dist0, x_joint0).matrix,
                            model.dims, validate=False)
    else:
        rho_s = _system_state(rho_s0, d_s)
        if system_basis == "fixed":
            off = rho_s.matrix - np.diag(np.diag(rho_s.matrix))
            leak = float(np.max(np.abs(off)))
            if leak > tol.DIAGONAL_INITIAL:
                raise InvalidInitialState(
                    f"rho_S(0) has coherences {leak:.3e} in the fixed basis")
        rho = DensityMatrix(
            kron_all([rho_s.matrix] + [b.init_state.matrix for b in baths]),
            model.dims, validate=False)

    # delta-consistency residual of the bath graining (equilibrium reference)
    # and the measured entropy gap of the actual initial state
    r_delta = float(sum(b.r_delta_eq for b in baths))
    x_sys_init = (_system_graining(partial_trace(rho, model.system_factors),
                                   system_basis)
                  if initial_joint is None else x_s0_fixed)
    x_joint_init = product_graining([x_sys_init] + [b.graining for b in baths])
    s_vn_global0 = vn_entropy(rho)
    s_obs_global0 = obs_entropy_shannon_form(outcome_distribution(rho, x_joint_init))
    initial_gap = abs(s_obs_global0 - s_vn_global0)
    slack = max(tol.SLACK_FLOOR, 2.0 * initial_gap)
    member_ok, member_res = is_equilibrium_member(rho, x_joint_init,
                                                  tol.MEMBERSHIP_TOL)

    times = np.linspace(0.0, t_max, steps + 1)
    n_pts = steps + 1
    rec = {
        "u_system": np.zeros(n_pts),
        "s_obs_global": np.zeros(n_pts),
        "s_obs_system": np.zeros(n_pts),
        "s_vn_system": np.zeros(n_pts),
        "info": np.zeros(n_pts),
        "work": np.zeros(n_pts),
    }
    per_bath = [{
        "u": np.zeros(n_pts), "n": np.zeros(n_pts),
        "u_binned": np.zeros(n_pts),
        "beta": np.zeros(n_pts), "mu": np.zeros(n_pts),
        "s_obs": np.zeros(n_pts), "s_eq": np.zeros(n_pts),
        "eps": np.zeros(n_pts), "d_ref": np.zeros(n_pts),
    } for _ in range(nb)]
    saturated_any = False
    init_dists = [None] * nb
    graining_first = graining_last = None

    rho_t = rho
    hs_prev = None
    last_seg, last_u = None, None
    work = 0.0
    for k in range(n_pts):
        hs_k = model.h_system_full(k)
        if 1 <= k <= steps - 1:
            work += float(trace_product(
                hs_k.matrix - hs_prev.matrix, rho_t.matrix).real)
        rec["work"][k] = work

        rho_s = partial_trace(rho_t, model.system_factors)
        x_s = (_system_graining(rho_s, system_basis)
               if not (k == 0 and initial_joint is not None) else x_s0_fixed)
        x_joint = product_graining([x_s] + [b.graining for b in baths],
                                   validate=False)
        if k == 0:
            graining_first = x_joint
        if k == n_pts - 1:
            graining_last = x_joint
        p_joint = outcome_distribution(rho_t, x_joint)
        shape = (x_s.n_outcomes,) + tuple(b.graining.n_outcomes for b in baths)
        table = p_joint.probabilities.reshape(shape)

        rec["u_system"][k] = internal_energy_open(hs_k, model.v_full, rho_t)
        rec["s_obs_global"][k] = obs_entropy_shannon_form(p_joint)
        rec["info"][k] = total_information(table)
        p_s = table.sum(axis=tuple(range(1, nb + 1)))
        rec["s_obs_system"][k] = shannon(p_s)
        rec["s_vn_system"][k] = vn_entropy(rho_s)

        for i, b in enumerate(baths):
            other = tuple(a for a in range(nb + 1) if a != i + 1)
            p_b = table.sum(axis=other)
            dist_b = OutcomeDistribution(b.graining.labels, p_b,
                                         b.graining.volumes)
            if k == 0:
                init_dists[i] = dist_b
            rb = per_bath[i]
            rb["s_obs"][k] = obs_entropy_shannon_form(dist_b)
            rb["u_binned"][k] = float(np.dot(b.binned_energies,
                                             dist_b.probabilities))
            rho_b = partial_trace(rho_t, b.factors)
            u_b = internal_energy(b.h_op, rho_b)
            rb["u"][k] = u_b
            n_b = internal_energy(b.n_op, rho_b) if particle else 0.0
            rb["n"][k] = n_b
            beta_k, mu_k, sat = b.solve_effective(
                u_b, n_b if particle else None)
            saturated_any = saturated_any or sat
            rb["beta"][k] = beta_k
            rb["mu"][k] = mu_k if particle else 0.0
            rb["s_eq"][k] = b.eq_entropy(beta_k, rb["mu"][k])
            rb["d_ref"][k] = b.eq_relative(beta_k, rb["mu"][k])
            p0 = init_dists[i].probabilities
            if float(p0.min()) > tol.PROB_ZERO:
                rb["eps"][k] = float(np.max(np.abs(
                    dist_b.probabilities / p0 - 1.0)))
            else:
                rb["eps"][k] = np.nan

        if k < steps:
            h_seg = protocol.hamiltonian_at(k)
            if last_seg is None or not (h_seg is last_seg or np.array_equal(
                    h_seg.matrix, last_seg.matrix)):
                last_seg, last_u = h_seg, propagator_step(h_seg, dt)
            rho_t = evolve(rho_t, last_u)
        hs_prev = hs_k

    # integrated quantities
    q = [np.zeros(n_pts) for _ in range(nb)]
    q_fixed = [np.zeros(n_pts) for _ in range(nb)]
    clausius = [np.zeros(n_pts) for _ in range(nb)]
    w_chem = np.zeros(n_pts)
    for i, b in enumerate(baths):
        rb = per_bath[i]
        du = np.diff(rb["u"])
        beta_mid = 0.5 * (rb["beta"][:-1] + rb["beta"][1:])
        if particle:
            dn = np.diff(rb["n"])
            mu_mid = 0.5 * (rb["mu"][:-1] + rb["mu"][1:])
            chem = np.concatenate([[0.0], np.cumsum(mu_mid * dn)])
            q[i] = -(rb["u"] - rb["u"][0]) + chem
            q_fixed[i] = -((rb["u"] - rb["u"][0])
                           - b.mu0 * (rb["n"] - rb["n"][0]))
            clausius[i] = np.concatenate(
                [[0.0], np.cumsum(beta_mid * (du - mu_mid * dn))])
            w_chem -= chem
        else:
            q[i] = -(rb["u"] - rb["u"][0])
            q_fixed[i] = q[i]
            clausius[i] = np.concatenate([[0.0], np.cumsum(beta_mid * du)])

    d_s_obs_sys = rec["s_obs_system"] - rec["s_obs_system"][0]
    d_s_vn_sys = rec["s_vn_system"] - rec["s_vn_system"][0]
    sigma_a = rec["s_obs_global"] - rec["s_obs_global"][0]
    sigma_b = d_s_obs_sys + sum(per_bath[i]["s_obs"] - per_bath[i]["s_obs"][0]
                                for i in range(nb))
    sigma_c = d_s_obs_sys + sum(clausius)
    fixed_term = sum(baths[i].beta0 * (-q_fixed[i]) for i in range(nb))
    sigma_d = d_s_obs_sys + fixed_term
    sigma_d_tilde = d_s_vn_sys + fixed_term
    gap_ab = rec["info"] - rec["info"][0]
    gap_bc = sum((per_bath[i]["s_eq"] - per_bath[i]["s_obs"])
                 - (per_bath[i]["s_eq"][0] - per_bath[i]["s_obs"][0])
                 for i in range(nb))
    gap_cd = sum(per_bath[i]["d_ref"] for i in range(nb))

    closure = np.abs(sum(clausius)
                     - sum(per_bath[i]["s_eq"] - per_bath[i]["s_eq"][0]
                           for i in range(nb)))
    closure_max = float(closure.max())
    qtol = max(tol.SLACK_FLOOR, 2.0 * closure_max)
    first_law = (rec["u_system"] - rec["u_system"][0]
                 - sum(q) - rec["work"] - w_chem)

    columns = {"time": times,
               "u_system": rec["u_system"],
               "work": rec["work"],
               "work_chemical": w_chem}
    for i in range(nb):
        rb = per_bath[i]
        j = i + 1
        columns[f"q_{j}"] = q[i]
        columns[f"u_bath_{j}"] = rb["u"]
        columns[f"u_bath_binned_{j}"] = rb["u_binned"]
        if particle:
            columns[f"n_bath_{j}"] = rb["n"]
            columns[f"mu_star_{j}"] = rb["mu"]
        columns[f"beta_star_{j}"] = rb["beta"]
        columns[f"s_obs_bath_{j}"] = rb["s_obs"]
        columns[f"gibbs_entropy_bath_{j}"] = rb["s_eq"]
        columns[f"epsilon_hat_{j}"] = rb["eps"]
    columns.update({
        "s_obs_global": rec["s_obs_global"],
        "s_obs_system": rec["s_obs_system"],
        "s_vn_system": rec["s_vn_system"],
        "info_correlation": rec["info"],
        "sigma_a": sigma_a,
        "sigma_b": sigma_b,
        "sigma_c": sigma_c,
        "sigma_d": sigma_d,
        "sigma_d_tilde": sigma_d_tilde,
        "gap_ab": gap_ab,
        "gap_bc": gap_bc,
        "gap_cd_tilde": gap_cd,
        "line_clausius": sigma_c,
        "line_bath_noneq": -gap_bc,
        "line_correlation": -gap_ab,
        "first_law_residual": first_law,
    })

    scalars = {
        "r_delta": r_delta,
        "initial_entropy_gap": initial_gap,
        "slack": slack,
        "quadrature_tolerance": qtol,
        "clausius_closure_max": closure_max,
        "first_law_max_residual": float(np.max(np.abs(first_law))),
        "membership_residual": member_res,
        "epsilon_hat_final": _finite_max(
            [per_bath[i]["eps"][-1] for i in range(nb)]),
        "delta": float(delta),
    }
    for i in range(nb):
        scalars[f"r_delta_bath_{i + 1}"] = baths[i].r_delta_eq
    flags = {
        "membership_ok": bool(member_ok),
        "beta_star_saturated": bool(saturated_any),
        "system_basis": system_basis,
        "particle": particle,
        "betas": [float(b) for b in betas],
        "mus": None if not particle else [float(m) for m in mus],
    }
    return ThermoLedger(run_kind, columns, scalars, flags,
                        model.spec.to_dict(), (t_max, steps),
                        graining_initial=graining_first,
                        graining_final=graining_last,
                        initial_state=rho)


def run_open(model: BuiltModel, protocol: Protocol, grid, delta, beta0, *,
             rho_s0=None, system_basis="eigenbasis", anchor=None) -> ThermoLedger:
    """Driven system initially decorrelated from a single Gibbs bath."""
    if model.n_baths_count != 1:
        raise DimensionMismatch("run_open needs a single-bath model")
    return _run_open_family(model, protocol, grid, delta, (beta0,),
                            rho_s0=rho_s0, system_basis=system_basis,
                            anchor=anchor, run_kind="open")


def run_open_generalized(model: BuiltModel, protocol: Protocol, grid, delta,
                         initial_joint, *, system_basis="eigenbasis",
                         anchor=None, beta_ref=1.0) -> ThermoLedger:
    """Open run from classically correlated (system, bath-window) weights.

    ``initial_joint`` is a table over (computational system state, bath
    energy window of the delta-graining); the run starts from the matching
    equilibrium-set state sum p |s><s| (x) omega(E_B).  ``beta_ref`` only
    anchors the fixed-temperature member of the hierarchy.
    """
    if model.n_baths_count != 1:
        raise DimensionMismatch("run_open_generalized needs a single-bath model")
    return _run_open_family(model, protocol, grid, delta, (beta_ref,),
                            initial_joint=initial_joint,
                            system_basis=system_basis, anchor=anchor,
                            run_kind="open_generalized")


def run_multibath(model: BuiltModel, protocol: Protocol, grid, delta,
                  betas, *, rho_s0=None, system_basis="eigenbasis",
                  anchor=None) -> ThermoLedger:
    """System coupled to several baths prepared at their own temperatures."""
    if model.n_baths_count < 2:
        raise DimensionMismatch("run_multibath needs at least two baths")
    return _run_open_family(model, protocol, grid, delta, betas,
                            rho_s0=rho_s0, system_basis=system_basis,
                            anchor=anchor, run_kind="multibath")


def run_particle(model: BuiltModel, grid, delta_e, betas, mus, *,
                 rho_s0=None, system_basis="eigenbasis",
                 anchor=None) -> ThermoLedger:
    """Energy and particle exchange with grand-canonical baths."""
    if model.n_baths is None:
        raise DimensionMismatch("run_particle needs a particle-conserving model")
    return _run_open_family(model, model.protocol, grid, delta_e, betas,
                            mus=mus, rho_s0=rho_s0, system_basis=system_basis,
                            anchor=anchor, run_kind="particle")


def run_isolated(model: BuiltModel, protocol: Protocol, grid, delta, *,
                 rho0=None, beta0=None, anchor=None) -> ThermoLedger:
    """Driven isolated system under a time-dependent energy coarse-graining.

    The graining is rebuilt from the instantaneous Hamiltonian at every grid
    point.  The initial state defaults to a Gibbs state at beta0.
    """
    t_max, steps = _validate_grid(protocol, grid)
    dt = protocol.dt
    h0 = protocol.grid_hamiltonian(0)
    if rho0 is None:
        rho0 = gibbs_state(h0, 1.0 if beta0 is None else float(beta0))
    if rho0.dim != protocol.dim:
        raise DimensionMismatch("initial state does not match the protocol")

    x0 = energy_graining(h0, delta, anchor)
    member_ok, member_res = is_equilibrium_member(rho0, x0, tol.MEMBERSHIP_TOL)
    # for an isolated run both residual notions are the initial entropy gap
    r_delta = abs(obs_entropy_shannon_form(outcome_distribution(rho0, x0))
                  - vn_entropy(rho0))
    initial_gap = r_delta
    slack = max(tol.SLACK_FLOOR, 2.0 * r_delta)

    times = np.linspace(0.0, t_max, steps + 1)
    n_pts = steps + 1
    u_arr = np.zeros(n_pts)
    w_arr = np.zeros(n_pts)
    s_obs = np.zeros(n_pts)
    s_vn = np.zeros(n_pts)
    beta_arr = np.zeros(n_pts)
    s_eq = np.zeros(n_pts)
    clausius = np.zeros(n_pts)
    saturated_any = False

    rho = rho0
    graining_first = graining_last = None
    h_prev = None
    pi_prev = None
    work = 0.0
    dq_sum = 0.0
    for k in range(n_pts):
        h_k = protocol.grid_hamiltonian(k) if k < n_pts - 1 else h_prev
        if 1 <= k <= steps - 1:
            work += float(trace_product(
                h_k.matrix - h_prev.matrix, rho.matrix).real)
        w_arr[k] = work

        x_k = energy_graining(h_k, delta, anchor) if (k == 0 or h_k is not h_prev) \
            else graining_last
        if k == 0:
            graining_first = x_k
        graining_last = x_k

        u_k = internal_energy(h_k, rho)
        u_arr[k] = u_k
        s_obs[k] = obs_entropy_shannon_form(outcome_distribution(rho, x_k))
        s_vn[k] = vn_entropy(rho)
        levels = h_k.eig()[0]
        eff = effective_beta_from_levels(levels, u_k)
        saturated_any = saturated_any or eff.saturated
        beta_arr[k] = eff.beta_star
        s_eq[k] = gibbs_entropy_levels(levels, eff.beta_star)
        pi_k = gibbs_state(h_k, eff.beta_star)
        if k >= 1:
            # dQ = dU - tr{dH pi(beta*)} with midpoint states and temperatures
            dh = h_k.matrix - h_prev.matrix
            dq = (u_arr[k] - u_arr[k - 1]
                  - float(trace_product(dh, (pi_prev.matrix + pi_k.matrix) / 2).real))
            dq_sum += 0.5 * (beta_arr[k - 1] + beta_arr[k]) * dq
        clausius[k] = dq_sum

        if k < steps:
            u_step = propagator_step(h_k, dt)
            rho = evolve(rho, u_step)
        h_prev = h_k
        pi_prev = pi_k

    sigma = s_obs - s_obs[0]
    first_law = (u_arr - u_arr[0]) - w_arr
    closure = np.abs(clausius - (s_eq - s_eq[0]))
    closure_max = float(closure.max())
    qtol = max(tol.SLACK_FLOOR, 2.0 * closure_max)

    columns = {
        "time": times,
        "u_total": u_arr,
        "work": w_arr,
        "s_obs": s_obs,
        "s_vn": s_vn,
        "beta_star": beta_arr,
        "gibbs_entropy": s_eq,
        "clausius": clausius,
        "sigma": sigma,
        "first_law_residual": first_law,
    }
    scalars = {
        "r_delta": r_delta,
        "initial_entropy_gap": initial_gap,
        "slack": slack,
        "quadrature_tolerance": qtol,
        "clausius_closure_max": closure_max,
        "first_law_max_residual": float(np.max(np.abs(first_law))),
        "membership_residual": member_res,
        "delta": float(delta),
    }
    flags = {
        "membership_ok": bool(member_ok),
        "beta_star_saturated": bool(saturated_any),
        "second_law_asserted": bool(member_ok),
    }
    return ThermoLedger("isolated", columns, scalars, flags,
                        model.spec.to_dict(), (t_max, steps),
                        graining_initial=graining_first,
                        graining_final=graining_last,
                        initial_state=rho0)


def hierarchy_violations(ledger: ThermoLedger) -> list[str]:
    """Names of every hierarchy/first-law invariant the ledger violates.

    Empty list means the run satisfies all computed inequalities at its own
    slack and measured quadrature tolerance.
    """
    out = []
    slack = ledger.slack
    qtol = ledger.quadrature_tolerance
    note = ("" if ledger.flags.get("membership_ok", True)
            else " (initial state failed equilibrium membership: residual="
                 f"{ledger.scalars['membership_residual']:.3e})")

    flaw = ledger.series("first_law_residual")
    scale = max(1.0, float(np.max(np.abs(ledger.series("work")))))
    if float(np.max(np.abs(flaw))) > 1e-9 * scale:
        out.append(f"first_law_closure exceeded: {np.max(np.abs(flaw)):.3e}")

    if ledger.run_kind == "isolated":
        sigma = ledger.series("sigma")
        if float(sigma.min()) < -slack:
            out.append(f"second_law_sigma_nonneg violated: min sigma "
                       f"{sigma.min():.3e} < -{slack:.3e}{note}")
        chain = ledger.series("clausius") - sigma
        if float(chain.min()) < -(slack + qtol):
            out.append(f"clausius_dominates_sigma violated by "
                       f"{-chain.min():.3e}{note}")
        return out

    sa = ledger.series("sigma_a")
    sb = ledger.series("sigma_b")
    sc = ledger.series("sigma_c")
    sdt = ledger.series("sigma_d_tilde")
    if float(sa.min()) < -slack:
        out.append(f"sigma_a_nonneg violated: min {sa.min():.3e} "
                   f"< -{slack:.3e}{note}")
    if float(np.max(sa - sb)) > tol.HIERARCHY_EXACT_GAP:
        out.append(f"sigma_a_le_sigma_b violated by {np.max(sa - sb):.3e}")
    if float(np.max(sb - sc)) > 2 * ledger.scalars["r_delta"] + qtol:
        out.append(f"sigma_b_le_sigma_c violated by {np.max(sb - sc):.3e}")
    id_ab = np.max(np.abs((sb - sa) - ledger.series("gap_ab")))
    if float(id_ab) > tol.HIERARCHY_EXACT_GAP:
        out.append(f"gap_ab_identity off by {id_ab:.3e}")
    # sigma_d_tilde is built on the system's von Neumann entropy, so its
    # relations to sigma_c only hold when the graining tracks the eigenbasis
    if ledger.flags.get("system_basis") == "eigenbasis":
        if float(np.max(sc - sdt)) > qtol:
            out.append("sigma_c_le_sigma_d_tilde violated by "
                       f"{np.max(sc - sdt):.3e}")
        id_cd = np.max(np.abs((sdt - sc) - ledger.series("gap_cd_tilde")))
        if float(id_cd) > qtol + 2 * ledger.scalars["r_delta"]:
            out.append(f"gap_cd_identity off by {id_cd:.3e}")
    lines = (ledger.series("line_clausius") + ledger.series("line_bath_noneq")
             + ledger.series("line_correlation"))
    id_sum = np.max(np.abs(sa - lines))
    if float(id_sum) > qtol + tol.HIERARCHY_EXACT_GAP:
        out.append(f"decomposition_sum off by {id_sum:.3e}")
    return out


def conjecture_report(ledger: ThermoLedger) -> dict:
    """Magnitudes of the three decomposition lines over time (informational).

    No ordering is asserted; the table simply reports how the Clausius,
    bath-nonequilibrium and correlation contributions compare.
    """
    if ledger.run_kind == "isolated":
        raise DimensionMismatch("decomposition lines exist for open-family runs")
    t = ledger.times
    lines = {name: ledger.series(name) for name in
             ("line_clausius", "line_bath_noneq", "line_correlation")}
    report = {
        "time": t.tolist(),
        "lines": {k: v.tolist() for k, v in lines.items()},
        "max_abs": {k: float(np.max(np.abs(v))) for k, v in lines.items()},
        "final": {k: float(v[-1]) for k, v in lines.items()},
    }
    rows = ["time      clausius      bath_noneq    correlation"]
    for i in range(len(t)):
        rows.append(f"{t[i]:<9.4g} {lines['line_clausius'][i]:<13.5e} "
                    f"{lines['line_bath_noneq'][i]:<13.5e} "
                    f"{lines['line_correlation'][i]:<13.5e}")
    report["table"] = "\n".join(rows)
    return report
