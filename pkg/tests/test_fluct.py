import numpy as np
import pytest

from obsent import (
    DensityMatrix,
    HermitianOperator,
    ModelSpec,
    build,
    central_relation_check,
    detailed_ft_histograms,
    energy_graining,
    export_histograms_csv,
    forward_two_point,
    ift_average,
    kron,
    rank1_graining,
    reversed_two_point,
    run_open_generalized,
    trotter_propagator,
)
from obsent.dynamics import Protocol, constant_protocol, reversed_protocol
from obsent.entropy import equilibrium_projection
from obsent.errors import LabelMismatch, PreconditionViolated
from obsent.graining import OutcomeDistribution
from obsent.thermo import coarse_gibbs_probabilities

from conftest import random_graining, random_hermitian


def member_state(rng, x, dims=None):
    w = rng.random(x.n_outcomes)
    w /= w.sum()
    rho = equilibrium_projection(OutcomeDistribution(x.labels, w, x.volumes), x)
    return DensityMatrix(rho.matrix, dims, validate=False)


def quench_model(n_bath=4, steps=40, t_max=4.0, seed=5):
    spec = ModelSpec(kind="spin_star", bath_sites=(n_bath,), coupling=(0.3,),
                     bath_ring=0.2, eps0=1.0, tunnel=0.4,
                     drive_kind="quench", drive_amplitude=0.6, seed=seed)
    model = build(spec, t_max, steps)
    x_b = energy_graining(model.h_baths[0], 0.6)
    table = np.outer([0.7, 0.3],
                     coarse_gibbs_probabilities(x_b, 1.0).probabilities)
    ledger = run_open_generalized(model, model.protocol, (t_max, steps), 0.6,
                                  table, beta_ref=1.0)
    return model, ledger


@pytest.fixture(scope="module")
def quench_run():
    model, ledger = quench_model()
    u = trotter_propagator(model.protocol)
    fwd = forward_two_point(ledger.initial_state, u,
                            ledger.graining_initial, ledger.graining_final)
    rev = reversed_two_point(fwd, model.protocol)
    return model, ledger, fwd, rev


class TestForwardTwoPoint:
    def test_trivial_evolution_has_no_entropy_change(self):
        rng = np.random.default_rng(141)
        x = random_graining(rng, 8, 3)
        rho = member_state(rng, x)
        fwd = forward_two_point(rho, np.eye(8, dtype=complex), x, x)
        realized = fwd.probabilities > 1e-14
        assert np.max(np.abs(fwd.delta_s[realized])) < 1e-12

    def test_decoupled_joint_factorizes(self):
        rng = np.random.default_rng(142)
        xa = random_graining(rng, 2, 2)
        xb = random_graining(rng, 4, 2)
        from obsent import product_graining
        x = product_graining([xa, xb])
        ra = member_state(rng, xa)
        rb = member_state(rng, xb)
        rho = DensityMatrix(kron(ra.matrix, rb.matrix), (2, 4))
        ua = trotter_propagator(constant_protocol(random_hermitian(rng, 2), 1.0)).matrix
        ub = trotter_propagator(constant_protocol(random_hermitian(rng, 4), 1.0)).matrix
        fwd = forward_two_point(rho, kron(ua, ub), x, x)
        fa = forward_two_point(ra, ua, xa, xa)
        fb = forward_two_point(rb, ub, xb, xb)
        for k, ((a0, b0), (at, bt)) in enumerate(fwd.pairs):
            want = fa.probability((a0, at)) * fb.probability((b0, bt))
            assert abs(fwd.probabilities[k] - want) < 1e-12

    def test_against_bruteforce_enumeration(self, quench_run):
        model, ledger, fwd, _ = quench_run
        u = trotter_propagator(model.protocol).matrix
        x0, xt = fwd.grainings
        rho = ledger.initial_state.matrix
        for k in rng_sample(len(fwd.pairs), 25):
            l0, lt = fwd.pairs[k]
            p0 = x0.projector(l0)
            pt = xt.projector(lt)
            want = np.trace(pt @ u @ p0 @ rho @ p0 @ u.conj().T).real
            assert abs(fwd.probabilities[k] - want) < 1e-12


def rng_sample(n, k):
    rng = np.random.default_rng(0)
    return rng.choice(n, size=min(n, k), replace=False)


class TestIntegralFluctuationTheorem:
    def test_trivial_evolution_exact(self):
        rng = np.random.default_rng(143)
        x = random_graining(rng, 6, 3)
        rho = member_state(rng, x)
        fwd = forward_two_point(rho, np.eye(6, dtype=complex), x, x)
        assert abs(ift_average(fwd) - 1.0) < 1e-12

    def test_full_run(self, quench_run):
        _, _, fwd, _ = quench_run
        assert fwd.membership_ok
        assert abs(ift_average(fwd) - 1.0) < 1e-9

    def test_coherent_initial_state_breaks_theorem(self, quench_run):
        model, ledger, fwd, _ = quench_run
        x0, xt = fwd.grainings
        b = x0.basis
        v = (b[:, x0.slices[0].start] + b[:, x0.slices[-1].start]) / np.sqrt(2)
        d = x0.dim
        rho_bad = DensityMatrix(0.9 * np.outer(v, v.conj()) + 0.1 * np.eye(d) / d,
                                ledger.initial_state.dims)
        u = trotter_propagator(model.protocol)
        bad = forward_two_point(rho_bad, u, x0, xt)
        assert not bad.membership_ok
        assert not bad.flag_zero_probability
        assert abs(ift_average(bad) - 1.0) > 1e-6

    def test_zero_probability_outcomes_flagged(self):
        rng = np.random.default_rng(144)
        x = random_graining(rng, 6, 3)
        # support only on the first outcome: the others have p = 0
        rho = DensityMatrix(x.projector(x.labels[0])
                            / x.volumes[0])
        fwd = forward_two_point(rho, np.eye(6, dtype=complex), x, x)
        assert fwd.flag_zero_probability
        with pytest.raises(PreconditionViolated) as err:
            ift_average(fwd)
        assert hasattr(err.value, "value")

    def test_jensen_consistency(self, quench_run):
        _, _, fwd, _ = quench_run
        assert abs(ift_average(fwd) - 1.0) < 1e-9
        assert fwd.mean_delta_s() >= -1e-9


class TestReversedTwoPoint:
    def test_trivial_symmetric_process(self):
        rng = np.random.default_rng(145)
        h = HermitianOperator(np.diag(rng.normal(size=6)))
        x = energy_graining(h, 1e-6)
        rho = member_state(rng, x)
        p = constant_protocol(HermitianOperator(np.zeros((6, 6))), 1.0, 3)
        fwd = forward_two_point(rho, trotter_propagator(p), x, x)
        rev = reversed_two_point(fwd, p)
        for (l0, lt) in fwd.pairs:
            assert abs(fwd.probability((l0, lt))
                       - rev.probability((l0, lt))) < 1e-10

    def test_real_hamiltonian_conjugated_projectors(self):
        rng = np.random.default_rng(146)
        h = HermitianOperator(np.diag(rng.normal(size=4)))
        x = energy_graining(h, 1e-6)
        conj = x.conjugated()
        for lab in x.labels:
            assert np.max(np.abs(conj.projector(lab)
                                 - x.projector(lab).conj())) < 1e-14

    def test_normalization(self, quench_run):
        _, _, _, rev = quench_run
        assert abs(float(rev.probabilities.sum()) - 1.0) < 1e-10


class TestCentralRelation:
    def test_trivial_process(self):
        rng = np.random.default_rng(147)
        x = random_graining(rng, 6, 3)
        rho = member_state(rng, x)
        p = constant_protocol(HermitianOperator(np.zeros((6, 6))), 0.0, 1)
        fwd = forward_two_point(rho, trotter_propagator(p), x, x)
        rev = reversed_two_point(fwd, p)
        assert central_relation_check(fwd, rev) < 1e-12

    def test_driven_model(self, quench_run):
        _, _, fwd, rev = quench_run
        assert central_relation_check(fwd, rev) <= 1e-9

    def test_implies_integral_theorem(self, quench_run):
        _, _, fwd, rev = quench_run
        mask = np.isfinite(fwd.delta_s)
        total = float(np.sum(np.exp(fwd.delta_s[mask])
                             * [rev.probability(p) for p, m
                                in zip(fwd.pairs, mask) if m]))
        assert abs(total - 1.0) < 1e-9

    def test_label_mismatch(self, quench_run):
        rng = np.random.default_rng(148)
        _, _, fwd, _ = quench_run
        x = random_graining(rng, 4, 2)
        rho = member_state(rng, x)
        other = forward_two_point(rho, np.eye(4, dtype=complex), x, x)
        with pytest.raises(LabelMismatch):
            central_relation_check(fwd, other)


class TestDetailedFluctuationTheorem:
    def test_symmetric_process_ratio_one(self):
        rng = np.random.default_rng(149)
        h = HermitianOperator(np.diag(rng.normal(size=5)))
        x = energy_graining(h, 1e-6)
        rho = member_state(rng, x)
        p = constant_protocol(h, 2.0, 4)
        fwd = forward_two_point(rho, trotter_propagator(p), x, x)
        rev = reversed_two_point(fwd, p)
        table, _ = detailed_ft_histograms(fwd, rev)
        zero_rows = [r for r in table if abs(r[0]) < 1e-12]
        assert zero_rows
        for _, p_w, q_w, ratio, expected in zero_rows:
            assert abs(ratio - 1.0) < 1e-10 and abs(expected - 1.0) < 1e-12

    def test_two_level_closed_form(self):
        # rotation by theta on a diagonal member state: all probabilities
        # are enumerable by hand
        theta, p = 0.6, 0.75
        rho = DensityMatrix(np.diag([p, 1 - p]).astype(complex))
        x = rank1_graining(np.eye(2, dtype=complex))
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        u = np.array([[c, -s], [s, c]], dtype=complex)
        fwd = forward_two_point(rho, u, x, x)
        q0 = p * c**2 + (1 - p) * s**2  # final undisturbed weight of |0>
        joint = {(0, 0): p * c**2, (0, 1): p * s**2,
                 (1, 0): (1 - p) * s**2, (1, 1): (1 - p) * c**2}
        for (l0, lt), want in joint.items():
            assert abs(fwd.probability((l0, lt)) - want) < 1e-12
        marg = {0: q0, 1: 1 - q0}
        start = {0: p, 1: 1 - p}
        h_protocol = Protocol(1.0, [HermitianOperator(np.zeros((2, 2)))])
        # use an explicit protocol whose propagator equals u is not possible
        # for a generic rotation; check the forward delta-s values instead
        for k, (l0, lt) in enumerate(fwd.pairs):
            want = np.log(start[l0] / marg[lt])
            assert abs(fwd.delta_s[k] - want) < 1e-12

    def test_per_value_ratio_identity(self, quench_run):
        _, _, fwd, rev = quench_run
        table, _ = detailed_ft_histograms(fwd, rev)
        checked = 0
        for value, p_w, q_w, ratio, expected in table:
            if p_w > 1e-12 and np.isfinite(ratio):
                assert abs(ratio - expected) / expected < 1e-8
                checked += 1
        assert checked > 10

    def test_csv_export(self, tmp_path, quench_run):
        _, _, fwd, rev = quench_run
        table, _ = detailed_ft_histograms(fwd, rev)
        path = tmp_path / "ft.csv"
        export_histograms_csv(table, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "delta_s,p_forward,q_reversed,ratio,expected_ratio"
        assert len(lines) == 1 + len(table)


class TestInvariants:
    def test_mean_delta_s_matches_sigma_a(self, quench_run):
        _, ledger, fwd, _ = quench_run
        assert abs(fwd.mean_delta_s()
                   - float(ledger.series("sigma_a")[-1])) < 1e-8

    def test_delta_s_antisymmetry(self):
        # swapping the two measurements negates every entry exactly
        from obsent.fluct import entropy_change_matrix
        rng = np.random.default_rng(151)
        w0 = rng.random(4)
        wt = rng.random(3)
        p0 = OutcomeDistribution(tuple(range(4)), w0 / w0.sum(), [1, 2, 3, 2])
        pt = OutcomeDistribution(tuple(range(3)), wt / wt.sum(), [2, 1, 5])
        fw = entropy_change_matrix(p0, pt)
        bw = entropy_change_matrix(pt, p0)
        assert np.array_equal(fw, -bw.T)

    def test_trace_relation_under_time_reversal(self):
        rng = np.random.default_rng(150)
        steps = [random_hermitian(rng, 4) for _ in range(3)]
        p = Protocol(1.5, steps)
        u = trotter_propagator(p).matrix
        u_rev = trotter_propagator(reversed_protocol(p)).matrix
        x0 = random_graining(rng, 4, 2)
        xt = random_graining(rng, 4, 2)
        for a in x0.labels:
            for b in xt.labels:
                lhs = np.trace(x0.projector(a) @ u.conj().T
                               @ xt.projector(b) @ u).real
                rhs = np.trace(x0.projector(a).conj() @ u_rev
                               @ xt.projector(b).conj()
                               @ u_rev.conj().T).real
                assert abs(lhs - rhs) < 1e-9
