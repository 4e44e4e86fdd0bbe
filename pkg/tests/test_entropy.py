import numpy as np
import pytest

from obsent import (
    DensityMatrix,
    HermitianOperator,
    boltzmann_entropy,
    decompose_obs_entropy,
    dephase,
    energy_graining,
    gibbs_state,
    is_equilibrium_member,
    kron,
    microcanonical_state,
    mutual_information_classical,
    mutual_information_quantum,
    obs_entropy,
    obs_entropy_shannon_form,
    outcome_distribution,
    product_graining,
    rank1_graining,
    relative_entropy,
    shannon,
    total_information,
    vn_entropy,
)
from obsent.entropy import equilibrium_projection
from obsent.errors import InfiniteDivergence, NotNormalized, UnknownOutcome
from obsent.graining import OutcomeDistribution
from obsent.models import PAULI_Z, site_operator

from conftest import (
    random_density,
    random_graining,
    random_hermitian,
    random_unitary,
)

LN2 = np.log(2.0)
# closed form for the (3/4, 1/4) distribution
H_34 = -(0.75 * np.log(0.75) + 0.25 * np.log(0.25))


class TestShannon:
    def test_deterministic(self):
        assert shannon([1.0, 0.0]) == 0.0

    def test_fair_coin(self):
        assert abs(shannon([0.5, 0.5]) - LN2) < 1e-12

    def test_closed_form(self):
        assert abs(shannon([0.75, 0.25]) - H_34) < 1e-12
        assert abs(H_34 - 0.5623) < 1e-4

    def test_rejects_unnormalized(self):
        with pytest.raises(NotNormalized):
            shannon([0.5, 0.6])


class TestVnEntropy:
    def test_pure_state(self):
        v = np.array([1.0, 1.0j]) / np.sqrt(2)
        assert abs(vn_entropy(DensityMatrix(np.outer(v, v.conj())))) < 1e-12

    def test_maximally_mixed(self):
        for d in (2, 5, 8):
            assert abs(vn_entropy(DensityMatrix(np.eye(d) / d)) - np.log(d)) < 1e-12

    def test_qubit_gibbs_closed_form(self):
        rho = gibbs_state(HermitianOperator(np.diag([0.0, 1.0])), np.log(3.0))
        assert abs(vn_entropy(rho) - H_34) < 1e-4


class TestObsEntropy:
    def test_pure_state_in_shell_gives_boltzmann(self):
        # S_obs = ln V for a pure state inside one window
        h = HermitianOperator(np.diag([0.0, 0.1, 0.2, 5.0]))
        x = energy_graining(h, 1.0)
        v = np.array([1, 1, 1, 0], dtype=complex) / np.sqrt(3)
        rho = DensityMatrix(np.outer(v, v.conj()))
        assert abs(vn_entropy(rho)) < 1e-12
        assert abs(obs_entropy(rho, x) - np.log(3)) < 1e-12

    def test_maximally_mixed_saturates(self):
        rng = np.random.default_rng(51)
        for d in (4, 6):
            x = random_graining(rng, d)
            rho = DensityMatrix(np.eye(d) / d)
            assert abs(obs_entropy(rho, x) - np.log(d)) < 1e-10

    def test_single_projector(self):
        rho = DensityMatrix(np.diag([0.75, 0.25]).astype(complex))
        x = energy_graining(HermitianOperator(np.zeros((2, 2))), 1.0)
        assert abs(obs_entropy(rho, x) - LN2) < 1e-12


class TestBoltzmannEntropy:
    def test_rank_one(self):
        x = rank1_graining(np.eye(3, dtype=complex))
        assert boltzmann_entropy(x, 0) == 0.0

    def test_volume_eight(self):
        x = energy_graining(HermitianOperator(np.zeros((8, 8))), 1.0)
        assert abs(boltzmann_entropy(x, x.labels[0]) - np.log(8)) < 1e-12

    def test_middle_bin_of_three_site_bath(self):
        h = HermitianOperator(sum(0.5 * site_operator(PAULI_Z, k, 3)
                                  for k in range(3)))
        x = energy_graining(h, 1.1, anchor=-1.5)
        mid = x.labels[1]
        assert abs(boltzmann_entropy(x, mid) - np.log(3)) < 1e-12

    def test_unknown_outcome(self):
        x = rank1_graining(np.eye(2, dtype=complex))
        with pytest.raises(UnknownOutcome):
            boltzmann_entropy(x, 99)


class TestShannonForm:
    def test_deterministic_outcome_gives_boltzmann(self):
        p = OutcomeDistribution(("a", "b"), [1.0, 0.0], [4, 2])
        assert abs(obs_entropy_shannon_form(p) - np.log(4)) < 1e-12

    def test_rank1_reduces_to_shannon(self):
        p = OutcomeDistribution((0, 1, 2), [0.5, 0.3, 0.2], [1, 1, 1])
        assert abs(obs_entropy_shannon_form(p)
                   - shannon([0.5, 0.3, 0.2])) < 1e-12

    def test_matches_obs_entropy(self):
        rng = np.random.default_rng(52)
        for _ in range(10):
            d = int(rng.integers(3, 10))
            x = random_graining(rng, d)
            rho = random_density(rng, d)
            a = obs_entropy(rho, x)
            b = obs_entropy_shannon_form(outcome_distribution(rho, x))
            assert abs(a - b) < 1e-10


class TestRelativeEntropy:
    def test_self_divergence(self):
        rng = np.random.default_rng(53)
        rho = random_density(rng, 4)
        assert abs(relative_entropy(rho, rho)) < 1e-10

    def test_classical_closed_form(self):
        rho = DensityMatrix(np.diag([0.5, 0.5]).astype(complex))
        sigma = DensityMatrix(np.diag([0.75, 0.25]).astype(complex))
        want = 0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)
        assert abs(relative_entropy(rho, sigma) - want) < 1e-12
        assert abs(want - 0.14384) < 1e-5

    def test_infinite_divergence_signaled(self):
        rho = DensityMatrix(np.diag([0.5, 0.5]).astype(complex))
        sigma = DensityMatrix(np.diag([1.0, 0.0]).astype(complex))
        with pytest.raises(InfiniteDivergence):
            relative_entropy(rho, sigma)

    def test_nonnegative(self):
        rng = np.random.default_rng(54)
        for _ in range(10):
            d = int(rng.integers(2, 7))
            assert relative_entropy(random_density(rng, d),
                                    random_density(rng, d)) > -1e-10


class TestMutualInformation:
    def test_product_table(self):
        p = np.outer([0.3, 0.7], [0.2, 0.5, 0.3])
        assert abs(mutual_information_classical(p)) < 1e-12

    def test_perfect_correlation(self):
        p = np.diag([0.5, 0.5])
        assert abs(mutual_information_classical(p) - LN2) < 1e-12

    def test_marginal_oracle(self):
        rng = np.random.default_rng(55)
        p = rng.random((3, 4))
        p /= p.sum()
        got = mutual_information_classical(p)
        want = (shannon(p.sum(axis=1)) + shannon(p.sum(axis=0))
                - shannon(p.ravel()))
        assert abs(got - want) < 1e-12
        assert -1e-9 <= got <= np.log(3) + 1e-9

    def test_quantum_product_state(self):
        rng = np.random.default_rng(56)
        a, b = random_density(rng, 2), random_density(rng, 3)
        joint = DensityMatrix(kron(a.matrix, b.matrix), (2, 3))
        assert abs(mutual_information_quantum(joint, [0])) < 1e-10

    def test_quantum_bell_state(self):
        v = np.zeros(4, dtype=complex)
        v[0] = v[3] = 1 / np.sqrt(2)
        rho = DensityMatrix(np.outer(v, v.conj()), (2, 2))
        assert abs(mutual_information_quantum(rho, [0]) - 2 * LN2) < 1e-10

    def test_quantum_equals_relative_entropy(self):
        rng = np.random.default_rng(57)
        from obsent import partial_trace
        for _ in range(5):
            rho = random_density(rng, 6, dims=(2, 3))
            ra = partial_trace(rho, [0])
            rb = partial_trace(rho, [1])
            prod = DensityMatrix(kron(ra.matrix, rb.matrix), (2, 3))
            lhs = mutual_information_quantum(rho, [0])
            rhs = relative_entropy(rho, prod)
            assert abs(lhs - rhs) < 1e-8


class TestTotalInformation:
    def test_product_joint(self):
        p = np.einsum("i,j,k->ijk", [0.4, 0.6], [0.5, 0.5], [0.1, 0.9])
        assert abs(total_information(p)) < 1e-12

    def test_two_party_collapse(self):
        rng = np.random.default_rng(58)
        p = rng.random((3, 3))
        p /= p.sum()
        assert abs(total_information(p)
                   - mutual_information_classical(p)) < 1e-12

    def test_ghz_table(self):
        p = np.zeros((2, 2, 2))
        p[0, 0, 0] = p[1, 1, 1] = 0.5
        assert abs(total_information(p) - 2 * LN2) < 1e-12


class TestDecomposition:
    def test_member_state_has_no_relative_part(self):
        rng = np.random.default_rng(59)
        x = random_graining(rng, 6, 3)
        weights = rng.random(x.n_outcomes)
        weights /= weights.sum()
        rho = equilibrium_projection(
            OutcomeDistribution(x.labels, weights, x.volumes), x)
        dec = decompose_obs_entropy(rho, x)
        assert abs(dec.avg_relative) < 1e-10
        assert abs(dec.dephased_vn - obs_entropy(rho, x)) < 1e-10

    def test_pure_state_in_shell(self):
        h = HermitianOperator(np.diag([0.0, 0.1, 0.2, 5.0]))
        x = energy_graining(h, 1.0)
        v = np.array([1, 1, 1, 0], dtype=complex) / np.sqrt(3)
        rho = DensityMatrix(np.outer(v, v.conj()))
        dec = decompose_obs_entropy(rho, x)
        assert abs(dec.dephased_vn) < 1e-10
        assert abs(dec.avg_relative - np.log(3)) < 1e-10

    def test_parts_sum_to_obs_entropy(self):
        rng = np.random.default_rng(60)
        for _ in range(10):
            d = int(rng.integers(3, 10))
            x = random_graining(rng, d)
            rho = random_density(rng, d)
            dec = decompose_obs_entropy(rho, x)
            assert abs(dec.total - obs_entropy(rho, x)) < 1e-9


class TestMicrocanonicalState:
    def test_rank_one_is_pure(self):
        rng = np.random.default_rng(61)
        x = random_graining(rng, 4, 4)
        rho = microcanonical_state(x, x.labels[0])
        assert abs(vn_entropy(rho)) < 1e-10

    def test_identity_graining(self):
        x = energy_graining(HermitianOperator(np.zeros((5, 5))), 1.0)
        rho = microcanonical_state(x, x.labels[0])
        assert np.max(np.abs(rho.matrix - np.eye(5) / 5)) < 1e-12

    def test_entropy_equals_boltzmann(self):
        rng = np.random.default_rng(62)
        x = random_graining(rng, 8, 3)
        for label in x.labels:
            omega = microcanonical_state(x, label)
            assert abs(vn_entropy(omega) - boltzmann_entropy(x, label)) < 1e-10


class TestEquilibriumMembership:
    def test_gibbs_with_fine_graining(self):
        rng = np.random.default_rng(63)
        h = random_hermitian(rng, 6)
        # windows narrower than any gap group only exactly degenerate levels
        x = energy_graining(h, 1e-6)
        rho = gibbs_state(h, 0.8)
        ok, residual = is_equilibrium_member(rho, x, 1e-6)
        assert ok and residual < 1e-10

    def test_random_pure_state_fails(self):
        rng = np.random.default_rng(64)
        x = random_graining(rng, 6, 2)
        rho = random_density(rng, 6, rank=1)
        ok, residual = is_equilibrium_member(rho, x, 1e-8)
        assert not ok and residual > 1e-3

    def test_convex_member_passes(self):
        rng = np.random.default_rng(65)
        x = random_graining(rng, 5, 2)
        m = (0.3 * microcanonical_state(x, x.labels[0]).matrix
             + 0.7 * microcanonical_state(x, x.labels[1]).matrix)
        ok, residual = is_equilibrium_member(DensityMatrix(m), x, 1e-10)
        assert ok and residual < 1e-12


def _random_member(rng, x):
    w = rng.random(x.n_outcomes)
    w /= w.sum()
    return equilibrium_projection(
        OutcomeDistribution(x.labels, w, x.volumes), x)


class TestLemmas:
    """The observational-entropy lemma suite on random instances."""

    def test_bounds_lemma(self):
        rng = np.random.default_rng(71)
        for _ in range(25):
            d = int(rng.integers(2, 16))
            x = random_graining(rng, d)
            rho = random_density(rng, d, rank=int(rng.integers(1, d + 1)))
            s_obs = obs_entropy(rho, x)
            assert vn_entropy(rho) - 1e-9 <= s_obs <= np.log(d) + 1e-9

    def test_extensivity_lemma(self):
        rng = np.random.default_rng(72)
        for _ in range(10):
            d1, d2 = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            x1, x2 = random_graining(rng, d1), random_graining(rng, d2)
            r1, r2 = random_density(rng, d1), random_density(rng, d2)
            joint = DensityMatrix(kron(r1.matrix, r2.matrix), (d1, d2))
            lhs = obs_entropy(joint, product_graining([x1, x2]))
            rhs = obs_entropy(r1, x1) + obs_entropy(r2, x2)
            assert abs(lhs - rhs) < 1e-9

    def test_decomposition_lemma(self):
        rng = np.random.default_rng(73)
        for _ in range(15):
            d = int(rng.integers(2, 12))
            x = random_graining(rng, d)
            rho = random_density(rng, d)
            dec = decompose_obs_entropy(rho, x)
            assert dec.avg_relative > -1e-10
            assert abs(dec.total - obs_entropy(rho, x)) < 1e-9

    def test_equality_characterization_lemma(self):
        rng = np.random.default_rng(74)
        for _ in range(10):
            d = int(rng.integers(3, 10))
            x = random_graining(rng, d)
            member = _random_member(rng, x)
            # member => entropies agree
            assert abs(obs_entropy(member, x) - vn_entropy(member)) < 1e-9
            ok, _ = is_equilibrium_member(member, x, 1e-6)
            assert ok
            # tiny entropy gap => membership at the coarser tolerance
            gap = obs_entropy(member, x) - vn_entropy(member)
            if abs(gap) <= 1e-10:
                ok, res = is_equilibrium_member(member, x, 1e-6)
                assert ok and res <= 1e-6

    def test_second_law_precursor_lemma(self):
        rng = np.random.default_rng(75)
        for _ in range(10):
            d = int(rng.integers(3, 10))
            x0 = random_graining(rng, d)
            xt = random_graining(rng, d)
            rho0 = _random_member(rng, x0)
            u = random_unitary(rng, d)
            rho_t = DensityMatrix(u @ rho0.matrix @ u.conj().T)
            assert obs_entropy(rho_t, xt) >= obs_entropy(rho0, x0) - 1e-9

    def test_unitary_invariance_of_vn(self):
        rng = np.random.default_rng(76)
        for _ in range(10):
            d = int(rng.integers(2, 10))
            rho = random_density(rng, d)
            u = random_unitary(rng, d)
            rotated = DensityMatrix(u @ rho.matrix @ u.conj().T)
            assert abs(vn_entropy(rotated) - vn_entropy(rho)) < 1e-9

    def test_eigenbasis_graining_recovers_vn(self):
        rng = np.random.default_rng(77)
        for _ in range(10):
            d = int(rng.integers(2, 10))
            rho = random_density(rng, d)
            _, v = np.linalg.eigh(rho.matrix)
            x = rank1_graining(v)
            assert abs(obs_entropy(rho, x) - vn_entropy(rho)) < 1e-9
