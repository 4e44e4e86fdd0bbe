"""obsent: exact observational-entropy thermodynamics for small quantum systems.

The package simulates driven isolated and open system-bath models by exact
diagonalization and verifies, at controlled tolerances, coarse-grained
entropy identities, the entropy-production hierarchy, effective
nonequilibrium temperatures, and two-point-measurement fluctuation theorems.
"""

from .linalg import (
    DensityMatrix,
    HermitianOperator,
    dephase,
    eig_hermitian,
    kron,
    partial_trace,
    propagator_step,
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
from .entropy import (
    EntropyDecomposition,
    boltzmann_entropy,
    decompose_obs_entropy,
    is_equilibrium_member,
    microcanonical_state,
    mutual_information_classical,
    mutual_information_quantum,
    obs_entropy,
    obs_entropy_shannon_form,
    relative_entropy,
    shannon,
    total_information,
    vn_entropy,
)
from .thermo import (
    EffectiveTemperature,
    GrandPotentialPoint,
    chemical_work_increment,
    clausius_integral,
    coarse_gibbs_probabilities,
    effective_beta,
    effective_beta_mu,
    gibbs_state,
    grand_canonical_state,
    heat_capacity,
    internal_energy,
    internal_energy_open,
    perturbation_scale,
    piecewise_work,
    work_integral,
)
from .dynamics import (
    Propagator,
    Protocol,
    constant_protocol,
    evolve,
    recovery_check,
    reversed_protocol,
    time_reverse_state,
    trotter_propagator,
)
from .models import BuiltModel, ModelSpec, build
from .lawsuite import (
    ThermoLedger,
    conjecture_report,
    hierarchy_violations,
    run_isolated,
    run_multibath,
    run_open,
    run_open_generalized,
    run_particle,
)
from .fluct import (
    TwoPointDistribution,
    central_relation_check,
    detailed_ft_histograms,
    export_histograms_csv,
    forward_two_point,
    ift_average,
    reversed_two_point,
)

__version__ = "0.1.0"
