"""Central table of numerical tolerances used across the package.

Every tolerance that appears in a validity check or an identity is defined
here once, so that tests and library code can never drift apart.
"""

# Operator construction
HERMITICITY_RTOL = 1e-10        # max|A - A^dag| <= tol * max(1, max|A|)
EIG_RECONSTRUCTION = 1e-9       # max|A - V L V^dag| <= tol * max(1, max|L|)
EIG_ORTHONORMALITY = 1e-10      # max|V^dag V - 1|
UNITARITY = 1e-10               # max|U^dag U - 1| for a single exponential
TRACE_ONE = 1e-12               # |tr(rho) - 1|
DENSITY_EIG_FLOOR = -1e-10      # smallest admissible eigenvalue of rho

# Coarse-grainings
COMPLETENESS = 1e-10            # max|sum_x Pi_x - 1|
ORTHOGONALITY = 1e-10           # max|Pi_x Pi_x' - delta Pi_x|
GRAM_IDENTITY = 1e-10           # rank-1 basis orthonormality
COMMUTATOR = 1e-9               # ||[H, N]||_max for joint grainings
BIN_EDGE_SNAP = 1e-9            # eigenvalues this close to an edge go up

# Probabilities and entropies
PROB_NORMALIZATION = 1e-10
PROB_NEGATIVE_CLIP = -1e-12     # below this a probability is an error
PROB_ZERO = 1e-14               # at or below this a probability is exact 0
ENTROPY_IDENTITY = 1e-9         # lemma-level identity slack
SUPPORT_LEAK = 1e-10            # relative-entropy support condition

# Effective temperatures
BETA_RESIDUAL_REL = 1e-10       # |U(beta*) - target| <= tol * spectral width
BETA_MAX_SCALE = 1e6            # saturation cap: beta_max = scale / width
BETA_MAX_ITER = 200
GRAND_RESIDUAL_REL = 1e-7       # residual norms for (beta*, mu*) solves
GRAND_NEWTON_ITER = 50
GRAND_TOTAL_ITER = 400
SPECTRAL_EDGE = 1e-12           # target this close to an edge saturates

# Dynamics
PROPAGATOR_UNITARITY = 1e-9     # per sqrt(step count)
RECOVERY_RESIDUAL = 1e-8
TIME_REVERSAL_IDENTITY = 1e-9

# Fluctuation theorems
IFT_RESIDUAL = 1e-9
CENTRAL_RELATION = 1e-9
DETAILED_FT_REL = 1e-8
DELTA_S_GROUP_RTOL = 1e-12      # merging float-identical delta-s values

# Runs
MEMBERSHIP_TOL = 1e-8           # equilibrium-set precondition for runs
DIAGONAL_INITIAL = 1e-10        # off-diagonal leak allowed in rho_S(0)
HIERARCHY_EXACT_GAP = 1e-8      # sigma_b - sigma_a = I_obs identity
SLACK_FLOOR = 1e-9              # slack = max(floor, 2 * r_delta)
