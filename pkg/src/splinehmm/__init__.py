"""Hidden Markov models with penalised B-spline emission densities.

State-dependent densities are finite mixtures of normalised cubic B-spline
basis functions with a curvature penalty on the coefficients, optionally
constrained to be unimodal through a smooth penalty on the coefficient
sequence.  Smoothing weights are selected automatically by an outer
fixed-point loop; decoding, simulation, and evaluation utilities round out
the workflow.
"""

__version__ = "0.1.0"

from .constraints import (
    UnimodalPenaltySpec,
    constraint_matrix,
    tilde_beta,
    unimodality_penalty,
    unimodality_violation,
)
from .emissions import (
    ParametricEmission,
    SplineEmission,
    density_matrix,
    emission_means,
    family_moments,
    init_from_target,
    mode_count,
)
from .evaluate import RocResult, auc, density_grid, implied_dwell, switch_count
from .fit import (
    FitError,
    FitProblem,
    FitResult,
    FitSpec,
    coefficient_mode_candidates,
    fit,
    fit_inner,
    multi_start,
    penalized_objective,
    search_modes,
    select_smoothing,
)
from .hmm import (
    DataOutsideSupportError,
    HmmModel,
    TransitionModel,
    local_state_probs,
    log_likelihood,
    log_likelihood_with_grad,
    permute_states,
    stationary_distribution,
    viterbi,
)
from .simulate import (
    DwellDistribution,
    LabeledSeries,
    SimConfig,
    sample_emission,
    simulate_hmm,
    simulate_hsmm,
)
from .splines import PenaltyMatrix, SplineBasis, eval_basis, make_basis, second_diff_penalty
