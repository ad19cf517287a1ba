"""Observability and duality tools for finite-state hidden Markov models
observed in white noise."""

__version__ = "0.1.0"

from .errors import (
    AbsoluteContinuityViolation,
    ConfigError,
    DegenerateLevels,
    GeneratorViolation,
    HMMDualityError,
    InconclusiveRank,
    MassCollapse,
    NonFinite,
    NotInRange,
    ParseError,
    ShapeMismatch,
    SupportViolation,
    ValidationError,
)
from .model import (
    FiniteHMM,
    Measure,
    SimConfig,
    kolmogorov_forward,
    load_model,
    make_model,
    model_from_dict,
    probability_vector,
    sample_ctmc,
    validate,
)
from .subspaces import (
    Subspace,
    controllable_subspace,
    is_injective_observation,
    is_observable,
    largest_principal_angle,
    linear_controllable_subspace,
    observable_functions,
    observation_levels,
    vandermonde_full_rank_check,
)
from .simulate import (
    normalization_martingale,
    simulate_propagator,
    tv_distance,
    wonham_normalize,
    zakai_from_prior,
)
from .gramian import (
    ControlFunctional,
    apply_L,
    apply_L_dagger,
    check_adjoint,
    estimate_gramian,
    gramian_rank,
    min_norm_control,
    pairing_consistency_check,
    solve_dual_ode,
)
from .stability import ergodic_decomposition, filter_stability_experiment, is_stabilizable, stable_null_space
from .entropy import estimate_kl, static_kl_oracle
from .linear_gaussian import LinearPair, lg_apply_L, lg_apply_L_dagger, lg_closed_range_check, lg_gramian
