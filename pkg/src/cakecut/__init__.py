"""Envy-free cake cutting with Webb's algorithm under random witness matrices."""
from .errors import (
    CakeError,
    ConfigError,
    ConvergenceError,
    DomainError,
    InsufficientMass,
    InvariantViolation,
    PartitionError,
    ResourceError,
    SingularError,
    SingularWitnessMatrix,
)
from .harness import ExperimentSpec, Summary, mc_queries, mc_sigma, wilson_interval
from .linalg import (
    delta,
    determinant,
    invert,
    ratio_matrix,
    sigma_query_bound,
    singular_values,
    smallest_singular_value,
    tail_exponent,
    target_matrix,
    webb_query_bound,
)
from .measure import Interval, MeasureOracle, PieceSet, PiecewiseConstantMeasure, QueryLedger, make_oracles
from .models import ModelConfig, measures_from_matrix, sample, trial_rng
from .protocols import (
    Allocation,
    NearExactConfig,
    WebbReport,
    audit_envy_free,
    audit_near_exact,
    audit_super_envy_free,
    envy_free,
    near_exact_divide,
    webb_super_envy_free,
)

__version__ = "0.1.0"
