"""Rashomon Capacity: measuring predictive multiplicity in probabilistic classifiers."""

from rkit.capacity import (
    BaConfig,
    CapacityResult,
    ScoreSet,
    SpreadBounds,
    ba_capacity,
    ba_capacity_batch,
    info_diameter,
    info_radius,
    spread_bounds,
)
from rkit.errors import SeparableDataError, ValidationError
from rkit.explorer import (
    AwpConfig,
    Dataset,
    LogisticModel,
    awp_perturb,
    awp_sweep,
    emit_scores,
    explore,
    generate_synthetic,
    label_flip_retrain,
    train_logistic,
)
from rkit.metrics import (
    MetricsReport,
    RashomonSpec,
    ScoreTensor,
    ambiguity,
    compute_report,
    discrepancy,
    filter_rashomon_set,
    summarize_capacities,
)
from rkit.reduction import GreedySelection, ReductionResult, caratheodory_reduce, greedy_select
from rkit.simplex import ProbVector, clip_scores, entropy, kl_divergence

__version__ = "0.1.0"
