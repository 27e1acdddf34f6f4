"""Multiscale unbalanced coupling and flow matching for population snapshots.

Pipeline: group snapshot rows into a label hierarchy, solve masked
optimal-entropy-transport couplings coarse to fine, convert the finest
coupling into per-pair geodesic regression targets (position, velocity,
growth, mass weight), train velocity and growth networks on them, then
integrate new populations forward in time.
"""

from .geometry import (
    DEATH_TIME_CEIL,
    MASS_FLOOR,
    GeodesicParams,
    MassFloorError,
    PathTarget,
    batch_path_targets,
    conditional_targets,
    wfr_dd_distance_sq,
    geodesic_constants,
    mass_at,
    sample_conditional_point,
    traveling_gaussian_mean,
)
from .solver import (
    CostMatrix,
    SemiCoupling,
    SolverConvergenceWarning,
    SolverOptions,
    SparseCoupling,
    SupportMask,
    build_cost,
    extract_semi_coupling,
    generalized_kl,
    oet_objective,
    read_coupling,
    solve_masked_oet,
    write_coupling,
)
from .hierarchy import (
    DiscreteMeasure,
    EmptyMaskError,
    HierarchyView,
    LiftedSampler,
    MultiscaleConfig,
    TransitionPrior,
    build_hierarchy,
    build_lifted_sampler,
    build_mask,
    kmeans_labels,
    lift_coupling,
    load_prior,
    sample_pairs,
    sample_pairs_explicit,
    solve_multiscale,
    write_prior,
)
from .datasets import (
    CrossingToySpec,
    SnapshotTable,
    SyntheticSpec,
    UnbalancedToySpec,
    generate_crossing_toy,
    generate_multiscale,
    generate_unbalanced_toy,
    identity_prior_pairs,
    load_snapshots,
    save_snapshots,
)
from .training import (
    FlowModel,
    SimulatedPopulation,
    TargetBatch,
    TrainConfig,
    TrainingError,
    build_target_batch,
    cufm_loss,
    gradient_check,
    load_model,
    save_model,
    simulate,
    train,
)
from .metrics import (
    CouplingReport,
    W1Options,
    assignment_accuracy,
    objective_gap,
    relative_mass_error,
    row_argmax,
    truth_from_labels,
    w1_distance,
)

__version__ = "0.1.0"

__all__ = [
    "DEATH_TIME_CEIL",
    "MASS_FLOOR",
    "GeodesicParams",
    "MassFloorError",
    "PathTarget",
    "batch_path_targets",
    "conditional_targets",
    "wfr_dd_distance_sq",
    "geodesic_constants",
    "mass_at",
    "sample_conditional_point",
    "traveling_gaussian_mean",
    "CostMatrix",
    "SemiCoupling",
    "SolverConvergenceWarning",
    "SolverOptions",
    "SparseCoupling",
    "SupportMask",
    "build_cost",
    "extract_semi_coupling",
    "generalized_kl",
    "oet_objective",
    "read_coupling",
    "solve_masked_oet",
    "write_coupling",
    "DiscreteMeasure",
    "EmptyMaskError",
    "HierarchyView",
    "LiftedSampler",
    "MultiscaleConfig",
    "TransitionPrior",
    "build_hierarchy",
    "build_lifted_sampler",
    "build_mask",
    "kmeans_labels",
    "lift_coupling",
    "load_prior",
    "sample_pairs",
    "sample_pairs_explicit",
    "solve_multiscale",
    "write_prior",
    "CrossingToySpec",
    "SnapshotTable",
    "SyntheticSpec",
    "UnbalancedToySpec",
    "generate_crossing_toy",
    "generate_multiscale",
    "generate_unbalanced_toy",
    "identity_prior_pairs",
    "load_snapshots",
    "save_snapshots",
    "FlowModel",
    "SimulatedPopulation",
    "TargetBatch",
    "TrainConfig",
    "TrainingError",
    "build_target_batch",
    "cufm_loss",
    "gradient_check",
    "load_model",
    "save_model",
    "simulate",
    "train",
    "CouplingReport",
    "W1Options",
    "assignment_accuracy",
    "objective_gap",
    "relative_mass_error",
    "row_argmax",
    "truth_from_labels",
    "w1_distance",
    "__version__",
]
