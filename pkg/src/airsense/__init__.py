"""Planning and simulation for battery-constrained air-quality sensing networks."""

from .environment import (
    EnvironmentModel,
    TraceSet,
    calibrate_measurement_variance,
    calibrate_pairwise,
    calibrate_temporal_variance,
    estimate_chain,
    quantize_values,
    sample_trajectory,
)
from .errors import (
    AirsenseError,
    ConfigError,
    DegenerateInputError,
    DomainError,
    InsufficientDataError,
    ParseError,
    ResourceError,
)
from .inference import (
    Estimate,
    InferenceParams,
    LastMeasurement,
    fuse,
    infer_map,
    joint_error,
    joint_error_map,
    measurement_estimate,
    spatial_shift,
    temporal_extend,
)
from .location import (
    DifferenceMatrix,
    Embedding,
    GAConfig,
    Gene,
    ScheduleEvaluator,
    difference_matrix,
    embed,
    evolve,
    initial_pool,
    kmeans_cluster,
    mutate,
    recombine,
    select,
)
from .mlp import QNetwork, mlp_forward, mlp_train_batch
from .power_multi import (
    Fleet,
    MultiState,
    TrainConfig,
    greedy_rollout,
    power_deficiency,
    q_learning_train,
    random_rollout,
)
from .power_single import PolicyTable, SingleState, dp_solve, run_policy, single_step
from .schedule import PlanningConfig, Schedule, evaluate_schedule, uniform_schedule, validate_schedule

__version__ = "0.1.0"
