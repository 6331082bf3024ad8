"""Contextual-bandit module placement for edge camera networks."""

from .bandit_core import (
    BanditRunConfig,
    OnlineLearner,
    TrialResult,
    WeightTable,
    arm_distribution,
    default_eps_update,
    default_gamma,
    fake_costs,
    mod_dist_mab,
    normalize_cost,
    policy_distribution,
    regret_series,
    update_weights,
)
from .context_model import LevelBounds, Memory, collect, discretize, fit_bounds
from .errors import ConfigError, TrainingError
from .harness import (
    ExperimentConfig,
    StreamConfig,
    emit_csv,
    load_experiment_config,
    mean_delay,
    regret_exponent,
    run_experiment,
    run_fixed,
    run_greedy,
    run_no_online_learning,
    run_reid_stream,
)
from .losses import (
    AttrBatch,
    ReidBatch,
    attribute_weights,
    loss_attr,
    loss_attr_grad,
    loss_reid,
    loss_reid_grad,
    loss_total,
    total_grads,
)
from .mec_sim import (
    Arm,
    DelayModel,
    DelayParams,
    Link,
    NetworkTopology,
    Simulator,
    end_to_end_cost,
    load_delay_model,
    load_topology,
    sample_slot,
)
from .policy_gen import (
    Policy,
    PolicyDataset,
    TrainingStrategy,
    build_dataset,
    generate_policies,
    train_policy,
)
from .reid_pipeline import (
    Decision,
    Feature,
    GalleryShard,
    IdentityDirectory,
    ReidPipeline,
    calibrate_threshold,
    evaluate_ranking,
    fuse_attributes,
)

__version__ = "0.1.0"
