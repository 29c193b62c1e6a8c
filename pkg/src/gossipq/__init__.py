"""Decentralized gossip-modulated Q-learning for multi-agent MDPs with
per-agent time-average cost bounds."""

from .env import (
    CostMode,
    EnvState,
    MmdpSpec,
    StepCostNoise,
    build_gridworld_env,
    build_queueing_env,
    build_xor_mdp,
    calibrate_bounds,
    initial_state,
    policy_from_id,
    sample_next,
    step,
)
from .errors import CapacityError, ConfigError, NumericError, StructureError
from .learner import (
    AgentState,
    HyperParams,
    Scheme,
    Simulation,
    StepRecord,
    StepSchedule,
    UpdateMode,
    algorithm_step,
    gossip_update,
    policy_update,
    q_update,
    running_cost_update,
)
from .oracle import (
    PolicyEvaluation,
    SaddleResult,
    TruncatedSimplexPoint,
    check_feasibility,
    evaluate_policy,
    replicator_field,
    replicator_integrate,
    solve_saddle,
)
from .runner import ExperimentConfig, RunSummary, emit_policy_report, run_experiment, run_sweep
from .weights import (
    CommGraph,
    GossipMatrix,
    build_graph,
    deviation_vector,
    mh_row_update,
    mh_rows,
    mwu_row_update,
    mwu_rows,
    stationary_distribution,
    uniform_rows,
)

__version__ = "0.1.0"
