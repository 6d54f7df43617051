"""Deterministic simulator and policy framework for budget-aware device-cloud
LLM routing and multi-agent collaboration traffic."""

from .profiles import (
    EndpointProfile,
    LinkModel,
    ModalityItem,
    TaskCategory,
    load_profile,
    modality_gain,
    step_link,
    transfer_time,
)
from .session import (
    ActionSpace,
    BudgetLedger,
    CompressionSpec,
    ConversationState,
    Observation,
    Query,
    RoutingAction,
    TurnContext,
    TurnOutcome,
    apply_outcome,
    enumerate_actions,
    execute_turn,
    handoff_tokens,
    mask_actions,
)
from .scenario import ConfigError, ScenarioConfig, load_scenario, parse_scenario
from .engine import EpisodeEngine, episode_rngs
from .policies import (
    ProfiledStats,
    QLearningParams,
    QTable,
    RoutingPolicy,
    build_policy,
    discretize,
    dp_optimal,
    profile_endpoints,
    q_update,
    self_route,
    stateless_threshold_decide,
    train_q,
)
from .runner import emit_csv, pareto_front, pareto_indices, run_episode, run_sweep
from .swarm import (
    LengthModel,
    TopologySpec,
    TrafficReport,
    build_topology,
    collective_quality,
    expected_collective_quality,
    fit_growth_exponent,
    run_debate,
    run_division_of_labor,
    run_hierarchical,
)

__version__ = "0.1.0"
