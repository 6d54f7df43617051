"""The routing-policy zoo, the tabular RL trainer with budget-in-state, and
the exact finite-horizon dynamic-programming oracle.

Every policy answers ``decide(observation, feasible, rng)`` with an action
drawn from the feasible set; when a policy's preferred action is masked it
degrades to the device last resort, which is always present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np

from .engine import STREAM_PROFILE, STREAM_TRAIN, EpisodeEngine, episode_rngs
from .profiles import CLOUD, DEVICE, UP, step_link
from .scenario import ScenarioConfig
from .session import (
    ActionSpace,
    BudgetLedger,
    ConversationState,
    Observation,
    Query,
    RoutingAction,
    TurnOutcome,
    apply_outcome,
    execute_turn,
)

StateKey = tuple[int, int, int, int, int, int]


def discretize(
    obs: Observation,
    latency_bins: int,
    cost_bins: int,
    latency_budget: float,
    cost_budget: Decimal,
    category_index: dict[str, int],
    location_index: dict[str, int],
) -> StateKey:
    """Map an observation to the tabular state tuple
    (turn, category, latency bin, cost bin, context location, vision flag).

    Budget bins are min(floor(remaining/budget * n), n-1); an exhausted (or
    zero) budget maps to bin 0.
    """
    if latency_budget > 0:
        lat_bin = min(int(obs.remaining_latency / latency_budget * latency_bins), latency_bins - 1)
    else:
        lat_bin = 0
    if cost_budget > 0:
        cost_bin = min(int(obs.remaining_cost / cost_budget * cost_bins), cost_bins - 1)
    else:
        cost_bin = 0
    return (
        obs.turn_index,
        category_index[obs.category],
        lat_bin,
        cost_bin,
        location_index[obs.context_location],
        int(obs.requires_vision),
    )


@dataclass
class StateCodec:
    """Scenario-bound discretizer for tabular policies."""

    latency_bins: int
    cost_bins: int
    latency_budget: float
    cost_budget: Decimal
    category_index: dict[str, int]
    location_index: dict[str, int]

    @classmethod
    def for_scenario(cls, scenario: ScenarioConfig, latency_bins=None, cost_bins=None):
        return cls(
            latency_bins=latency_bins or scenario.latency_bins,
            cost_bins=cost_bins or scenario.cost_bins,
            latency_budget=scenario.latency_budget,
            cost_budget=scenario.cost_budget,
            category_index={c: i for i, c in enumerate(scenario.categories)},
            location_index={e: i for i, e in enumerate(scenario.endpoints)},
        )

    def encode(self, obs: Observation) -> StateKey:
        return discretize(
            obs,
            self.latency_bins,
            self.cost_bins,
            self.latency_budget,
            self.cost_budget,
            self.category_index,
            self.location_index,
        )


class QTable:
    """Dense state -> action-value map; untouched entries are exactly the
    initialization value (0.0).

    Serializes to a versioned flat text format: one header line with the bin
    and action counts, then one "s0,s1,s2,s3,s4,s5,action,value" line per
    nonzero entry. Values round-trip exactly via repr.
    """

    FORMAT = "qtable v1"

    def __init__(self, n_actions: int, latency_bins: int, cost_bins: int):
        self.n_actions = n_actions
        self.latency_bins = latency_bins
        self.cost_bins = cost_bins
        self.values: dict[StateKey, np.ndarray] = {}

    def row(self, state: StateKey) -> np.ndarray:
        vec = self.values.get(state)
        if vec is None:
            vec = np.zeros(self.n_actions)
            self.values[state] = vec
        return vec

    def value(self, state: StateKey, action: int) -> float:
        vec = self.values.get(state)
        return 0.0 if vec is None else float(vec[action])

    def best(self, state: StateKey, action_indices) -> int:
        """Greedy action among ``action_indices``; ties go to the lowest
        index (device first)."""
        vec = self.values.get(state)
        best_idx = action_indices[0]
        best_val = 0.0 if vec is None else float(vec[best_idx])
        for idx in action_indices[1:]:
            val = 0.0 if vec is None else float(vec[idx])
            if val > best_val:
                best_idx, best_val = idx, val
        return best_idx

    def max_value(self, state: StateKey, action_indices) -> float:
        vec = self.values.get(state)
        if vec is None:
            return 0.0
        return max(float(vec[i]) for i in action_indices)

    def save(self, path) -> None:
        lines = [
            f"{self.FORMAT} latency_bins={self.latency_bins} "
            f"cost_bins={self.cost_bins} actions={self.n_actions}"
        ]
        for state in sorted(self.values):
            vec = self.values[state]
            for action in range(self.n_actions):
                if vec[action] != 0.0:
                    fields = ",".join(str(x) for x in (*state, action))
                    lines.append(f"{fields},{float(vec[action])!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "QTable":
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith(cls.FORMAT):
            raise ValueError(f"not a {cls.FORMAT} file: {path}")
        header = dict(part.split("=") for part in text[0].split()[2:])
        table = cls(
            n_actions=int(header["actions"]),
            latency_bins=int(header["latency_bins"]),
            cost_bins=int(header["cost_bins"]),
        )
        for line in text[1:]:
            if not line.strip():
                continue
            parts = line.split(",")
            state = tuple(int(x) for x in parts[:6])
            table.row(state)[int(parts[6])] = float(parts[7])
        return table


def q_update(
    table: QTable,
    state: StateKey,
    action: int,
    reward: float,
    next_state: StateKey | None,
    terminal: bool,
    alpha: float,
    gamma: float,
    next_actions=None,
) -> None:
    """One tabular Bellman backup:
    Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') * [not terminal] - Q(s,a)).

    ``next_actions`` restricts the bootstrap max to the successor's feasible
    actions; by default all actions are considered.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    target = reward
    if not terminal:
        if next_state is None:
            raise ValueError("non-terminal update requires a next state")
        indices = list(next_actions) if next_actions is not None else range(table.n_actions)
        target += gamma * table.max_value(next_state, list(indices))
    row = table.row(state)
    row[action] += alpha * (target - row[action])


# -- the policy zoo ---------------------------------------------------------


class RoutingPolicy:
    """Base interface: map (observation, feasible actions) to one of them."""

    name = "policy"
    two_phase = False

    def decide(
        self, obs: Observation, feasible: list[RoutingAction], rng: np.random.Generator
    ) -> RoutingAction:
        raise NotImplementedError


def _device_action(feasible: list[RoutingAction], device_id: str) -> RoutingAction:
    for action in feasible:
        if action.endpoint == device_id and not action.modalities:
            return action
    raise RuntimeError("device last-resort action missing from feasible set")


def _preferred_or_device(
    preferred: RoutingAction, feasible: list[RoutingAction], device_id: str
) -> RoutingAction:
    return preferred if preferred in feasible else _device_action(feasible, device_id)


class DeviceOnlyPolicy(RoutingPolicy):
    name = "device_only"

    def __init__(self, device_id: str):
        self.device_id = device_id

    def decide(self, obs, feasible, rng):
        return _device_action(feasible, self.device_id)


class CloudOnlyPolicy(RoutingPolicy):
    """Always asks the cloud with every modality the query offers."""

    name = "cloud_only"

    def __init__(self, cloud_id: str, device_id: str, accepts_vision: bool):
        self.cloud_id = cloud_id
        self.device_id = device_id
        self.accepts_vision = accepts_vision

    def decide(self, obs, feasible, rng):
        subset = obs.available_modalities if self.accepts_vision else frozenset()
        preferred = RoutingAction(self.cloud_id, frozenset(subset))
        return _preferred_or_device(preferred, feasible, self.device_id)


def stateless_threshold_decide(
    theta: float, difficulty_estimate: float, rng: np.random.Generator, sigma: float = 0.0
) -> bool:
    """Memoryless routing rule: cloud iff difficulty (plus optional Gaussian
    noise) reaches the threshold. Returns True for cloud."""
    estimate = difficulty_estimate
    if sigma > 0:
        estimate += rng.normal(0.0, sigma)
    return estimate >= theta


class StatelessThresholdPolicy(RoutingPolicy):
    """Difficulty-threshold router with no memory of spend: cloud turns take
    every available modality, and nothing tracks the remaining budget."""

    def __init__(self, theta: float, categories, cloud_id: str, device_id: str, sigma: float = 0.0):
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {theta}")
        self.theta = theta
        self.sigma = sigma
        self.categories = categories
        self.cloud_id = cloud_id
        self.device_id = device_id
        self.name = f"threshold:{theta:g}"

    def decide(self, obs, feasible, rng):
        difficulty = self.categories[obs.category].difficulty
        if stateless_threshold_decide(self.theta, difficulty, rng, self.sigma):
            preferred = RoutingAction(self.cloud_id, frozenset(obs.available_modalities))
            return _preferred_or_device(preferred, feasible, self.device_id)
        return _device_action(feasible, self.device_id)


@dataclass(frozen=True)
class CellStats:
    mean_quality: float
    mean_latency: float
    mean_cost: Decimal
    samples: int


@dataclass
class ProfiledStats:
    """Offline per-(endpoint, category) means from Monte Carlo profiling."""

    cells: dict[tuple[str, str], CellStats]

    def cell(self, endpoint: str, category: str) -> CellStats:
        return self.cells[(endpoint, category)]


def profile_endpoints(
    scenario: ScenarioConfig, samples_per_cell: int, rng: np.random.Generator
) -> ProfiledStats:
    """Profile every endpoint on every category with M fresh single turns.

    Profiling is offline: the link is held up, the context starts empty, and
    cloud turns transmit all modalities. With the scenario deterministic the
    means equal single-turn closed-form values for any M.
    """
    if samples_per_cell < 1:
        raise ValueError(f"samples_per_cell must be >= 1, got {samples_per_cell}")
    ctx = scenario.build_context()
    cells = {}
    for eid, profile in scenario.endpoints.items():
        for cat in scenario.categories:
            query = scenario.representative_query(cat)
            subset = frozenset(scenario.modalities) if profile.accepts_vision else frozenset()
            action = RoutingAction(eid, subset)
            qualities, latencies = [], []
            cost_sum = Decimal("0")
            for _ in range(samples_per_cell):
                state = ConversationState(context_tokens=0, context_location=eid)
                outcome, _ = execute_turn(ctx, state, query, action, link_up=True, rng=rng)
                qualities.append(outcome.quality)
                latencies.append(outcome.latency_s)
                cost_sum += outcome.cost
            cells[(eid, cat)] = CellStats(
                mean_quality=float(np.mean(qualities)),
                mean_latency=float(np.mean(latencies)),
                mean_cost=cost_sum / samples_per_cell,
                samples=samples_per_cell,
            )
    return ProfiledStats(cells)


def classifier_decide(
    stats: ProfiledStats,
    obs: Observation,
    per_turn_latency: float,
    per_turn_cost: Decimal,
    endpoint_order,
    device_id: str,
) -> str:
    """Single-turn constrained pick: the highest-mean-quality endpoint whose
    profiled means fit the per-turn budgets, ties and empty feasible sets
    resolving to the device."""
    best = device_id
    best_quality = -1.0
    for eid in endpoint_order:
        cell = stats.cell(eid, obs.category)
        if cell.mean_latency > per_turn_latency or cell.mean_cost > per_turn_cost:
            continue
        better = cell.mean_quality > best_quality or (
            cell.mean_quality == best_quality and eid == device_id and best != device_id
        )
        if better:
            best, best_quality = eid, cell.mean_quality
    return best


class ClassifierRouterPolicy(RoutingPolicy):
    """Profile-then-classify router: treats each query independently against
    uniform per-turn budget slices."""

    name = "classifier"

    def __init__(self, stats: ProfiledStats, scenario: ScenarioConfig):
        self.stats = stats
        self.per_turn_latency = scenario.latency_budget / scenario.episode_length
        self.per_turn_cost = scenario.cost_budget / scenario.episode_length
        # device first so quality ties break toward the free endpoint
        self.endpoint_order = [scenario.device_id, *scenario.cloud_ids]
        self.device_id = scenario.device_id
        self.endpoints = scenario.endpoints

    def decide(self, obs, feasible, rng):
        eid = classifier_decide(
            self.stats, obs, self.per_turn_latency, self.per_turn_cost,
            self.endpoint_order, self.device_id,
        )
        if eid == self.device_id:
            return _device_action(feasible, self.device_id)
        subset = obs.available_modalities if self.endpoints[eid].accepts_vision else frozenset()
        return _preferred_or_device(RoutingAction(eid, frozenset(subset)), feasible, self.device_id)


def self_route(confidence: float, tau: float) -> bool:
    """Escalate iff the confidence signal falls below the threshold."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return confidence < tau


class SelfRoutingPolicy(RoutingPolicy):
    """Attempt locally first, then escalate on low confidence.

    The device attempt always executes (its latency accrues). Confidence is
    the true local-success indicator, flipped with ``flip_probability``;
    escalation adds a full cloud turn with every available modality, subject
    to the budget mask.
    """

    two_phase = True

    def __init__(
        self,
        tau: float,
        scenario: ScenarioConfig,
        flip_probability: float = 0.2,
    ):
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {tau}")
        if not 0.0 <= flip_probability <= 1.0:
            raise ValueError(f"flip_probability must be in [0, 1], got {flip_probability}")
        self.tau = tau
        self.flip_probability = flip_probability
        self.device_id = scenario.device_id
        self.cloud_id = scenario.cloud_ids[0]
        self.cloud_accepts_vision = scenario.endpoints[self.cloud_id].accepts_vision
        self.device_quality = scenario.endpoints[scenario.device_id].base_quality
        self.name = f"self_route:{tau:g}"

    def decide(self, obs, feasible, rng):
        return _device_action(feasible, self.device_id)

    def wants_escalation(self, obs, device_outcome, rng) -> bool:
        success = rng.random() < self.device_quality[obs.category]
        flipped = rng.random() < self.flip_probability
        # noisy success signal: the true indicator, inverted when flipped
        confidence = 1.0 if (success != flipped) else 0.0
        return self_route(confidence, self.tau)

    def escalation_action(self, obs) -> RoutingAction:
        subset = obs.available_modalities if self.cloud_accepts_vision else frozenset()
        return RoutingAction(self.cloud_id, frozenset(subset))


class GreedyQPolicy(RoutingPolicy):
    """Greedy tabular policy over a (possibly trained) Q table."""

    name = "qtable"

    def __init__(self, table: QTable, codec: StateCodec, space: ActionSpace):
        self.table = table
        self.codec = codec
        self.space = space

    def decide(self, obs, feasible, rng):
        state = self.codec.encode(obs)
        indices = [self.space.index(a) for a in feasible]
        return self.space.actions[self.table.best(state, indices)]


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class QLearningParams:
    """Trainer hyperparameters. gamma defaults to 1 (finite horizon) and the
    exploration rate anneals linearly from 1.0 to 0.05 over the first 80% of
    episodes; the per-turn reward is the turn's quality."""

    alpha: float = 0.2
    gamma: float = 1.0
    epsilon_start: float = 1.0
    epsilon_min: float = 0.05
    anneal_fraction: float = 0.8


def train_q(
    scenario: ScenarioConfig,
    params: QLearningParams = QLearningParams(),
    episodes: int = 10_000,
    seed: int | None = None,
    latency_bins: int | None = None,
    cost_bins: int | None = None,
) -> tuple[QTable, list[float]]:
    """Tabular Q-learning with the remaining budget in the state.

    Training always runs under hard enforcement (masked feasible sets), and
    the bootstrap max at each successor state ranges over that state's
    feasible actions (applied one step delayed, when the mask is known), so
    the learned values target the same constrained objective the DP oracle
    solves. Deterministic given (scenario, params, episodes, seed).
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    engine = EpisodeEngine(scenario)
    codec = StateCodec.for_scenario(scenario, latency_bins, cost_bins)
    table = QTable(len(engine.space), codec.latency_bins, codec.cost_bins)
    root = scenario.seed if seed is None else seed
    anneal_span = max(1.0, params.anneal_fraction * episodes)
    returns: list[float] = []

    for episode in range(episodes):
        epsilon = max(
            params.epsilon_min,
            params.epsilon_start
            - (params.epsilon_start - params.epsilon_min) * (episode / anneal_span),
        )
        rngs = episode_rngs(root, STREAM_TRAIN, episode)
        queries = scenario.query_stream(rngs.query)

        state = ConversationState(context_tokens=0, context_location=scenario.device_id)
        ledger = scenario.fresh_ledger()
        link_state = scenario.link.initial_state
        turns_used: dict[str, int] = {}
        pending: tuple[StateKey, int, float] | None = None
        total_reward = 0.0

        for t, query in enumerate(queries):
            link_state = step_link(scenario.link, link_state, rngs.link)
            link_up = link_state == UP
            obs = engine.observation(state, ledger, query, t, link_up)
            feasible = engine.feasible_actions(ledger, state, query, link_up, t, turns_used)
            s = codec.encode(obs)
            indices = [engine.space.index(a) for a in feasible]

            if pending is not None:
                ps, pa, pr = pending
                q_update(table, ps, pa, pr, s, False, params.alpha, params.gamma, indices)

            if rngs.policy.random() < epsilon:
                action = feasible[int(rngs.policy.integers(len(feasible)))]
            else:
                action = engine.space.actions[table.best(s, indices)]

            outcome, state = execute_turn(engine.ctx, state, query, action, link_up, rngs.execution)
            ledger, _ = apply_outcome(ledger, outcome)
            turns_used[outcome.endpoint] = turns_used.get(outcome.endpoint, 0) + 1
            reward = outcome.quality
            total_reward += reward
            pending = (s, engine.space.index(action), reward)

        ps, pa, pr = pending
        q_update(table, ps, pa, pr, None, True, params.alpha, params.gamma)
        returns.append(total_reward)

    return table, returns


# -- exact oracle -------------------------------------------------------------


@dataclass
class OracleSolution:
    """Backward-induction optimum of a deterministic scenario."""

    value: float
    best_actions: list[RoutingAction]
    action_values: dict
    states_expanded: int


def dp_optimal(scenario: ScenarioConfig) -> OracleSolution:
    """Exhaustive finite-horizon optimum: maximize total quality subject to
    the exact (undiscretized) ledger, enumerating every feasible action at
    every reachable state.

    Requires deterministic mode: a fixed query sequence, no output noise, and
    a link that provably stays up.
    """
    deterministic = (
        scenario.queries.kind == "sequence"
        and scenario.output_noise_sigma == 0
        and scenario.link.p_up_to_down == 0
        and scenario.link.initial_state == "up"
    )
    if not deterministic:
        raise ValueError("oracle requires deterministic mode")

    engine = EpisodeEngine(scenario)
    queries = list(scenario.queries.sequence)
    track_caps = engine._has_rate_caps
    memo: dict = {}
    counter = {"states": 0}

    def solve(t: int, state: ConversationState, ledger: BudgetLedger, caps: tuple) -> tuple[float, RoutingAction | None]:
        if t == len(queries):
            return 0.0, None
        key = (t, state.context_location, state.context_tokens, ledger.latency_used, ledger.cost_used, caps)
        hit = memo.get(key)
        if hit is not None:
            return hit
        counter["states"] += 1
        query = queries[t]
        turns_used = dict(caps) if track_caps else None
        feasible = engine.feasible_actions(ledger, state, query, True, t, turns_used)
        best_value = -math.inf
        best_action = None
        for action in feasible:
            outcome, nstate = execute_turn(engine.ctx, state, query, action, True, None)
            nledger, _ = apply_outcome(ledger, outcome)
            if track_caps:
                used = dict(caps)
                used[outcome.endpoint] = used.get(outcome.endpoint, 0) + 1
                ncaps = tuple(sorted(used.items()))
            else:
                ncaps = ()
            tail, _ = solve(t + 1, nstate, nledger, ncaps)
            value = outcome.quality + tail
            if value > best_value:
                best_value, best_action = value, action
        memo[key] = (best_value, best_action)
        return best_value, best_action

    init_state = ConversationState(context_tokens=0, context_location=scenario.device_id)
    init_ledger = scenario.fresh_ledger()
    value, _ = solve(0, init_state, init_ledger, ())

    # greedy rollout of the memoized optimum
    best_actions = []
    state, ledger, caps = init_state, init_ledger, ()
    for t, query in enumerate(queries):
        _, action = solve(t, state, ledger, caps)
        best_actions.append(action)
        outcome, state = execute_turn(engine.ctx, state, query, action, True, None)
        ledger, _ = apply_outcome(ledger, outcome)
        if track_caps:
            used = dict(caps)
            used[outcome.endpoint] = used.get(outcome.endpoint, 0) + 1
            caps = tuple(sorted(used.items()))

    return OracleSolution(
        value=value,
        best_actions=best_actions,
        action_values=memo,
        states_expanded=counter["states"],
    )


# -- policy construction ------------------------------------------------------


def build_policy(scenario: ScenarioConfig, spec: str) -> RoutingPolicy:
    """Instantiate a policy from its compact spec string.

    Forms: device_only | cloud_only | threshold:<theta>[:<sigma>] |
    classifier[:<samples>] | self_route:<tau>[:<flip_prob>] | qtable:<path>.
    """
    kind, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    cloud_id = scenario.cloud_ids[0]
    if kind == "device_only":
        return DeviceOnlyPolicy(scenario.device_id)
    if kind == "cloud_only":
        return CloudOnlyPolicy(
            cloud_id, scenario.device_id, scenario.endpoints[cloud_id].accepts_vision
        )
    if kind == "threshold":
        if not args:
            raise ValueError("threshold policy needs a theta, e.g. threshold:0.5")
        sigma = float(args[1]) if len(args) > 1 else 0.0
        policy = StatelessThresholdPolicy(
            float(args[0]), scenario.categories, cloud_id, scenario.device_id, sigma
        )
        policy.name = spec
        return policy
    if kind == "classifier":
        samples = int(args[0]) if args else 200
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([scenario.seed, STREAM_PROFILE]))
        )
        stats = profile_endpoints(scenario, samples, rng)
        policy = ClassifierRouterPolicy(stats, scenario)
        policy.name = spec
        return policy
    if kind == "self_route":
        if not args:
            raise ValueError("self_route policy needs a tau, e.g. self_route:0.6")
        flip = float(args[1]) if len(args) > 1 else 0.2
        policy = SelfRoutingPolicy(float(args[0]), scenario, flip)
        policy.name = spec
        return policy
    if kind == "qtable":
        if not args:
            raise ValueError("qtable policy needs a path, e.g. qtable:router.qt")
        table = QTable.load(args[0])
        codec = StateCodec.for_scenario(scenario, table.latency_bins, table.cost_bins)
        space = ActionSpace(scenario.build_context())
        if table.n_actions != len(space):
            raise ValueError(
                f"qtable has {table.n_actions} actions but the scenario enumerates {len(space)}"
            )
        policy = GreedyQPolicy(table, codec, space)
        policy.name = spec
        return policy
    raise ValueError(f"unknown policy spec {spec!r}")
