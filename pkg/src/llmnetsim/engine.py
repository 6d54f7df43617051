"""Shared episode machinery: seed derivation, observations, feasibility
masking with a safety reserve, and the sequential episode loop.

Both policy training and evaluation runs go through this module so the two
always see identical dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .profiles import DEVICE, UP, step_link
from .scenario import ScenarioConfig
from .session import (
    ActionBound,
    ActionSpace,
    BudgetLedger,
    ConversationState,
    Observation,
    Query,
    RoutingAction,
    TurnOutcome,
    apply_outcome,
    estimate_turn_bound,
    execute_turn,
    handoff_tokens,
    mask_actions,
    output_token_cap,
)

# Independent substreams per episode; a (root, stream, index) triple fully
# determines every draw, so adding episodes never perturbs earlier ones.
STREAM_EVAL = 0
STREAM_TRAIN = 1
STREAM_PROFILE = 2
STREAM_SWARM = 3


@dataclass
class EpisodeRngs:
    query: np.random.Generator
    link: np.random.Generator
    policy: np.random.Generator
    execution: np.random.Generator


def episode_rngs(root_seed: int, stream: int, index: int) -> EpisodeRngs:
    """Four decoupled generators for one episode, derived counter-style from
    (root seed, stream id, episode index)."""
    children = np.random.SeedSequence([root_seed, stream, index]).spawn(4)
    return EpisodeRngs(*(np.random.Generator(np.random.PCG64(c)) for c in children))


@dataclass(frozen=True)
class LogicalTurn:
    """One query's worth of execution: usually a single physical turn, two
    when self-routing escalates."""

    turn_index: int
    query: Query
    action: RoutingAction
    outcomes: tuple[TurnOutcome, ...]
    escalated: bool

    @property
    def final(self) -> TurnOutcome:
        return self.outcomes[-1]

    @property
    def quality(self) -> float:
        return self.final.quality

    @property
    def latency_s(self) -> float:
        return sum(o.latency_s for o in self.outcomes)

    @property
    def cost(self) -> Decimal:
        return sum((o.cost for o in self.outcomes), Decimal("0"))

    @property
    def energy_j(self) -> float:
        return sum(o.energy_j for o in self.outcomes)


@dataclass
class EpisodeResult:
    turns: list[LogicalTurn]
    ledger: BudgetLedger
    violations: int
    fallbacks: int

    @property
    def total_quality(self) -> float:
        return sum(t.quality for t in self.turns)


class EpisodeEngine:
    """Turn-by-turn executor for one scenario.

    Hard enforcement masks each turn's actions against exact worst-case
    bounds plus a conservative reserve: the cost of finishing the remaining
    turns on the free device endpoint. The device action with an empty subset
    always survives as the last resort.
    """

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.ctx = scenario.build_context()
        self.space = ActionSpace(self.ctx)
        self.K = scenario.episode_length
        self._device = self.ctx.endpoints[self.ctx.device_id]
        self._has_rate_caps = any(
            e.max_turns_per_episode is not None for e in self.ctx.endpoints.values()
        )
        # Worst-case per-turn context growth: largest prompt plus the largest
        # output any endpoint can decode.
        self._max_out = max(
            output_token_cap(e, self.ctx.output_noise_sigma) for e in self.ctx.endpoints.values()
        )
        self._device_out_cap = output_token_cap(self._device, self.ctx.output_noise_sigma)

    # -- feasibility -------------------------------------------------------

    def device_worst_latency(self, turn: int, context_upper: int) -> float:
        """Upper bound on a device turn at ``turn`` given a context bound."""
        handoff = handoff_tokens(
            ConversationState(context_tokens=context_upper, context_location="__elsewhere__"),
            self.ctx.device_id,
            self.ctx.compression,
        )
        prefill = (self.scenario.worst_input_tokens(turn) + handoff) / self._device.prefill_rate
        return prefill + self._device_out_cap / self._device.decode_rate

    def latency_reserve(self, next_turn: int, context_upper: int) -> float:
        """Worst-case latency of finishing turns ``next_turn``..K-1 on-device."""
        reserve = 0.0
        ctx_bound = context_upper
        for t in range(next_turn, self.K):
            reserve += self.device_worst_latency(t, ctx_bound)
            ctx_bound += self.scenario.worst_input_tokens(t) + self._max_out
        return reserve

    def admissible_estimates(
        self,
        state: ConversationState,
        query: Query,
        link_up: bool,
        turns_used: dict[str, int] | None = None,
    ) -> list[tuple[RoutingAction, ActionBound]]:
        """Valid actions for this query with their exact worst-case bounds.

        Filters subsets the query does not offer and endpoints past their
        per-episode rate cap; the device last-resort action is never filtered.
        """
        out = []
        for action in self.space.actions:
            if action != self.space.device_action:
                if not action.modalities <= query.available_modalities:
                    continue
                cap = self.ctx.endpoints[action.endpoint].max_turns_per_episode
                if cap is not None and turns_used is not None and turns_used.get(action.endpoint, 0) >= cap:
                    continue
            out.append((action, estimate_turn_bound(self.ctx, state, query, action, link_up)))
        return out

    def feasible_actions(
        self,
        ledger: BudgetLedger,
        state: ConversationState,
        query: Query,
        link_up: bool,
        turn_index: int,
        turns_used: dict[str, int] | None = None,
    ) -> list[RoutingAction]:
        estimates = self.admissible_estimates(state, query, link_up, turns_used)
        if not self.scenario.hard_enforcement:
            return [a for a, _ in estimates]
        reserve = self.latency_reserve(turn_index + 1, state.context_tokens + query.input_tokens + self._max_out)
        return mask_actions(ledger, estimates, self.space.device_action, reserve_latency=reserve)

    def observation(
        self,
        state: ConversationState,
        ledger: BudgetLedger,
        query: Query,
        turn_index: int,
        link_up: bool,
    ) -> Observation:
        return Observation(
            category=query.category,
            requires_vision=self.ctx.categories[query.category].requires_vision,
            available_modalities=query.available_modalities,
            turn_index=turn_index,
            remaining_latency=ledger.remaining_latency,
            remaining_cost=ledger.remaining_cost,
            context_location=state.context_location,
            context_tokens=state.context_tokens,
            link_up=link_up if self.scenario.observe_link else None,
        )

    # -- episode loop ------------------------------------------------------

    def run_episode(
        self,
        policy,
        episode_index: int,
        root_seed: int | None = None,
        stream: int = STREAM_EVAL,
    ) -> EpisodeResult:
        """Execute one K-turn episode under the given policy.

        Per turn: draw the query (categorical scenarios), step the link once,
        build the observation, mask, decide, execute, charge the ledger. Two-
        phase (self-routing) policies run their device attempt first and may
        add one budget-checked cloud escalation.
        """
        root = self.scenario.seed if root_seed is None else root_seed
        rngs = episode_rngs(root, stream, episode_index)
        stream_queries = self.scenario.query_stream(rngs.query)

        state = ConversationState(context_tokens=0, context_location=self.ctx.device_id)
        ledger = self.scenario.fresh_ledger()
        link_state = self.ctx.link.initial_state
        turns_used: dict[str, int] = {}
        turns: list[LogicalTurn] = []
        violations = 0
        fallbacks = 0

        for t, query in enumerate(stream_queries):
            link_state = step_link(self.ctx.link, link_state, rngs.link)
            link_up = link_state == UP
            obs = self.observation(state, ledger, query, t, link_up)
            feasible = self.feasible_actions(ledger, state, query, link_up, t, turns_used)
            action = policy.decide(obs, feasible, rngs.policy)
            outcome, state = execute_turn(self.ctx, state, query, action, link_up, rngs.execution)
            ledger, violated = apply_outcome(ledger, outcome)
            violations += violated
            fallbacks += outcome.fallback_occurred
            turns_used[outcome.endpoint] = turns_used.get(outcome.endpoint, 0) + 1
            outcomes = [outcome]
            escalated = False

            if getattr(policy, "two_phase", False):
                escalate = policy.wants_escalation(obs, outcome, rngs.policy)
                if escalate:
                    esc_action = policy.escalation_action(obs)
                    feasible2 = self.feasible_actions(ledger, state, query, link_up, t, turns_used)
                    if esc_action in feasible2 and esc_action != self.space.device_action:
                        outcome2, state = execute_turn(
                            self.ctx, state, query, esc_action, link_up, rngs.execution
                        )
                        ledger, violated2 = apply_outcome(ledger, outcome2)
                        violations += violated2
                        fallbacks += outcome2.fallback_occurred
                        turns_used[outcome2.endpoint] = turns_used.get(outcome2.endpoint, 0) + 1
                        outcomes.append(outcome2)
                        escalated = True
                        action = esc_action

            turns.append(
                LogicalTurn(
                    turn_index=t,
                    query=query,
                    action=action,
                    outcomes=tuple(outcomes),
                    escalated=escalated,
                )
            )

        return EpisodeResult(turns=turns, ledger=ledger, violations=violations, fallbacks=fallbacks)
