"""Single-turn execution: latency, cost, quality, context handoff, compression,
and the cumulative budget ledger.

Money is carried as exact decimals end to end (prices times integer token
counts), so ledger cost invariants hold with zero tolerance. Latency is float
seconds; every TurnOutcome records its latency components so conservation is
checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from decimal import Decimal

import numpy as np

from .profiles import (
    CLOUD,
    DEVICE,
    DOWN,
    UP,
    EndpointProfile,
    LinkModel,
    ModalityItem,
    TaskCategory,
    modality_gain,
    transfer_time,
)

ZERO_MONEY = Decimal("0")


@dataclass(frozen=True)
class Query:
    """One user request: its category, prompt size, and which modality items
    the environment currently offers."""

    category: str
    input_tokens: int
    available_modalities: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.input_tokens <= 0:
            raise ValueError(f"input_tokens must be > 0, got {self.input_tokens}")


@dataclass(frozen=True)
class ConversationState:
    """Accumulated dialogue context: size, where it lives, and how many turns
    have executed."""

    context_tokens: int = 0
    context_location: str = ""
    turn_index: int = 0


@dataclass(frozen=True)
class CompressionSpec:
    """Summarize-before-transfer model: transmit ceil(ratio * context) tokens
    on handoff, and discount the receiving turn's quality by (1 - penalty)."""

    ratio: float
    quality_penalty: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"compression ratio must be in (0, 1], got {self.ratio}")
        if not 0.0 <= self.quality_penalty < 1.0:
            raise ValueError(
                f"compression quality_penalty must be in [0, 1), got {self.quality_penalty}"
            )


@dataclass(frozen=True)
class BudgetLedger:
    """Cumulative latency/cost/energy spend against session-level caps."""

    latency_budget: float
    cost_budget: Decimal
    latency_used: float = 0.0
    cost_used: Decimal = ZERO_MONEY
    energy_used: float = 0.0

    @property
    def remaining_latency(self) -> float:
        return max(0.0, self.latency_budget - self.latency_used)

    @property
    def remaining_cost(self) -> Decimal:
        left = self.cost_budget - self.cost_used
        return left if left > 0 else ZERO_MONEY


@dataclass(frozen=True)
class RoutingAction:
    """Choice of serving endpoint plus the modality subset to transmit
    (always empty for text-only endpoints)."""

    endpoint: str
    modalities: frozenset[str] = frozenset()

    def label(self) -> str:
        if not self.modalities:
            return self.endpoint
        return self.endpoint + "+" + "+".join(sorted(self.modalities))


@dataclass(frozen=True)
class TurnOutcome:
    """Everything one executed turn produced. ``latency_s`` always equals
    transfer_s + prefill_s + decode_s + retry_s."""

    endpoint: str
    quality: float
    latency_s: float
    cost: Decimal
    energy_j: float
    billed_input_tokens: int
    output_tokens: int
    transfer_s: float
    prefill_s: float
    decode_s: float
    retry_s: float
    fallback_occurred: bool
    link_was_down: bool


@dataclass(frozen=True)
class ActionBound:
    """Worst-case latency/cost of one action, used for feasibility masking."""

    latency_s: float
    cost: Decimal


@dataclass(frozen=True)
class Observation:
    """What a routing policy may look at when deciding a turn."""

    category: str
    requires_vision: bool
    available_modalities: frozenset[str]
    turn_index: int
    remaining_latency: float
    remaining_cost: Decimal
    context_location: str
    context_tokens: int
    link_up: bool | None = None


@dataclass(frozen=True)
class TurnContext:
    """Immutable bundle of everything execute_turn needs besides the per-turn
    state: endpoint/category/modality tables, the link, compression, and the
    scenario-level simulation knobs."""

    endpoints: dict[str, EndpointProfile]
    categories: dict[str, TaskCategory]
    modalities: dict[str, ModalityItem]
    device_id: str
    cloud_ids: tuple[str, ...]
    link: LinkModel
    compression: CompressionSpec | None = None
    vision_penalty: float = 0.5
    retry_penalty_s: float = 1.0
    output_noise_sigma: float = 0.0


def handoff_tokens(
    state: ConversationState, target: str, compression: CompressionSpec | None
) -> int:
    """Context tokens that must move when ``target`` serves the next turn.

    Zero when the context already lives there; otherwise the full context, or
    ceil(context * ratio) when a compression spec applies.
    """
    if target == state.context_location or state.context_tokens == 0:
        return 0
    if compression is None:
        return state.context_tokens
    return math.ceil(state.context_tokens * compression.ratio)


def output_token_cap(profile: EndpointProfile, sigma: float) -> int:
    """Largest output length a turn on this endpoint can produce."""
    if sigma <= 0:
        return max(1, round(profile.response_length))
    return max(1, round(profile.response_length + 4.0 * sigma))


def _draw_output_tokens(
    profile: EndpointProfile, sigma: float, rng: np.random.Generator | None
) -> int:
    if sigma <= 0 or rng is None:
        return max(1, round(profile.response_length))
    # noise clipped at +-4 sigma so worst-case bounds stay exact
    noise = float(np.clip(rng.normal(0.0, sigma), -4.0 * sigma, 4.0 * sigma))
    return max(1, min(round(profile.response_length + noise), output_token_cap(profile, sigma)))


def _turn_metrics(
    ctx: TurnContext,
    serve: EndpointProfile,
    state: ConversationState,
    query: Query,
    subset: frozenset[str],
    out_tokens: int,
    retry_s: float,
):
    """Shared latency/cost arithmetic for executed turns and their bounds."""
    handoff = handoff_tokens(state, serve.id, ctx.compression)
    if serve.tier == DEVICE:
        transfer = 0.0
        prefill = (query.input_tokens + handoff) / serve.prefill_rate
        decode = out_tokens / serve.decode_rate
        billed = 0
        cost = ZERO_MONEY
        energy = serve.energy_per_token * (query.input_tokens + handoff + out_tokens)
    else:
        mod_tokens = sum(ctx.modalities[m].token_size for m in subset)
        payload = query.input_tokens + handoff + mod_tokens
        transfer = transfer_time(ctx.link, payload, UP) + transfer_time(ctx.link, out_tokens, DOWN)
        prefill = payload / serve.prefill_rate
        decode = out_tokens / serve.decode_rate
        billed = payload
        cost = billed * serve.input_price + out_tokens * serve.output_price
        energy = serve.energy_per_token * (payload + out_tokens)
    latency = transfer + prefill + decode + retry_s
    return handoff, transfer, prefill, decode, retry_s, latency, billed, cost, energy


def execute_turn(
    ctx: TurnContext,
    state: ConversationState,
    query: Query,
    action: RoutingAction,
    link_up: bool,
    rng: np.random.Generator | None = None,
) -> tuple[TurnOutcome, ConversationState]:
    """Run one conversational turn end to end.

    Device path: prefill the query (plus any handed-off context), decode the
    response; free, energy billed per processed token. Cloud path: uplink the
    query + handoff + selected modality tokens, prefill, decode, downlink the
    response; cost = input_price * billed input + output_price * output.

    A cloud action while the link is down converts to the device action with
    an empty subset plus the configured retry penalty; episodes never abort
    on outages. Quality = base_quality + modality gain, discounted by the
    compression penalty when compressed context was transferred this turn and
    by the vision penalty when a vision-dependent query is served without any
    modality.
    """
    requested = ctx.endpoints[action.endpoint]
    fallback = requested.tier == CLOUD and not link_up
    if fallback:
        serve = ctx.endpoints[ctx.device_id]
        subset: frozenset[str] = frozenset()
        retry = ctx.retry_penalty_s
    else:
        serve = requested
        subset = action.modalities
        retry = 0.0

    if subset and not serve.accepts_vision:
        raise ValueError(f"endpoint {serve.id} is text-only but modality subset is non-empty")
    if not subset <= query.available_modalities:
        raise ValueError("action modality subset not available for this query")

    category = ctx.categories[query.category]
    out_tokens = _draw_output_tokens(serve, ctx.output_noise_sigma, rng)
    handoff, transfer, prefill, decode, retry, latency, billed, cost, energy = _turn_metrics(
        ctx, serve, state, query, subset, out_tokens, retry
    )

    items = [ctx.modalities[m] for m in sorted(subset)]
    quality = serve.base_quality[category.id] + modality_gain(serve, category, items)
    if ctx.compression is not None and handoff > 0:
        quality *= 1.0 - ctx.compression.quality_penalty
    if category.requires_vision and not subset:
        quality *= ctx.vision_penalty

    outcome = TurnOutcome(
        endpoint=serve.id,
        quality=quality,
        latency_s=latency,
        cost=cost,
        energy_j=energy,
        billed_input_tokens=billed,
        output_tokens=out_tokens,
        transfer_s=transfer,
        prefill_s=prefill,
        decode_s=decode,
        retry_s=retry,
        fallback_occurred=fallback,
        link_was_down=not link_up,
    )
    new_state = ConversationState(
        context_tokens=state.context_tokens + query.input_tokens + out_tokens,
        context_location=serve.id,
        turn_index=state.turn_index + 1,
    )
    return outcome, new_state


def estimate_turn_bound(
    ctx: TurnContext,
    state: ConversationState,
    query: Query,
    action: RoutingAction,
    link_up: bool,
) -> ActionBound:
    """Exact worst-case latency/cost of executing ``action`` now.

    The current link state is known at decision time, so the served branch
    (normal vs. outage fallback) is determined; the only slack left is the
    output-length noise, bounded by its clipped cap. With noise off the bound
    equals the executed outcome to the bit.
    """
    requested = ctx.endpoints[action.endpoint]
    fallback = requested.tier == CLOUD and not link_up
    if fallback:
        serve = ctx.endpoints[ctx.device_id]
        subset: frozenset[str] = frozenset()
        retry = ctx.retry_penalty_s
    else:
        serve = requested
        subset = action.modalities
        retry = 0.0
    out_cap = output_token_cap(serve, ctx.output_noise_sigma)
    *_, latency, _billed, cost, _energy = _turn_metrics(
        ctx, serve, state, query, subset, out_cap, retry
    )
    return ActionBound(latency_s=latency, cost=cost)


def apply_outcome(ledger: BudgetLedger, outcome: TurnOutcome) -> tuple[BudgetLedger, bool]:
    """Charge one turn to the ledger; the flag is true iff any budget is now
    exceeded."""
    updated = replace(
        ledger,
        latency_used=ledger.latency_used + outcome.latency_s,
        cost_used=ledger.cost_used + outcome.cost,
        energy_used=ledger.energy_used + outcome.energy_j,
    )
    violated = updated.latency_used > updated.latency_budget or updated.cost_used > updated.cost_budget
    return updated, violated


def mask_actions(
    ledger: BudgetLedger,
    estimates: list[tuple[RoutingAction, ActionBound]],
    last_resort: RoutingAction,
    reserve_latency: float = 0.0,
    reserve_cost: Decimal = ZERO_MONEY,
) -> list[RoutingAction]:
    """Actions whose worst-case bound (plus a reserve for completing the rest
    of the episode on-device) fits the remaining budget.

    The device action with an empty subset is always included as the last
    resort, even when its own bound does not fit. Order follows ``estimates``
    (device first by enumeration convention).
    """
    feasible = [
        action
        for action, bound in estimates
        if ledger.latency_used + bound.latency_s + reserve_latency <= ledger.latency_budget
        and ledger.cost_used + bound.cost + reserve_cost <= ledger.cost_budget
    ]
    if last_resort not in feasible:
        feasible.insert(0, last_resort)
    return feasible


def enumerate_actions(ctx: TurnContext) -> list[RoutingAction]:
    """The scenario's fixed action list: device with empty subset first, then
    each cloud endpoint's modality subsets in binary order of the modality
    bitmask (bit i = i-th declared modality)."""
    actions = [RoutingAction(ctx.device_id, frozenset())]
    mod_ids = list(ctx.modalities)
    for eid in ctx.cloud_ids:
        if ctx.endpoints[eid].accepts_vision:
            for mask in range(2 ** len(mod_ids)):
                subset = frozenset(mod_ids[i] for i in range(len(mod_ids)) if mask >> i & 1)
                actions.append(RoutingAction(eid, subset))
        else:
            actions.append(RoutingAction(eid, frozenset()))
    return actions


class ActionSpace:
    """Fixed enumeration of a scenario's routing actions with index lookup."""

    def __init__(self, ctx: TurnContext):
        self.actions = enumerate_actions(ctx)
        self._index = {a: i for i, a in enumerate(self.actions)}
        self.device_action = self.actions[0]

    def __len__(self) -> int:
        return len(self.actions)

    def index(self, action: RoutingAction) -> int:
        return self._index[action]
