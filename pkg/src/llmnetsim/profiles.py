"""Endpoint capability/cost models, task categories, modality items, and the
two-state wireless link model that every simulation consumes.

All types here are immutable values; functions take an explicit random source
and keep no hidden state, so they are safe to share across parallel runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

UP = "up"
DOWN = "down"

DEVICE = "device"
CLOUD = "cloud"


def as_money(value) -> Decimal:
    """Exact decimal representation of a config-supplied currency amount."""
    if isinstance(value, Decimal):
        return value
    return Decimal(str(value))


@dataclass(frozen=True)
class TaskCategory:
    """A request category with a scalar difficulty and a vision-dependence flag."""

    id: str
    difficulty: float
    requires_vision: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty must be in [0, 1], got {self.difficulty}")


@dataclass(frozen=True)
class ModalityItem:
    """A transmittable input item (e.g. one camera view) with a fixed token size
    and a per-category coverage fraction in [0, 1]."""

    id: str
    token_size: int
    coverage: dict[str, float]

    def __post_init__(self) -> None:
        if self.token_size < 0:
            raise ValueError(f"token_size must be >= 0, got {self.token_size}")
        for cat, cov in self.coverage.items():
            if not 0.0 <= cov <= 1.0:
                raise ValueError(f"coverage[{cat}] must be in [0, 1], got {cov}")


@dataclass(frozen=True)
class EndpointProfile:
    """Capability and cost model of one LLM endpoint.

    Rates are tokens/second, prices currency/token (exact decimals), energy
    joules/token. ``base_quality`` and ``vision_gain_cap`` map category id to
    the endpoint's text-only response quality and the maximum additional
    quality visual inputs can contribute; their sum must stay within [0, 1].
    ``max_turns_per_episode`` optionally models provider rate limits at turn
    granularity: once exhausted, the endpoint is infeasible for the rest of
    the episode.
    """

    id: str
    tier: str
    accepts_vision: bool
    prefill_rate: float
    decode_rate: float
    input_price: Decimal
    output_price: Decimal
    energy_per_token: float
    context_window: int
    base_quality: dict[str, float]
    vision_gain_cap: dict[str, float]
    response_length: float
    max_turns_per_episode: int | None = None

    def __post_init__(self) -> None:
        if self.tier not in (DEVICE, CLOUD):
            raise ValueError(f"tier must be 'device' or 'cloud', got {self.tier!r}")
        if self.prefill_rate <= 0:
            raise ValueError("prefill_rate must be > 0")
        if self.decode_rate <= 0:
            raise ValueError("decode_rate must be > 0")
        if self.input_price < 0:
            raise ValueError("input_price must be >= 0")
        if self.output_price < 0:
            raise ValueError("output_price must be >= 0")
        if self.energy_per_token < 0:
            raise ValueError("energy_per_token must be >= 0")
        if self.context_window <= 0:
            raise ValueError("context_window must be > 0")
        if self.response_length <= 0:
            raise ValueError("response_length must be > 0")
        if self.tier == DEVICE and (self.input_price != 0 or self.output_price != 0):
            raise ValueError("device tier must be zero-price")
        if self.max_turns_per_episode is not None and self.max_turns_per_episode < 1:
            raise ValueError("max_turns_per_episode must be >= 1")
        for cat, q in self.base_quality.items():
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"base_quality[{cat}] must be in [0, 1], got {q}")
        for cat, g in self.vision_gain_cap.items():
            if g < 0:
                raise ValueError(f"vision_gain_cap[{cat}] must be >= 0, got {g}")
            base = self.base_quality.get(cat, 0.0)
            if base + g > 1.0 + 1e-12:
                raise ValueError(
                    f"base_quality + vision_gain_cap must be <= 1 for category {cat}"
                )


@dataclass(frozen=True)
class LinkModel:
    """Two-state Markov wireless link, stepped once per simulated turn.

    ``p_up_to_down`` / ``p_down_to_up`` are per-turn transition probabilities;
    the long-run availability is p_down_to_up / (p_down_to_up + p_up_to_down)
    when both are nonzero.
    """

    uplink_rate: float
    downlink_rate: float
    rtt: float
    p_up_to_down: float
    p_down_to_up: float
    initial_state: str = UP

    def __post_init__(self) -> None:
        if self.uplink_rate <= 0:
            raise ValueError("uplink_rate must be > 0")
        if self.downlink_rate <= 0:
            raise ValueError("downlink_rate must be > 0")
        if self.rtt < 0:
            raise ValueError("rtt must be >= 0")
        for name in ("p_up_to_down", "p_down_to_up"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.initial_state not in (UP, DOWN):
            raise ValueError(f"initial_state must be 'up' or 'down', got {self.initial_state!r}")

    def availability(self) -> float:
        """Stationary probability of the link being up."""
        total = self.p_up_to_down + self.p_down_to_up
        if total == 0:
            return 1.0 if self.initial_state == UP else 0.0
        return self.p_down_to_up / total


_PROFILE_FIELDS = {
    "id": str,
    "tier": str,
    "accepts_vision": bool,
    "prefill_rate": (int, float),
    "decode_rate": (int, float),
    "input_price": (int, float, str, Decimal),
    "output_price": (int, float, str, Decimal),
    "energy_per_token": (int, float),
    "context_window": int,
    "base_quality": dict,
    "vision_gain_cap": dict,
    "response_length": (int, float),
}

_OPTIONAL_PROFILE_FIELDS = {"max_turns_per_episode": int}


def load_profile(record: dict) -> EndpointProfile:
    """Build a validated EndpointProfile from a config record.

    Raises ValueError naming the offending field for anything missing,
    mistyped, or out of range.
    """
    if not isinstance(record, dict):
        raise ValueError("endpoint record must be a mapping")
    for name in _PROFILE_FIELDS:
        if name not in record:
            raise ValueError(f"{name} missing")
    for name in record:
        if name not in _PROFILE_FIELDS and name not in _OPTIONAL_PROFILE_FIELDS:
            raise ValueError(f"unknown endpoint field: {name}")
    for name, types in {**_PROFILE_FIELDS, **_OPTIONAL_PROFILE_FIELDS}.items():
        if name in record and not isinstance(record[name], types):
            raise ValueError(f"{name} has wrong type")
    return EndpointProfile(
        id=record["id"],
        tier=record["tier"],
        accepts_vision=record["accepts_vision"],
        prefill_rate=float(record["prefill_rate"]),
        decode_rate=float(record["decode_rate"]),
        input_price=as_money(record["input_price"]),
        output_price=as_money(record["output_price"]),
        energy_per_token=float(record["energy_per_token"]),
        context_window=record["context_window"],
        base_quality={k: float(v) for k, v in record["base_quality"].items()},
        vision_gain_cap={k: float(v) for k, v in record["vision_gain_cap"].items()},
        response_length=float(record["response_length"]),
        max_turns_per_episode=record.get("max_turns_per_episode"),
    )


def step_link(link: LinkModel, state: str, rng: np.random.Generator) -> str:
    """Advance the link chain by one turn using a single random draw."""
    u = rng.random()
    if state == UP:
        return DOWN if u < link.p_up_to_down else UP
    return UP if u < link.p_down_to_up else DOWN


def transfer_time(link: LinkModel, tokens: int, direction: str) -> float:
    """Seconds to move ``tokens`` over the link in the given direction.

    Zero tokens still pay one round trip. The caller is responsible for
    checking that the link is up.
    """
    if tokens < 0:
        raise ValueError(f"tokens must be >= 0, got {tokens}")
    rate = link.uplink_rate if direction == UP else link.downlink_rate
    return tokens / rate + link.rtt


def modality_gain(endpoint: EndpointProfile, category: TaskCategory, subset) -> float:
    """Quality gain from transmitting a set of modality items.

    gain = cap * (1 - prod(1 - coverage_m)), which is submodular and
    monotone in the subset and saturates at the endpoint's per-category cap:
    extra items of overlapping coverage contribute diminishing gains.
    Non-empty subsets are rejected on endpoints that do not accept vision.
    """
    items = list(subset)
    if items and not endpoint.accepts_vision:
        raise ValueError(f"endpoint {endpoint.id} is text-only but modality subset is non-empty")
    if not items:
        return 0.0
    cap = endpoint.vision_gain_cap.get(category.id, 0.0)
    miss = 1.0
    for item in items:
        miss *= 1.0 - item.coverage.get(category.id, 0.0)
    return cap * (1.0 - miss)
