"""Scenario configuration: YAML schema, strict validation, and the derived
objects (turn context, action space, query streams) the runner consumes.

The on-disk format is a YAML key-value tree, documented field by field in the
README. Unknown keys are rejected everywhere so typos fail loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np
import yaml

from .profiles import (
    CLOUD,
    DEVICE,
    EndpointProfile,
    LinkModel,
    ModalityItem,
    TaskCategory,
    as_money,
    load_profile,
)
from .session import BudgetLedger, CompressionSpec, Query, TurnContext


class ConfigError(ValueError):
    """A scenario document failed to parse or validate."""


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{key} required" if where == "scenario" else f"{where}.{key} required")
    return section[key]


def _reject_unknown(section: dict, allowed: set[str], where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


@dataclass(frozen=True)
class QuerySpec:
    """Episode request stream: either a fixed sequence of queries or a
    categorical draw per turn with per-category prompt sizes."""

    kind: str
    episode_length: int
    sequence: tuple[Query, ...] = ()
    weights: dict[str, float] = field(default_factory=dict)
    input_tokens: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class SwarmRun:
    pattern: str
    topology: str
    agents: int
    rounds: int = 1
    subtasks: int = 1
    sequential: bool = False


@dataclass(frozen=True)
class SwarmSpec:
    generation_rate: float
    link_rate: float
    base_length: float
    growth: float
    supervisor_length: float
    worker_log_length: float
    insight_count: int
    hold_probability: float
    redundancy_penalty: float
    trials: int
    runs: tuple[SwarmRun, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    categories: dict[str, TaskCategory]
    modalities: dict[str, ModalityItem]
    endpoints: dict[str, EndpointProfile]
    device_id: str
    cloud_ids: tuple[str, ...]
    link: LinkModel
    queries: QuerySpec
    latency_budget: float
    cost_budget: Decimal
    compression: CompressionSpec | None
    enforcement: str
    seed: int
    latency_bins: int
    cost_bins: int
    vision_penalty: float
    retry_penalty_s: float
    observe_link: bool
    output_noise_sigma: float
    swarm: SwarmSpec | None

    @property
    def episode_length(self) -> int:
        return self.queries.episode_length

    @property
    def hard_enforcement(self) -> bool:
        return self.enforcement == "hard"

    def build_context(self) -> TurnContext:
        return TurnContext(
            endpoints=self.endpoints,
            categories=self.categories,
            modalities=self.modalities,
            device_id=self.device_id,
            cloud_ids=self.cloud_ids,
            link=self.link,
            compression=self.compression,
            vision_penalty=self.vision_penalty,
            retry_penalty_s=self.retry_penalty_s,
            output_noise_sigma=self.output_noise_sigma,
        )

    def fresh_ledger(self) -> BudgetLedger:
        return BudgetLedger(latency_budget=self.latency_budget, cost_budget=self.cost_budget)

    def query_stream(self, rng: np.random.Generator) -> list[Query]:
        """The K queries of one episode; consumes rng only for categorical
        scenarios (one draw per turn)."""
        if self.queries.kind == "sequence":
            return list(self.queries.sequence)
        cat_ids = list(self.categories)
        weights = np.array([self.queries.weights[c] for c in cat_ids])
        weights = weights / weights.sum()
        all_mods = frozenset(self.modalities)
        stream = []
        for _ in range(self.queries.episode_length):
            cat = cat_ids[int(rng.choice(len(cat_ids), p=weights))]
            stream.append(
                Query(
                    category=cat,
                    input_tokens=self.queries.input_tokens[cat],
                    available_modalities=all_mods,
                )
            )
        return stream

    def representative_query(self, category: str) -> Query:
        """A typical single query of the category, all modalities offered;
        used by offline endpoint profiling."""
        if self.queries.kind == "categorical":
            tokens = self.queries.input_tokens[category]
        else:
            sizes = [q.input_tokens for q in self.queries.sequence if q.category == category]
            tokens = round(sum(sizes) / len(sizes)) if sizes else round(
                sum(q.input_tokens for q in self.queries.sequence) / len(self.queries.sequence)
            )
        return Query(
            category=category,
            input_tokens=tokens,
            available_modalities=frozenset(self.modalities),
        )

    def worst_input_tokens(self, turn: int) -> int:
        """Largest prompt the given turn can present (exact for sequences)."""
        if self.queries.kind == "sequence":
            return self.queries.sequence[turn].input_tokens
        return max(self.queries.input_tokens.values())


_TOP_KEYS = {
    "name",
    "categories",
    "modalities",
    "endpoints",
    "link",
    "queries",
    "budgets",
    "compression",
    "enforcement",
    "seed",
    "bins",
    "simulation",
    "swarm",
}


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document.

    Syntax errors surface with the YAML line marker; validation errors name
    the offending field.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("scenario document must be a mapping")
    _reject_unknown(raw, _TOP_KEYS, "scenario")

    categories = _parse_categories(_require(raw, "categories", "scenario"))
    modalities = _parse_modalities(raw.get("modalities", []), categories)
    endpoints, device_id, cloud_ids = _parse_endpoints(
        _require(raw, "endpoints", "scenario"), categories
    )
    link = _parse_link(_require(raw, "link", "scenario"))
    queries = _parse_queries(_require(raw, "queries", "scenario"), categories, modalities)
    latency_budget, cost_budget = _parse_budgets(_require(raw, "budgets", "scenario"))
    compression = _parse_compression(raw.get("compression"))
    enforcement = raw.get("enforcement", "hard")
    if enforcement not in ("hard", "soft"):
        raise ConfigError(f"enforcement must be 'hard' or 'soft', got {enforcement!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    latency_bins, cost_bins = _parse_bins(raw.get("bins", {}))
    sim = _parse_simulation(raw.get("simulation", {}))
    swarm = _parse_swarm(raw.get("swarm"))

    return ScenarioConfig(
        name=raw.get("name", "scenario"),
        categories=categories,
        modalities=modalities,
        endpoints=endpoints,
        device_id=device_id,
        cloud_ids=cloud_ids,
        link=link,
        queries=queries,
        latency_budget=latency_budget,
        cost_budget=cost_budget,
        compression=compression,
        enforcement=enforcement,
        seed=seed,
        latency_bins=latency_bins,
        cost_bins=cost_bins,
        vision_penalty=sim["vision_penalty"],
        retry_penalty_s=sim["retry_penalty_s"],
        observe_link=sim["observe_link"],
        output_noise_sigma=sim["output_noise_sigma"],
        swarm=swarm,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text())


def _parse_categories(items) -> dict[str, TaskCategory]:
    if not isinstance(items, list) or not items:
        raise ConfigError("categories must be a non-empty list")
    out: dict[str, TaskCategory] = {}
    for item in items:
        _reject_unknown(item, {"id", "difficulty", "requires_vision"}, "categories[]")
        cat = TaskCategory(
            id=_require(item, "id", "categories[]"),
            difficulty=float(_require(item, "difficulty", "categories[]")),
            requires_vision=bool(item.get("requires_vision", False)),
        )
        if cat.id in out:
            raise ConfigError(f"duplicate category id {cat.id!r}")
        out[cat.id] = cat
    return out


def _parse_modalities(items, categories) -> dict[str, ModalityItem]:
    if items is None:
        items = []
    if not isinstance(items, list):
        raise ConfigError("modalities must be a list")
    out: dict[str, ModalityItem] = {}
    for item in items:
        _reject_unknown(item, {"id", "token_size", "coverage"}, "modalities[]")
        coverage = _require(item, "coverage", "modalities[]")
        _check_category_map(coverage, categories, f"modalities[].coverage")
        mod = ModalityItem(
            id=_require(item, "id", "modalities[]"),
            token_size=int(_require(item, "token_size", "modalities[]")),
            coverage={k: float(v) for k, v in coverage.items()},
        )
        if mod.id in out:
            raise ConfigError(f"duplicate modality id {mod.id!r}")
        out[mod.id] = mod
    return out


def _check_category_map(mapping, categories, where: str) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must map category ids to values")
    for cat in mapping:
        if cat not in categories:
            raise ConfigError(f"{where} references unknown category {cat!r}")
    for cat in categories:
        if cat not in mapping:
            raise ConfigError(f"{where} missing category {cat!r}")


def _parse_endpoints(items, categories):
    if not isinstance(items, list) or not items:
        raise ConfigError("endpoints must be a non-empty list")
    endpoints: dict[str, EndpointProfile] = {}
    device_ids = []
    cloud_ids = []
    for item in items:
        try:
            profile = load_profile(item)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        _check_category_map(profile.base_quality, categories, f"endpoint {profile.id} base_quality")
        _check_category_map(
            profile.vision_gain_cap, categories, f"endpoint {profile.id} vision_gain_cap"
        )
        if profile.id in endpoints:
            raise ConfigError(f"duplicate endpoint id {profile.id!r}")
        endpoints[profile.id] = profile
        (device_ids if profile.tier == DEVICE else cloud_ids).append(profile.id)
    if len(device_ids) != 1:
        raise ConfigError(f"exactly one device-tier endpoint required, got {len(device_ids)}")
    if not cloud_ids:
        raise ConfigError("at least one cloud-tier endpoint required")
    return endpoints, device_ids[0], tuple(cloud_ids)


def _parse_link(section) -> LinkModel:
    _reject_unknown(
        section,
        {"uplink_rate", "downlink_rate", "rtt", "p_up_to_down", "p_down_to_up", "initial_state"},
        "link",
    )
    try:
        return LinkModel(
            uplink_rate=float(_require(section, "uplink_rate", "link")),
            downlink_rate=float(_require(section, "downlink_rate", "link")),
            rtt=float(_require(section, "rtt", "link")),
            p_up_to_down=float(_require(section, "p_up_to_down", "link")),
            p_down_to_up=float(_require(section, "p_down_to_up", "link")),
            initial_state=section.get("initial_state", "up"),
        )
    except ValueError as exc:
        raise ConfigError(f"link: {exc}") from exc


def _parse_queries(section, categories, modalities) -> QuerySpec:
    _reject_unknown(
        section, {"kind", "episode_length", "sequence", "weights", "input_tokens"}, "queries"
    )
    kind = _require(section, "kind", "queries")
    if kind == "sequence":
        entries = _require(section, "sequence", "queries")
        if not isinstance(entries, list) or not entries:
            raise ConfigError("queries.sequence must be a non-empty list")
        seq = []
        for entry in entries:
            _reject_unknown(entry, {"category", "input_tokens", "modalities"}, "queries.sequence[]")
            cat = _require(entry, "category", "queries.sequence[]")
            if cat not in categories:
                raise ConfigError(f"queries.sequence references unknown category {cat!r}")
            mods = entry.get("modalities")
            if mods is None:
                available = frozenset(modalities)
            else:
                for m in mods:
                    if m not in modalities:
                        raise ConfigError(f"queries.sequence references unknown modality {m!r}")
                available = frozenset(mods)
            seq.append(
                Query(
                    category=cat,
                    input_tokens=int(_require(entry, "input_tokens", "queries.sequence[]")),
                    available_modalities=available,
                )
            )
        declared = section.get("episode_length", len(seq))
        if declared != len(seq):
            raise ConfigError("queries.episode_length does not match sequence length")
        return QuerySpec(kind="sequence", episode_length=len(seq), sequence=tuple(seq))
    if kind == "categorical":
        k = _require(section, "episode_length", "queries")
        if not isinstance(k, int) or k < 1:
            raise ConfigError("queries.episode_length must be an integer >= 1")
        weights = _require(section, "weights", "queries")
        _check_category_map(weights, categories, "queries.weights")
        if any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
            raise ConfigError("queries.weights must be nonnegative and sum to > 0")
        tokens = _require(section, "input_tokens", "queries")
        _check_category_map(tokens, categories, "queries.input_tokens")
        for cat, t in tokens.items():
            if not isinstance(t, int) or t < 1:
                raise ConfigError(f"queries.input_tokens[{cat}] must be an integer >= 1")
        return QuerySpec(
            kind="categorical",
            episode_length=k,
            weights={k_: float(v) for k_, v in weights.items()},
            input_tokens=dict(tokens),
        )
    raise ConfigError(f"queries.kind must be 'sequence' or 'categorical', got {kind!r}")


def _parse_budgets(section):
    _reject_unknown(section, {"latency_s", "cost"}, "budgets")
    latency = _require(section, "latency_s", "budgets")
    cost = _require(section, "cost", "budgets")
    if not isinstance(latency, (int, float)) or latency <= 0:
        raise ConfigError("budgets.latency_s must be > 0")
    money = as_money(cost)
    if money < 0:
        raise ConfigError("budgets.cost must be >= 0")
    return float(latency), money


def _parse_compression(section) -> CompressionSpec | None:
    if section is None:
        return None
    _reject_unknown(section, {"ratio", "quality_penalty"}, "compression")
    try:
        return CompressionSpec(
            ratio=float(_require(section, "ratio", "compression")),
            quality_penalty=float(section.get("quality_penalty", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"compression: {exc}") from exc


def _parse_bins(section):
    _reject_unknown(section, {"latency", "cost"}, "bins")
    latency = section.get("latency", 8)
    cost = section.get("cost", 8)
    for name, value in (("latency", latency), ("cost", cost)):
        if not isinstance(value, int) or value < 1:
            raise ConfigError("bins must be >= 1")
    return latency, cost


def _parse_simulation(section) -> dict:
    _reject_unknown(
        section,
        {"vision_penalty", "retry_penalty_s", "observe_link", "output_noise_sigma"},
        "simulation",
    )
    vision_penalty = float(section.get("vision_penalty", 0.5))
    if not 0.0 <= vision_penalty <= 1.0:
        raise ConfigError("simulation.vision_penalty must be in [0, 1]")
    retry = float(section.get("retry_penalty_s", 1.0))
    if retry < 0:
        raise ConfigError("simulation.retry_penalty_s must be >= 0")
    sigma = float(section.get("output_noise_sigma", 0.0))
    if sigma < 0:
        raise ConfigError("simulation.output_noise_sigma must be >= 0")
    return {
        "vision_penalty": vision_penalty,
        "retry_penalty_s": retry,
        "observe_link": bool(section.get("observe_link", False)),
        "output_noise_sigma": sigma,
    }


def _parse_swarm(section) -> SwarmSpec | None:
    if section is None:
        return None
    _reject_unknown(
        section, {"generation_rate", "link_rate", "lengths", "insights", "runs"}, "swarm"
    )
    lengths = section.get("lengths", {})
    _reject_unknown(lengths, {"base", "growth", "supervisor", "worker_log"}, "swarm.lengths")
    insights = section.get("insights", {})
    _reject_unknown(
        insights,
        {"count", "hold_probability", "redundancy_penalty", "trials"},
        "swarm.insights",
    )
    runs = []
    for entry in section.get("runs", []):
        _reject_unknown(
            entry,
            {"pattern", "topology", "agents", "rounds", "subtasks", "sequential"},
            "swarm.runs[]",
        )
        pattern = _require(entry, "pattern", "swarm.runs[]")
        if pattern not in ("debate", "division", "hierarchical"):
            raise ConfigError(f"swarm.runs[].pattern must be debate|division|hierarchical, got {pattern!r}")
        agents = _require(entry, "agents", "swarm.runs[]")
        if not isinstance(agents, int) or agents < 2:
            raise ConfigError("swarm.runs[].agents must be an integer >= 2")
        runs.append(
            SwarmRun(
                pattern=pattern,
                topology=entry.get("topology", "star" if pattern != "debate" else "full"),
                agents=agents,
                rounds=entry.get("rounds", 1),
                subtasks=entry.get("subtasks", 1),
                sequential=bool(entry.get("sequential", False)),
            )
        )
    generation_rate = float(section.get("generation_rate", 50.0))
    link_rate = float(section.get("link_rate", 1000.0))
    if generation_rate <= 0 or link_rate <= 0:
        raise ConfigError("swarm.generation_rate and swarm.link_rate must be > 0")
    trials = insights.get("trials", 1000)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("swarm.insights.trials must be an integer >= 1")
    return SwarmSpec(
        generation_rate=generation_rate,
        link_rate=link_rate,
        base_length=float(lengths.get("base", 80.0)),
        growth=float(lengths.get("growth", 0.0)),
        supervisor_length=float(lengths.get("supervisor", 20.0)),
        worker_log_length=float(lengths.get("worker_log", 50.0)),
        insight_count=int(insights.get("count", 10)),
        hold_probability=float(insights.get("hold_probability", 0.5)),
        redundancy_penalty=float(insights.get("redundancy_penalty", 0.0)),
        trials=trials,
        runs=tuple(runs),
    )
