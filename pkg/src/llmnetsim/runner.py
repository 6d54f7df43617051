"""Seeded episode and sweep execution, metrics aggregation, Pareto-front
extraction, and deterministic CSV emission."""

from __future__ import annotations

import io
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np

from .engine import STREAM_EVAL, EpisodeEngine, EpisodeResult
from .profiles import CLOUD
from .scenario import ScenarioConfig
from .policies import RoutingPolicy

METRICS_COLUMNS = [
    "kind",
    "policy",
    "seed",
    "turns",
    "total_quality",
    "mean_quality",
    "total_latency_s",
    "total_cost",
    "total_energy_j",
    "violations",
    "fallbacks",
    "cloud_fraction",
    "std_total_quality",
    "std_total_latency_s",
    "std_total_cost",
]

TRACE_COLUMNS = [
    "turn",
    "category",
    "endpoint",
    "modalities",
    "quality",
    "latency_s",
    "cost",
    "energy_j",
    "billed_input_tokens",
    "output_tokens",
    "escalated",
    "fallback",
    "link_was_down",
]

SWARM_COLUMNS = ["pattern", "topology", "N", "T", "round", "messages", "tokens", "latency_s"]


@dataclass
class EpisodeMetrics:
    policy: str
    seed: int
    turns: int
    total_quality: float
    mean_quality: float
    total_latency_s: float
    total_cost: Decimal
    total_energy_j: float
    violations: int
    fallbacks: int
    cloud_fraction: float

    def row(self) -> dict:
        return {
            "kind": "episode",
            "policy": self.policy,
            "seed": self.seed,
            "turns": self.turns,
            "total_quality": self.total_quality,
            "mean_quality": self.mean_quality,
            "total_latency_s": self.total_latency_s,
            "total_cost": self.total_cost,
            "total_energy_j": self.total_energy_j,
            "violations": self.violations,
            "fallbacks": self.fallbacks,
            "cloud_fraction": self.cloud_fraction,
            "std_total_quality": "",
            "std_total_latency_s": "",
            "std_total_cost": "",
        }


def run_episode(
    scenario: ScenarioConfig,
    policy: RoutingPolicy,
    seed: int,
    engine: EpisodeEngine | None = None,
    root_seed: int | None = None,
) -> tuple[EpisodeMetrics, list[dict]]:
    """One K-turn episode; returns its metrics row and a per-turn trace."""
    engine = engine or EpisodeEngine(scenario)
    result = engine.run_episode(policy, seed, root_seed=root_seed, stream=STREAM_EVAL)
    return summarize_episode(scenario, policy.name, seed, result), trace_rows(result)


def summarize_episode(
    scenario: ScenarioConfig, policy_name: str, seed: int, result: EpisodeResult
) -> EpisodeMetrics:
    k = len(result.turns)
    cloud_turns = sum(
        1 for t in result.turns if scenario.endpoints[t.final.endpoint].tier == CLOUD
    )
    total_quality = result.total_quality
    return EpisodeMetrics(
        policy=policy_name,
        seed=seed,
        turns=k,
        total_quality=total_quality,
        mean_quality=total_quality / k,
        total_latency_s=result.ledger.latency_used,
        total_cost=result.ledger.cost_used,
        total_energy_j=result.ledger.energy_used,
        violations=result.violations,
        fallbacks=result.fallbacks,
        cloud_fraction=cloud_turns / k,
    )


def trace_rows(result: EpisodeResult) -> list[dict]:
    rows = []
    for turn in result.turns:
        for outcome in turn.outcomes:
            rows.append(
                {
                    "turn": turn.turn_index,
                    "category": turn.query.category,
                    "endpoint": outcome.endpoint,
                    "modalities": "+".join(sorted(turn.action.modalities))
                    if outcome is turn.outcomes[-1]
                    else "",
                    "quality": outcome.quality,
                    "latency_s": outcome.latency_s,
                    "cost": outcome.cost,
                    "energy_j": outcome.energy_j,
                    "billed_input_tokens": outcome.billed_input_tokens,
                    "output_tokens": outcome.output_tokens,
                    "escalated": int(turn.escalated),
                    "fallback": int(outcome.fallback_occurred),
                    "link_was_down": int(outcome.link_was_down),
                }
            )
    return rows


def aggregate_rows(episode_metrics: list[EpisodeMetrics]) -> dict:
    """One aggregate row (mean, with sample std for the tradeoff axes) for a
    group of episodes of the same policy."""
    n = len(episode_metrics)
    qualities = [m.total_quality for m in episode_metrics]
    latencies = [m.total_latency_s for m in episode_metrics]
    costs = [m.total_cost for m in episode_metrics]
    mean_cost = sum(costs, Decimal("0")) / n
    std = lambda xs: float(np.std(xs, ddof=1)) if n > 1 else 0.0
    return {
        "kind": "aggregate",
        "policy": episode_metrics[0].policy,
        "seed": "",
        "turns": episode_metrics[0].turns,
        "total_quality": float(np.mean(qualities)),
        "mean_quality": float(np.mean([m.mean_quality for m in episode_metrics])),
        "total_latency_s": float(np.mean(latencies)),
        "total_cost": mean_cost,
        "total_energy_j": float(np.mean([m.total_energy_j for m in episode_metrics])),
        "violations": sum(m.violations for m in episode_metrics),
        "fallbacks": sum(m.fallbacks for m in episode_metrics),
        "cloud_fraction": float(np.mean([m.cloud_fraction for m in episode_metrics])),
        "std_total_quality": std(qualities),
        "std_total_latency_s": std(latencies),
        "std_total_cost": std([float(c) for c in costs]),
    }


def run_sweep(
    scenario: ScenarioConfig,
    policies: list[RoutingPolicy],
    seeds: list[int],
) -> list[dict]:
    """Cross product of policies and episode seeds.

    Rows are ordered by sorted (policy name, seed) with one aggregate row per
    policy appended at the end, so output is deterministic regardless of how
    the entries were scheduled.
    """
    if not policies or not seeds:
        raise ValueError("run_sweep needs at least one policy and one seed")
    engine = EpisodeEngine(scenario)
    by_policy: dict[str, list[EpisodeMetrics]] = {}
    for policy in sorted(policies, key=lambda p: p.name):
        metrics = []
        for seed in sorted(seeds):
            result = engine.run_episode(policy, seed, stream=STREAM_EVAL)
            metrics.append(summarize_episode(scenario, policy.name, seed, result))
        by_policy[policy.name] = metrics
    rows = [m.row() for name in sorted(by_policy) for m in by_policy[name]]
    rows.extend(aggregate_rows(by_policy[name]) for name in sorted(by_policy))
    return rows


def pareto_indices(points: list[tuple[float, float, float]]) -> list[int]:
    """Indices of the non-dominated (quality up, latency down, cost down)
    points, in input order; duplicates are all retained."""
    keep = []
    for i, (q, lat, cost) in enumerate(points):
        dominated = False
        for j, (q2, lat2, cost2) in enumerate(points):
            if j == i:
                continue
            if (
                q2 >= q
                and lat2 <= lat
                and cost2 <= cost
                and (q2 > q or lat2 < lat or cost2 < cost)
            ):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return keep


def pareto_front(points: list[tuple[float, float, float]]) -> list[tuple[float, float, float]]:
    return [points[i] for i in pareto_indices(points)]


def format_cell(value) -> str:
    """Deterministic CSV cell text: floats get 6 significant digits in fixed
    notation, exact decimals and ints print exactly."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return np.format_float_positional(
            value, precision=6, unique=False, fractional=False, trim="k"
        )
    if isinstance(value, Decimal):
        return np.format_float_positional(
            float(value), precision=6, unique=False, fractional=False, trim="k"
        )
    return str(value)


def emit_csv(rows: list[dict], columns: list[str], destination) -> None:
    """Write a header plus data rows with LF newlines; identical inputs
    produce identical bytes."""
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(format_cell(row.get(col, "")) for col in columns) + "\n")
    data = buf.getvalue().encode()
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        Path(destination).write_bytes(data)


def swarm_rows(scenario: ScenarioConfig) -> list[dict]:
    """Execute the scenario's swarm section and flatten every round into the
    shared CSV schema."""
    from . import swarm as sw

    spec = scenario.swarm
    if spec is None:
        raise ValueError("scenario has no swarm section")
    length = sw.LengthModel(
        base=spec.base_length,
        growth=spec.growth,
        supervisor=spec.supervisor_length,
        worker_log=spec.worker_log_length,
    )
    rows = []
    for run in spec.runs:
        topology = sw.build_topology(run.topology, run.agents)
        if run.pattern == "debate":
            report = sw.run_debate(topology, run.rounds, length, spec.generation_rate, spec.link_rate)
        elif run.pattern == "division":
            report = sw.run_division_of_labor(
                topology, run.subtasks, length, spec.generation_rate, spec.link_rate
            )
        else:
            report = sw.run_hierarchical(
                topology, run.rounds, length, spec.generation_rate, spec.link_rate, run.sequential
            )
        for rnd in report.rounds:
            rows.append(
                {
                    "pattern": report.pattern,
                    "topology": topology.kind,
                    "N": topology.n,
                    "T": report.num_rounds,
                    "round": rnd.index,
                    "messages": rnd.messages,
                    "tokens": rnd.tokens,
                    "latency_s": rnd.latency_s,
                }
            )
    return rows
