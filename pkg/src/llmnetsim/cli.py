"""Command-line interface.

Subcommands mirror the experiment surface: simulate (one policy),
train (tabular RL), oracle (exact DP), sweep (policy grid), swarm
(collaboration patterns), report (Pareto summary from a sweep CSV).
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .policies import QLearningParams, build_policy, dp_optimal, train_q
from .runner import (
    METRICS_COLUMNS,
    SWARM_COLUMNS,
    TRACE_COLUMNS,
    aggregate_rows,
    emit_csv,
    pareto_indices,
    run_episode,
    run_sweep,
    swarm_rows,
)
from .scenario import ConfigError, load_scenario, parse_scenario


def resolve_scenario(ref: str):
    """Accept either a filesystem path or the name of a shipped scenario
    (e.g. 'reference', 'micro_oracle')."""
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    shipped = resources.files("llmnetsim.scenarios").joinpath(f"{ref}.yaml")
    if shipped.is_file():
        return parse_scenario(shipped.read_text())
    raise ConfigError(f"scenario not found: {ref}")


def parse_seeds(text: str) -> list[int]:
    if "," in text:
        return [int(part) for part in text.split(",") if part != ""]
    count = int(text)
    if count < 1:
        raise ConfigError("--seeds must name at least one episode")
    return list(range(count))


def cmd_simulate(args) -> int:
    scenario = resolve_scenario(args.scenario)
    policy = build_policy(scenario, args.policy[0] if args.policy else "device_only")
    seeds = parse_seeds(args.seeds)
    rows = run_sweep(scenario, [policy], seeds)
    emit_csv(rows, METRICS_COLUMNS, args.out)
    if args.trace:
        _, trace = run_episode(scenario, policy, seeds[0])
        emit_csv(trace, TRACE_COLUMNS, args.trace)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    scenario = resolve_scenario(args.scenario)
    specs = []
    for chunk in args.policy:
        specs.extend(s for s in chunk.split(",") if s)
    if not specs:
        raise ConfigError("sweep needs at least one --policy")
    policies = [build_policy(scenario, spec) for spec in specs]
    rows = run_sweep(scenario, policies, parse_seeds(args.seeds))
    emit_csv(rows, METRICS_COLUMNS, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    scenario = resolve_scenario(args.scenario)
    params = QLearningParams(alpha=args.alpha)
    table, returns = train_q(
        scenario,
        params,
        episodes=args.episodes,
        seed=args.seed,
        latency_bins=args.bins,
        cost_bins=args.bins,
    )
    table.save(args.out)
    if args.returns:
        rows = [{"episode": i, "return": r} for i, r in enumerate(returns)]
        emit_csv(rows, ["episode", "return"], args.returns)
    tail = returns[-min(100, len(returns)):]
    print(
        f"trained {args.episodes} episodes; mean return over last {len(tail)}: "
        f"{sum(tail) / len(tail):.4f}; table -> {args.out}"
    )
    return 0


def cmd_oracle(args) -> int:
    scenario = resolve_scenario(args.scenario)
    solution = dp_optimal(scenario)
    print(f"optimal total quality: {solution.value:.6f}")
    print(f"states expanded: {solution.states_expanded}")
    for t, action in enumerate(solution.best_actions):
        print(f"turn {t}: {action.label()}")
    if args.out:
        rows = [{"turn": t, "action": a.label()} for t, a in enumerate(solution.best_actions)]
        emit_csv(rows, ["turn", "action"], args.out)
    return 0


def cmd_swarm(args) -> int:
    scenario = resolve_scenario(args.scenario)
    rows = swarm_rows(scenario)
    emit_csv(rows, SWARM_COLUMNS, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_report(args) -> int:
    text = Path(args.input).read_text()
    lines = [line for line in text.splitlines() if line]
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    aggregates = [r for r in rows if r.get("kind") == "aggregate"]
    if not aggregates:
        raise ConfigError(f"no aggregate rows in {args.input}")
    points = [
        (float(r["total_quality"]), float(r["total_latency_s"]), float(r["total_cost"]))
        for r in aggregates
    ]
    front = set(pareto_indices(points))
    print(f"{'policy':<24} {'quality':>9} {'latency_s':>10} {'cost':>10}  pareto")
    for i, row in enumerate(aggregates):
        mark = "*" if i in front else ""
        print(
            f"{row['policy']:<24} {float(row['total_quality']):>9.4f} "
            f"{float(row['total_latency_s']):>10.4f} {float(row['total_cost']):>10.6f}  {mark}"
        )
    if args.out:
        kept = [aggregates[i] for i in sorted(front)]
        emit_csv(kept, header, args.out)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llmnetsim",
        description="Deterministic simulator for budget-aware device-cloud LLM routing "
        "and multi-agent collaboration traffic.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--scenario", required=True, help="scenario path or shipped name")
        if needs_out:
            p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("simulate", help="run one policy over seeded episodes")
    add_common(p)
    p.add_argument("--policy", action="append", default=None, help="policy spec (default device_only)")
    p.add_argument("--seeds", default="1", help="episode count or comma list of indices")
    p.add_argument("--trace", default=None, help="also write a per-turn trace CSV for the first seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="cross product of policies and seeds")
    add_common(p)
    p.add_argument("--policy", action="append", required=True, help="policy spec, repeatable or comma-separated")
    p.add_argument("--seeds", default="10")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train the tabular budget-aware router")
    add_common(p)
    p.add_argument("--episodes", type=int, default=20000)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--bins", type=int, default=None, help="override latency/cost bin count")
    p.add_argument("--seed", type=int, default=None, help="training seed (default: scenario seed)")
    p.add_argument("--returns", default=None, help="optional per-episode return CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle", help="exact DP optimum of a deterministic scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None, help="optional CSV of the optimal action sequence")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("swarm", help="run the scenario's collaboration patterns")
    add_common(p)
    p.set_defaults(func=cmd_swarm)

    p = sub.add_parser("report", help="Pareto summary of a sweep CSV")
    p.add_argument("--input", required=True, help="sweep CSV")
    p.add_argument("--out", default=None, help="optional CSV of the Pareto front rows")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
