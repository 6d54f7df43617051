"""Multi-agent collaboration patterns over explicit communication topologies,
with exact per-round token and latency accounting.

Three interaction patterns are modeled: debate (every agent broadcasts along
its out-edges each round, messages lengthening linearly per round),
division-of-labor (one parallel fan-out/fan-in over a star), and hierarchical
supervision (per-round supervisor/worker exchanges over a star). Reports are
pure values; nothing here touches the routing simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FULL = "full"
STAR = "star"
TREE = "tree"
RING = "ring"
CUSTOM = "custom"


@dataclass(frozen=True)
class TopologySpec:
    """Directed communication graph over agents 0..n-1."""

    kind: str
    n: int
    edges: tuple[tuple[int, int], ...]
    hub: int | None = None


@dataclass(frozen=True)
class LengthModel:
    """Message-length model: debate messages start at ``base`` tokens and grow
    by ``growth`` tokens per round; supervisor instructions and worker logs
    have their own fixed lengths."""

    base: float
    growth: float = 0.0
    supervisor: float = 20.0
    worker_log: float = 50.0

    def __post_init__(self) -> None:
        if self.base <= 0:
            raise ValueError(f"base message length must be > 0, got {self.base}")
        if self.growth < 0:
            raise ValueError(f"growth must be >= 0, got {self.growth}")
        if self.supervisor < 0 or self.worker_log < 0:
            raise ValueError("supervisor/worker_log lengths must be >= 0")

    def round_length(self, round_index: int) -> float:
        """Debate message length in round t (1-based)."""
        return self.base + self.growth * (round_index - 1)


@dataclass(frozen=True)
class RoundStats:
    index: int
    messages: int
    tokens: float
    latency_s: float


@dataclass(frozen=True)
class TrafficReport:
    """Per-round and cumulative traffic of one collaboration run."""

    pattern: str
    topology: TopologySpec
    rounds: tuple[RoundStats, ...]

    @property
    def total_tokens(self) -> float:
        return sum(r.tokens for r in self.rounds)

    @property
    def total_latency_s(self) -> float:
        return sum(r.latency_s for r in self.rounds)

    @property
    def total_messages(self) -> int:
        return sum(r.messages for r in self.rounds)

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)


def build_topology(
    kind: str,
    n: int,
    adjacency: list[tuple[int, int]] | None = None,
    hub: int = 0,
    branching: int = 2,
) -> TopologySpec:
    """Construct a well-formed topology.

    full: all N(N-1) ordered pairs. star: each spoke <-> hub. tree: balanced
    ``branching``-ary tree with parent <-> child edges. ring: agent i -> i+1
    (N directed edges). custom: caller-supplied directed edges, self-loops
    rejected.
    """
    if n < 2:
        raise ValueError(f"agent count must be >= 2, got {n}")
    if kind == FULL:
        edges = tuple((i, j) for i in range(n) for j in range(n) if i != j)
        return TopologySpec(FULL, n, edges)
    if kind == STAR:
        if not 0 <= hub < n:
            raise ValueError(f"hub {hub} out of range for {n} agents")
        spokes = [i for i in range(n) if i != hub]
        edges = tuple((s, hub) for s in spokes) + tuple((hub, s) for s in spokes)
        return TopologySpec(STAR, n, edges, hub=hub)
    if kind == TREE:
        if branching < 1:
            raise ValueError(f"branching must be >= 1, got {branching}")
        pairs = []
        for child in range(1, n):
            parent = (child - 1) // branching
            pairs.append((parent, child))
            pairs.append((child, parent))
        return TopologySpec(TREE, n, tuple(pairs), hub=0)
    if kind == RING:
        edges = tuple((i, (i + 1) % n) for i in range(n))
        return TopologySpec(RING, n, edges)
    if kind == CUSTOM:
        if not adjacency:
            raise ValueError("custom topology requires an adjacency list")
        seen = set()
        for edge in adjacency:
            if len(edge) != 2:
                raise ValueError(f"malformed edge {edge!r}")
            u, v = edge
            if u == v:
                raise ValueError(f"self-loop on agent {u} not allowed")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge {edge!r} references an agent outside 0..{n - 1}")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge {edge!r}")
            seen.add((u, v))
        return TopologySpec(CUSTOM, n, tuple((u, v) for u, v in adjacency))
    raise ValueError(f"unknown topology kind {kind!r}")


def _leg_latency(tokens: float, generation_rate: float, link_rate: float) -> float:
    return tokens / generation_rate + tokens / link_rate


def run_debate(
    topology: TopologySpec,
    rounds: int,
    length: LengthModel,
    generation_rate: float = 50.0,
    link_rate: float = 1000.0,
) -> TrafficReport:
    """Broadcast-critique-revise debate.

    Each round, every agent sends one message along each of its out-edges;
    round-t messages are length base + growth*(t-1), so totals follow
    |edges| * (base*T + growth*T*(T-1)/2) exactly. All same-round messages
    generate and transmit in parallel, so round latency is one
    generate-plus-transfer leg.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    stats = []
    n_edges = len(topology.edges)
    for t in range(1, rounds + 1):
        msg_len = length.round_length(t)
        stats.append(
            RoundStats(
                index=t,
                messages=n_edges,
                tokens=n_edges * msg_len,
                latency_s=_leg_latency(msg_len, generation_rate, link_rate),
            )
        )
    return TrafficReport("debate", topology, tuple(stats))


def run_division_of_labor(
    topology: TopologySpec,
    subtasks: int,
    length: LengthModel,
    generation_rate: float = 50.0,
    link_rate: float = 1000.0,
) -> TrafficReport:
    """One parallel fan-out/fan-in over a star: S subtask messages out, S
    result messages back. Latency is the single slowest exchange since the
    workers run in parallel."""
    if topology.kind != STAR:
        raise ValueError("division-of-labor requires a star topology")
    workers = topology.n - 1
    if subtasks < 1:
        raise ValueError(f"subtasks must be >= 1, got {subtasks}")
    if subtasks > workers:
        raise ValueError(f"{subtasks} subtasks exceed {workers} workers")
    tokens = subtasks * (length.supervisor + length.worker_log)
    latency = _leg_latency(length.supervisor, generation_rate, link_rate) + _leg_latency(
        length.worker_log, generation_rate, link_rate
    )
    stats = (RoundStats(index=1, messages=2 * subtasks, tokens=tokens, latency_s=latency),)
    return TrafficReport("division", topology, stats)


def run_hierarchical(
    topology: TopologySpec,
    rounds: int,
    length: LengthModel,
    generation_rate: float = 50.0,
    link_rate: float = 1000.0,
    sequential: bool = False,
) -> TrafficReport:
    """Supervisor-worker loop: per round, N-1 instructions out and N-1 logs
    back. In parallel mode the two legs overlap (round latency is the longer
    leg); the sequential option accumulates both legs, doubling the round
    latency when the legs are equal."""
    if topology.kind != STAR:
        raise ValueError("hierarchical collaboration requires a star topology")
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    workers = topology.n - 1
    out_leg = _leg_latency(length.supervisor, generation_rate, link_rate)
    back_leg = _leg_latency(length.worker_log, generation_rate, link_rate)
    latency = out_leg + back_leg if sequential else max(out_leg, back_leg)
    stats = tuple(
        RoundStats(
            index=t,
            messages=2 * workers,
            tokens=workers * (length.supervisor + length.worker_log),
            latency_s=latency,
        )
        for t in range(1, rounds + 1)
    )
    return TrafficReport("hierarchical", topology, stats)


def fit_growth_exponent(series) -> float:
    """OLS slope of log(total) against log(x) over (x, total) pairs."""
    pts = list(series)
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    xs = np.array([p[0] for p in pts], dtype=float)
    ys = np.array([p[1] for p in pts], dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("all points must be positive for a log-log fit")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def reachable_contributors(topology: TopologySpec, max_hops: int, answerer: int = 0) -> int:
    """Agents whose messages can reach the answerer within ``max_hops``
    directed hops, counting the answerer itself."""
    inbound: dict[int, list[int]] = {i: [] for i in range(topology.n)}
    for u, v in topology.edges:
        inbound[v].append(u)
    reached = {answerer}
    frontier = [answerer]
    for _ in range(max_hops):
        nxt = []
        for node in frontier:
            for src in inbound[node]:
                if src not in reached:
                    reached.add(src)
                    nxt.append(src)
        if not nxt:
            break
        frontier = nxt
    return len(reached)


def duplicate_token_ratio(report: TrafficReport) -> float:
    """Fraction of transmitted tokens that re-deliver already-known content.

    Tracks which contributors' insights each agent holds as rounds proceed:
    a message's duplicate share is the fraction of the sender's known
    contributor set the receiver already holds. Dense graphs saturate after
    one round and every later round is pure duplication; sparse graphs keep
    delivering novelty longer.
    """
    topo = report.topology
    know = [{i} for i in range(topo.n)]
    dup = 0.0
    total = 0.0
    for rnd in report.rounds:
        if rnd.messages == 0:
            continue
        msg_len = rnd.tokens / rnd.messages
        deliveries = []
        for u, v in topo.edges:
            overlap = len(know[u] & know[v]) / len(know[u])
            dup += msg_len * overlap
            total += msg_len
            deliveries.append((v, know[u].copy()))
        for v, payload in deliveries:
            know[v] |= payload
    return dup / total if total > 0 else 0.0


def expected_collective_quality(
    report: TrafficReport,
    insight_count: int,
    hold_probability: float,
    redundancy_penalty: float,
    answerer: int = 0,
) -> float:
    """Closed-form expectation of collective_quality: coverage term
    1 - (1-p)^reachable minus the redundancy penalty times the duplicate
    token ratio, clamped to [0, 1]."""
    _validate_insight_params(insight_count, hold_probability, redundancy_penalty)
    reach = reachable_contributors(report.topology, report.num_rounds, answerer)
    coverage = 1.0 - (1.0 - hold_probability) ** reach
    value = coverage - redundancy_penalty * duplicate_token_ratio(report)
    return min(1.0, max(0.0, value))


def collective_quality(
    report: TrafficReport,
    insight_count: int,
    hold_probability: float,
    redundancy_penalty: float,
    rng: np.random.Generator,
    trials: int = 1,
    answerer: int = 0,
) -> float:
    """Monte Carlo collective answer quality for one collaboration run.

    Each trial samples which of the ``insight_count`` task insights every
    agent independently holds (probability ``hold_probability``); the
    coverage term is the fraction of insights held by at least one agent
    whose messages reach the answerer within the run's rounds. The
    redundancy penalty scales the deterministic duplicate token ratio.
    """
    _validate_insight_params(insight_count, hold_probability, redundancy_penalty)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    topo = report.topology
    inbound: dict[int, list[int]] = {i: [] for i in range(topo.n)}
    for u, v in topo.edges:
        inbound[v].append(u)
    reached = {answerer}
    frontier = [answerer]
    for _ in range(report.num_rounds):
        nxt = [s for node in frontier for s in inbound[node] if s not in reached]
        reached.update(nxt)
        if not nxt:
            break
        frontier = nxt
    contributors = sorted(reached)

    coverage_sum = 0.0
    for _ in range(trials):
        held = rng.random((len(contributors), insight_count)) < hold_probability
        coverage_sum += float(held.any(axis=0).mean())
    coverage = coverage_sum / trials
    value = coverage - redundancy_penalty * duplicate_token_ratio(report)
    return min(1.0, max(0.0, value))


def _validate_insight_params(insight_count, hold_probability, redundancy_penalty) -> None:
    if insight_count < 1:
        raise ValueError(f"insight_count must be >= 1, got {insight_count}")
    if not 0.0 <= hold_probability <= 1.0:
        raise ValueError(f"hold_probability must be in [0, 1], got {hold_probability}")
    if redundancy_penalty < 0:
        raise ValueError(f"redundancy_penalty must be >= 0, got {redundancy_penalty}")
