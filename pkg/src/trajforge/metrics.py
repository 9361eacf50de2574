"""Quantified diversity metrics for trajectories and corpora.

Three signals steer synthesis: domain entropy (how evenly trajectories
spread over business clusters), reasoning-mode entropy (how varied the
judge-assigned interaction styles are), and cumulative action complexity
(how much context-shifting and argument lineage each trajectory needs).
Both entropies use the natural log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .code_tool import CODE_TOOL_NAME
from .errors import MetricsError
from .tool_space import ToolDef, ToolSpace
from .trajectory import ROLE_TOOL_CALL, Trajectory

LEVEL_INSTRUCTION = "instruction_grounded"
LEVEL_LOCAL = "local_context"
LEVEL_GLOBAL = "global_context"
DEPENDENCY_LEVELS = (LEVEL_INSTRUCTION, LEVEL_LOCAL, LEVEL_GLOBAL)


@dataclass
class MetricConfig:
    mu_base: float = 1.0
    delta: float = 0.2
    omega: dict = field(
        default_factory=lambda: {
            LEVEL_INSTRUCTION: 1.0,
            LEVEL_LOCAL: 1.1,
            LEVEL_GLOBAL: 1.2,
        }
    )

    def __post_init__(self):
        if self.mu_base < 0 or self.delta < 0:
            raise ValueError("mu_base and delta must be non-negative")
        w = [self.omega.get(l) for l in DEPENDENCY_LEVELS]
        if any(v is None for v in w):
            raise ValueError(f"omega must weight all of {DEPENDENCY_LEVELS}")
        if not (w[0] < w[1] < w[2]):
            raise ValueError("omega weights must strictly increase with dependency level")

    def to_dict(self) -> dict:
        return {"mu_base": self.mu_base, "delta": self.delta, "omega": dict(self.omega)}


@dataclass
class ParamDependency:
    param_name: str
    level: str

    def __post_init__(self):
        if self.level not in DEPENDENCY_LEVELS:
            raise ValueError(f"unknown dependency level {self.level!r}")


@dataclass
class ActionComplexity:
    switch_cost: float
    depth_cost: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.switch_cost * self.depth_cost


def entropy_from_counts(counts: Iterable[float]) -> float:
    """Shannon entropy (nats) of an unnormalized count vector.

    Degenerate distributions return exactly 0.0 and uniform ones exactly
    log(n); zero counts are ignored.
    """
    vals = [float(c) for c in counts if c > 0]
    if not vals:
        raise MetricsError("entropy over an empty distribution")
    if len(vals) == 1:
        return 0.0
    if all(v == vals[0] for v in vals):
        return math.log(len(vals))
    total = sum(vals)
    return -sum((v / total) * math.log(v / total) for v in vals)


def primary_cluster(traj: Trajectory, space: ToolSpace) -> str:
    """The business cluster owning the majority of the trajectory's calls.

    Ties break toward the cluster invoked earliest; code-tool calls have
    no cluster and do not vote; a trajectory with no resolvable calls
    falls back to its declared cluster_id.
    """
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for pos, turn in enumerate(traj.tool_calls()):
        name = turn.call["tool"]
        if name == CODE_TOOL_NAME:
            continue
        cid = traj.cluster_id
        cluster = space.cluster_by_id(cid) if cid in space._by_cluster else None
        if cluster is None or cluster.tool_by_name(name) is None:
            # the tool may live in another cluster (cross-cluster corpora)
            owner = None
            for c in space.clusters:
                if c.tool_by_name(name) is not None:
                    owner = c.cluster_id
                    break
            if owner is None:
                continue
            cid = owner
        counts[cid] = counts.get(cid, 0) + 1
        first_seen.setdefault(cid, pos)
    if not counts:
        return traj.cluster_id
    return min(counts, key=lambda c: (-counts[c], first_seen[c]))


def domain_entropy(corpus: Sequence[Trajectory], space: ToolSpace) -> float:
    """Entropy of the empirical primary-cluster distribution."""
    if not corpus:
        raise MetricsError("domain entropy of an empty corpus")
    counts: dict[str, int] = {}
    for traj in corpus:
        cid = primary_cluster(traj, space)
        counts[cid] = counts.get(cid, 0) + 1
    return entropy_from_counts(counts.values())


def mode_counts(corpus: Sequence[Trajectory]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for traj in corpus:
        label = traj.mode_label()
        if not label:
            raise MetricsError(f"trajectory {traj.trajectory_id} carries no reasoning-mode label")
        counts[label] = counts.get(label, 0) + 1
    return counts


def mode_entropy(corpus: Sequence[Trajectory]) -> float:
    """Entropy over open-vocabulary reasoning-mode labels."""
    if not corpus:
        raise MetricsError("mode entropy of an empty corpus")
    return entropy_from_counts(mode_counts(corpus).values())


def action_complexity(
    action_index: int,
    tool: ToolDef,
    prev_tool: Optional[ToolDef],
    deps: Sequence[ParamDependency],
    cfg: MetricConfig,
) -> ActionComplexity:
    """Cost of one tool call: lateral switch cost x bottleneck depth cost.

    The switch cost adds delta whenever the call crosses into a different
    domain than the previous call; the depth cost is the maximum weight
    over the call's parameter dependency levels (1.0 for zero-argument
    calls), never their sum.
    """
    if action_index < 1:
        raise MetricsError("action_index is 1-based")
    if (action_index == 1) != (prev_tool is None):
        raise MetricsError(
            f"action {action_index}: prev_tool must be absent exactly for the first action"
        )
    if action_index == 1:
        switch = cfg.mu_base
    else:
        crossed = tool.domain_id != prev_tool.domain_id
        switch = cfg.mu_base + (cfg.delta if crossed else 0.0)
    depth = max((cfg.omega[d.level] for d in deps), default=1.0)
    return ActionComplexity(switch_cost=switch, depth_cost=depth)


# domain id reserved for the injected code tool; one past the space's domains
def code_tool_domain(space: ToolSpace) -> int:
    return space.n_domains


def _code_tool_def(space: ToolSpace) -> ToolDef:
    return ToolDef(
        tool_id=CODE_TOOL_NAME,
        name=CODE_TOOL_NAME,
        description="sandboxed code execution",
        param_schema={"type": "object", "properties": {}},
        origin_server="",
        domain_id=code_tool_domain(space),
        class_id=-1,
    )


def resolve_call_tool(traj: Trajectory, space: ToolSpace, name: str, turn_index: int) -> ToolDef:
    if name == CODE_TOOL_NAME:
        return _code_tool_def(space)
    if traj.cluster_id in space._by_cluster:
        tool = space.cluster_by_id(traj.cluster_id).tool_by_name(name)
        if tool is not None:
            return tool
    for cluster in space.clusters:
        tool = cluster.tool_by_name(name)
        if tool is not None:
            return tool
    raise MetricsError(
        f"trajectory {traj.trajectory_id}: turn {turn_index} calls unknown tool '{name}'"
    )


def _deps_for_call(call_turn, dep_map: dict) -> list[ParamDependency]:
    args = call_turn.call.get("arguments", {}) or {}
    deps = []
    for arg in args:
        level = dep_map.get(arg)
        if level is None:
            raise MetricsError(
                f"turn {call_turn.index}: no dependency level recorded for argument '{arg}'"
            )
        deps.append(ParamDependency(arg, level))
    return deps


def trajectory_cac(traj: Trajectory, space: ToolSpace, cfg: MetricConfig) -> float:
    """Sum of per-action complexities over the trajectory's tool calls."""
    calls = traj.tool_calls()
    if not calls:
        return 0.0
    dep_maps = traj.param_deps()
    if dep_maps is None or len(dep_maps) != len(calls):
        raise MetricsError(
            f"trajectory {traj.trajectory_id}: parameter dependency levels missing or misaligned "
            f"({0 if dep_maps is None else len(dep_maps)} maps for {len(calls)} calls)"
        )
    total = 0.0
    prev: Optional[ToolDef] = None
    for i, (turn, dep_map) in enumerate(zip(calls, dep_maps), start=1):
        tool = resolve_call_tool(traj, space, turn.call["tool"], turn.index)
        deps = _deps_for_call(turn, dep_map)
        total += action_complexity(i, tool, prev, deps, cfg).total
        prev = tool
    return total


def trajectory_domains(traj: Trajectory, space: ToolSpace) -> set[int]:
    domains = set()
    for turn in traj.turns:
        if turn.role != ROLE_TOOL_CALL:
            continue
        tool = resolve_call_tool(traj, space, turn.call["tool"], turn.index)
        domains.add(tool.domain_id)
    return domains


def cooccurrence_matrix(corpus: Sequence[Trajectory], space: ToolSpace) -> list[list[int]]:
    """Domain-by-domain trajectory co-occurrence counts.

    Entry (i, j) counts trajectories that touch both domain i and domain
    j; the diagonal counts presence. The last row/column is the reserved
    code-tool pseudo-domain, so the matrix is (n_domains + 1) square.
    """
    n = space.n_domains + 1
    matrix = [[0] * n for _ in range(n)]
    for traj in corpus:
        touched = sorted(trajectory_domains(traj, space))
        for i in touched:
            for j in touched:
                matrix[i][j] += 1
    return matrix


def cac_stats(values: Sequence[float], bucket_width: float = 1.0) -> dict:
    """Mean, sample stddev, and fixed-width histogram of CAC values."""
    if not values:
        return {"mean": None, "stddev": None, "histogram": {"edges": [], "counts": []}}
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        stddev = 0.0
    else:
        stddev = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))
    top = max(values)
    bucket_count = max(1, int(math.floor(top / bucket_width)) + 1)
    edges = [round(i * bucket_width, 10) for i in range(bucket_count + 1)]
    counts = [0] * bucket_count
    for v in values:
        idx = min(int(v / bucket_width), bucket_count - 1)
        counts[idx] += 1
    return {"mean": mean, "stddev": stddev, "histogram": {"edges": edges, "counts": counts}}


def compute_report(
    corpus: Sequence[Trajectory], space: ToolSpace, cfg: Optional[MetricConfig] = None
) -> dict:
    """Corpus-level diversity report (the `score` stage output)."""
    cfg = cfg or MetricConfig()
    if not corpus:
        return {
            "h_dom": None,
            "h_mode": None,
            "cac": cac_stats([]),
            "cooccurrence": cooccurrence_matrix([], space),
            "mode_counts": {},
            "trajectory_count": 0,
        }
    cacs = [trajectory_cac(t, space, cfg) for t in corpus]
    return {
        "h_dom": domain_entropy(corpus, space),
        "h_mode": mode_entropy(corpus),
        "cac": cac_stats(cacs),
        "cooccurrence": cooccurrence_matrix(corpus, space),
        "mode_counts": mode_counts(corpus),
        "trajectory_count": len(corpus),
    }
