"""Global synthesis memory and gap-driven steering.

Accepted trajectories fold into running distributions over clusters,
reasoning modes, and action complexity. Gap analysis compares those
distributions against targets and renders the steering directives the
next round's blueprints are generated under. Updates are pure: replaying
the same accepted stream reproduces the same memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .blueprint import ORIGIN_MEMORY_GAP, StrategyProfile
from .errors import MetricsError, TrajforgeError
from .metrics import entropy_from_counts
from .quality import QualityVerdict
from .tool_space import ToolSpace
from .trajectory import Trajectory

DEFAULT_EXPLORATION_DIRECTIVE = (
    "Explore: vary the reasoning mode and pair tools in combinations the corpus has not seen."
)


@dataclass(frozen=True)
class GapTargets:
    kappa: float = 4.0          # flag clusters below uniform/kappa
    mode_ceiling: float = 0.5   # flag modes above this frequency
    cac_target: float = 15.0    # flag corpora whose mean complexity sits below

    def __post_init__(self):
        if self.kappa <= 0 or not (0 < self.mode_ceiling <= 1):
            raise ValueError("kappa must be positive and mode_ceiling in (0, 1]")


@dataclass(frozen=True)
class GlobalMemory:
    cluster_counts: dict = field(default_factory=dict)
    mode_counts: dict = field(default_factory=dict)
    cac_samples: tuple = ()
    round: int = 0
    history: tuple = ()

    def total(self) -> int:
        return sum(self.cluster_counts.values())

    def is_empty(self) -> bool:
        return not self.cluster_counts and not self.mode_counts

    def entropies(self) -> tuple[Optional[float], Optional[float]]:
        """(domain, mode) entropies over the stored counts; same formula
        and log base as the corpus metrics, so they agree exactly."""
        h_dom = entropy_from_counts(self.cluster_counts.values()) if self.cluster_counts else None
        h_mode = entropy_from_counts(self.mode_counts.values()) if self.mode_counts else None
        return h_dom, h_mode

    def cac_mean(self) -> Optional[float]:
        if not self.cac_samples:
            return None
        return sum(self.cac_samples) / len(self.cac_samples)

    def to_dict(self) -> dict:
        return {
            "cluster_counts": dict(self.cluster_counts),
            "mode_counts": dict(self.mode_counts),
            "cac_samples": list(self.cac_samples),
            "round": self.round,
            "history": [dict(h) for h in self.history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalMemory":
        return cls(
            cluster_counts=dict(d.get("cluster_counts", {})),
            mode_counts=dict(d.get("mode_counts", {})),
            cac_samples=tuple(d.get("cac_samples", [])),
            round=d.get("round", 0),
            history=tuple(d.get("history", [])),
        )

    def save(self, path) -> None:
        from .jsonutil import pretty_dumps

        with open(path, "w", encoding="utf-8") as fh:
            fh.write(pretty_dumps(self.to_dict()))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GlobalMemory":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def update(memory: GlobalMemory, traj: Trajectory, verdict: QualityVerdict) -> GlobalMemory:
    """Fold one judged trajectory into the memory.

    Rejected trajectories leave the memory untouched. The cluster tallied
    is the trajectory's primary cluster as computed by the metrics stage
    (falling back to its declared cluster); the mode label comes from the
    verdict.
    """
    if not verdict.suitable_for_training:
        return memory
    cluster = traj.cluster_id
    cac = None
    if traj.metrics:
        cluster = traj.metrics.get("primary_cluster", cluster)
        cac = traj.metrics.get("cac")
    cluster_counts = dict(memory.cluster_counts)
    cluster_counts[cluster] = cluster_counts.get(cluster, 0) + 1
    mode_counts = dict(memory.mode_counts)
    mode_counts[verdict.mode_label] = mode_counts.get(verdict.mode_label, 0) + 1
    cac_samples = memory.cac_samples + ((cac,) if cac is not None else ())
    return replace(
        memory,
        cluster_counts=cluster_counts,
        mode_counts=mode_counts,
        cac_samples=cac_samples,
    )


def finalize_round(memory: GlobalMemory) -> GlobalMemory:
    """Close the current round: snapshot entropies and advance the index."""
    h_dom, h_mode = memory.entropies()
    entry = {
        "round": memory.round,
        "h_dom": h_dom,
        "h_mode": h_mode,
        "cac_mean": memory.cac_mean(),
        "accepted_total": memory.total(),
    }
    return replace(memory, round=memory.round + 1, history=memory.history + (entry,))


@dataclass
class GapReport:
    underrepresented_clusters: list[str] = field(default_factory=list)
    dominant_modes: list[str] = field(default_factory=list)
    cac_deficit: bool = False
    suggested_directives: list[str] = field(default_factory=list)

    def has_gaps(self) -> bool:
        return bool(self.underrepresented_clusters or self.dominant_modes or self.cac_deficit)

    def to_dict(self) -> dict:
        return {
            "underrepresented_clusters": self.underrepresented_clusters,
            "dominant_modes": self.dominant_modes,
            "cac_deficit": self.cac_deficit,
            "suggested_directives": self.suggested_directives,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GapReport":
        return cls(
            underrepresented_clusters=list(d.get("underrepresented_clusters", [])),
            dominant_modes=list(d.get("dominant_modes", [])),
            cac_deficit=d.get("cac_deficit", False),
            suggested_directives=list(d.get("suggested_directives", [])),
        )


def analyze_gaps(
    memory: GlobalMemory,
    space: ToolSpace,
    targets: Optional[GapTargets] = None,
    cluster_ids: Optional[list[str]] = None,
) -> GapReport:
    """Find distributional gaps and render directives to close them.

    Directive priority when gaps co-occur: domain coverage first, then
    dominant modes, then complexity. A gap-free memory still yields one
    exploration directive so steering never stalls.
    """
    if memory.is_empty():
        raise MetricsError("gap analysis needs at least one accepted trajectory in memory")
    targets = targets or GapTargets()
    universe = cluster_ids if cluster_ids is not None else [c.cluster_id for c in space.clusters]
    if not universe:
        raise TrajforgeError("no clusters to analyze")

    report = GapReport()
    total = sum(memory.cluster_counts.get(c, 0) for c in universe)
    if total > 0:
        floor = 1.0 / (targets.kappa * len(universe))
        lagging = [
            (memory.cluster_counts.get(c, 0) / total, c)
            for c in universe
            if memory.cluster_counts.get(c, 0) / total < floor
        ]
        report.underrepresented_clusters = [c for _, c in sorted(lagging)]

    mode_total = sum(memory.mode_counts.values())
    if mode_total > 0:
        report.dominant_modes = sorted(
            m for m, n in memory.mode_counts.items() if n / mode_total > targets.mode_ceiling
        )

    mean_cac = memory.cac_mean()
    report.cac_deficit = mean_cac is not None and mean_cac < targets.cac_target

    directives: list[str] = []
    for cid in report.underrepresented_clusters:
        directives.append(
            f"Coverage target: build a scenario around cluster '{cid}'; the corpus under-represents it."
        )
    for mode in report.dominant_modes:
        directives.append(
            f"Target: avoid '{mode}'; steer the scenario toward a different or novel reasoning pattern."
        )
    if report.cac_deficit:
        directives.append(
            "Complexity target: raise action complexity with a longer plan whose later arguments "
            "depend on earlier results; bring in the code tool where computation helps."
        )
    if not directives:
        directives.append(DEFAULT_EXPLORATION_DIRECTIVE)
    report.suggested_directives = directives
    return report


def next_profiles(report: GapReport, k: int) -> list[StrategyProfile]:
    """k strategy profiles cycling round-robin over the directives."""
    if k <= 0:
        raise ValueError("k must be positive")
    directives = report.suggested_directives or [DEFAULT_EXPLORATION_DIRECTIVE]
    return [
        StrategyProfile(directives=[directives[i % len(directives)]], origin=ORIGIN_MEMORY_GAP)
        for i in range(k)
    ]
