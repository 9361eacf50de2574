"""Budgeted maximum-coverage selection over business clusters.

Greedy selection picks the cluster with the largest marginal gain in
newly covered functional classes at every step. Ties go to the cluster
with the larger overlap with classes already covered (it shares more
internal logic with the selection so far), then to the lexicographically
smaller cluster id. Clusters that add nothing are never selected, even
with budget to spare.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import SamplerError
from .tool_space import BusinessCluster, ToolDef, ToolSpace, build_feature_text


@dataclass
class SamplerConfig:
    budget_max: int
    prune_redundant: bool = False

    def __post_init__(self):
        if self.budget_max < 1:
            raise ValueError("budget_max must be >= 1")


@dataclass
class SelectionResult:
    selected: list[str] = field(default_factory=list)
    covered_classes: set[int] = field(default_factory=set)
    per_step_gain: list[tuple[str, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "covered_classes": sorted(self.covered_classes),
            "per_step_gain": [{"cluster_id": c, "gain": g} for c, g in self.per_step_gain],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls(
            selected=list(d["selected"]),
            covered_classes=set(d["covered_classes"]),
            per_step_gain=[(e["cluster_id"], e["gain"]) for e in d["per_step_gain"]],
        )


def greedy_select(space: ToolSpace, cfg: SamplerConfig) -> SelectionResult:
    """Select up to budget_max clusters maximizing functional-class coverage."""
    if not space.clustered:
        raise SamplerError("tool space must be clustered before sampling")

    remaining = {c.cluster_id: set(c.functional_classes) for c in space.clusters}
    result = SelectionResult()
    covered: set[int] = set()

    while len(result.selected) < cfg.budget_max and remaining:
        best_id = None
        best_key = None
        for cid, classes in remaining.items():
            gain = len(classes - covered)
            overlap = len(classes & covered)
            # maximize gain, then overlap; break remaining ties on the smaller id
            key = (gain, overlap)
            if best_key is None or key > best_key or (key == best_key and cid < best_id):
                best_key = key
                best_id = cid
        if best_key is None or best_key[0] == 0:
            break
        classes = remaining.pop(best_id)
        covered |= classes
        result.selected.append(best_id)
        result.per_step_gain.append((best_id, best_key[0]))

    result.covered_classes = covered
    return result


def prune_cluster(cluster: BusinessCluster) -> BusinessCluster:
    """Drop redundant tools: one representative per functional class.

    The survivor of each class is the tool with the longest feature text
    (the richest interface); ties keep the smaller tool_id. The pruned
    cluster covers exactly the classes the original did.
    """
    if not cluster.tools:
        raise SamplerError(f"cluster {cluster.cluster_id} has no tools")

    best_per_class: dict[int, ToolDef] = {}
    for tool in cluster.tools:
        cur = best_per_class.get(tool.class_id)
        if cur is None:
            best_per_class[tool.class_id] = tool
            continue
        cand_key = (len(build_feature_text(tool)), )
        cur_key = (len(build_feature_text(cur)), )
        if cand_key > cur_key or (cand_key == cur_key and tool.tool_id < cur.tool_id):
            best_per_class[tool.class_id] = tool

    keep_ids = {t.tool_id for t in best_per_class.values()}
    pruned = BusinessCluster(
        cluster_id=cluster.cluster_id,
        server_id=cluster.server_id,
        tools=[t for t in cluster.tools if t.tool_id in keep_ids],
    )
    pruned.recompute_classes()
    return pruned
