"""Tool-definition ingestion and two-level organization.

Tools arrive grouped by origin server; each server becomes one business
cluster. Clustering then assigns every tool a broad domain id (level 1,
over all tools) and a fine functional-class id (level 2, within its
domain), from which each cluster's functional-class set is derived. The
class set is the unit of the coverage objective downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .clustering import spherical_kmeans
from .embeddings import EmbeddingProvider
from .errors import ClusteringError, EmbeddingError, IngestError

UNASSIGNED = -1


@dataclass
class ToolDef:
    """One callable tool interface as exposed by an MCP-style server."""

    tool_id: str
    name: str
    description: str
    param_schema: dict
    origin_server: str
    domain_id: int = UNASSIGNED
    class_id: int = UNASSIGNED

    def params(self) -> list[dict]:
        """Parameter records (name, type, required, description), sorted by
        name so derived texts survive serialization round-trips."""
        props = self.param_schema.get("properties", {})
        required = set(self.param_schema.get("required", []))
        out = []
        for pname in sorted(props):
            spec = props[pname]
            spec = spec if isinstance(spec, dict) else {}
            out.append(
                {
                    "name": pname,
                    "type": spec.get("type", "string"),
                    "required": pname in required,
                    "description": spec.get("description", ""),
                }
            )
        return out

    def to_dict(self) -> dict:
        return {
            "tool_id": self.tool_id,
            "name": self.name,
            "description": self.description,
            "param_schema": self.param_schema,
            "origin_server": self.origin_server,
            "domain_id": self.domain_id,
            "class_id": self.class_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolDef":
        return cls(
            tool_id=d["tool_id"],
            name=d["name"],
            description=d.get("description", ""),
            param_schema=d.get("param_schema", {"type": "object", "properties": {}}),
            origin_server=d["origin_server"],
            domain_id=d.get("domain_id", UNASSIGNED),
            class_id=d.get("class_id", UNASSIGNED),
        )


@dataclass
class BusinessCluster:
    """All tools of one server, treated as a coherent unit."""

    cluster_id: str
    server_id: str
    tools: list[ToolDef]
    functional_classes: set[int] = field(default_factory=set)

    def recompute_classes(self) -> None:
        self.functional_classes = {
            t.class_id for t in self.tools if t.class_id != UNASSIGNED
        }

    def tool_by_name(self, name: str) -> Optional[ToolDef]:
        for t in self.tools:
            if t.name == name:
                return t
        return None

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "server_id": self.server_id,
            "tools": [t.to_dict() for t in self.tools],
            "functional_classes": sorted(self.functional_classes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BusinessCluster":
        c = cls(
            cluster_id=d["cluster_id"],
            server_id=d["server_id"],
            tools=[ToolDef.from_dict(t) for t in d["tools"]],
        )
        c.functional_classes = set(d.get("functional_classes", []))
        return c


@dataclass
class ClusterConfig:
    n_dom: int = 10
    n_cls: int = 5
    kmeans_max_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_dom < 1 or self.n_cls < 1:
            raise ValueError("n_dom and n_cls must be >= 1")
        if self.kmeans_max_iters < 1:
            raise ValueError("kmeans_max_iters must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_dom": self.n_dom,
            "n_cls": self.n_cls,
            "kmeans_max_iters": self.kmeans_max_iters,
            "seed": self.seed,
        }


@dataclass
class IngestIssue:
    location: str  # "line 12" or "entry 3"
    message: str

    def to_dict(self) -> dict:
        return {"location": self.location, "message": self.message}


@dataclass
class IngestReport:
    tool_count: int = 0
    cluster_count: int = 0
    errors: list[IngestIssue] = field(default_factory=list)
    warnings: list[IngestIssue] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tool_count": self.tool_count,
            "cluster_count": self.cluster_count,
            "errors": [e.to_dict() for e in self.errors],
            "warnings": [w.to_dict() for w in self.warnings],
        }


class ToolSpace:
    """Immutable-after-clustering registry of clusters and tools."""

    def __init__(self, clusters: list[BusinessCluster], cluster_config: Optional[ClusterConfig] = None):
        self.clusters = clusters
        self.cluster_config = cluster_config
        self._by_cluster = {c.cluster_id: c for c in clusters}
        self._by_tool_id = {}
        for c in clusters:
            for t in c.tools:
                if t.tool_id in self._by_tool_id:
                    raise IngestError(f"duplicate tool_id across space: {t.tool_id}")
                self._by_tool_id[t.tool_id] = t

    @property
    def tools(self) -> list[ToolDef]:
        return [t for c in self.clusters for t in c.tools]

    @property
    def clustered(self) -> bool:
        return bool(self.tools) and all(t.domain_id != UNASSIGNED for t in self.tools)

    @property
    def n_domains(self) -> int:
        """Number of distinct domain slots (configured count once clustered)."""
        if self.cluster_config is not None:
            return self.cluster_config.n_dom
        ids = [t.domain_id for t in self.tools if t.domain_id != UNASSIGNED]
        return max(ids) + 1 if ids else 0

    def cluster_by_id(self, cluster_id: str) -> BusinessCluster:
        return self._by_cluster[cluster_id]

    def tool_by_id(self, tool_id: str) -> ToolDef:
        return self._by_tool_id[tool_id]

    def domain_of(self, tool: ToolDef) -> int:
        """The tool-to-domain mapping; pure once the space is clustered."""
        if tool.domain_id == UNASSIGNED:
            raise ClusteringError(f"tool {tool.tool_id} has no domain assignment")
        return tool.domain_id

    def cluster_of_tool(self, tool_id: str) -> BusinessCluster:
        tool = self._by_tool_id[tool_id]
        return self._by_cluster[tool.origin_server]

    def to_dict(self) -> dict:
        return {
            "clusters": [c.to_dict() for c in self.clusters],
            "cluster_config": self.cluster_config.to_dict() if self.cluster_config else None,
            "clustered": self.clustered,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolSpace":
        cfg = None
        if d.get("cluster_config"):
            cfg = ClusterConfig(**d["cluster_config"])
        return cls([BusinessCluster.from_dict(c) for c in d["clusters"]], cfg)

    def save(self, path) -> None:
        from .jsonutil import pretty_dumps

        with open(path, "w", encoding="utf-8") as fh:
            fh.write(pretty_dumps(self.to_dict()))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ToolSpace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def normalize_param_schema(raw: Any, location: str) -> dict:
    """Accept either a JSON-schema object or a list of parameter records.

    Normalizes to {"type": "object", "properties": {...}, "required": [...]}
    and rejects duplicate parameter names.
    """
    if raw is None:
        return {"type": "object", "properties": {}, "required": []}
    if isinstance(raw, dict):
        props = raw.get("properties", {})
        if not isinstance(props, dict):
            raise IngestError(f"{location}: parameters.properties must be an object")
        required = raw.get("required", [])
        return {"type": "object", "properties": props, "required": list(required)}
    if isinstance(raw, list):
        props: dict = {}
        required = []
        for p in raw:
            if not isinstance(p, dict) or "name" not in p:
                raise IngestError(f"{location}: parameter entries need a name")
            pname = p["name"]
            if pname in props:
                raise IngestError(f"{location}: duplicate parameter name '{pname}'")
            props[pname] = {
                "type": p.get("type", "string"),
                "description": p.get("description", ""),
            }
            if p.get("required", False):
                required.append(pname)
        return {"type": "object", "properties": props, "required": required}
    raise IngestError(f"{location}: unsupported parameters shape {type(raw).__name__}")


def _parse_server_entry(
    entry: Any, location: str, report: IngestReport
) -> Optional[BusinessCluster]:
    if not isinstance(entry, dict) or "server" not in entry:
        report.errors.append(IngestIssue(location, "entry is not a {server, tools} object"))
        return None
    server = str(entry["server"])
    raw_tools = entry.get("tools", [])
    if not raw_tools:
        report.warnings.append(IngestIssue(location, f"server '{server}' has no tools; cluster omitted"))
        return None
    tools: list[ToolDef] = []
    seen_ids: set[str] = set()
    for i, raw in enumerate(raw_tools):
        tool_loc = f"{location}, tool {i}"
        if not isinstance(raw, dict) or not raw.get("name"):
            report.errors.append(IngestIssue(tool_loc, "tool entry missing name"))
            continue
        tool_id = raw.get("tool_id") or f"{server}::{raw['name']}"
        if tool_id in seen_ids:
            report.errors.append(
                IngestIssue(tool_loc, f"duplicate tool_id '{tool_id}' within server '{server}'")
            )
            continue
        try:
            schema = normalize_param_schema(raw.get("parameters"), tool_loc)
        except IngestError as exc:
            report.errors.append(IngestIssue(tool_loc, str(exc)))
            continue
        seen_ids.add(tool_id)
        tools.append(
            ToolDef(
                tool_id=tool_id,
                name=raw["name"],
                description=raw.get("description", ""),
                param_schema=schema,
                origin_server=server,
            )
        )
    if not tools:
        report.warnings.append(
            IngestIssue(location, f"server '{server}' had no usable tools; cluster omitted")
        )
        return None
    return BusinessCluster(cluster_id=server, server_id=server, tools=tools)


def ingest_tools(source: bytes) -> tuple[ToolSpace, IngestReport]:
    """Parse a JSON array or JSONL stream of {server, tools} documents.

    Malformed entries are collected into the report rather than dropped
    silently; an entirely empty or undecodable source is an error.
    """
    text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
    if not text.strip():
        raise IngestError("empty tool-definition source")

    report = IngestReport()
    entries: list[tuple[str, Any]] = []
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            arr = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IngestError(f"source is not valid JSON: {exc}") from exc
        entries = [(f"entry {i}", e) for i, e in enumerate(arr)]
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entries.append((f"line {lineno}", json.loads(line)))
            except json.JSONDecodeError as exc:
                report.errors.append(IngestIssue(f"line {lineno}", f"invalid JSON: {exc.msg} at column {exc.colno}"))

    clusters: list[BusinessCluster] = []
    seen_servers: set[str] = set()
    for location, entry in entries:
        cluster = _parse_server_entry(entry, location, report)
        if cluster is None:
            continue
        if cluster.server_id in seen_servers:
            report.errors.append(
                IngestIssue(location, f"server '{cluster.server_id}' appears more than once")
            )
            continue
        seen_servers.add(cluster.server_id)
        clusters.append(cluster)

    if not clusters and not report.errors:
        raise IngestError("no server entries found in source")
    space = ToolSpace(clusters)
    report.tool_count = len(space.tools)
    report.cluster_count = len(clusters)
    return space, report


def build_feature_text(tool: ToolDef) -> str:
    """Composite text describing a tool's interface, used for embedding.

    Deterministic concatenation of the name, the description, and each
    parameter's name/description; identical tools yield identical text.
    """
    parts = [tool.name]
    if tool.description:
        parts.append(tool.description)
    for p in tool.params():
        if p["description"]:
            parts.append(f"{p['name']}: {p['description']}")
        else:
            parts.append(p["name"])
    return "\n".join(parts)


def cluster_two_level(
    space: ToolSpace, cfg: ClusterConfig, emb: EmbeddingProvider
) -> ToolSpace:
    """Assign every tool a (domain_id, class_id) pair.

    Level 1 groups all tools into up to cfg.n_dom latent domains; level 2
    splits each domain into up to cfg.n_cls functional classes. Global
    class ids are domain_id * n_cls + local class, so they stay within
    [0, n_dom * n_cls). Fully deterministic for a given seed.
    """
    tools = space.tools
    if len(tools) < cfg.n_dom:
        raise ClusteringError(
            f"{len(tools)} tools cannot fill {cfg.n_dom} domains; lower n_dom to at most {len(tools)}"
        )

    vectors = []
    for tool in tools:
        try:
            vec = emb.embed(build_feature_text(tool))
        except Exception as exc:
            raise EmbeddingError(f"embedding failed for tool {tool.tool_id}: {exc}") from exc
        if len(vec) != emb.dimensionality:
            raise EmbeddingError(
                f"embedding for tool {tool.tool_id} has dimension {len(vec)}, expected {emb.dimensionality}"
            )
        vectors.append(vec)
    points = np.asarray(vectors, dtype=np.float64)

    domain_labels = spherical_kmeans(points, cfg.n_dom, seed=cfg.seed, max_iters=cfg.kmeans_max_iters)

    new_clusters = [
        BusinessCluster(c.cluster_id, c.server_id, [ToolDef(**t.to_dict()) for t in c.tools])
        for c in space.clusters
    ]
    flat = [t for c in new_clusters for t in c.tools]
    for tool, dom in zip(flat, domain_labels):
        tool.domain_id = int(dom)

    for dom in sorted(set(int(d) for d in domain_labels)):
        idxs = [i for i, d in enumerate(domain_labels) if int(d) == dom]
        member_points = points[idxs]
        k = min(cfg.n_cls, len(idxs))
        # per-domain seed keeps level-2 runs independent but reproducible
        local = spherical_kmeans(
            member_points, k, seed=cfg.seed * 7919 + dom + 1, max_iters=cfg.kmeans_max_iters
        )
        for i, lab in zip(idxs, local):
            flat[i].class_id = dom * cfg.n_cls + int(lab)

    for cluster in new_clusters:
        cluster.recompute_classes()
    return ToolSpace(new_clusters, cluster_config=cfg)
