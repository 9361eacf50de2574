"""End-to-end orchestration: ingest, cluster, sample, synthesize, score.

Each stage is independently runnable on the previous stage's serialized
artifact; `run_pipeline` composes them. Determinism contract: with a
replay cassette (or the scripted teacher) and a fixed seed, two runs
produce byte-identical trajectories.jsonl and report.json. That falls
out of three rules: every model reply is keyed on request content, all
memory folds happen in trajectory-id order at round boundaries, and all
output records are sorted by trajectory id before the final write.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import memory as memory_mod
from .backend import ChatBackend, LiveBackend, RecordingBackend, ReplayBackend, RoleRouter, TokenBucket
from .blueprint import ORIGIN_SEED, StrategyProfile, generate_blueprint
from .code_tool import CodeToolClient
from .coverage import SamplerConfig, SelectionResult, greedy_select, prune_cluster
from .dialogue import EpisodeConfig, EpisodeRunner
from .embeddings import HashEmbedding
from .errors import ConfigError, TrajectoryError
from .jsonutil import pretty_dumps, read_jsonl, write_jsonl
from .memory import GapTargets, GlobalMemory
from .metrics import MetricConfig, compute_report, primary_cluster, trajectory_cac
from .quality import QualityConfig, judge, rule_based_verdict, run_lints
from .scripted import ScriptedTeacher, scripted_stub_executor
from .tool_space import ClusterConfig, ToolSpace, ingest_tools
from .trajectory import STATUS_COMPLETE, STATUS_ERROR, Trajectory

logger = logging.getLogger(__name__)

DEFAULT_SEED_DIRECTIVES = [
    "Explore: design a multi-part scenario that exercises several tools in sequence.",
    "Target: include a verification exchange where the user challenges an unsupported claim.",
    "Complexity target: raise action complexity with a longer plan whose later arguments "
    "depend on earlier results; bring in the code tool where computation helps.",
]

TRAJECTORIES_FILE = "trajectories.jsonl"
REJECTED_FILE = "rejected.jsonl"
REPORT_FILE = "report.json"
SPACE_FILE = "tool_space.json"
SELECTION_FILE = "selection.json"


@dataclass
class PipelineConfig:
    tool_source: str
    output_dir: str
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    sampler_budget: int = 4
    prune_redundant: bool = False
    metric: MetricConfig = field(default_factory=MetricConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    judge_mode: str = "model"  # model | rules
    gap_targets: GapTargets = field(default_factory=GapTargets)
    backend: dict = field(default_factory=lambda: {"mode": "scripted"})
    code_tool: dict = field(default_factory=lambda: {"mode": "stub"})
    embedding_dim: int = 32
    rounds: int = 1
    trajectories_per_round: int = 3
    concurrency: int = 1
    seed: int = 0
    seed_directives: list[str] = field(default_factory=lambda: list(DEFAULT_SEED_DIRECTIVES))

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "PipelineConfig":
        def resolve(p):
            p = Path(p)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return str(p)

        try:
            cfg = cls(
                tool_source=resolve(d["tool_source"]),
                output_dir=resolve(d["output_dir"]),
                cluster=ClusterConfig(**d.get("cluster", {})),
                sampler_budget=d.get("sampler_budget", 4),
                prune_redundant=d.get("prune_redundant", False),
                metric=MetricConfig(**d.get("metric", {})),
                quality=QualityConfig(**d.get("quality", {})),
                judge_mode=d.get("judge_mode", "model"),
                gap_targets=GapTargets(**d.get("gap_targets", {})),
                backend=dict(d.get("backend", {"mode": "scripted"})),
                code_tool=dict(d.get("code_tool", {"mode": "stub"})),
                embedding_dim=d.get("embedding_dim", 32),
                rounds=d.get("rounds", 1),
                trajectories_per_round=d.get("trajectories_per_round", 3),
                concurrency=d.get("concurrency", 1),
                seed=d.get("seed", 0),
                seed_directives=list(d.get("seed_directives", DEFAULT_SEED_DIRECTIVES)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid pipeline config: {exc}") from exc
        if "cassette" in cfg.backend:
            cfg.backend["cassette"] = resolve(cfg.backend["cassette"])
        if cfg.rounds < 1 or cfg.trajectories_per_round < 1 or cfg.concurrency < 1:
            raise ConfigError("rounds, trajectories_per_round and concurrency must be >= 1")
        if cfg.judge_mode not in ("model", "rules"):
            raise ConfigError(f"unknown judge_mode {cfg.judge_mode!r}")
        if not Path(cfg.tool_source).exists():
            raise ConfigError(f"tool_source path does not exist: {cfg.tool_source}")
        if cfg.backend.get("mode") == "replay" and not Path(cfg.backend.get("cassette", "")).exists():
            raise ConfigError(
                f"replay cassette does not exist: {cfg.backend.get('cassette')}"
            )
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)


def build_backend(cfg: dict, seed: int = 0) -> ChatBackend:
    mode = cfg.get("mode", "scripted")
    if mode == "scripted":
        return ScriptedTeacher(seed=cfg.get("seed", seed))
    if mode == "replay":
        if "cassette" not in cfg:
            raise ConfigError("replay backend needs a cassette path")
        return ReplayBackend(cfg["cassette"])
    if mode == "record":
        inner = build_backend({**cfg, "mode": cfg.get("inner", "scripted")}, seed)
        if "cassette" not in cfg:
            raise ConfigError("record backend needs a cassette path")
        return RecordingBackend(inner, cfg["cassette"])
    if mode == "live":
        limiter = None
        if cfg.get("rate_limit_per_s"):
            limiter = TokenBucket(float(cfg["rate_limit_per_s"]))
        models = cfg.get("models", {})
        default_model = cfg.get("model", models.get("default", ""))

        def make(model: str) -> LiveBackend:
            return LiveBackend(
                endpoint=cfg["endpoint"],
                api_key_env=cfg.get("api_key_env"),
                model=model,
                timeout_s=cfg.get("timeout_s", 60.0),
                retry_cap=cfg.get("retry_cap", 3),
                backoff_base_s=cfg.get("backoff_base_s", 0.5),
                rate_limiter=limiter,
            )

        per_role = {role: make(m) for role, m in models.items() if role != "default"}
        return RoleRouter(make(default_model), per_role)
    raise ConfigError(f"unknown backend mode {mode!r}")


def build_code_client(cfg: dict) -> CodeToolClient:
    if cfg.get("mode", "stub") == "stub":
        return CodeToolClient(stub=scripted_stub_executor())
    return CodeToolClient.from_config(cfg)


# ---- individual stages ---------------------------------------------------


def stage_ingest(source_path: str) -> tuple[ToolSpace, dict]:
    with open(source_path, "rb") as fh:
        space, report = ingest_tools(fh.read())
    return space, report.to_dict()


def stage_cluster(space: ToolSpace, cfg: ClusterConfig, embedding_dim: int) -> ToolSpace:
    from .tool_space import cluster_two_level

    return cluster_two_level(space, cfg, HashEmbedding(embedding_dim))


def stage_sample(space: ToolSpace, budget: int, prune: bool) -> tuple[ToolSpace, SelectionResult]:
    selection = greedy_select(space, SamplerConfig(budget_max=budget, prune_redundant=prune))
    if prune:
        clusters = []
        for c in space.clusters:
            clusters.append(prune_cluster(c) if c.cluster_id in selection.selected else c)
        space = ToolSpace(clusters, cluster_config=space.cluster_config)
    return space, selection


@dataclass
class _SlotResult:
    trajectory: Trajectory
    accepted: bool


class Synthesizer:
    """Runs the blueprint -> episode -> quality -> memory loop."""

    def __init__(self, config: PipelineConfig, space: ToolSpace, selection: SelectionResult):
        if not selection.selected:
            raise ConfigError("selection is empty; nothing to synthesize against")
        self.config = config
        self.space = space
        self.selection = selection
        self.backend = build_backend(config.backend, config.seed)
        self.code_client = build_code_client(config.code_tool)
        self.runner = EpisodeRunner(self.backend, self.code_client, EpisodeConfig())

    def _profiles_for_round(self, mem: GlobalMemory, count: int) -> list[StrategyProfile]:
        if mem.is_empty():
            directives = self.config.seed_directives or DEFAULT_SEED_DIRECTIVES
            return [
                StrategyProfile(directives=[directives[i % len(directives)]], origin=ORIGIN_SEED)
                for i in range(count)
            ]
        report = memory_mod.analyze_gaps(
            mem, self.space, self.config.gap_targets, cluster_ids=list(self.selection.selected)
        )
        return memory_mod.next_profiles(report, count)

    def _judge(self, traj: Trajectory):
        lints = run_lints(traj)
        if self.config.judge_mode == "rules":
            return rule_based_verdict(traj, lints)
        return judge(traj, self.backend, self.config.quality, lints)

    def _attach_metrics(self, traj: Trajectory) -> None:
        pc = primary_cluster(traj, self.space)
        metrics: dict = {
            "primary_cluster": pc,
            "mode_label": (traj.quality or {}).get("mode_label"),
            "param_deps": (traj.quality or {}).get("param_deps"),
        }
        try:
            metrics["cac"] = trajectory_cac(traj, self.space, self.config.metric)
        except Exception as exc:  # deps missing on rejected verdicts
            logger.debug("CAC not computable for %s: %s", traj.trajectory_id, exc)
            metrics["cac"] = None
        traj.metrics = metrics

    def _run_slot(self, round_idx: int, slot: int, profile: StrategyProfile) -> _SlotResult:
        cluster_id = self.selection.selected[slot % len(self.selection.selected)]
        cluster = self.space.cluster_by_id(cluster_id)
        tid = f"r{round_idx:02d}-t{slot:03d}"
        try:
            bp = generate_blueprint(cluster, profile, self.backend)
            traj = self.runner.run_episode(bp, cluster, trajectory_id=tid)
        except TrajectoryError as exc:
            logger.warning("slot %s failed before an episode finished: %s", tid, exc)
            traj = Trajectory(
                trajectory_id=tid,
                cluster_id=cluster_id,
                status=STATUS_ERROR,
                abort_reason=str(exc),
            )
            return _SlotResult(traj, accepted=False)
        except Exception as exc:  # never let one trajectory take down the run
            logger.exception("slot %s crashed", tid)
            traj = Trajectory(
                trajectory_id=tid,
                cluster_id=cluster_id,
                status=STATUS_ERROR,
                abort_reason=f"internal error: {exc}",
            )
            return _SlotResult(traj, accepted=False)
        if traj.status != STATUS_COMPLETE:
            return _SlotResult(traj, accepted=False)
        verdict = self._judge(traj)
        traj.quality = verdict.to_dict()
        self._attach_metrics(traj)
        return _SlotResult(traj, accepted=verdict.suitable_for_training)

    def synthesize(self, out_dir: Path) -> dict:
        """All rounds; returns counting/report info. Slots already present
        in the output files are reused, which makes interrupted runs
        resumable without re-spending model calls."""
        out_dir.mkdir(parents=True, exist_ok=True)
        existing: dict[str, tuple[dict, bool]] = {}
        for fname, flag in ((TRAJECTORIES_FILE, True), (REJECTED_FILE, False)):
            fpath = out_dir / fname
            if fpath.exists():
                for rec in read_jsonl(fpath):
                    existing[rec["trajectory_id"]] = (rec, flag)

        mem = GlobalMemory()
        accepted: list[Trajectory] = []
        rejected: list[Trajectory] = []
        round_stats = []
        for rnd in range(self.config.rounds):
            profiles = self._profiles_for_round(mem, self.config.trajectories_per_round)
            results: list[_SlotResult] = []

            def run_slot(slot: int) -> _SlotResult:
                tid = f"r{rnd:02d}-t{slot:03d}"
                if tid in existing:
                    rec, was_accepted = existing[tid]
                    return _SlotResult(Trajectory.from_dict(rec), was_accepted)
                return self._run_slot(rnd, slot, profiles[slot % len(profiles)])

            if self.config.concurrency > 1:
                with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
                    results = list(pool.map(run_slot, range(self.config.trajectories_per_round)))
            else:
                results = [run_slot(s) for s in range(self.config.trajectories_per_round)]

            results.sort(key=lambda r: r.trajectory.trajectory_id)
            round_accepted = 0
            for res in results:
                if res.accepted:
                    accepted.append(res.trajectory)
                    round_accepted += 1
                    verdict_dict = res.trajectory.quality or {}
                    mem = memory_mod.update(
                        mem,
                        res.trajectory,
                        _verdict_view(verdict_dict),
                    )
                else:
                    rejected.append(res.trajectory)
            mem = memory_mod.finalize_round(mem)
            mem.save(out_dir / f"memory_round_{rnd}.json")
            round_stats.append(
                {
                    "round": rnd,
                    "accepted": round_accepted,
                    "rejected": len(results) - round_accepted,
                }
            )

        accepted.sort(key=lambda t: t.trajectory_id)
        rejected.sort(key=lambda t: t.trajectory_id)
        write_jsonl(out_dir / TRAJECTORIES_FILE, (t.to_dict() for t in accepted))
        write_jsonl(out_dir / REJECTED_FILE, (t.to_dict() for t in rejected))
        history = [dict(h, **round_stats[i]) for i, h in enumerate(mem.history)]
        return {
            "accepted": len(accepted),
            "rejected": len(rejected),
            "attempted": len(accepted) + len(rejected),
            "rounds": history,
            "accepted_trajectories": accepted,
        }


def _verdict_view(verdict_dict: dict):
    from .quality import QualityVerdict

    return QualityVerdict(
        scores=verdict_dict.get("scores", {}),
        suitable_for_training=verdict_dict.get("suitable_for_training", False),
        mode_label=verdict_dict.get("mode_label", "Unrated"),
        param_deps=verdict_dict.get("param_deps", []),
        rejection_reasons=verdict_dict.get("rejection_reasons", []),
    )


def run_pipeline(config: PipelineConfig) -> dict:
    """Full run: ingest -> cluster -> sample -> synthesis rounds -> report.

    Per-trajectory failures are recorded and counted, never fatal; config
    and input errors raise immediately.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    space, ingest_report = stage_ingest(config.tool_source)
    space = stage_cluster(space, config.cluster, config.embedding_dim)
    space, selection = stage_sample(space, config.sampler_budget, config.prune_redundant)
    space.save(out_dir / SPACE_FILE)
    with open(out_dir / SELECTION_FILE, "w", encoding="utf-8") as fh:
        fh.write(pretty_dumps(selection.to_dict()))
        fh.write("\n")

    synth = Synthesizer(config, space, selection)
    synth_info = synth.synthesize(out_dir)

    corpus = synth_info.pop("accepted_trajectories")
    report = compute_report(corpus, space, config.metric)
    report["ingest"] = ingest_report
    report["selection"] = selection.to_dict()
    report.update(
        accepted=synth_info["accepted"],
        rejected=synth_info["rejected"],
        attempted=synth_info["attempted"],
        rounds=synth_info["rounds"],
    )
    with open(out_dir / REPORT_FILE, "w", encoding="utf-8") as fh:
        fh.write(pretty_dumps(report))
        fh.write("\n")
    return report


def score_corpus(
    trajectories_path, space: ToolSpace, cfg: Optional[MetricConfig] = None
) -> dict:
    """The standalone `score` stage over a trajectory JSONL file.

    Trajectories lacking dependency levels get the rule-based fallback
    so CAC is computable on hand-written corpora.
    """
    from .quality import assign_param_deps_by_rules

    corpus = [Trajectory.from_dict(rec) for rec in read_jsonl(trajectories_path)]
    for traj in corpus:
        if traj.param_deps() is None:
            metrics = dict(traj.metrics or {})
            metrics["param_deps"] = assign_param_deps_by_rules(traj)
            traj.metrics = metrics
    return compute_report(corpus, space, cfg)


def diff_files(path_a, path_b) -> Optional[str]:
    """First divergence between two files, or None when identical."""
    a = Path(path_a).read_bytes() if Path(path_a).exists() else None
    b = Path(path_b).read_bytes() if Path(path_b).exists() else None
    if a is None or b is None:
        if a is b:
            return None
        missing = path_a if a is None else path_b
        return f"{missing}: file missing"
    if a == b:
        return None
    a_lines = a.split(b"\n")
    b_lines = b.split(b"\n")
    for i, (la, lb) in enumerate(zip(a_lines, b_lines), start=1):
        if la != lb:
            col = next(
                (j for j, (ca, cb) in enumerate(zip(la, lb)) if ca != cb),
                min(len(la), len(lb)),
            )
            lo = max(0, col - 30)
            return (
                f"line {i}, byte {col}: "
                f"{la[lo:col + 50]!r} != {lb[lo:col + 50]!r}"
            )
    return f"line {min(len(a_lines), len(b_lines)) + 1}: files differ in length"
