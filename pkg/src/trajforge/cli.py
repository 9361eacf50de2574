"""Command-line entry point.

Every pipeline stage is a subcommand operating on the previous stage's
serialized artifact, so a full run and a chain of stage invocations
produce the same training data.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .coverage import SelectionResult
from .errors import TrajforgeError
from .jsonutil import pretty_dumps, read_jsonl
from .memory import GapTargets, GlobalMemory, analyze_gaps, next_profiles
from .pipeline import (
    REJECTED_FILE,
    REPORT_FILE,
    SELECTION_FILE,
    SPACE_FILE,
    TRAJECTORIES_FILE,
    PipelineConfig,
    Synthesizer,
    diff_files,
    run_pipeline,
    score_corpus,
    stage_cluster,
    stage_ingest,
    stage_sample,
)
from .tool_space import ClusterConfig, ToolSpace
from .trajectory import Trajectory

logger = logging.getLogger(__name__)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(pretty_dumps(obj))
        fh.write("\n")


def _load_space(path, producer: str, require_clustered: bool = False) -> ToolSpace:
    try:
        space = ToolSpace.load(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise TrajforgeError(
            f"{path} is not a tool-space artifact (expected output of the `{producer}` stage): {exc}"
        ) from exc
    if require_clustered and not space.clustered:
        raise TrajforgeError(
            f"{path} holds an unclustered tool space; run the `cluster` stage first"
        )
    return space


def _load_selection(path) -> SelectionResult:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return SelectionResult.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise TrajforgeError(
            f"{path} is not a selection artifact (expected output of the `sample` stage): {exc}"
        ) from exc


def cmd_ingest(args) -> int:
    space, report = stage_ingest(args.tools)
    space.save(args.out)
    print(pretty_dumps(report))
    return 0 if not report["errors"] or args.lenient else 1


def cmd_cluster(args) -> int:
    space = _load_space(args.space, "ingest")
    cfg = ClusterConfig(
        n_dom=args.n_dom, n_cls=args.n_cls, kmeans_max_iters=args.max_iters, seed=args.seed
    )
    clustered = stage_cluster(space, cfg, args.dim)
    clustered.save(args.out)
    print(f"clustered {len(clustered.tools)} tools into {cfg.n_dom} domains x {cfg.n_cls} classes")
    return 0


def cmd_sample(args) -> int:
    space = _load_space(args.space, "cluster", require_clustered=True)
    space, selection = stage_sample(space, args.budget, args.prune)
    _write_json(args.out, selection.to_dict())
    if args.out_space:
        space.save(args.out_space)
    print(
        f"selected {len(selection.selected)} clusters covering "
        f"{len(selection.covered_classes)} functional classes"
    )
    return 0


def cmd_synthesize(args) -> int:
    config = PipelineConfig.load(args.config)
    if args.out_dir:
        config.output_dir = args.out_dir
    space = _load_space(
        args.space if args.space else Path(config.output_dir) / SPACE_FILE,
        "cluster",
        require_clustered=True,
    )
    sel_path = args.selection if args.selection else Path(config.output_dir) / SELECTION_FILE
    selection = _load_selection(sel_path)
    info = Synthesizer(config, space, selection).synthesize(Path(config.output_dir))
    info.pop("accepted_trajectories", None)
    print(pretty_dumps(info))
    return 0


def cmd_score(args) -> int:
    space = _load_space(args.space, "cluster", require_clustered=True)
    report = score_corpus(args.trajectories, space)
    if args.out:
        _write_json(args.out, report)
    else:
        print(pretty_dumps(report))
    if args.explain:
        from .quality import run_lints

        for rec in read_jsonl(args.trajectories):
            traj = Trajectory.from_dict(rec)
            violations = run_lints(traj)
            status = "clean" if not violations else f"{len(violations)} violation(s)"
            print(f"{traj.trajectory_id}: {status}")
            for v in violations:
                print(f"  {v}")
    return 0


def cmd_evolve(args) -> int:
    mem = GlobalMemory.load(args.memory)
    space = _load_space(args.space, "cluster", require_clustered=True)
    targets = GapTargets(
        kappa=args.kappa, mode_ceiling=args.mode_ceiling, cac_target=args.cac_target
    )
    cluster_ids = None
    if args.selection:
        with open(args.selection, "r", encoding="utf-8") as fh:
            cluster_ids = list(json.load(fh)["selected"])
    report = analyze_gaps(mem, space, targets, cluster_ids=cluster_ids)
    profiles = next_profiles(report, args.count)
    out = {
        "gap_report": report.to_dict(),
        "profiles": [p.to_dict() for p in profiles],
    }
    if args.out:
        _write_json(args.out, out)
    else:
        print(pretty_dumps(out))
    return 0


def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    matrix = report.get("cooccurrence", [])
    with open(out_dir / "cooccurrence.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain"] + [str(i) for i in range(len(matrix))])
        for i, row in enumerate(matrix):
            writer.writerow([str(i)] + [str(v) for v in row])

    hist = report.get("cac", {}).get("histogram", {"edges": [], "counts": []})
    with open(out_dir / "cac_histogram.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["edge_low", "edge_high", "count"])
        for i, count in enumerate(hist["counts"]):
            writer.writerow([hist["edges"][i], hist["edges"][i + 1], count])

    with open(out_dir / "mode_counts.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "count"])
        for mode in sorted(report.get("mode_counts", {})):
            writer.writerow([mode, report["mode_counts"][mode]])

    print(f"wrote cooccurrence.csv, cac_histogram.csv, mode_counts.csv to {out_dir}")
    return 0


def cmd_run(args) -> int:
    config = PipelineConfig.load(args.config)
    report = run_pipeline(config)
    print(
        f"accepted {report['accepted']} / attempted {report['attempted']} trajectories; "
        f"report at {Path(config.output_dir) / REPORT_FILE}"
    )
    return 0


def cmd_replay_verify(args) -> int:
    config = PipelineConfig.load(args.config)
    reference_dir = Path(config.output_dir)
    if config.backend.get("mode") != "replay":
        if "cassette" not in config.backend:
            print("replay-verify needs a cassette in the backend config", file=sys.stderr)
            return 1
        config.backend["mode"] = "replay"
    verify_dir = Path(args.out_dir) if args.out_dir else reference_dir.with_name(
        reference_dir.name + "_verify"
    )
    config.output_dir = str(verify_dir)
    run_pipeline(config)
    for fname in (TRAJECTORIES_FILE, REJECTED_FILE, REPORT_FILE):
        divergence = diff_files(reference_dir / fname, verify_dir / fname)
        if divergence is not None:
            print(f"DIVERGED in {fname}: {divergence}")
            return 2
    print("replay verified: outputs identical")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajforge",
        description="Synthesize diverse multi-turn tool-use trajectories for agent training.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse tool definitions into a tool space")
    p.add_argument("--tools", required=True, help="JSON array or JSONL of {server, tools}")
    p.add_argument("--out", required=True)
    p.add_argument("--lenient", action="store_true", help="exit 0 even with entry errors")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster", help="assign domains and functional classes")
    p.add_argument("--space", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-dom", type=int, default=10)
    p.add_argument("--n-cls", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=32, help="hash-embedding dimensionality")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("sample", help="greedy maximum-coverage cluster selection")
    p.add_argument("--space", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--prune", action="store_true", help="prune redundant tools in selected clusters")
    p.add_argument("--out", required=True, help="selection JSON output")
    p.add_argument("--out-space", help="write the (possibly pruned) space here")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synthesize", help="run synthesis rounds against a selection")
    p.add_argument("--config", required=True)
    p.add_argument("--space")
    p.add_argument("--selection")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("score", help="diversity report for a trajectory corpus")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--space", required=True)
    p.add_argument("--out")
    p.add_argument("--explain", action="store_true", help="print lint violations per trajectory")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evolve", help="gap analysis and next-round strategy profiles")
    p.add_argument("--memory", required=True)
    p.add_argument("--space", required=True)
    p.add_argument("--selection")
    p.add_argument("-k", "--count", type=int, default=4)
    p.add_argument("--kappa", type=float, default=4.0)
    p.add_argument("--mode-ceiling", type=float, default=0.5)
    p.add_argument("--cac-target", type=float, default=15.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("report", help="export report matrices as CSV")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay-verify", help="re-run against the cassette and diff outputs")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TrajforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
