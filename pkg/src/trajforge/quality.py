"""Trajectory validation: deterministic lints plus a model judge.

The lints are the hard gate: any violation vetoes training suitability
no matter what the judge scored. The judge adds graded scores, the
open-vocabulary reasoning-mode label, and per-argument dependency
levels; a rule-based fallback supplies the latter two when no judge
backend is configured, so diversity metrics stay computable offline.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Any, Optional

from .backend import ChatBackend, ChatRequest
from .errors import BackendError
from .jsonutil import canonical_dumps, parse_json_reply, pretty_dumps
from .metrics import DEPENDENCY_LEVELS, LEVEL_GLOBAL, LEVEL_INSTRUCTION, LEVEL_LOCAL
from .prompts import load_template, render
from .schema_shape import infer_shape, shape_violations
from .trajectory import (
    ORIGIN_SANDBOX,
    ROLE_ASSISTANT,
    ROLE_OBSERVATION,
    ROLE_TOOL_CALL,
    ROLE_USER,
    STATUS_COMPLETE,
    Trajectory,
    turn_order_violations,
)

SCORE_DIMENSIONS = ("realism", "tool_intelligence", "anti_hallucination", "goal_achievement")


@dataclass
class QualityConfig:
    min_score: float = 7.0
    repair_budget: int = 2


@dataclass
class QualityVerdict:
    scores: dict
    suitable_for_training: bool
    mode_label: str
    param_deps: list[dict] = field(default_factory=list)
    rejection_reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scores": self.scores,
            "suitable_for_training": self.suitable_for_training,
            "mode_label": self.mode_label,
            "param_deps": self.param_deps,
            "rejection_reasons": self.rejection_reasons,
        }


@dataclass
class LintViolation:
    turn_index: int
    kind: str
    message: str

    def to_dict(self) -> dict:
        return {"turn_index": self.turn_index, "kind": self.kind, "message": self.message}

    def __str__(self) -> str:
        return f"turn {self.turn_index} [{self.kind}]: {self.message}"


# ---- numeric grounding -----------------------------------------------------

# lookahead tolerates sentence-final dots but rejects dotted identifiers (2.4.0)
_NUMBER_RE = re.compile(r"(?<![\w.])\$?\d[\d,]*(?:\.\d+)?(?!\w|\.\w)")
_FENCED_RE = re.compile(r"```.*?```", re.DOTALL)
_INLINE_CODE_RE = re.compile(r"`[^`]*`")


def normalize_number(token: str) -> Optional[str]:
    """Canonical form of a numeric literal: no separators, no trailing
    zeros, no sign (grounding compares magnitudes)."""
    cleaned = token.lstrip("$-").replace(",", "")
    try:
        d = Decimal(cleaned)
    except InvalidOperation:
        return None
    return format(d.normalize(), "f")


def numbers_in_text(text: str, strip_code: bool = False) -> set[str]:
    if strip_code:
        text = _FENCED_RE.sub(" ", text)
        text = _INLINE_CODE_RE.sub(" ", text)
    out = set()
    for m in _NUMBER_RE.finditer(text):
        norm = normalize_number(m.group(0))
        if norm is not None:
            out.add(norm)
    return out


def numbers_in_value(value: Any) -> set[str]:
    """Every number present in a JSON value, including inside strings."""
    out: set[str] = set()
    if isinstance(value, bool) or value is None:
        return out
    if isinstance(value, (int, float)):
        norm = normalize_number(repr(value))
        if norm is not None:
            out.add(norm)
        return out
    if isinstance(value, str):
        return numbers_in_text(value)
    if isinstance(value, dict):
        for v in value.values():
            out |= numbers_in_value(v)
        return out
    if isinstance(value, list):
        for v in value:
            out |= numbers_in_value(v)
        return out
    return out


def lint_numeric_grounding(traj: Trajectory) -> list[LintViolation]:
    """Flag numbers the assistant states that no earlier evidence carries.

    Evidence is anything a user turn said or a tool observation returned
    before the assistant turn in question. Numbers inside code blocks
    are exempt; tool-call arguments are inputs, not claims, and are not
    scanned at all.
    """
    violations: list[LintViolation] = []
    grounded: set[str] = set()
    for turn in traj.turns:
        if turn.role == ROLE_USER:
            grounded |= numbers_in_text(turn.content or "", strip_code=True)
        elif turn.role == ROLE_OBSERVATION:
            grounded |= numbers_in_value(turn.observation)
        elif turn.role == ROLE_ASSISTANT:
            for literal in sorted(numbers_in_text(turn.content or "", strip_code=True)):
                if literal not in grounded:
                    violations.append(
                        LintViolation(
                            turn.index,
                            "ungrounded_number",
                            f"number {literal} has no backing user statement or tool result",
                        )
                    )
    return violations


# ---- structural lint ---------------------------------------------------------

_ID_KEY_RE = re.compile(r"^(?:id|(?P<prefix>.+)_id)$")


def extract_entity_pairs(value: Any) -> dict[str, str]:
    """id -> name pairings found in a JSON value.

    An object pairs 'id' with 'name', or '<x>_id' with '<x>_name'.
    """
    pairs: dict[str, str] = {}

    def visit(node: Any) -> None:
        if isinstance(node, dict):
            for key, val in node.items():
                m = _ID_KEY_RE.match(key)
                if m and isinstance(val, (str, int)):
                    prefix = m.group("prefix")
                    name_key = f"{prefix}_name" if prefix else "name"
                    if name_key in node and isinstance(node[name_key], str):
                        pairs[str(val)] = node[name_key]
                visit(val)
        elif isinstance(node, list):
            for item in node:
                visit(item)

    visit(value)
    return pairs


def lint_structure(traj: Trajectory) -> list[LintViolation]:
    """Role grammar, call/observation pairing, lock audit, entity stability."""
    violations: list[LintViolation] = []
    complete = traj.status == STATUS_COMPLETE
    for msg in turn_order_violations(traj.turns, complete=complete):
        violations.append(LintViolation(_leading_turn_index(msg), "turn_order", msg))

    # schema-lock audit: re-derive each simulated tool's lock and check the
    # trail plus the recorded locks
    recomputed: dict[str, dict] = {}
    pending_call: Optional[str] = None
    for turn in traj.turns:
        if turn.role == ROLE_TOOL_CALL:
            pending_call = turn.call.get("tool") if turn.call else None
        elif turn.role == ROLE_OBSERVATION:
            if pending_call is None:
                violations.append(
                    LintViolation(turn.index, "structure", "observation without a tool call")
                )
                continue
            if turn.origin != ORIGIN_SANDBOX:
                lock = recomputed.get(pending_call)
                if lock is None:
                    recomputed[pending_call] = infer_shape(turn.observation)
                else:
                    for msg in shape_violations(turn.observation, lock):
                        violations.append(
                            LintViolation(
                                turn.index,
                                "schema_lock",
                                f"tool '{pending_call}' drifted from its locked structure: {msg}",
                            )
                        )
            pending_call = None
    for name, lock in recomputed.items():
        stored = traj.schema_locks.get(name)
        if stored is None:
            violations.append(
                LintViolation(0, "schema_lock", f"lock for tool '{name}' missing from record")
            )
        elif stored != lock:
            violations.append(
                LintViolation(0, "schema_lock", f"recorded lock for tool '{name}' does not match its first observation")
            )

    # entity consistency: an id never re-pairs with a different name
    seen: dict[str, tuple[str, int]] = {}
    for turn in traj.turns:
        if turn.role != ROLE_OBSERVATION:
            continue
        for eid, name in extract_entity_pairs(turn.observation).items():
            if eid in seen and seen[eid][0] != name:
                violations.append(
                    LintViolation(
                        turn.index,
                        "entity_consistency",
                        f"entity '{eid}' renamed from {seen[eid][0]!r} (turn {seen[eid][1]}) to {name!r}",
                    )
                )
            else:
                seen.setdefault(eid, (name, turn.index))
    return violations


def _leading_turn_index(message: str) -> int:
    m = re.match(r"turn (\d+)", message)
    return int(m.group(1)) if m else 0


def run_lints(traj: Trajectory) -> list[LintViolation]:
    return lint_structure(traj) + lint_numeric_grounding(traj)


# ---- dependency-level fallback ----------------------------------------------


def _value_token(value: Any) -> str:
    if isinstance(value, str):
        return value
    return canonical_dumps(value)


def assign_param_deps_by_rules(traj: Trajectory) -> list[dict]:
    """Deterministic dependency levels when no judge is configured.

    An argument repeated verbatim from the user goal is instruction
    grounded; one present in the immediately preceding observation is
    local context; anything else counts as global context.
    """
    goal = ""
    if traj.blueprint:
        goal = traj.blueprint.get("goal", "")
    first_user = next((t.content for t in traj.turns if t.role == ROLE_USER), "")
    goal_text = f"{goal}\n{first_user or ''}"

    deps: list[dict] = []
    last_observation: Optional[str] = None
    for turn in traj.turns:
        if turn.role == ROLE_OBSERVATION:
            last_observation = canonical_dumps(turn.observation)
        elif turn.role == ROLE_TOOL_CALL:
            levels = {}
            for arg, value in (turn.call.get("arguments") or {}).items():
                token = _value_token(value)
                if token and token in goal_text:
                    levels[arg] = LEVEL_INSTRUCTION
                elif last_observation is not None and token and token in last_observation:
                    levels[arg] = LEVEL_LOCAL
                else:
                    levels[arg] = LEVEL_GLOBAL
            deps.append(levels)
    return deps


# ---- the judge -----------------------------------------------------------------


def decide_suitability(
    judge_suitable: bool,
    scores: dict,
    lint_violations: list[LintViolation],
    min_score: float,
) -> bool:
    """The gate rule: lints veto, then the judge, then the score floor."""
    if lint_violations:
        return False
    if not judge_suitable:
        return False
    return all(scores.get(dim, 0.0) >= min_score for dim in SCORE_DIMENSIONS)


def _validate_judge_reply(reply: Any, expected_calls: int) -> list[str]:
    problems = []
    if not isinstance(reply, dict):
        return ["reply must be a JSON object"]
    scores = reply.get("scores")
    if not isinstance(scores, dict):
        problems.append("scores object missing")
    else:
        for dim in SCORE_DIMENSIONS:
            v = scores.get(dim)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not (0 <= v <= 10):
                problems.append(f"scores.{dim} must be a number in [0, 10]")
    if not isinstance(reply.get("suitable_for_training"), bool):
        problems.append("suitable_for_training must be a boolean")
    if not isinstance(reply.get("mode_label"), str) or not reply.get("mode_label", "").strip():
        problems.append("mode_label must be a non-empty string")
    deps = reply.get("param_deps")
    if not isinstance(deps, list) or len(deps) != expected_calls:
        problems.append(f"param_deps must list one object per tool call ({expected_calls} expected)")
    else:
        for i, entry in enumerate(deps):
            if not isinstance(entry, dict):
                problems.append(f"param_deps[{i}] must be an object")
                continue
            for arg, level in entry.items():
                if level not in DEPENDENCY_LEVELS:
                    problems.append(
                        f"param_deps[{i}].{arg} has unknown level {level!r}; "
                        f"use one of {list(DEPENDENCY_LEVELS)}"
                    )
    return problems


def judge(
    traj: Trajectory,
    backend: ChatBackend,
    cfg: Optional[QualityConfig] = None,
    lint_violations: Optional[list[LintViolation]] = None,
) -> QualityVerdict:
    """Score the trajectory with the judge model and apply the gate rule.

    Lint findings ride along in the judge prompt as evidence; the final
    suitability combines the judge's call, the lint veto, and the
    minimum-score threshold. The mode label is stored verbatim.
    """
    cfg = cfg or QualityConfig()
    if lint_violations is None:
        lint_violations = run_lints(traj)
    findings = "\n".join(f"- {v}" for v in lint_violations) or "(no findings)"
    system = render(
        load_template("quality_agent"),
        lint_findings=findings,
        trajectory_json=pretty_dumps(traj.to_dict()),
    )
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": "Evaluate now. Reply with the JSON object only."},
    ]
    expected_calls = len(traj.tool_calls())

    last_problems: list[str] = []
    for attempt in range(cfg.repair_budget + 1):
        try:
            resp = backend.complete(ChatRequest(messages=list(messages), role="quality"))
        except BackendError as exc:
            return _rejected_verdict(f"judge backend failed: {exc}", lint_violations)
        reply_text = resp.text or ""
        try:
            reply = parse_json_reply(reply_text)
        except json.JSONDecodeError as exc:
            last_problems = [f"reply was not valid JSON: {exc.msg}"]
        else:
            last_problems = _validate_judge_reply(reply, expected_calls)
            if not last_problems:
                scores = {dim: float(reply["scores"][dim]) for dim in SCORE_DIMENSIONS}
                suitable = decide_suitability(
                    reply["suitable_for_training"], scores, lint_violations, cfg.min_score
                )
                reasons = [str(v) for v in lint_violations]
                reasons.extend(str(r) for r in reply.get("rejection_reasons", []))
                if not lint_violations and reply["suitable_for_training"]:
                    low = [d for d in SCORE_DIMENSIONS if scores[d] < cfg.min_score]
                    if low:
                        reasons.append(f"scores below threshold {cfg.min_score}: {', '.join(low)}")
                return QualityVerdict(
                    scores=scores,
                    suitable_for_training=suitable,
                    mode_label=reply["mode_label"],
                    param_deps=list(reply["param_deps"]),
                    rejection_reasons=reasons if not suitable else [],
                )
        if attempt < cfg.repair_budget:
            messages.append({"role": "assistant", "content": reply_text})
            messages.append(
                {
                    "role": "user",
                    "content": (
                        "Your evaluation was rejected:\n"
                        + "\n".join(f"- {p}" for p in last_problems)
                        + "\nReply again with one corrected JSON object only."
                    ),
                }
            )
    return _rejected_verdict(
        "judge_unparseable: " + "; ".join(last_problems), lint_violations
    )


def _rejected_verdict(reason: str, lint_violations: list[LintViolation]) -> QualityVerdict:
    return QualityVerdict(
        scores={dim: 0.0 for dim in SCORE_DIMENSIONS},
        suitable_for_training=False,
        mode_label="Unrated",
        param_deps=[],
        rejection_reasons=[reason] + [str(v) for v in lint_violations],
    )


def rule_based_verdict(traj: Trajectory, lint_violations: Optional[list[LintViolation]] = None) -> QualityVerdict:
    """Judge-free verdict for offline runs: lints decide, rules label.

    Scores are a flat 8.0 placeholder, clearly below nothing and above
    the default gate, so suitability reduces to the lint veto.
    """
    if lint_violations is None:
        lint_violations = run_lints(traj)
    calls = traj.tool_calls()
    failures = any(
        isinstance(t.observation, dict)
        and str(t.observation.get("status", t.observation.get("verdict", ""))).lower()
        in ("error", "failed", "timeout")
        for t in traj.observations()
    )
    if failures:
        label = "Error Recovery"
    elif len(calls) >= 3:
        label = "Multi-step Planning"
    elif calls:
        label = "Direct Execution"
    else:
        label = "Advisory"
    suitable = not lint_violations
    return QualityVerdict(
        scores={dim: 8.0 for dim in SCORE_DIMENSIONS},
        suitable_for_training=suitable,
        mode_label=label,
        param_deps=assign_param_deps_by_rules(traj),
        rejection_reasons=[str(v) for v in lint_violations] if not suitable else [],
    )
