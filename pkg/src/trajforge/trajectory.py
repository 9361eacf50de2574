"""Trajectory and turn records, plus the legal-turn-order validator.

A trajectory is the unit of training data: the blueprint that anchored
it, the ordered turns of the role-play, the schema locks observed, and
(after the quality gate ran) the verdict and diversity metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"
ROLE_TOOL_CALL = "tool_call"
ROLE_OBSERVATION = "observation"

ORIGIN_SIMULATED = "simulated"
ORIGIN_SANDBOX = "sandbox"

STATUS_COMPLETE = "complete"
STATUS_ABORTED = "aborted"
STATUS_ERROR = "error"


@dataclass
class Turn:
    role: str
    index: int
    content: Optional[str] = None          # user / assistant text
    call: Optional[dict] = None            # {"tool": name, "arguments": {...}}
    observation: Any = None                # arbitrary JSON value
    origin: Optional[str] = None           # simulated | sandbox, observations only

    def to_dict(self) -> dict:
        d: dict = {"index": self.index, "role": self.role}
        if self.role in (ROLE_USER, ROLE_ASSISTANT):
            d["content"] = self.content
        elif self.role == ROLE_TOOL_CALL:
            d["call"] = self.call
        elif self.role == ROLE_OBSERVATION:
            d["observation"] = self.observation
            d["origin"] = self.origin
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        return cls(
            role=d["role"],
            index=d["index"],
            content=d.get("content"),
            call=d.get("call"),
            observation=d.get("observation"),
            origin=d.get("origin"),
        )


@dataclass
class Trajectory:
    trajectory_id: str
    cluster_id: str
    blueprint: Optional[dict] = None
    turns: list[Turn] = field(default_factory=list)
    schema_locks: dict[str, dict] = field(default_factory=dict)
    status: str = STATUS_COMPLETE
    abort_reason: Optional[str] = None
    quality: Optional[dict] = None
    metrics: Optional[dict] = None

    def tool_calls(self) -> list[Turn]:
        return [t for t in self.turns if t.role == ROLE_TOOL_CALL]

    def observations(self) -> list[Turn]:
        return [t for t in self.turns if t.role == ROLE_OBSERVATION]

    def user_turn_count(self) -> int:
        return sum(1 for t in self.turns if t.role == ROLE_USER)

    def mode_label(self) -> Optional[str]:
        if self.metrics and self.metrics.get("mode_label"):
            return self.metrics["mode_label"]
        if self.quality and self.quality.get("mode_label"):
            return self.quality["mode_label"]
        return None

    def param_deps(self) -> Optional[list[dict]]:
        """Per-tool-call {param_name: level} maps, judge- or rule-assigned."""
        if self.metrics and self.metrics.get("param_deps") is not None:
            return self.metrics["param_deps"]
        if self.quality and self.quality.get("param_deps") is not None:
            return self.quality["param_deps"]
        return None

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "cluster_id": self.cluster_id,
            "blueprint": self.blueprint,
            "turns": [t.to_dict() for t in self.turns],
            "schema_locks": self.schema_locks,
            "status": self.status,
            "abort_reason": self.abort_reason,
            "quality": self.quality,
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            trajectory_id=d["trajectory_id"],
            cluster_id=d["cluster_id"],
            blueprint=d.get("blueprint"),
            turns=[Turn.from_dict(t) for t in d.get("turns", [])],
            schema_locks=d.get("schema_locks", {}),
            status=d.get("status", STATUS_COMPLETE),
            abort_reason=d.get("abort_reason"),
            quality=d.get("quality"),
            metrics=d.get("metrics"),
        )


def turn_order_violations(turns: list[Turn], complete: bool = True) -> list[str]:
    """Check the legal turn grammar.

    A trajectory opens with a user turn; a user turn is answered by an
    assistant turn; tool calls may only follow an assistant turn or an
    observation; every tool call is followed by exactly one observation;
    a complete trajectory ends on an assistant turn. Pass complete=False
    for aborted trajectories, whose tail may stop anywhere.
    """
    violations: list[str] = []
    if not turns:
        return ["trajectory has no turns"]
    expected = {ROLE_USER}
    for turn in turns:
        if turn.role not in expected:
            violations.append(
                f"turn {turn.index}: role '{turn.role}' not allowed here (expected one of {sorted(expected)})"
            )
        if turn.role == ROLE_USER:
            expected = {ROLE_ASSISTANT}
        elif turn.role == ROLE_ASSISTANT:
            expected = {ROLE_TOOL_CALL, ROLE_USER}
        elif turn.role == ROLE_TOOL_CALL:
            expected = {ROLE_OBSERVATION}
        elif turn.role == ROLE_OBSERVATION:
            expected = {ROLE_TOOL_CALL, ROLE_ASSISTANT}
        else:
            violations.append(f"turn {turn.index}: unknown role '{turn.role}'")
            expected = {ROLE_USER, ROLE_ASSISTANT, ROLE_TOOL_CALL, ROLE_OBSERVATION}
    if complete and turns[-1].role != ROLE_ASSISTANT:
        violations.append(f"turn {turns[-1].index}: trajectory must end on an assistant turn")
    if complete and turns[-1].role == ROLE_TOOL_CALL:
        violations.append(f"turn {turns[-1].index}: tool call has no observation")
    for i, turn in enumerate(turns):
        if turn.index != i:
            violations.append(f"turn {turn.index}: index does not match position {i}")
    return violations
