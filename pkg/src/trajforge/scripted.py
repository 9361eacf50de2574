"""Deterministic rule-based stand-in for the teacher model.

Gives the pipeline a fully offline mode: blueprints, user turns,
observations, and judge verdicts are derived from content hashes of the
request, so identical requests always get identical replies and a
recorded cassette replays bit-for-bit. It honors steering directives
(avoid-mode and complexity targets) which is exactly what the
closed-loop steering tests need.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Optional

from .backend import ChatRequest, ChatResponse, FINISH_STOP, FINISH_TOOL_CALL
from .code_tool import CODE_TOOL_NAME
from .jsonutil import canonical_dumps

MODE_PALETTE = (
    "Direct Execution",
    "Multi-step Planning",
    "Error Correction",
    "Reflection",
    "Hypothesis-Testing",
)

SCRIPTED_CODE_SNIPPET = "records = [(3, 9), (1, 5), (2, 7)]\nprint(sorted(records))"
SCRIPTED_CODE_STDOUT = "[(1, 5), (2, 7), (3, 9)]\n"


def scripted_stub_executor():
    """Stub executor pre-loaded with the snippet the scripted teacher emits."""
    from .code_tool import CodeExecResult, StubExecutor, VERDICT_OK

    stub = StubExecutor()
    stub.register(
        SCRIPTED_CODE_SNIPPET,
        CodeExecResult(
            stdout=SCRIPTED_CODE_STDOUT,
            stderr="",
            exit_code=0,
            duration_ms=3,
            truncated=False,
            verdict=VERDICT_OK,
        ),
    )
    return stub

_AVOID_RE = re.compile(r"avoid '([^']+)'")
_AGENDA_RE = re.compile(r"^(\d+)\. (.+)$", re.MULTILINE)


def _h(seed: int, *parts: str) -> int:
    digest = hashlib.sha256(("\x1f".join(parts) + f"|{seed}").encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class ScriptedTeacher:
    """ChatBackend whose replies are pure functions of the request."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, req: ChatRequest) -> ChatResponse:
        handler = {
            "blueprint": self._blueprint,
            "user": self._user,
            "assistant": self._assistant,
            "observation": self._observation,
            "quality": self._quality,
        }.get(req.role)
        if handler is None:
            return ChatResponse(text="(no scripted behavior for this role)")
        return handler(req)

    # ---- blueprint ---------------------------------------------------------

    def _blueprint(self, req: ChatRequest) -> ChatResponse:
        fp = req.fingerprint()
        system = req.messages[0]["content"]
        tool_names = [t["name"] for t in req.tool_schemas if t["name"] != CODE_TOOL_NAME]
        if not tool_names:
            tool_names = ["unknown_tool"]

        avoided = _AVOID_RE.findall(system)
        wants_complexity = "Complexity target" in system
        if wants_complexity:
            mode = "Multi-step Planning"
        elif avoided:
            candidates = [m for m in MODE_PALETTE if m not in avoided]
            mode = candidates[_h(self.seed, fp, "mode") % len(candidates)]
        else:
            mode = MODE_PALETTE[_h(self.seed, fp, "mode") % len(MODE_PALETTE)]

        if wants_complexity:
            used = tool_names[:4]
            plan = [
                {"step": f"Use {name} to collect the {i + 1} batch of records", "tools": [name]}
                for i, name in enumerate(used)
            ]
            plan.append(
                {
                    "step": f"Use {CODE_TOOL_NAME} to rank the collected records by weighted score",
                    "tools": [CODE_TOOL_NAME],
                }
            )
            requires_code = True
            need = "multi-criteria ranking over collected records"
            turns = {"min": 7, "max": 12}
        else:
            used = tool_names[:2] if len(tool_names) >= 2 else tool_names
            plan = [
                {"step": f"Use {name} to look up the requested item", "tools": [name]}
                for name in used
            ]
            requires_code = False
            need = None
            turns = {"min": 2, "max": 4}

        topic = _h(self.seed, fp, "topic") % 97 + 3
        draft = {
            "goal": (
                f"Resolve ticket batch {topic}: gather the relevant records via "
                + ", ".join(t for t in used)
                + (" and rank them programmatically" if requires_code else "")
                + ", then report only values the tools returned."
            ),
            "plan": plan,
            "constraints": ["every reported figure must come from a tool result"],
            "personas": {
                "user": {"identity": "operations analyst", "traits": "brisk, detail-oriented"},
                "assistant": {"role": "diligent support engineer", "verbosity": "concise"},
            },
            "strategy_adaptation": {
                "decision": "honored",
                "evidence_steps": list(range(len(plan))),
                "reason": "directive fits the available tools",
            },
            "requires_code_tool": requires_code,
            "computational_need": need,
            "missing_tools": [],
            "target_turns": turns,
            "reasoning_mode_target": mode,
        }
        return ChatResponse(text=json.dumps(draft), finish_reason=FINISH_STOP)

    # ---- user --------------------------------------------------------------

    def _user(self, req: ChatRequest) -> ChatResponse:
        system = req.messages[0]["content"]
        agenda_block = system.split("YOUR PRIVATE AGENDA", 1)[-1].split("CONSTRAINTS TO RESPECT", 1)[0]
        steps = _AGENDA_RE.findall(agenda_block)
        transcript = system.split("CONVERSATION SO FAR:", 1)[-1]
        rounds_done = transcript.count("[user] ")
        if rounds_done >= len(steps):
            return ChatResponse(text="<<DONE>>", finish_reason=FINISH_STOP)
        step_text = steps[rounds_done][1]
        if rounds_done == 0:
            return ChatResponse(text=f"Hi - first thing I need: {step_text}", finish_reason=FINISH_STOP)
        return ChatResponse(text=f"Next: {step_text}", finish_reason=FINISH_STOP)

    # ---- assistant -----------------------------------------------------------

    def _arguments_for(self, schema: dict, fp: str) -> dict:
        args = {}
        params = schema.get("parameters", {})
        props = params.get("properties", {})
        for pname in params.get("required", []):
            spec = props.get(pname, {})
            ptype = spec.get("type", "string")
            h = _h(self.seed, fp, "arg", pname)
            if ptype == "integer":
                args[pname] = h % 100
            elif ptype == "number":
                args[pname] = (h % 1000) / 10.0
            elif ptype == "boolean":
                args[pname] = bool(h % 2)
            elif ptype == "array":
                args[pname] = []
            elif ptype == "object":
                args[pname] = {}
            else:
                args[pname] = f"probe-{h % 10_000:04d}"
        return args

    def _assistant(self, req: ChatRequest) -> ChatResponse:
        fp = req.fingerprint()
        last = req.messages[-1]
        schemas = {t["name"]: t for t in req.tool_schemas}

        if last["role"] == "tool":
            # summarize the freshest observation, citing only its own values
            tool_name = "the tool"
            for msg in reversed(req.messages):
                if msg.get("tool_calls"):
                    tool_name = msg["tool_calls"][-1].get("tool", tool_name)
                    break
            try:
                obs = json.loads(last.get("content") or "null")
            except json.JSONDecodeError:
                obs = None
            if isinstance(obs, dict) and "value" in obs:
                text = (
                    f"The {tool_name} call returned value {obs['value']} "
                    f"(record {obs.get('record_id', 'n/a')})."
                )
            elif isinstance(obs, dict) and "stdout" in obs:
                out = str(obs.get("stdout", "")).strip()
                text = f"The sandbox run finished with verdict {obs.get('verdict')}; output: {out}"
            else:
                text = f"The {tool_name} call completed; the result is recorded above."
            return ChatResponse(text=text, finish_reason=FINISH_STOP)

        # a user message: pick the tool the request names, else rotate
        user_text = last.get("content", "")
        chosen: Optional[str] = None
        for name in sorted(schemas, key=len, reverse=True):
            if name in user_text:
                chosen = name
                break
        if chosen is None and schemas:
            prior_calls = sum(1 for m in req.messages if m.get("tool_calls"))
            names = sorted(schemas)
            chosen = names[prior_calls % len(names)]
        if chosen is None:
            return ChatResponse(text="No tools are available for this request.")

        if chosen == CODE_TOOL_NAME:
            call = {
                "tool": CODE_TOOL_NAME,
                "arguments": {"code": SCRIPTED_CODE_SNIPPET},
            }
        else:
            call = {"tool": chosen, "arguments": self._arguments_for(schemas[chosen], fp)}
        return ChatResponse(
            text=f"Working on it; querying {chosen} now.",
            tool_calls=[call],
            finish_reason=FINISH_TOOL_CALL,
        )

    # ---- observation -----------------------------------------------------------

    def _observation(self, req: ChatRequest) -> ChatResponse:
        fp = req.fingerprint()
        system = req.messages[0]["content"]
        m = re.search(r'"name":"([^"]+)"', system)
        tool_name = m.group(1) if m else "tool"
        value = _h(self.seed, fp, "value") % 100_000
        record = 1000 + _h(self.seed, fp, "record") % 9000
        obs = {
            "status": "ok",
            "record_id": f"rec-{record}",
            "value": value,
            "detail": f"{tool_name} completed",
        }
        return ChatResponse(text=canonical_dumps(obs), finish_reason=FINISH_STOP)

    # ---- quality ------------------------------------------------------------------

    def _quality(self, req: ChatRequest) -> ChatResponse:
        from .quality import assign_param_deps_by_rules
        from .trajectory import Trajectory

        fp = req.fingerprint()
        system = req.messages[0]["content"]
        traj_block = system.split("CONVERSATION UNDER REVIEW:", 1)[-1].split("REPLY SCHEMA", 1)[0]
        try:
            traj_dict = json.loads(traj_block.strip())
            traj = Trajectory.from_dict(traj_dict)
            deps = assign_param_deps_by_rules(traj)
            mode = (traj_dict.get("blueprint") or {}).get("reasoning_mode_target")
        except (json.JSONDecodeError, KeyError):
            deps = []
            mode = None
        if not mode:
            mode = MODE_PALETTE[_h(self.seed, fp, "mode") % len(MODE_PALETTE)]
        scores = {
            dim: 8 + _h(self.seed, fp, "score", dim) % 3
            for dim in ("realism", "tool_intelligence", "anti_hallucination", "goal_achievement")
        }
        verdict = {
            "scores": scores,
            "suitable_for_training": True,
            "mode_label": mode,
            "param_deps": deps,
            "rejection_reasons": [],
        }
        return ChatResponse(text=json.dumps(verdict), finish_reason=FINISH_STOP)
