"""Multi-agent role-play loop producing raw trajectories.

One episode is a sequential state machine over three model roles: the
user (follows the blueprint's plan), the assistant (reasons and calls
tools), and the observation simulator (plays the tool backends). The
first observation from each simulated tool locks that tool's output
structure for the rest of the episode; later observations must conform
or the simulator is re-prompted, and the episode aborts rather than
accept structural drift. Code-tool calls bypass simulation entirely and
run in the sandbox client.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

from .backend import ChatBackend, ChatRequest, ChatResponse
from .blueprint import ScenarioBlueprint, inject_code_tool_decision
from .code_tool import CODE_TOOL_NAME, CodeExecRequest, CodeToolClient, to_observation
from .errors import BackendError
from .jsonutil import canonical_dumps, parse_json_reply
from .prompts import load_template, render
from .schema_shape import describe, infer_shape, shape_violations
from .tool_space import BusinessCluster
from .trajectory import (
    ORIGIN_SANDBOX,
    ORIGIN_SIMULATED,
    ROLE_ASSISTANT,
    ROLE_OBSERVATION,
    ROLE_TOOL_CALL,
    ROLE_USER,
    STATUS_ABORTED,
    STATUS_COMPLETE,
    Trajectory,
    Turn,
)

DONE_MARKER = "<<DONE>>"
REPAIR_BUDGET = 2
MAX_CALLS_PER_ROUND = 6


@dataclass
class EpisodeConfig:
    repair_budget: int = REPAIR_BUDGET
    max_calls_per_round: int = MAX_CALLS_PER_ROUND
    code_timeout_ms: int = 10000
    code_mem_limit_mb: int = 256


class _Abort(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def infer_schema(value: Any) -> dict:
    """Structural skeleton of a JSON value (see schema_shape)."""
    return infer_shape(value)


def enforce_schema_lock(
    tool_name: str, observation: Any, locks: dict[str, dict]
) -> tuple[bool, list[str]]:
    """First observation installs the lock; later ones must conform.

    Returns (accepted, violations). Installing never fails; a lock, once
    set, is never replaced within the episode.
    """
    lock = locks.get(tool_name)
    if lock is None:
        locks[tool_name] = infer_shape(observation)
        return True, []
    violations = shape_violations(observation, lock)
    return (not violations, violations)


def validate_arguments(arguments: dict, param_schema: dict) -> list[str]:
    """Check required parameters and JSON types against the tool schema."""
    problems = []
    props = param_schema.get("properties", {})
    required = param_schema.get("required", [])
    for name in required:
        if name not in arguments:
            problems.append(f"required parameter '{name}' missing")
    type_checks = {
        "string": lambda v: isinstance(v, str),
        "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "boolean": lambda v: isinstance(v, bool),
        "array": lambda v: isinstance(v, list),
        "object": lambda v: isinstance(v, dict),
    }
    for name, value in arguments.items():
        if name not in props:
            problems.append(f"unknown parameter '{name}'")
            continue
        expected = props[name].get("type")
        check = type_checks.get(expected)
        if check is not None and value is not None and not check(value):
            problems.append(f"parameter '{name}' should be {expected}")
    return problems


def render_transcript(turns: list[Turn]) -> str:
    if not turns:
        return "(conversation not started)"
    lines = []
    for t in turns:
        if t.role == ROLE_USER:
            lines.append(f"[user] {t.content}")
        elif t.role == ROLE_ASSISTANT:
            lines.append(f"[assistant] {t.content}")
        elif t.role == ROLE_TOOL_CALL:
            lines.append(f"[tool_call] {t.call['tool']}({canonical_dumps(t.call.get('arguments', {}))})")
        elif t.role == ROLE_OBSERVATION:
            lines.append(f"[observation] {canonical_dumps(t.observation)}")
    return "\n".join(lines)


def consistency_hints(turns: list[Turn]) -> str:
    """Entity id/name pairs and the latest result, fed to the simulator."""
    from .quality import extract_entity_pairs

    pairs: dict[str, str] = {}
    latest: Optional[str] = None
    for t in turns:
        if t.role == ROLE_OBSERVATION:
            pairs.update(extract_entity_pairs(t.observation))
            latest = canonical_dumps(t.observation)
    lines = [f"- entity {eid} is named {name!r}" for eid, name in sorted(pairs.items())]
    if latest is not None:
        lines.append(f"- most recent result: {latest}")
    return "\n".join(lines) if lines else "(none yet)"


class EpisodeRunner:
    """Runs one blueprint to a finished (or aborted) trajectory."""

    def __init__(
        self,
        backend: ChatBackend,
        code_client: CodeToolClient,
        cfg: Optional[EpisodeConfig] = None,
    ):
        self.backend = backend
        self.code_client = code_client
        self.cfg = cfg or EpisodeConfig()
        self.user_template = load_template("user_agent")
        self.assistant_template = load_template("assistant_agent")
        self.observation_template = load_template("observation_agent")
        self.shared_grounding = load_template("shared_grounding")

    # ---- prompt assembly -------------------------------------------------

    def _user_prompt(self, blueprint: ScenarioBlueprint, turns: list[Turn]) -> str:
        persona = blueprint.personas.get("user", {})
        plan_lines = "\n".join(
            f"{i + 1}. {step['step']}" for i, step in enumerate(blueprint.plan)
        )
        constraints = "\n".join(f"- {c}" for c in blueprint.constraints) or "(none)"
        return render(
            self.user_template,
            user_persona=f"{persona.get('identity', 'a user')} ({persona.get('traits', '')})",
            goal=blueprint.goal,
            plan=plan_lines,
            constraints=constraints,
            transcript=render_transcript(turns),
        )

    def _assistant_system(self, blueprint: ScenarioBlueprint) -> str:
        persona = blueprint.personas.get("assistant", {})
        return render(
            self.assistant_template,
            assistant_persona=f"{persona.get('role', 'assistant')} (verbosity: {persona.get('verbosity', 'balanced')})",
            shared_grounding=self.shared_grounding,
        )

    def _assistant_messages(
        self, blueprint: ScenarioBlueprint, turns: list[Turn], corrections: list[str]
    ) -> list[dict]:
        messages: list[dict] = [{"role": "system", "content": self._assistant_system(blueprint)}]
        for t in turns:
            if t.role == ROLE_USER:
                messages.append({"role": "user", "content": t.content})
            elif t.role == ROLE_ASSISTANT:
                messages.append({"role": "assistant", "content": t.content})
            elif t.role == ROLE_TOOL_CALL:
                messages.append(
                    {
                        "role": "assistant",
                        "content": "",
                        "tool_calls": [t.call],
                    }
                )
            elif t.role == ROLE_OBSERVATION:
                messages.append(
                    {"role": "tool", "content": canonical_dumps(t.observation)}
                )
        for note in corrections:
            messages.append({"role": "user", "content": note})
        return messages

    # ---- agent calls -----------------------------------------------------

    def _user_turn(self, blueprint: ScenarioBlueprint, turns: list[Turn]) -> str:
        req = ChatRequest(
            messages=[
                {"role": "system", "content": self._user_prompt(blueprint, turns)},
                {"role": "user", "content": "Write the user's next message."},
            ],
            role="user",
        )
        resp = self.backend.complete(req)
        return (resp.text or "").strip()

    def _assistant_turn(
        self, blueprint: ScenarioBlueprint, turns: list[Turn], toolset: list[dict], corrections: list[str]
    ) -> ChatResponse:
        req = ChatRequest(
            messages=self._assistant_messages(blueprint, turns, corrections),
            tool_schemas=toolset,
            role="assistant",
        )
        return self.backend.complete(req)

    def simulate_observation(
        self,
        tool_call: dict,
        history: list[Turn],
        locks: dict[str, dict],
        tool_schema: dict,
    ) -> Any:
        """Ask the simulator for a strict-JSON result honoring the lock.

        Non-JSON replies and lock violations burn repair attempts; when
        the budget is gone the episode aborts with the violation diff.
        """
        name = tool_call["tool"]
        lock = locks.get(name)
        if lock is not None:
            lock_block = (
                "LOCKED OUTPUT STRUCTURE (established on this tool's first call; "
                "your reply must match it exactly):\n"
                f"{canonical_dumps(lock)}\n"
                f"readable form: {describe(lock)}"
            )
        else:
            lock_block = (
                "This is the tool's first call; the structure of your reply "
                "becomes its contract for the rest of the conversation."
            )
        system = render(
            self.observation_template,
            tool_schema=canonical_dumps(tool_schema),
            arguments=canonical_dumps(tool_call.get("arguments", {})),
            consistency_hints=consistency_hints(history),
            locked_shape_block=lock_block,
        )
        messages = [
            {"role": "system", "content": system},
            {"role": "user", "content": "Produce the JSON response now."},
        ]
        last_problem = "no attempt"
        for attempt in range(self.cfg.repair_budget + 1):
            resp = self.backend.complete(ChatRequest(messages=list(messages), role="observation"))
            reply = resp.text or ""
            try:
                value = parse_json_reply(reply)
            except json.JSONDecodeError as exc:
                last_problem = f"reply was not valid JSON: {exc.msg}"
            else:
                accepted, violations = enforce_schema_lock(name, value, locks)
                if accepted:
                    return value
                last_problem = "locked structure violated: " + "; ".join(violations)
            if attempt < self.cfg.repair_budget:
                messages.append({"role": "assistant", "content": reply})
                messages.append(
                    {
                        "role": "user",
                        "content": (
                            f"Rejected: {last_problem}. Reply again with JSON only"
                            + (
                                f", matching the locked structure {canonical_dumps(lock)}."
                                if lock is not None
                                else "."
                            )
                        ),
                    }
                )
        raise _Abort(f"observation for '{name}' unusable after repairs: {last_problem}")

    def _execute_code_call(self, tool_call: dict) -> Any:
        args = tool_call.get("arguments", {})
        req = CodeExecRequest(
            code=args.get("code", ""),
            timeout_ms=self.cfg.code_timeout_ms,
            mem_limit_mb=self.cfg.code_mem_limit_mb,
            stdin_data=args.get("stdin_data"),
        )
        return to_observation(self.code_client.execute(req))

    # ---- main loop ---------------------------------------------------------

    def run_episode(
        self,
        blueprint: ScenarioBlueprint,
        cluster: BusinessCluster,
        trajectory_id: Optional[str] = None,
    ) -> Trajectory:
        blueprint, toolset = inject_code_tool_decision(blueprint, cluster)
        schema_by_name = {t["name"]: t for t in toolset}
        if trajectory_id is None:
            from .jsonutil import fingerprint

            trajectory_id = f"episode-{fingerprint(blueprint.to_dict())[:12]}"
        traj = Trajectory(
            trajectory_id=trajectory_id,
            cluster_id=cluster.cluster_id,
            blueprint=blueprint.to_dict(),
        )
        locks: dict[str, dict] = {}
        rounds_cap = 2 * int(blueprint.target_turns["max"])

        def append(turn: Turn) -> None:
            turn.index = len(traj.turns)
            traj.turns.append(turn)

        try:
            rounds = 0
            while True:
                if rounds >= rounds_cap:
                    raise _Abort(f"round cap reached ({rounds_cap} user turns)")
                user_text = self._user_turn(blueprint, traj.turns)
                if user_text.startswith(DONE_MARKER):
                    if not traj.turns:
                        raise _Abort("user ended the episode before it began")
                    break
                append(Turn(role=ROLE_USER, index=0, content=user_text))
                rounds += 1
                self._assistant_phase(blueprint, traj, toolset, schema_by_name, locks, append)
            traj.status = STATUS_COMPLETE
        except _Abort as abort:
            traj.status = STATUS_ABORTED
            traj.abort_reason = abort.reason
        except BackendError as exc:
            traj.status = STATUS_ABORTED
            traj.abort_reason = f"backend failure: {exc}"
        traj.schema_locks = locks
        return traj

    def _assistant_phase(
        self,
        blueprint: ScenarioBlueprint,
        traj: Trajectory,
        toolset: list[dict],
        schema_by_name: dict[str, dict],
        locks: dict[str, dict],
        append,
    ) -> None:
        calls_this_round = 0
        while True:
            resp, calls = self._valid_assistant_reply(blueprint, traj, toolset, schema_by_name)
            if not calls:
                append(Turn(role=ROLE_ASSISTANT, index=0, content=(resp.text or "").strip()))
                return
            if calls_this_round + len(calls) > self.cfg.max_calls_per_round:
                raise _Abort(
                    f"assistant exceeded {self.cfg.max_calls_per_round} tool calls in one round"
                )
            # reasoning text (possibly empty) precedes the calls it motivates
            append(Turn(role=ROLE_ASSISTANT, index=0, content=(resp.text or "").strip()))
            for call in calls:
                calls_this_round += 1
                append(Turn(role=ROLE_TOOL_CALL, index=0, call=call))
                if call["tool"] == CODE_TOOL_NAME:
                    value = self._execute_code_call(call)
                    origin = ORIGIN_SANDBOX
                else:
                    value = self.simulate_observation(
                        call, traj.turns, locks, schema_by_name[call["tool"]]
                    )
                    origin = ORIGIN_SIMULATED
                append(Turn(role=ROLE_OBSERVATION, index=0, observation=value, origin=origin))
            # loop: the assistant reacts to the observations (more calls or a summary)

    def _valid_assistant_reply(
        self,
        blueprint: ScenarioBlueprint,
        traj: Trajectory,
        toolset: list[dict],
        schema_by_name: dict[str, dict],
    ) -> tuple[ChatResponse, list[dict]]:
        """Get an assistant reply whose tool calls all validate.

        Invalid calls are rejected back to the assistant with the reason;
        it may retry within the repair budget, then the episode aborts.
        """
        corrections: list[str] = []
        last_problem = ""
        for attempt in range(self.cfg.repair_budget + 1):
            resp = self._assistant_turn(blueprint, traj.turns, toolset, corrections)
            calls = [
                {"tool": c.get("tool", ""), "arguments": c.get("arguments", {}) or {}}
                for c in resp.tool_calls
            ]
            problems = []
            for call in calls:
                name = call["tool"]
                if name not in schema_by_name:
                    problems.append(
                        f"tool '{name}' does not exist; available: {sorted(schema_by_name)}"
                    )
                    continue
                problems.extend(
                    f"call to '{name}': {p}"
                    for p in validate_arguments(
                        call["arguments"], schema_by_name[name].get("parameters", {})
                    )
                )
            if not problems:
                return resp, calls
            last_problem = "; ".join(problems)
            corrections.append(
                "Your last tool call was rejected: "
                + last_problem
                + ". Correct it and try again."
            )
        raise _Abort(f"assistant could not produce a valid tool call: {last_problem}")


def run_episode(
    blueprint: ScenarioBlueprint,
    cluster: BusinessCluster,
    backend: ChatBackend,
    code_client: CodeToolClient,
    trajectory_id: Optional[str] = None,
    cfg: Optional[EpisodeConfig] = None,
) -> Trajectory:
    """Convenience wrapper around EpisodeRunner for one-off episodes."""
    return EpisodeRunner(backend, code_client, cfg).run_episode(blueprint, cluster, trajectory_id)
