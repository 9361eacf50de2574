"""Scenario blueprint generation.

A blueprint anchors one synthesis episode: the user goal, the ordered
plan, constraints, personas, and the strategy directive it was steered
by. The generating model replies with one JSON object; invalid replies
get up to REPAIR_BUDGET corrective re-prompts before the episode is
skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .backend import ChatBackend, ChatRequest
from .code_tool import CODE_TOOL_NAME, code_tool_schema
from .errors import BlueprintRejected
from .jsonutil import parse_json_reply, pretty_dumps
from .prompts import load_template, render
from .tool_space import BusinessCluster

REPAIR_BUDGET = 2
MIN_TURNS = 2
MAX_TURNS = 12

ORIGIN_SEED = "seed"
ORIGIN_MEMORY_GAP = "memory_gap"

PROVENANCE_PENDING = "pending"
PROVENANCE_HONORED = "honored"
PROVENANCE_OVERRIDDEN = "overridden"


@dataclass
class StrategyProfile:
    directives: list[str]
    origin: str = ORIGIN_SEED
    provenance: str = PROVENANCE_PENDING

    def __post_init__(self):
        if not self.directives:
            raise ValueError("a strategy profile needs at least one directive")
        if self.origin not in (ORIGIN_SEED, ORIGIN_MEMORY_GAP):
            raise ValueError(f"unknown profile origin {self.origin!r}")

    def primary(self) -> str:
        return self.directives[0]

    def to_dict(self) -> dict:
        return {
            "directives": self.directives,
            "origin": self.origin,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyProfile":
        return cls(
            directives=list(d["directives"]),
            origin=d.get("origin", ORIGIN_SEED),
            provenance=d.get("provenance", PROVENANCE_PENDING),
        )


@dataclass
class ScenarioBlueprint:
    goal: str
    plan: list[dict]                  # [{"step": str, "tools": [str]}]
    constraints: list[str]
    strategy_profile: StrategyProfile
    personas: dict
    requires_code_tool: bool = False
    computational_need: Optional[str] = None
    missing_tools: list[str] = field(default_factory=list)
    target_turns: dict = field(default_factory=lambda: {"min": 2, "max": 4})
    reasoning_mode_target: Optional[str] = None
    strategy_adaptation: dict = field(default_factory=dict)

    def planned_tools(self) -> list[str]:
        names = []
        for step in self.plan:
            for name in step.get("tools", []):
                if name not in names:
                    names.append(name)
        return names

    def to_dict(self) -> dict:
        return {
            "goal": self.goal,
            "plan": self.plan,
            "constraints": self.constraints,
            "strategy_profile": self.strategy_profile.to_dict(),
            "personas": self.personas,
            "requires_code_tool": self.requires_code_tool,
            "computational_need": self.computational_need,
            "missing_tools": self.missing_tools,
            "target_turns": self.target_turns,
            "reasoning_mode_target": self.reasoning_mode_target,
            "strategy_adaptation": self.strategy_adaptation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioBlueprint":
        return cls(
            goal=d["goal"],
            plan=d["plan"],
            constraints=d.get("constraints", []),
            strategy_profile=StrategyProfile.from_dict(d["strategy_profile"]),
            personas=d.get("personas", {}),
            requires_code_tool=d.get("requires_code_tool", False),
            computational_need=d.get("computational_need"),
            missing_tools=d.get("missing_tools", []),
            target_turns=d.get("target_turns", {"min": 2, "max": 4}),
            reasoning_mode_target=d.get("reasoning_mode_target"),
            strategy_adaptation=d.get("strategy_adaptation", {}),
        )


def validate_draft(draft: dict, cluster: BusinessCluster) -> list[str]:
    """Machine-checkable rules a blueprint reply must satisfy.

    Returns violation messages; an empty list means the draft is valid.
    """
    problems: list[str] = []
    if not isinstance(draft, dict):
        return ["reply must be a single JSON object"]

    goal = draft.get("goal")
    if not isinstance(goal, str) or not goal.strip():
        problems.append("goal must be a non-empty string")

    plan = draft.get("plan")
    if not isinstance(plan, list) or not plan:
        problems.append("plan must be a non-empty array of steps")
        plan = []
    cluster_names = {t.name for t in cluster.tools}
    missing = draft.get("missing_tools") or []
    requires_code = bool(draft.get("requires_code_tool", False))
    allowed = cluster_names | set(missing)
    if requires_code:
        allowed.add(CODE_TOOL_NAME)
    code_tool_in_plan = False
    for i, step in enumerate(plan):
        if not isinstance(step, dict) or not isinstance(step.get("step"), str):
            problems.append(f"plan step {i} must be an object with a 'step' description")
            continue
        for name in step.get("tools", []):
            if name == CODE_TOOL_NAME:
                code_tool_in_plan = True
            if name not in allowed:
                problems.append(
                    f"plan step {i} names tool '{name}' which is neither in the cluster, "
                    f"in missing_tools, nor the injected code tool"
                )
    if requires_code and not code_tool_in_plan:
        problems.append(
            f"requires_code_tool is true but no plan step uses '{CODE_TOOL_NAME}'"
        )
    if not requires_code and code_tool_in_plan:
        problems.append(
            f"plan uses '{CODE_TOOL_NAME}' but requires_code_tool is false"
        )
    if requires_code and not (draft.get("computational_need") or "").strip():
        problems.append("requires_code_tool is true but computational_need is empty")

    personas = draft.get("personas")
    if not isinstance(personas, dict):
        problems.append("personas must be an object")
    else:
        user_p = personas.get("user") or {}
        asst_p = personas.get("assistant") or {}
        if not (isinstance(user_p, dict) and user_p.get("identity") and user_p.get("traits")):
            problems.append("personas.user needs identity and traits")
        if not (isinstance(asst_p, dict) and asst_p.get("role") and asst_p.get("verbosity")):
            problems.append("personas.assistant needs role and verbosity")

    turns = draft.get("target_turns")
    if not isinstance(turns, dict):
        problems.append("target_turns must be an object with min and max")
    else:
        lo, hi = turns.get("min"), turns.get("max")
        if not (isinstance(lo, int) and isinstance(hi, int)):
            problems.append("target_turns.min and target_turns.max must be integers")
        elif not (MIN_TURNS <= lo <= hi <= MAX_TURNS):
            problems.append(
                f"target_turns must satisfy {MIN_TURNS} <= min <= max <= {MAX_TURNS}"
            )

    adaptation = draft.get("strategy_adaptation")
    if not isinstance(adaptation, dict) or adaptation.get("decision") not in (
        PROVENANCE_HONORED,
        PROVENANCE_OVERRIDDEN,
    ):
        problems.append(
            "strategy_adaptation.decision must be 'honored' or 'overridden'; "
            "the directive may not be ignored silently"
        )
    else:
        if adaptation["decision"] == PROVENANCE_HONORED:
            steps = adaptation.get("evidence_steps")
            if not isinstance(steps, list) or not steps:
                problems.append(
                    "an honored directive must cite the plan steps that carry it out "
                    "in strategy_adaptation.evidence_steps"
                )
            elif any(not isinstance(s, int) or s < 0 or s >= len(plan) for s in steps):
                problems.append("strategy_adaptation.evidence_steps cites invalid plan indices")
        else:
            if not (adaptation.get("reason") or "").strip():
                problems.append("an overridden directive must explain why in strategy_adaptation.reason")

    if not isinstance(draft.get("constraints", []), list):
        problems.append("constraints must be an array of strings")
    return problems


def format_tool_schemas(tools: list[dict]) -> str:
    return "\n".join(pretty_dumps(t) for t in tools)


def cluster_tool_schemas(cluster: BusinessCluster) -> list[dict]:
    return [
        {
            "name": t.name,
            "description": t.description,
            "parameters": t.param_schema,
        }
        for t in cluster.tools
    ]


def generate_blueprint(
    cluster: BusinessCluster,
    profile: StrategyProfile,
    backend: ChatBackend,
    repair_budget: int = REPAIR_BUDGET,
) -> ScenarioBlueprint:
    """Prompt the blueprint model and parse/validate its reply.

    Parse failures and invariant violations trigger corrective
    re-prompts citing the violated rules; exhausting the budget raises
    BlueprintRejected and the trajectory slot is skipped.
    """
    template = load_template("blueprint_agent")
    schemas = cluster_tool_schemas(cluster)
    system = render(
        template,
        tool_schemas=format_tool_schemas(schemas),
        strategy_profile_placeholder="\n".join(f"- {d}" for d in profile.directives),
        code_tool_name=CODE_TOOL_NAME,
    )
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": "Design the scenario blueprint now. Reply with the JSON object only."},
    ]

    last_problems: list[str] = []
    for attempt in range(repair_budget + 1):
        req = ChatRequest(messages=list(messages), tool_schemas=schemas, role="blueprint")
        resp = backend.complete(req)
        reply = resp.text or ""
        try:
            draft = parse_json_reply(reply)
        except json.JSONDecodeError as exc:
            last_problems = [f"reply was not valid JSON: {exc.msg}"]
        else:
            last_problems = validate_draft(draft, cluster)
            if not last_problems:
                bp = _build(draft, profile)
                return apply_feasibility_override(cluster, profile, bp)
        if attempt < repair_budget:
            messages.append({"role": "assistant", "content": reply})
            messages.append(
                {
                    "role": "user",
                    "content": (
                        "Your blueprint was rejected for these reasons:\n"
                        + "\n".join(f"- {p}" for p in last_problems)
                        + "\nReply again with one corrected JSON object only."
                    ),
                }
            )
    raise BlueprintRejected(
        f"blueprint for cluster {cluster.cluster_id} invalid after {repair_budget + 1} attempts: "
        + "; ".join(last_problems)
    )


def _build(draft: dict, profile: StrategyProfile) -> ScenarioBlueprint:
    return ScenarioBlueprint(
        goal=draft["goal"],
        plan=draft["plan"],
        constraints=draft.get("constraints", []),
        strategy_profile=StrategyProfile(
            directives=list(profile.directives), origin=profile.origin
        ),
        personas=draft["personas"],
        requires_code_tool=bool(draft.get("requires_code_tool", False)),
        computational_need=draft.get("computational_need"),
        missing_tools=list(draft.get("missing_tools", [])),
        target_turns=dict(draft["target_turns"]),
        reasoning_mode_target=draft.get("reasoning_mode_target"),
        strategy_adaptation=dict(draft["strategy_adaptation"]),
    )


def apply_feasibility_override(
    cluster: BusinessCluster, profile: StrategyProfile, draft: ScenarioBlueprint
) -> ScenarioBlueprint:
    """Record whether the directive was honored or explicitly overridden.

    validate_draft already guarantees exactly one of the two holds; this
    step stamps the outcome into the profile provenance so downstream
    consumers can audit it.
    """
    decision = draft.strategy_adaptation.get("decision")
    if decision == PROVENANCE_OVERRIDDEN:
        draft.strategy_profile.provenance = PROVENANCE_OVERRIDDEN
    else:
        draft.strategy_profile.provenance = PROVENANCE_HONORED
    return draft


def inject_code_tool_decision(
    draft: ScenarioBlueprint, cluster: BusinessCluster
) -> tuple[ScenarioBlueprint, list[dict]]:
    """Assemble the episode toolset, appending the code tool only when
    the blueprint marked a computational need."""
    toolset = cluster_tool_schemas(cluster)
    if draft.requires_code_tool:
        toolset = toolset + [code_tool_schema()]
    return draft, toolset
