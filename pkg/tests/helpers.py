"""Test doubles shared between the dialogue tests and the acceptance suite."""

from __future__ import annotations

import json
import random

from trajforge.backend import ChatRequest, ChatResponse
from trajforge.blueprint import ScenarioBlueprint, StrategyProfile
from trajforge.scripted import ScriptedTeacher


def simple_blueprint(tool_names: list[str], max_turns: int = 4, requires_code_tool: bool = False) -> ScenarioBlueprint:
    plan = [
        {"step": f"Use {name} to fetch the needed records", "tools": [name]}
        for name in tool_names
    ]
    return ScenarioBlueprint(
        goal="Check the flagged records via " + ", ".join(tool_names),
        plan=plan,
        constraints=["cite only tool-backed values"],
        strategy_profile=StrategyProfile(directives=["Explore: exercise the cluster."]),
        personas={
            "user": {"identity": "auditor", "traits": "terse"},
            "assistant": {"role": "analyst", "verbosity": "concise"},
        },
        requires_code_tool=requires_code_tool,
        computational_need="ranking" if requires_code_tool else None,
        target_turns={"min": 2, "max": max_turns},
        reasoning_mode_target="Direct Execution",
        strategy_adaptation={"decision": "honored", "evidence_steps": [0], "reason": ""},
    )


def _mutate(value: dict, rng: random.Random) -> dict:
    """Break the structure of an observation in one of three ways."""
    mutated = dict(value)
    keys = sorted(mutated)
    choice = rng.randrange(3)
    if choice == 0 and keys:
        mutated.pop(rng.choice(keys))
    elif choice == 1:
        mutated[f"drift_{rng.randrange(100)}"] = rng.randrange(10)
    else:
        if keys:
            key = rng.choice(keys)
            current = mutated[key]
            mutated[key] = [current] if not isinstance(current, list) else str(current)
        else:
            mutated["drift"] = True
    return mutated


class DriftingObservationBackend:
    """Wraps the scripted teacher; randomly drifts observation schemas.

    Drift probability applies per observation reply, so a re-prompt may
    come back clean (repair succeeds) or drift again (episode aborts).
    """

    def __init__(self, fuzz_seed: int, drift_rate: float = 0.5):
        self.inner = ScriptedTeacher(seed=fuzz_seed)
        self.rng = random.Random(fuzz_seed * 31 + 7)
        self.drift_rate = drift_rate

    def complete(self, req: ChatRequest) -> ChatResponse:
        resp = self.inner.complete(req)
        if req.role != "observation":
            return resp
        if self.rng.random() >= self.drift_rate:
            return resp
        obs = json.loads(resp.text)
        return ChatResponse(text=json.dumps(_mutate(obs, self.rng)))
