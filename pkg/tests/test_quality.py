from __future__ import annotations

import json
import random

import pytest

from trajforge.backend import ChatResponse
from trajforge.metrics import LEVEL_GLOBAL, LEVEL_INSTRUCTION, LEVEL_LOCAL
from trajforge.quality import (
    LintViolation,
    QualityConfig,
    assign_param_deps_by_rules,
    decide_suitability,
    extract_entity_pairs,
    judge,
    lint_numeric_grounding,
    lint_structure,
    normalize_number,
    rule_based_verdict,
    run_lints,
)
from trajforge.schema_shape import infer_shape
from trajforge.trajectory import Trajectory, Turn

from .conftest import SequenceBackend


def build_traj(turn_specs, locks=None, status="complete", blueprint=None) -> Trajectory:
    turns = []
    for spec in turn_specs:
        role = spec[0]
        if role in ("user", "assistant"):
            turns.append(Turn(role=role, index=len(turns), content=spec[1]))
        elif role == "tool_call":
            turns.append(Turn(role=role, index=len(turns), call={"tool": spec[1], "arguments": spec[2]}))
        else:
            turns.append(
                Turn(role="observation", index=len(turns), observation=spec[1], origin=spec[2] if len(spec) > 2 else "simulated")
            )
    traj = Trajectory(
        trajectory_id="q-test",
        cluster_id="crm",
        turns=turns,
        status=status,
        blueprint=blueprint,
    )
    if locks is None:
        locks = {}
        pending = None
        for t in turns:
            if t.role == "tool_call":
                pending = t.call["tool"]
            elif t.role == "observation" and pending and t.origin != "sandbox":
                locks.setdefault(pending, infer_shape(t.observation))
                pending = None
    traj.schema_locks = locks
    return traj


WELL_FORMED = [
    ("user", "look up order 7 for me"),
    ("assistant", "Checking now."),
    ("tool_call", "find_customer", {"query": "order 7"}),
    ("observation", {"status": "ok", "value": 42, "id": "c-1", "name": "Acme"}),
    ("assistant", "The lookup returned value 42."),
]


class TestNormalization:
    @pytest.mark.parametrize(
        "token,expected",
        [
            ("42", "42"),
            ("1,299", "1299"),
            ("$1,299", "1299"),
            ("1,299.00", "1299"),
            ("3.50", "3.5"),
            ("0.250", "0.25"),
            ("-17", "17"),
        ],
    )
    def test_table(self, token, expected):
        assert normalize_number(token) == expected


class TestNumericGrounding:
    def test_grounded_number_passes(self):
        assert lint_numeric_grounding(build_traj(WELL_FORMED)) == []

    def test_ungrounded_price_flagged(self):
        traj = build_traj(
            [
                ("user", "how much is the plan?"),
                ("assistant", "It costs $1,299 per year."),
            ]
        )
        violations = lint_numeric_grounding(traj)
        assert len(violations) == 1
        assert violations[0].turn_index == 1
        assert "1299" in violations[0].message

    def test_normalized_match_across_formats(self):
        traj = build_traj(
            [
                ("user", "price check please"),
                ("assistant", "Let me look."),
                ("tool_call", "get_invoice", {"invoice_ref": "i1"}),
                ("observation", {"amount": 1299}),
                ("assistant", "The invoice totals 1,299.00 dollars."),
            ]
        )
        assert lint_numeric_grounding(traj) == []

    def test_numbers_inside_code_blocks_ignored(self):
        traj = build_traj(
            [
                ("user", "show me an example snippet"),
                ("assistant", "Here you go:\n```python\nx = 987654\n```\nand inline `y = 555` too."),
            ]
        )
        assert lint_numeric_grounding(traj) == []

    def test_numbers_in_strings_of_observations_ground(self):
        traj = build_traj(
            [
                ("user", "which record?"),
                ("assistant", "Fetching."),
                ("tool_call", "find_customer", {"query": "acme"}),
                ("observation", {"record": "rec-4711"}),
                ("assistant", "Record 4711 is the one."),
            ]
        )
        assert lint_numeric_grounding(traj) == []

    def test_tool_call_arguments_not_treated_as_claims(self):
        traj = build_traj(
            [
                ("user", "refund order please"),
                ("assistant", "On it."),
                ("tool_call", "refund_payment", {"payment_ref": "p-9", "amount": 55.5}),
                ("observation", {"status": "ok"}),
                ("assistant", "The refund went through."),
            ]
        )
        assert lint_numeric_grounding(traj) == []

    def test_user_stated_numbers_ground_later_claims(self):
        traj = build_traj(
            [
                ("user", "check invoice 2024 for me"),
                ("assistant", "Invoice 2024, checking."),
            ]
        )
        assert lint_numeric_grounding(traj) == []


class TestStructureLint:
    def test_well_formed_is_clean(self):
        assert lint_structure(build_traj(WELL_FORMED)) == []

    def test_call_without_observation_flagged(self):
        traj = build_traj(
            [
                ("user", "go"),
                ("assistant", "ok"),
                ("tool_call", "find_customer", {"query": "x"}),
                ("assistant", "done"),
            ]
        )
        assert any(v.kind == "turn_order" for v in lint_structure(traj))

    def test_entity_rename_flagged(self):
        traj = build_traj(
            [
                ("user", "who is c-1?"),
                ("assistant", "Looking."),
                ("tool_call", "find_customer", {"query": "c-1"}),
                ("observation", {"id": "c-1", "name": "Acme"}),
                ("assistant", "It is Acme."),
                ("user", "and their orders?"),
                ("assistant", "Pulling."),
                ("tool_call", "list_orders", {"customer_ref": "c-1"}),
                ("observation", {"orders": [], "id": "c-1", "name": "Globex"}),
                ("assistant", "No orders on file."),
            ]
        )
        violations = [v for v in lint_structure(traj) if v.kind == "entity_consistency"]
        assert len(violations) == 1
        assert "Acme" in violations[0].message and "Globex" in violations[0].message

    def test_prefixed_entity_keys_pair(self):
        pairs = extract_entity_pairs(
            {"customer_id": "c-9", "customer_name": "Initech", "note": {"id": 5, "name": "memo"}}
        )
        assert pairs == {"c-9": "Initech", "5": "memo"}

    def test_schema_drift_in_record_flagged(self):
        traj = build_traj(
            [
                ("user", "two lookups please"),
                ("assistant", "First."),
                ("tool_call", "find_customer", {"query": "a"}),
                ("observation", {"status": "ok", "value": 1}),
                ("assistant", "Got it."),
                ("user", "again"),
                ("assistant", "Second."),
                ("tool_call", "find_customer", {"query": "b"}),
                ("observation", {"status": "ok"}),
                ("assistant", "Got it again."),
            ]
        )
        drift = [v for v in lint_structure(traj) if v.kind == "schema_lock"]
        assert drift and "find_customer" in drift[0].message

    def test_recorded_lock_mismatch_flagged(self):
        traj = build_traj(WELL_FORMED, locks={"find_customer": infer_shape({"other": 1})})
        mismatch = [v for v in lint_structure(traj) if v.kind == "schema_lock"]
        assert mismatch

    def test_lint_determinism(self):
        traj = build_traj(WELL_FORMED)
        assert [str(v) for v in run_lints(traj)] == [str(v) for v in run_lints(traj)]


class TestParamDepRules:
    def test_three_levels_assigned(self):
        traj = build_traj(
            [
                ("user", "find the acme account"),
                ("assistant", "Searching."),
                ("tool_call", "find_customer", {"query": "acme"}),
                ("observation", {"customer_ref": "c-77"}),
                ("assistant", "Found c-77."),
                ("user", "now orders"),
                ("assistant", "Pulling."),
                ("tool_call", "list_orders", {"customer_ref": "c-77", "window": "all-time"}),
                ("observation", {"orders": []}),
                ("assistant", "Nothing there."),
            ],
            blueprint={"goal": "find the acme account and their orders"},
        )
        deps = assign_param_deps_by_rules(traj)
        assert deps == [
            {"query": LEVEL_INSTRUCTION},
            {"customer_ref": LEVEL_LOCAL, "window": LEVEL_GLOBAL},
        ]


class TestJudge:
    def judge_reply(self, **overrides):
        reply = {
            "scores": {
                "realism": 9,
                "tool_intelligence": 9,
                "anti_hallucination": 10,
                "goal_achievement": 9,
            },
            "suitable_for_training": True,
            "mode_label": "Multi-step Planning",
            "param_deps": [{"query": "instruction_grounded"}],
            "rejection_reasons": [],
        }
        reply.update(overrides)
        return ChatResponse(text=json.dumps(reply))

    def test_clean_trajectory_accepted(self):
        traj = build_traj(WELL_FORMED)
        backend = SequenceBackend([self.judge_reply()])
        verdict = judge(traj, backend)
        assert verdict.suitable_for_training
        assert verdict.mode_label == "Multi-step Planning"
        assert verdict.param_deps == [{"query": "instruction_grounded"}]

    def test_lint_violation_vetoes_despite_perfect_scores(self):
        traj = build_traj(WELL_FORMED)
        violations = [LintViolation(1, "ungrounded_number", "made-up figure")]
        backend = SequenceBackend([self.judge_reply()])
        verdict = judge(traj, backend, lint_violations=violations)
        assert not verdict.suitable_for_training
        assert any("made-up figure" in r for r in verdict.rejection_reasons)

    def test_novel_mode_tag_preserved_verbatim(self):
        traj = build_traj(WELL_FORMED)
        backend = SequenceBackend([self.judge_reply(mode_label="Hypothesis-Testing")])
        assert judge(traj, backend).mode_label == "Hypothesis-Testing"

    def test_low_score_fails_threshold(self):
        traj = build_traj(WELL_FORMED)
        backend = SequenceBackend(
            [self.judge_reply(scores={"realism": 5, "tool_intelligence": 9, "anti_hallucination": 9, "goal_achievement": 9})]
        )
        verdict = judge(traj, backend, QualityConfig(min_score=7.0))
        assert not verdict.suitable_for_training
        assert any("threshold" in r for r in verdict.rejection_reasons)

    def test_lint_findings_included_in_prompt(self):
        traj = build_traj(WELL_FORMED)
        violations = [LintViolation(3, "entity_consistency", "renamed entity")]
        backend = SequenceBackend([self.judge_reply()])
        judge(traj, backend, lint_violations=violations)
        assert "renamed entity" in backend.requests[0].messages[0]["content"]

    def test_unparseable_judge_rejected_after_budget(self):
        traj = build_traj(WELL_FORMED)
        backend = SequenceBackend([ChatResponse(text="shrug")] * 3)
        verdict = judge(traj, backend)
        assert not verdict.suitable_for_training
        assert any("judge_unparseable" in r for r in verdict.rejection_reasons)
        assert len(backend.requests) == 3

    def test_misaligned_param_deps_repaired(self):
        traj = build_traj(WELL_FORMED)
        backend = SequenceBackend(
            [self.judge_reply(param_deps=[]), self.judge_reply()]
        )
        verdict = judge(traj, backend)
        assert verdict.suitable_for_training
        assert len(backend.requests) == 2


class TestVetoRule:
    def test_randomized_combinations(self):
        rng = random.Random(11)
        dims = ("realism", "tool_intelligence", "anti_hallucination", "goal_achievement")
        for _ in range(100):
            scores = {d: rng.uniform(0, 10) for d in dims}
            judge_ok = rng.random() < 0.5
            n_violations = rng.randint(0, 3)
            violations = [LintViolation(0, "x", "v")] * n_violations
            suitable = decide_suitability(judge_ok, scores, violations, 7.0)
            if n_violations:
                assert suitable is False
            else:
                assert suitable == (judge_ok and all(scores[d] >= 7.0 for d in dims))


class TestRuleBasedVerdict:
    def test_clean_traj_suitable_with_labels(self):
        verdict = rule_based_verdict(build_traj(WELL_FORMED))
        assert verdict.suitable_for_training
        assert verdict.mode_label == "Direct Execution"
        assert len(verdict.param_deps) == 1

    def test_lint_violation_rejects(self):
        traj = build_traj(
            [("user", "price?"), ("assistant", "It is $999.")]
        )
        verdict = rule_based_verdict(traj)
        assert not verdict.suitable_for_training
