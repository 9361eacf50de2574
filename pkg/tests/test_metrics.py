from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

from trajforge.errors import MetricsError
from trajforge.metrics import (
    LEVEL_GLOBAL,
    LEVEL_INSTRUCTION,
    LEVEL_LOCAL,
    MetricConfig,
    ParamDependency,
    action_complexity,
    cooccurrence_matrix,
    domain_entropy,
    entropy_from_counts,
    mode_entropy,
    primary_cluster,
    trajectory_cac,
)
from trajforge.trajectory import Trajectory, Turn

from .conftest import make_tool


def entropy_oracle(counts):
    """Straight-line evaluation of -sum(p ln p), kept independent of the
    implementation under test."""
    total = sum(counts)
    h = 0.0
    for c in counts:
        if c > 0:
            p = c / total
            h -= p * math.log(p)
    return h


def traj_with_calls(calls, cluster_id="crm", deps=None, mode="Direct Execution"):
    turns = [Turn(role="user", index=0, content="go")]
    for tool, args in calls:
        turns.append(Turn(role="assistant", index=len(turns), content="on it"))
        turns.append(Turn(role="tool_call", index=len(turns), call={"tool": tool, "arguments": args}))
        turns.append(Turn(role="observation", index=len(turns), observation={"ok": True}, origin="simulated"))
    turns.append(Turn(role="assistant", index=len(turns), content="done"))
    return Trajectory(
        trajectory_id=f"traj-{cluster_id}-{len(calls)}",
        cluster_id=cluster_id,
        turns=turns,
        metrics={"mode_label": mode, "param_deps": deps},
    )


class TestEntropy:
    def test_degenerate_is_exactly_zero(self):
        assert entropy_from_counts([17]) == 0.0

    def test_uniform_is_exactly_log_n(self):
        assert entropy_from_counts([5, 5, 5, 5]) == math.log(4)
        assert entropy_from_counts([3, 3, 3]) == math.log(3)

    def test_hand_value_half_quarter_quarter(self):
        # -(0.5 ln 0.5 + 0.25 ln 0.25 + 0.25 ln 0.25) = 1.039720...
        h = entropy_from_counts([2, 1, 1])
        assert abs(h - 1.039721) < 1e-6
        assert abs(h - entropy_oracle([2, 1, 1])) < 1e-12

    def test_three_to_one_split(self):
        h = entropy_from_counts([3, 1])
        assert abs(h - 0.562335) < 1e-6

    def test_oracle_agreement_on_random_vectors(self):
        rng = random.Random(99)
        for _ in range(100):
            counts = [rng.randint(1, 50) for _ in range(rng.randint(1, 12))]
            assert abs(entropy_from_counts(counts) - entropy_oracle(counts)) < 1e-9

    @given(st.lists(st.integers(min_value=1, max_value=1000), min_size=1, max_size=20))
    def test_bounds(self, counts):
        h = entropy_from_counts(counts)
        assert -1e-12 <= h <= math.log(len(counts)) + 1e-12

    @given(
        st.lists(st.integers(min_value=1, max_value=100), min_size=1, max_size=10),
        st.integers(min_value=2, max_value=50),
    )
    def test_scale_invariance(self, counts, k):
        assert entropy_from_counts(counts) == entropy_from_counts([c * k for c in counts])

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            entropy_from_counts([])


class TestCorpusEntropies:
    def test_single_cluster_corpus_is_zero(self, two_cluster_space):
        corpus = [traj_with_calls([("find_customer", {})], "crm") for _ in range(4)]
        assert domain_entropy(corpus, two_cluster_space) == 0.0

    def test_uniform_two_clusters(self, two_cluster_space):
        corpus = [
            traj_with_calls([("find_customer", {})], "crm"),
            traj_with_calls([("get_invoice", {})], "billing"),
        ]
        assert domain_entropy(corpus, two_cluster_space) == math.log(2)

    def test_empty_corpus_rejected(self, two_cluster_space):
        with pytest.raises(MetricsError):
            domain_entropy([], two_cluster_space)

    def test_mode_entropy_values_and_missing_label(self):
        corpus = [traj_with_calls([], mode="A"), traj_with_calls([], mode="B")]
        assert mode_entropy(corpus) == math.log(2)
        unlabeled = traj_with_calls([])
        unlabeled.metrics = None
        unlabeled.trajectory_id = "lost-one"
        with pytest.raises(MetricsError, match="lost-one"):
            mode_entropy(corpus + [unlabeled])

    def test_mode_labels_open_vocabulary(self):
        corpus = [
            traj_with_calls([], mode="Hypothesis-Testing"),
            traj_with_calls([], mode="Recursive-Correction"),
            traj_with_calls([], mode="Hypothesis-Testing"),
        ]
        h = mode_entropy(corpus)
        assert abs(h - entropy_oracle([2, 1])) < 1e-12


class TestActionComplexity:
    def setup_method(self):
        self.cfg = MetricConfig()
        self.tool_a = make_tool("a", domain_id=0)
        self.tool_b_same = make_tool("b", domain_id=0)
        self.tool_c_other = make_tool("c", domain_id=1)

    def test_first_action_defaults(self):
        ac = action_complexity(1, self.tool_a, None, [ParamDependency("x", LEVEL_INSTRUCTION)], self.cfg)
        assert (ac.switch_cost, ac.depth_cost, ac.total) == (1.0, 1.0, 1.0)

    def test_cross_domain_with_global_param(self):
        ac = action_complexity(2, self.tool_c_other, self.tool_a, [ParamDependency("x", LEVEL_GLOBAL)], self.cfg)
        assert ac.switch_cost == pytest.approx(1.2)
        assert ac.depth_cost == 1.2
        assert ac.total == pytest.approx(1.44)

    def test_same_domain_local_params(self):
        ac = action_complexity(2, self.tool_b_same, self.tool_a, [ParamDependency("x", LEVEL_LOCAL)], self.cfg)
        assert ac.total == pytest.approx(1.1)

    def test_zero_argument_call_depth_is_one(self):
        ac = action_complexity(1, self.tool_a, None, [], self.cfg)
        assert ac.depth_cost == 1.0

    def test_depth_is_bottleneck_max_not_sum(self):
        deps = [
            ParamDependency("p1", LEVEL_INSTRUCTION),
            ParamDependency("p2", LEVEL_LOCAL),
            ParamDependency("p3", LEVEL_GLOBAL),
            ParamDependency("p4", LEVEL_LOCAL),
        ]
        ac = action_complexity(1, self.tool_a, None, deps, self.cfg)
        assert ac.depth_cost == 1.2  # max weight, never 1.0+1.1+1.2+1.1

    def test_inconsistent_index_prev_pairing(self):
        with pytest.raises(MetricsError):
            action_complexity(1, self.tool_a, self.tool_b_same, [], self.cfg)
        with pytest.raises(MetricsError):
            action_complexity(2, self.tool_a, None, [], self.cfg)

    def test_omega_must_increase(self):
        with pytest.raises(ValueError):
            MetricConfig(omega={LEVEL_INSTRUCTION: 1.0, LEVEL_LOCAL: 1.0, LEVEL_GLOBAL: 1.2})


def cac_oracle(actions, cfg):
    """Independent straight-line reading of the complexity formulas:
    switch cost mu (+delta on domain change), depth cost = bottleneck
    weight, per-action product, trajectory sum."""
    total = 0.0
    prev_domain = None
    for i, (domain, levels) in enumerate(actions, start=1):
        if i == 1:
            switch = cfg.mu_base
        else:
            switch = cfg.mu_base + (cfg.delta if domain != prev_domain else 0.0)
        depth = 1.0
        for level in levels:
            depth = max(depth, cfg.omega[level])
        total += switch * depth
        prev_domain = domain
    return total


class TestTrajectoryCac:
    def test_no_tool_calls_is_zero(self, two_cluster_space):
        traj = traj_with_calls([])
        assert trajectory_cac(traj, two_cluster_space, MetricConfig()) == 0.0

    def test_hand_case_two_forty_four(self, two_cluster_space):
        traj = traj_with_calls(
            [("find_customer", {"query": "acme"}), ("get_invoice", {"invoice_ref": "i-1"})],
            cluster_id="crm",
            deps=[{"query": LEVEL_INSTRUCTION}, {"invoice_ref": LEVEL_GLOBAL}],
        )
        cac = trajectory_cac(traj, two_cluster_space, MetricConfig())
        assert cac == pytest.approx(1.0 + (1.0 + 0.2) * 1.2)
        assert cac == pytest.approx(2.44)

    def test_fifty_random_trajectories_match_oracle_exactly(self, two_cluster_space):
        rng = random.Random(2024)
        tools = [(t.name, t.domain_id) for c in two_cluster_space.clusters for t in c.tools]
        cfg = MetricConfig()
        levels = [LEVEL_INSTRUCTION, LEVEL_LOCAL, LEVEL_GLOBAL]
        for _ in range(50):
            n = rng.randint(1, 8)
            picked = [rng.choice(tools) for _ in range(n)]
            calls, deps, oracle_actions = [], [], []
            for name, domain in picked:
                args = {f"p{j}": "v" for j in range(rng.randint(0, 3))}
                lv = {a: rng.choice(levels) for a in args}
                calls.append((name, args))
                deps.append(lv)
                oracle_actions.append((domain, list(lv.values())))
            traj = traj_with_calls(calls, cluster_id="crm", deps=deps)
            assert trajectory_cac(traj, two_cluster_space, cfg) == cac_oracle(oracle_actions, cfg)

    def test_cross_domain_action_strictly_increases(self, two_cluster_space):
        base_calls = [("find_customer", {"query": "a"})]
        base = traj_with_calls(base_calls, deps=[{"query": LEVEL_INSTRUCTION}])
        extended = traj_with_calls(
            base_calls + [("get_invoice", {"invoice_ref": "x"})],
            deps=[{"query": LEVEL_INSTRUCTION}, {"invoice_ref": LEVEL_INSTRUCTION}],
        )
        cfg = MetricConfig()
        low = trajectory_cac(base, two_cluster_space, cfg)
        high = trajectory_cac(extended, two_cluster_space, cfg)
        assert high >= low + cfg.mu_base * min(cfg.omega.values())

    def test_unresolvable_tool_names_turn_index(self, two_cluster_space):
        traj = traj_with_calls([("ghost_tool", {})], deps=[{}])
        with pytest.raises(MetricsError, match="turn 2"):
            trajectory_cac(traj, two_cluster_space, MetricConfig())

    def test_missing_deps_rejected(self, two_cluster_space):
        traj = traj_with_calls([("find_customer", {"query": "x"})], deps=None)
        with pytest.raises(MetricsError, match="missing"):
            trajectory_cac(traj, two_cluster_space, MetricConfig())


class TestCooccurrence:
    def test_two_domain_trajectory_fills_all_four_cells(self, two_cluster_space):
        traj = traj_with_calls(
            [("find_customer", {}), ("get_invoice", {})], cluster_id="crm"
        )
        m = cooccurrence_matrix([traj], two_cluster_space)
        assert m[0][1] == m[1][0] == m[0][0] == m[1][1] == 1

    def test_empty_corpus_all_zero(self, two_cluster_space):
        m = cooccurrence_matrix([], two_cluster_space)
        assert all(v == 0 for row in m for v in row)
        assert len(m) == two_cluster_space.n_domains + 1

    def test_disjoint_single_domain_trajectories_diagonal_only(self, two_cluster_space):
        corpus = [
            traj_with_calls([("find_customer", {})], "crm"),
            traj_with_calls([("get_invoice", {})], "billing"),
        ]
        m = cooccurrence_matrix(corpus, two_cluster_space)
        assert m[0][0] == 1 and m[1][1] == 1
        assert m[0][1] == 0 and m[1][0] == 0

    def test_symmetry_on_random_corpora(self, two_cluster_space):
        rng = random.Random(5)
        names = [t.name for c in two_cluster_space.clusters for t in c.tools]
        corpus = [
            traj_with_calls([(rng.choice(names), {}) for _ in range(rng.randint(1, 4))])
            for _ in range(20)
        ]
        m = cooccurrence_matrix(corpus, two_cluster_space)
        n = len(m)
        for i in range(n):
            for j in range(n):
                assert m[i][j] == m[j][i]

    def test_code_tool_occupies_reserved_domain(self, two_cluster_space):
        traj = traj_with_calls([("find_customer", {}), ("run_python", {"code": "print(1)"})])
        m = cooccurrence_matrix([traj], two_cluster_space)
        reserved = two_cluster_space.n_domains
        assert m[0][reserved] == 1 and m[reserved][0] == 1


class TestPrimaryCluster:
    def test_majority_wins(self, two_cluster_space):
        traj = traj_with_calls(
            [("get_invoice", {}), ("refund_payment", {}), ("find_customer", {})],
            cluster_id="crm",
        )
        assert primary_cluster(traj, two_cluster_space) == "billing"

    def test_tie_breaks_to_earliest_invocation(self, two_cluster_space):
        traj = traj_with_calls(
            [("get_invoice", {}), ("find_customer", {})], cluster_id="crm"
        )
        assert primary_cluster(traj, two_cluster_space) == "billing"

    def test_no_calls_falls_back_to_declared_cluster(self, two_cluster_space):
        traj = traj_with_calls([], cluster_id="crm")
        assert primary_cluster(traj, two_cluster_space) == "crm"
