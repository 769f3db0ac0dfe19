import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jvcs.domain import NA, Action, CorrectionActivity, Scenario, Target, VerificationActivity, VerificationProblem
from jvcs.bayesnet import BayesianNetwork, Node, NodeKind
from jvcs.forest import NullPrior
from jvcs.search import (
    Entry,
    LookupTable,
    NodeBudgetExceeded,
    SearchConfig,
    backup_and_update,
    build_sample_tree,
    first_turn_actions,
    run_search,
    select_activity,
    ucb_state,
)
from jvcs.tree import TreeNode, backup, strategy_value

P, O = NodeKind.PARAMETER, NodeKind.OBSERVABLE


def entry(best, visits):
    e = Entry()
    e.best, e.visits = best, visits
    return e


def two_check_problem(cost_a=3300.0, cost_b=100.0) -> VerificationProblem:
    """Two checks with identical CPTs on one parameter, differing only in cost."""
    net = BayesianNetwork(
        [
            Node(0, "theta_1", P, (), (0.8,)),
            Node(1, "mu_11", O, (0,), (0.2, 0.9)),
            Node(2, "mu_19", O, (0,), (0.2, 0.9)),
        ]
    )
    sc = Scenario(
        net,
        (VerificationActivity("mu_11", 1, cost_a), VerificationActivity("mu_19", 2, cost_b)),
        (CorrectionActivity("phi_1", 0, 8500.0, (1.0, 0.2)),),
        (Target(0, 20000.0, 0.95),),
    )
    return VerificationProblem(sc)


class TestUcbState:
    def test_fresh_entry(self):
        assert ucb_state(None, 0, 0, SearchConfig()) == 0.0

    def test_hand_evaluation(self):
        got = ucb_state(entry(7780.78, 99), 999, 120, SearchConfig(d6=0.5, d8=1, d9=50))
        assert got == pytest.approx(-1.576422, abs=1e-6)

    def test_terminal_ignores_counts(self):
        cfg = SearchConfig()
        for visits, n, m in ((1, 1, 0), (50, 1000, 500)):
            assert ucb_state(entry(19000.0, visits), n, m, cfg, terminal=True) == pytest.approx(0.95)

    def test_unvisited_terminal_uses_given_value(self):
        assert ucb_state(None, 5, 0, SearchConfig(), terminal=True, terminal_value=19000.0) == 0.95
        assert ucb_state(None, 5, 0, SearchConfig(unknown_value=-20000.0), terminal=True) == -1.0

    def test_prior_takes_max(self):
        cfg = SearchConfig(d6=0.5)
        assert ucb_state(entry(1000.0, 3), 0, 0, cfg, prior=5000.0) == pytest.approx(0.25)
        assert ucb_state(entry(9000.0, 3), 0, 0, cfg, prior=5000.0) == pytest.approx(0.45)
        assert ucb_state(None, 0, 0, cfg, prior=5000.0) == pytest.approx(0.25)

    def test_penalty_steps(self):
        cfg = SearchConfig(d8=2.0, d9=10)
        assert ucb_state(None, 0, 9, cfg) == 0.0
        assert ucb_state(None, 0, 10, cfg) == -2.0
        assert ucb_state(None, 0, 25, cfg) == -4.0

    def test_uct_rule(self):
        cfg = SearchConfig(method="UCT", d1=0.5)
        e = entry(10000.0, 4)
        e.total = 4 * 0.25
        got = ucb_state(e, 9, 0, cfg, rule="UCT")
        assert got == pytest.approx(0.25 + 0.5 * math.sqrt(2 * math.log(10) / 5))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SearchConfig(d6=0.0)
        with pytest.raises(ValueError):
            SearchConfig(method="AStar")


class TestSelectActivity:
    def test_cheaper_of_equal_checks(self):
        prob = two_check_problem()
        table = LookupTable()
        for o in prob.transition(prob.initial_state(), Action("VA", 0)):
            table.record(o.next_state, 15000.0)
        for o in prob.transition(prob.initial_state(), Action("VA", 1)):
            table.record(o.next_state, 15000.0)
        assert select_activity(prob, prob.initial_state(), table, SearchConfig()) == Action("VA", 1)

    def test_all_unknown_prefers_stopping(self):
        prob = two_check_problem()
        cfg = SearchConfig(known_terminals=False)
        assert select_activity(prob, prob.initial_state(), LookupTable(), cfg) == NA

    def test_dominating_check(self):
        prob = two_check_problem()
        table = LookupTable()
        for o in prob.transition(prob.initial_state(), Action("VA", 0)):
            table.record(o.next_state, 18000.0)
        cfg = SearchConfig(known_terminals=False)
        assert select_activity(prob, prob.initial_state(), table, cfg) == Action("VA", 0)

    def test_ties_go_to_lowest_id(self):
        prob = two_check_problem(cost_a=100.0, cost_b=100.0)
        table = LookupTable()
        for a in (0, 1):
            for o in prob.transition(prob.initial_state(), Action("VA", a)):
                table.record(o.next_state, 15000.0)
        assert select_activity(prob, prob.initial_state(), table, SearchConfig()) == Action("VA", 0)

    def test_literal_failure_cost(self):
        net = BayesianNetwork([Node(0, "theta_1", P, (), (0.8,)), Node(1, "mu_1", O, (0,), (0.2, 0.9))])
        sc = Scenario(net, (VerificationActivity("mu_1", 1, 100.0, 50000.0),), (), (Target(0, 20000.0, 0.95),))
        prob = VerificationProblem(sc)
        table = LookupTable()
        for o in prob.transition(prob.initial_state(), Action("VA", 0)):
            table.record(o.next_state, 20000.0)
        s = prob.initial_state()
        # weighted: -(100 + 0.24*50000) + 20000 > 0; unweighted: -50100 + 20000 < 0
        assert select_activity(prob, s, table, SearchConfig()) == Action("VA", 0)
        assert select_activity(prob, s, table, SearchConfig(literal_failure_cost=True)) == NA


class TestSampleTree:
    def test_terminal_root(self):
        net = BayesianNetwork([Node(0, "theta_1", P, (), (0.99,)), Node(1, "mu_1", O, (0,), (0.2, 0.9))])
        prob = VerificationProblem(
            Scenario(net, (VerificationActivity("mu_1", 1, 1.0),), (), (Target(0, 1.0, 0.9),))
        )
        tree = build_sample_tree(prob, LookupTable(), SearchConfig())
        assert tree.is_leaf and tree.size() == 1

    def test_first_tiny_tree_stops_with_unknown_terminals(self, tiny):
        tree = build_sample_tree(tiny, LookupTable(), SearchConfig(known_terminals=False))
        assert tree.action == NA
        assert tree.branches[0].child.terminal is not None

    def test_chance_nodes_are_binary(self, compact):
        tree = build_sample_tree(compact, LookupTable(), SearchConfig())
        for node in tree.iter_nodes():
            if node.action is not None and node.action.kind == "VA":
                assert len(node.branches) == 2

    def test_node_cap(self, compact):
        cfg = SearchConfig(max_nodes=3, d8=1e-9)
        with pytest.raises(NodeBudgetExceeded):
            for _ in range(50):
                table = LookupTable()
                build_sample_tree(compact, table, cfg)

    def test_max_depth_forces_stop(self, compact):
        result = run_search(compact, SearchConfig(budget=30, max_depth=2))
        assert result.best_tree.depth() <= 3


class TestBackup:
    def test_table_keeps_max(self):
        t = LookupTable()
        s = object()
        t.entries[s] = entry(7000.0, 5)
        t.record(s, 6500.0)
        assert (t.get(s).best, t.get(s).visits) == (7000.0, 6)
        t.record(s, 7100.0)
        assert (t.get(s).best, t.get(s).visits) == (7100.0, 7)

    def test_one_visit_per_tree(self, compact):
        table = LookupTable()
        tree = build_sample_tree(compact, table, SearchConfig())
        backup_and_update(compact, tree, table)
        states = {n.state for n in tree.iter_nodes()}
        assert all(table.visits(s) == 1 for s in states)
        assert len(table) == len(states)

    def test_backup_equals_path_sum(self, compact):
        result = run_search(compact, SearchConfig(budget=20))
        assert backup(compact, result.best_tree) == pytest.approx(
            strategy_value(compact, result.best_tree), abs=1e-9
        )


class TestRunSearch:
    def test_budget_one_unknown_terminals(self, tiny):
        result = run_search(tiny, SearchConfig(budget=1, known_terminals=False))
        assert result.best_value == 0.0

    def test_tiny_reaches_optimum(self, tiny):
        result = run_search(tiny, SearchConfig(budget=50, d6=0.5))
        assert result.best_value == pytest.approx(15000.0, abs=1e-9)

    def test_tiny_reaches_optimum_with_unknown_terminals(self, tiny):
        result = run_search(tiny, SearchConfig(budget=50, d6=0.5, known_terminals=False))
        assert result.best_value == pytest.approx(15000.0, abs=1e-9)

    @pytest.mark.parametrize("method", ["UCBRB1", "UCT", "SPMCTS", "MonteCarlo"])
    def test_trace_monotone(self, compact, method):
        result = run_search(compact, SearchConfig(method=method, budget=60, trace_every=10))
        values = [v for _, v in result.trace]
        assert [i for i, _ in result.trace] == [10, 20, 30, 40, 50, 60]
        assert values == sorted(values)
        assert result.best_value == pytest.approx(result.exact_value(compact), abs=1e-9)

    def test_trace_includes_final_tree(self, tiny):
        result = run_search(tiny, SearchConfig(budget=7, trace_every=5))
        assert [i for i, _ in result.trace] == [5, 7]

    def test_monte_carlo_respects_node_limit(self, compact):
        sizes = []
        run_search(compact, SearchConfig(method="MonteCarlo", budget=30, d10=20),
                   on_tree=lambda i, tree, v: sizes.append(tree.size()))
        assert all(s < 20 for s in sizes)

    def test_table_monotone(self, compact, monkeypatch):
        from jvcs import search as search_mod

        tables, seen = [], {}

        class Spy(LookupTable):
            def __init__(self, *a, **k):
                super().__init__(*a, **k)
                tables.append(self)

        def hook(i, tree, value):
            for s, e in tables[0].entries.items():
                if s in seen:
                    assert e.best >= seen[s][0] and e.visits >= seen[s][1]
                seen[s] = (e.best, e.visits)

        monkeypatch.setattr(search_mod, "LookupTable", Spy)
        run_search(compact, SearchConfig(budget=40), on_tree=hook)
        assert seen

    def test_visit_counts_equal_tree_counts(self, compact):
        counts = {}

        def hook(i, tree, value):
            for s in {n.state for n in tree.iter_nodes()}:
                counts[s] = counts.get(s, 0) + 1

        result = run_search(compact, SearchConfig(budget=40), on_tree=hook)
        assert {s: e.visits for s, e in result.table.entries.items()} == counts

    def test_determinism(self, compact):
        a = run_search(compact, SearchConfig(budget=40, seed=3))
        b = run_search(compact, SearchConfig(budget=40, seed=3))
        assert a.trace == b.trace and a.first_actions == b.first_actions

    def test_null_prior_matches_ucbrb1(self, compact):
        a = run_search(compact, SearchConfig(method="UCBRB1", budget=40, seed=1))
        b = run_search(compact, SearchConfig(method="UCBRB2", budget=40, seed=1), prior=NullPrior())
        assert a.trace == b.trace and a.tree_values == b.tree_values

    def test_never_beats_oracle(self, tiny):
        for method in ("UCBRB1", "UCT", "SPMCTS", "MonteCarlo"):
            assert run_search(tiny, SearchConfig(method=method, budget=30)).best_value <= 15000.0 + 1e-6

    def test_first_turn_actions(self, tiny):
        result = run_search(tiny, SearchConfig(budget=10))
        assert first_turn_actions(result, 1, 10) <= {"mu_1", "NA"}


class TestPenaltyProperty:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 3), st.integers(2, 6))
    def test_overwhelming_penalty_stops_late_checks(self, seed, d9):
        """At a VA turn past the penalty step only NA (or a check whose
        outcomes all end the path) escapes the penalty."""
        from jvcs.domain import Turn
        from jvcs.scenarios import generate_scenario

        prob = VerificationProblem(generate_scenario("compact", seed))
        result = run_search(prob, SearchConfig(budget=15, d8=1e12, d9=d9, seed=seed))
        for node in result.best_tree.iter_nodes():
            if node.state.turn is Turn.VA and node.action is not None and node.m >= d9:
                assert node.action == NA or all(b.child.terminal for b in node.branches)
