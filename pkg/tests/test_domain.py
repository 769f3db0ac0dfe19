import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chain_net, random_complete_tree
from jvcs.bayesnet import BayesianNetwork, Node, NodeKind
from jvcs.domain import (
    FAILED,
    NA,
    NA_SELECTED,
    NONE,
    PASSED,
    THRESHOLD_MET,
    Action,
    CorrectionActivity,
    InfeasibleAction,
    NonTerminalPath,
    Scenario,
    ScenarioError,
    SystemState,
    Target,
    TerminalState,
    Turn,
    VerificationActivity,
    VerificationPath,
    VerificationProblem,
)
from jvcs.tree import backup, iter_paths, strategy_value

P, O = NodeKind.PARAMETER, NodeKind.OBSERVABLE


def two_param_problem() -> VerificationProblem:
    """theta_1 -> mu_1, theta_2 -> mu_2, plus a correction on each parameter
    and one on a parameter with no verification below it."""
    net = BayesianNetwork(
        [
            Node(0, "theta_1", P, (), (0.7,)),
            Node(1, "theta_2", P, (), (0.6,)),
            Node(2, "theta_3", P, (), (0.5,)),
            Node(3, "mu_1", O, (0,), (0.2, 0.9)),
            Node(4, "mu_2", O, (1,), (0.3, 0.95)),
        ]
    )
    sc = Scenario(
        net,
        vas=(VerificationActivity("mu_1", 3, 100.0, 50.0), VerificationActivity("mu_2", 4, 200.0, 0.0)),
        cas=(
            CorrectionActivity("phi_1", 1, 1000.0, (1.0, 0.2)),
            CorrectionActivity("phi_2", 2, 10.0, (1.0, 0.5)),
        ),
        targets=(Target(0, 20000.0, 0.95),),
    )
    return VerificationProblem(sc)


class TestFeasibleActions:
    def test_fresh_small_scenario(self):
        from jvcs.scenarios import generate_scenario

        prob = VerificationProblem(generate_scenario("small", 0))
        acts = prob.feasible_actions(prob.initial_state())
        assert len(acts) == 10 and acts[-1] == NA
        assert [a.index for a in acts[:-1]] == list(range(9))

    def test_observed_va_excluded(self):
        prob = two_param_problem()
        s = SystemState(Turn.VA, (PASSED, NONE), (0, 0))
        assert prob.feasible_actions(s) == [Action("VA", 1), NA]

    def test_applied_ca_excluded(self):
        prob = two_param_problem()
        s = SystemState(Turn.CA, (NONE, NONE), (1, 0))
        assert prob.feasible_actions(s) == [Action("CA", 1), NA]

    def test_terminal_state_has_no_actions(self, tiny):
        with pytest.raises(TerminalState):
            tiny.feasible_actions(SystemState(Turn.STOP, (NONE,), (0,)))


class TestTransition:
    def test_va_outcomes_match_predictive(self):
        sc = Scenario(
            chain_net(0.8, (0.2, 0.9)),
            vas=(VerificationActivity("mu_1", 1, 300.0),),
            cas=(),
            targets=(Target(0, 20000.0, 0.99),),
        )
        prob = VerificationProblem(sc)
        outs = prob.transition(prob.initial_state(), Action("VA", 0))
        assert [o.outcome for o in outs] == ["Pass", "Fail"]
        assert outs[0].probability == pytest.approx(0.76, abs=1e-12)
        assert outs[1].probability == pytest.approx(0.24, abs=1e-12)
        assert outs[0].next_state == SystemState(Turn.CA, (PASSED,), ())
        assert outs[1].next_state.va == (FAILED,)

    def test_correction_invalidates_dependent_results(self):
        prob = two_param_problem()
        s = SystemState(Turn.CA, (PASSED, PASSED), (0, 0))
        (out,) = prob.transition(s, Action("CA", 0))
        assert out.probability == 1.0
        assert out.next_state == SystemState(Turn.VA, (PASSED, NONE), (1, 0))

    def test_correction_without_dependents(self):
        prob = two_param_problem()
        s = SystemState(Turn.CA, (PASSED, FAILED), (0, 0))
        (out,) = prob.transition(s, Action("CA", 1))
        assert out.next_state == SystemState(Turn.VA, (PASSED, FAILED), (0, 1))

    def test_na_passes_the_turn_or_stops(self):
        prob = two_param_problem()
        ca_turn = SystemState(Turn.CA, (PASSED, NONE), (0, 0))
        assert prob.transition(ca_turn, NA)[0].next_state.turn is Turn.VA
        va_turn = SystemState(Turn.VA, (PASSED, NONE), (0, 0))
        stop = prob.transition(va_turn, NA)[0].next_state
        assert stop.turn is Turn.STOP and prob.is_terminal(stop) == NA_SELECTED

    def test_infeasible_action(self):
        prob = two_param_problem()
        with pytest.raises(InfeasibleAction):
            prob.transition(prob.initial_state(), Action("CA", 0))

    def test_certain_outcome_is_dropped(self):
        sc = Scenario(
            chain_net(0.5, (1.0, 1.0)),
            vas=(VerificationActivity("mu_1", 1, 1.0),),
            cas=(),
            targets=(Target(0, 1.0, 0.9),),
        )
        prob = VerificationProblem(sc)
        outs = prob.transition(prob.initial_state(), Action("VA", 0))
        assert [(o.outcome, o.probability) for o in outs] == [("Pass", 1.0)]


class TestTerminal:
    def test_threshold_met(self, tiny):
        s = SystemState(Turn.CA, (PASSED,), (0,))
        assert tiny.target_confidences(s)[0] == pytest.approx(0.765 / 0.795)
        assert tiny.is_terminal(s) == THRESHOLD_MET

    def test_below_threshold(self, tiny):
        assert tiny.is_terminal(tiny.initial_state()) is None

    def test_na_selected(self, tiny):
        assert tiny.is_terminal(SystemState(Turn.STOP, (NONE,), (0,))) == NA_SELECTED

    def test_revenue_counts_only_met_targets(self, tiny):
        assert tiny.revenue(SystemState(Turn.STOP, (NONE,), (0,))) == 0.0
        s = SystemState(Turn.CA, (PASSED,), (0,))
        assert tiny.revenue(s) == pytest.approx(20000 * 0.765 / 0.795)


class TestPathValue:
    def test_empty_path(self):
        net = BayesianNetwork([Node(0, "theta", P, (), (0.95,)), Node(1, "mu", O, (0,), (0.5, 0.5))])
        prob = VerificationProblem(
            Scenario(net, (VerificationActivity("mu", 1, 1.0),), (), (Target(0, 20000.0, 0.9),))
        )
        path = VerificationPath([], prob.initial_state())
        assert prob.path_value(path) == pytest.approx(19000.0)

    def test_failed_check_then_stop(self, tiny):
        s0 = tiny.initial_state()
        s1 = SystemState(Turn.CA, (FAILED,), (0,))
        s2 = SystemState(Turn.VA, (FAILED,), (0,))
        path = VerificationPath(
            [(s0, Action("VA", 0), "Fail"), (s1, NA, "Done"), (s2, NA, "Done")],
            SystemState(Turn.STOP, (FAILED,), (0,)),
        )
        assert tiny.path_value(path) == -300.0

    def test_failure_cost_charged(self):
        from jvcs.scenarios import generate_scenario

        prob = VerificationProblem(generate_scenario("small", 0))
        j = [va.id for va in prob.scenario.vas].index("mu_12")
        assert prob.outcome_cost(Action("VA", j), "Fail") == 500 + 8000
        assert prob.outcome_cost(Action("VA", j), "Pass") == 500

    def test_non_terminal_path(self, tiny):
        with pytest.raises(NonTerminalPath):
            tiny.path_value(VerificationPath([], tiny.initial_state()))

    def test_reexecuted_check_charged_twice(self):
        prob = two_param_problem()
        s0 = prob.initial_state()
        a_mu2, a_phi1 = Action("VA", 1), Action("CA", 0)
        s1 = prob.transition(s0, a_mu2)[0].next_state
        s2 = prob.transition(s1, a_phi1)[0].next_state
        s3 = prob.transition(s2, a_mu2)[0].next_state
        s4 = prob.transition(s3, NA)[0].next_state
        s5 = prob.transition(s4, NA)[0].next_state
        path = VerificationPath(
            [(s0, a_mu2, "Pass"), (s1, a_phi1, "Done"), (s2, a_mu2, "Pass"), (s3, NA, "Done"), (s4, NA, "Done")],
            s5,
        )
        assert prob.path_value(path) == -(200 + 1000 + 200)


class TestStrategyValue:
    def test_single_path_equals_path_value(self, tiny):
        from jvcs.tree import attach, leaf

        root = leaf(tiny, tiny.initial_state())
        attach(tiny, root, NA)
        (path,) = list(iter_paths(root))
        assert strategy_value(tiny, root) == tiny.path_value(path) == 0.0


class TestScenario:
    def test_round_trip(self, tmp_path, compact_scenario):
        compact_scenario.save(tmp_path / "s.json")
        back = Scenario.load(tmp_path / "s.json", compact_scenario.network)
        assert back.vas == compact_scenario.vas and back.cas == compact_scenario.cas
        assert back.targets == compact_scenario.targets

    def test_va_must_observe_observable(self):
        with pytest.raises(ScenarioError):
            Scenario(chain_net(), (VerificationActivity("x", 0, 1.0),), (), (Target(0, 1.0, 0.9),)).validate()

    def test_ca_must_target_parameter(self):
        with pytest.raises(ScenarioError):
            Scenario(chain_net(), (), (CorrectionActivity("x", 1, 1.0, (1, 0.5)),), (Target(0, 1.0, 0.9),)).validate()

    def test_threshold_range(self):
        with pytest.raises(ScenarioError):
            Scenario(chain_net(), (), (), (Target(0, 1.0, 0.0),)).validate()

    def test_unknown_node_reference(self, compact_scenario):
        data = compact_scenario.to_dict()
        data["vas"][0]["node"] = "mu_999"
        with pytest.raises(ScenarioError):
            Scenario.from_dict(data, compact_scenario.network)


class TestStateProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_path_probabilities_sum_to_one(self, seed):
        prob = two_param_problem()
        tree = random_complete_tree(prob, random.Random(seed))
        assert sum(p.probability for p in iter_paths(tree)) == pytest.approx(1.0, abs=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_backup_equals_path_sum(self, seed):
        prob = two_param_problem()
        tree = random_complete_tree(prob, random.Random(seed))
        assert backup(prob, tree) == pytest.approx(strategy_value(prob, tree), abs=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_transition_probabilities_sum_to_one(self, seed):
        prob = two_param_problem()
        tree = random_complete_tree(prob, random.Random(seed))
        for node in tree.iter_nodes():
            if not node.is_leaf:
                assert sum(b.probability for b in node.branches) == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_corrections_only_shrink_results(self, seed):
        prob = two_param_problem()
        tree = random_complete_tree(prob, random.Random(seed))
        for node in tree.iter_nodes():
            if node.action is not None and node.action.kind == "CA":
                nxt = node.branches[0].child.state
                k = node.action.index
                assert all(b == NONE or b == a for a, b in zip(node.state.va, nxt.va))
                assert nxt.ca[k] == 1
                assert all(x == y for i, (x, y) in enumerate(zip(node.state.ca, nxt.ca)) if i != k)

    def test_equal_keys_equal_behaviour(self):
        a, b = two_param_problem(), two_param_problem()
        s = SystemState(Turn.VA, (PASSED, NONE), (1, 0))
        assert a.feasible_actions(s) == b.feasible_actions(s)
        assert a.transition(s, Action("VA", 1)) == b.transition(s, Action("VA", 1))
        assert a.confidences(s) == b.confidences(s)
