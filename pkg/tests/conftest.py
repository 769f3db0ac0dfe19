import itertools
import random

import numpy as np
import pytest

from jvcs.bayesnet import FAIL, PASS, BayesianNetwork, Hard, Node, NodeKind, Virtual
from jvcs.domain import VerificationProblem
from jvcs.scenarios import generate_scenario, tiny_scenario
from jvcs.tree import attach, leaf


def enumerate_posterior(net: BayesianNetwork, evidence, query: int) -> float:
    """P(query=Pass | evidence) by summing the full joint table."""
    hard = {e.node: e.state for e in evidence if isinstance(e, Hard)}
    soft = {e.node: e.likelihood for e in evidence if isinstance(e, Virtual)}
    num = den = 0.0
    for states in itertools.product((FAIL, PASS), repeat=len(net)):
        if any(states[v] != s for v, s in hard.items()):
            continue
        p = 1.0
        for node in net.nodes:
            row = 0
            for par in node.parents:
                row = 2 * row + states[par]
            pp = node.cpt[row]
            p *= pp if states[node.id] == PASS else 1.0 - pp
        for v, (lp, lf) in soft.items():
            p *= lp if states[v] == PASS else lf
        den += p
        if states[query] == PASS:
            num += p
    return num / den


def chain_net(prior=0.8, cpt=(0.2, 0.9)) -> BayesianNetwork:
    return BayesianNetwork(
        [
            Node(0, "theta_1", NodeKind.PARAMETER, (), (prior,)),
            Node(1, "mu_1", NodeKind.OBSERVABLE, (0,), tuple(cpt)),
        ]
    )


def random_complete_tree(problem: VerificationProblem, rng: random.Random, max_nodes: int = 400):
    """Complete tree with uniformly random activities; NA is forced once the
    tree grows past ``max_nodes`` so it always closes."""
    root = leaf(problem, problem.initial_state())
    tips = [root] if root.terminal is None else []
    size = 1
    while tips:
        node = tips.pop()
        acts = problem.feasible_actions(node.state)
        action = acts[-1] if size > max_nodes else rng.choice(acts)
        kids = attach(problem, node, action)
        size += len(kids)
        tips.extend(k for k in kids if k.terminal is None)
    return root


@pytest.fixture
def tiny():
    return VerificationProblem(tiny_scenario())


@pytest.fixture(scope="session")
def compact_scenario():
    return generate_scenario("compact", 0)


@pytest.fixture
def compact(compact_scenario):
    return VerificationProblem(compact_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    acc = sys.modules.get("test_acceptance")
    lines = getattr(acc, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
