"""Exact solvers for small instances.

``backward_induction`` evaluates every state reachable from the initial
state.  The state graph is acyclic: a correction can reset verification
results, but every correction is one-shot, so the number of applied
corrections strictly increases along such an edge, and between corrections
verification statuses only move away from None.  A post-order walk of that
DAG therefore gives exact Bellman values in one pass.

``brute_force_enumerate`` lists every complete strategy tree of a tiny
instance and scores each by summing over its paths.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .domain import NA, Action, DomainError, SystemState, VerificationProblem
from .tree import Branch, TreeNode, strategy_value

DEFAULT_STATE_CAP = 2**21


class StateSpaceTooLarge(DomainError):
    pass


class InstanceTooLarge(DomainError):
    pass


@dataclass
class StateValueTable:
    values: dict[SystemState, tuple[float, Action | None]]
    initial: SystemState

    @property
    def value(self) -> float:
        return self.values[self.initial][0]

    @property
    def action(self) -> Action | None:
        return self.values[self.initial][1]

    def __len__(self):
        return len(self.values)

    def strategy(self, problem: VerificationProblem) -> TreeNode:
        """The optimal strategy tree obtained by following the best actions."""
        root = TreeNode(self.initial)
        stack = [root]
        while stack:
            node = stack.pop()
            value, action = self.values[node.state]
            node.value = value
            if action is None:
                node.terminal = problem.is_terminal(node.state)
                continue
            node.action = action
            for o in problem.transition(node.state, action):
                child = TreeNode(o.next_state)
                node.branches.append(Branch(o.outcome, o.probability, child))
                stack.append(child)
        return root


def q_value(problem: VerificationProblem, state: SystemState, action: Action, values) -> float:
    return -problem.expected_cost(state, action) + sum(
        o.probability * values[o.next_state][0] for o in problem.transition(state, action)
    )


def backward_induction(
    problem: VerificationProblem, state_cap: int = DEFAULT_STATE_CAP
) -> StateValueTable:
    start = problem.initial_state()
    values: dict[SystemState, tuple[float, Action | None]] = {}
    stack: list[tuple[SystemState, bool]] = [(start, False)]
    while stack:
        state, ready = stack.pop()
        if state in values:
            continue
        if problem.is_terminal(state):
            values[state] = (problem.revenue(state), None)
            continue
        actions = problem.feasible_actions(state)
        if not ready:
            stack.append((state, True))
            for a in actions:
                for o in problem.transition(state, a):
                    if o.next_state not in values:
                        stack.append((o.next_state, False))
            continue
        best, best_action = -float("inf"), None
        for a in actions:
            q = q_value(problem, state, a, values)
            if q > best:
                best, best_action = q, a
        values[state] = (best, best_action)
        if len(values) > state_cap:
            raise StateSpaceTooLarge(f"more than {state_cap} reachable states")
    return StateValueTable(values, start)


def count_reachable(problem: VerificationProblem, state_cap: int = DEFAULT_STATE_CAP) -> int:
    seen = {problem.initial_state()}
    frontier = [problem.initial_state()]
    while frontier:
        state = frontier.pop()
        if problem.is_terminal(state):
            continue
        for a in problem.feasible_actions(state):
            for o in problem.transition(state, a):
                if o.next_state not in seen:
                    seen.add(o.next_state)
                    frontier.append(o.next_state)
                    if len(seen) > state_cap:
                        raise StateSpaceTooLarge(f"more than {state_cap} reachable states")
    return len(seen)


# ---------------------------------------------------------------------------
# Brute force
# ---------------------------------------------------------------------------

MAX_BRUTE_VAS = 2
MAX_BRUTE_CAS = 1
MAX_BRUTE_DEPTH = 8


def _strategies(problem: VerificationProblem, state: SystemState, depth: int, cap: int):
    """Yield every complete strategy from ``state`` as nested tuples
    ``(action, ((outcome, prob, sub), ...))``; ``None`` marks a leaf.

    Past ``cap`` decision levels only NA is allowed, which always ends the
    path within two more levels.
    """
    if problem.is_terminal(state):
        yield None
        return
    actions = problem.feasible_actions(state)
    if depth >= cap:
        actions = [NA]
    for a in actions:
        outs = problem.transition(state, a)
        subs = [list(_strategies(problem, o.next_state, depth + 1, cap)) for o in outs]
        for combo in itertools.product(*subs):
            yield (a, tuple((o.outcome, o.probability, c) for o, c in zip(outs, combo)))


def _to_tree(state: SystemState, strat, problem: VerificationProblem) -> TreeNode:
    node = TreeNode(state)
    if strat is None:
        node.terminal = problem.is_terminal(state)
        return node
    action, branches = strat
    node.action = action
    outs = {o.outcome: o.next_state for o in problem.transition(state, action)}
    node.branches = [
        Branch(outcome, prob, _to_tree(outs[outcome], sub, problem))
        for outcome, prob, sub in branches
    ]
    return node


def brute_force_enumerate(
    problem: VerificationProblem, depth_cap: int = 6
) -> tuple[TreeNode, float]:
    """Best strategy by exhaustive enumeration; ties keep the first found
    (lower activity ids come first, NA last)."""
    if problem.n_vas > MAX_BRUTE_VAS or problem.n_cas > MAX_BRUTE_CAS:
        raise InstanceTooLarge(
            f"brute force supports at most {MAX_BRUTE_VAS} VAs and {MAX_BRUTE_CAS} CA"
        )
    if depth_cap > MAX_BRUTE_DEPTH:
        raise InstanceTooLarge(f"depth cap {depth_cap} exceeds {MAX_BRUTE_DEPTH}")
    start = problem.initial_state()
    best_tree, best_value = None, -float("inf")
    for strat in _strategies(problem, start, 0, depth_cap):
        tree = _to_tree(start, strat, problem)
        value = strategy_value(problem, tree)
        if value > best_value:
            best_tree, best_value = tree, value
    return best_tree, best_value


