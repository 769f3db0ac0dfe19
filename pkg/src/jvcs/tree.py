"""AND/OR strategy trees.

A decision node holds a state and the activity chosen there; each possible
result of that activity hangs off it as a probability-weighted branch.  A
tree is complete when every leaf is a terminal state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .domain import Action, DomainError, SystemState, VerificationPath, VerificationProblem


class IncompleteTree(DomainError):
    pass


@dataclass
class Branch:
    outcome: str
    probability: float
    child: "TreeNode"


@dataclass
class TreeNode:
    state: SystemState
    action: Action | None = None
    branches: list[Branch] = field(default_factory=list)
    terminal: str | None = None
    m: int = -1  # expansion index within its sample tree; -1 for leaves
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.action is None

    def iter_nodes(self) -> Iterator["TreeNode"]:
        """Pre-order traversal, branches in stored order."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(b.child for b in reversed(node.branches))

    def size(self) -> int:
        return sum(1 for _ in self.iter_nodes())

    def depth(self) -> int:
        best = 0
        stack = [(self, 1)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            stack.extend((b.child, d + 1) for b in node.branches)
        return best


def leaf(problem: VerificationProblem, state: SystemState) -> TreeNode:
    return TreeNode(state, terminal=problem.is_terminal(state))


def attach(problem: VerificationProblem, node: TreeNode, action: Action) -> list[TreeNode]:
    """Choose ``action`` at ``node`` and hang every outcome off it."""
    node.action = action
    node.branches = [
        Branch(o.outcome, o.probability, leaf(problem, o.next_state))
        for o in problem.transition(node.state, action)
    ]
    return [b.child for b in node.branches]


def iter_paths(root: TreeNode) -> Iterator[VerificationPath]:
    stack: list[tuple[TreeNode, list, float]] = [(root, [], 1.0)]
    while stack:
        node, steps, prob = stack.pop()
        if node.is_leaf:
            yield VerificationPath(steps, node.state, prob)
            continue
        for b in reversed(node.branches):
            stack.append((b.child, steps + [(node.state, node.action, b.outcome)], prob * b.probability))


def check_complete(problem: VerificationProblem, root: TreeNode) -> None:
    for node in root.iter_nodes():
        if node.is_leaf and not problem.is_terminal(node.state):
            raise IncompleteTree(f"leaf {node.state} is not terminal")


def strategy_value(problem: VerificationProblem, root: TreeNode) -> float:
    """Expected value as the probability-weighted sum over every path."""
    check_complete(problem, root)
    return sum(p.probability * problem.path_value(p) for p in iter_paths(root))


def path_probabilities(root: TreeNode) -> list[float]:
    return [p.probability for p in iter_paths(root)]


def backup(problem: VerificationProblem, root: TreeNode) -> float:
    """Fill ``value`` bottom-up: expected cost of the chosen activity
    subtracted from the probability-weighted child values.  Returns the
    root value."""
    order = list(root.iter_nodes())
    for node in reversed(order):
        if node.is_leaf:
            if node.terminal is None:
                node.terminal = problem.is_terminal(node.state)
                if node.terminal is None:
                    raise IncompleteTree(f"leaf {node.state} is not terminal")
            node.value = problem.revenue(node.state)
        else:
            node.value = -problem.expected_cost(node.state, node.action) + sum(
                b.probability * b.child.value for b in node.branches
            )
    return root.value
