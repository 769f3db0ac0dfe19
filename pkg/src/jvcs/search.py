"""UCB-driven AND/OR tree search for verification-correction strategies.

Each iteration grows one complete sample tree breadth-first: every tip picks
a single activity by comparing upper confidence bounds of its successor
states, and all results of that activity are attached.  Once no tips remain
the tree is backed up and its state values are merged into a lookup table
that persists across iterations.
"""

from __future__ import annotations

import math
import random
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .domain import NA, Action, DomainError, SystemState, VerificationProblem
from .tree import TreeNode, attach, backup, leaf, strategy_value

METHODS = ("UCBRB1", "UCBRB2", "UCT", "SPMCTS", "MonteCarlo")


class NodeBudgetExceeded(DomainError):
    pass


@dataclass
class SearchConfig:
    method: str = "UCBRB1"
    budget: int = 5000
    seed: int = 0
    trace_every: int = 50
    d1: float = 0.5  # UCT exploration
    d2: float = 0.5  # SP-MCTS exploration
    d3: float = 1.0  # SP-MCTS variance inflation, in (value / d7)^2 units
    d6: float = 0.5  # UCBRB exploration
    d7: float = 20000.0  # value normalizer
    d8: float = 1.0  # penalty step
    d9: int = 50  # expansions per penalty step
    d10: int = 50  # Monte Carlo node limit
    unknown_value: float = 0.0
    max_nodes: int = 5000
    max_depth: int | None = None
    literal_failure_cost: bool = False  # charge failure cost unweighted when selecting
    mc_retries: int = 1000
    # Score an unvisited terminal successor by its (deterministic) revenue
    # rather than by unknown_value.
    known_terminals: bool = True
    rfr_period: int = 3000
    rfr_trees: int = 100
    rfr_percentile: float = 5.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("d6", "d7", "d8", "d9"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.budget < 1 or self.trace_every < 1:
            raise ValueError("budget and trace_every must be at least 1")


class Entry:
    __slots__ = ("best", "visits", "total", "total_sq")

    def __init__(self):
        self.best: float | None = None
        self.visits = 0
        self.total = 0.0
        self.total_sq = 0.0

    def __repr__(self):
        return f"Entry(best={self.best}, visits={self.visits})"


class LookupTable:
    """State key -> best backed-up value and visit count.

    Running sums of (normalized) values are kept too, for the mean-based
    rules; the best value alone drives the repeatable-bandit rule.
    """

    def __init__(self, normalizer: float = 1.0):
        self.entries: dict[SystemState, Entry] = {}
        self.normalizer = normalizer

    def __len__(self):
        return len(self.entries)

    def __contains__(self, state):
        return state in self.entries

    def get(self, state: SystemState) -> Entry | None:
        return self.entries.get(state)

    def visits(self, state: SystemState) -> int:
        e = self.entries.get(state)
        return e.visits if e is not None else 0

    def record(self, state: SystemState, value: float) -> Entry:
        e = self.entries.get(state)
        if e is None:
            e = self.entries[state] = Entry()
        if e.best is None or value > e.best:
            e.best = value
        e.visits += 1
        x = value / self.normalizer
        e.total += x
        e.total_sq += x * x
        return e


class Prior(Protocol):
    def __call__(self, state: SystemState) -> float | None: ...


def ucb_state(
    entry: Entry | None,
    n_parent: int,
    m: int,
    config: SearchConfig,
    prior: float | None = None,
    terminal: bool = False,
    rule: str = "UCBRB",
    terminal_value: float | None = None,
) -> float:
    """Upper confidence bound of a successor state, in units of ``d7``.

    ``terminal_value`` stands in for the best value of a terminal state
    that has no table entry yet.
    """
    best = entry.best if entry is not None else None
    n_k = entry.visits if entry is not None else 0
    if terminal:
        if best is None and terminal_value is not None:
            best = terminal_value
        return (best if best is not None else config.unknown_value) / config.d7

    if rule == "UCBRB":
        if prior is not None:
            first = prior if best is None else max(prior, best)
        else:
            first = best if best is not None else config.unknown_value
        score = first / config.d7 + config.d6 * math.log(n_parent + 1) / (n_k + 1)
    else:
        if n_k:
            mean = entry.total / n_k
        else:
            mean = config.unknown_value / config.d7
        if rule == "UCT":
            score = mean + config.d1 * math.sqrt(2.0 * math.log(n_parent + 1) / (n_k + 1))
        else:
            spread = entry.total_sq - n_k * mean * mean if n_k else 0.0
            score = (
                mean
                + config.d2 * math.sqrt(2.0 * math.log(n_parent + 1) / (n_k + 1))
                + math.sqrt(max(0.0, spread + config.d3) / (n_k + 1))
            )
    return score - config.d8 * (m // config.d9)


def _rule(method: str) -> str:
    return {"UCT": "UCT", "SPMCTS": "SPMCTS"}.get(method, "UCBRB")


def select_activity(
    problem: VerificationProblem,
    state: SystemState,
    table: LookupTable,
    config: SearchConfig,
    m: int = 0,
    prior_fn: Prior | None = None,
    actions: list[Action] | None = None,
) -> Action:
    """The feasible activity whose successors promise the most, net of the
    activity's expected cost.  Ties go to the earliest action (lowest id,
    NA last)."""
    if actions is None:
        actions = problem.feasible_actions(state)
    rule = _rule(config.method)
    n_parent = table.visits(state)
    best_score, best_action = -math.inf, None
    for a in actions:
        if config.literal_failure_cost and a.kind == "VA":
            va = problem.scenario.vas[a.index]
            cost = va.cost + va.failure_cost
        else:
            cost = problem.expected_cost(state, a)
        score = -cost / config.d7
        for o in problem.transition(state, a):
            nxt = o.next_state
            terminal = problem.is_terminal(nxt) is not None
            prior = None
            if prior_fn is not None and not terminal:
                prior = prior_fn(nxt)
            tv = problem.revenue(nxt) if terminal and config.known_terminals else None
            score += o.probability * ucb_state(
                table.get(nxt), n_parent, m, config, prior, terminal, rule, tv
            )
        if score > best_score:
            best_score, best_action = score, a
    return best_action


def build_sample_tree(
    problem: VerificationProblem,
    table: LookupTable,
    config: SearchConfig,
    prior_fn: Prior | None = None,
    choose: Callable[[SystemState, list[Action], int], Action] | None = None,
    node_limit: int | None = None,
) -> TreeNode | None:
    """Expand tips breadth-first until every leaf is terminal.

    ``choose`` overrides UCB selection (used by the Monte Carlo baseline).
    With ``node_limit`` set, returns None as soon as the tree reaches that
    many nodes instead of raising.
    """
    root = leaf(problem, problem.initial_state())
    tips: deque[tuple[TreeNode, int]] = deque()
    if root.terminal is None:
        tips.append((root, 0))
    n_nodes = 1
    m = 0
    while tips:
        node, depth = tips.popleft()
        actions = problem.feasible_actions(node.state)
        if config.max_depth is not None and depth >= config.max_depth:
            actions = [NA]
        if choose is not None:
            action = choose(node.state, actions, m)
        else:
            action = select_activity(problem, node.state, table, config, m, prior_fn, actions)
        children = attach(problem, node, action)
        node.m = m
        m += 1
        n_nodes += len(children)
        if node_limit is not None and n_nodes >= node_limit:
            return None
        if n_nodes > config.max_nodes:
            raise NodeBudgetExceeded(f"sample tree grew past {config.max_nodes} nodes")
        for c in children:
            if c.terminal is None:
                tips.append((c, depth + 1))
    return root


def backup_and_update(problem: VerificationProblem, root: TreeNode, table: LookupTable) -> float:
    """Back the tree up and merge it into ``table``.  A state that occurs
    several times in one tree counts as one visit, with its largest value."""
    value = backup(problem, root)
    per_tree: dict[SystemState, float] = {}
    for node in root.iter_nodes():
        old = per_tree.get(node.state)
        if old is None or node.value > old:
            per_tree[node.state] = node.value
    for state, v in per_tree.items():
        table.record(state, v)
    return value


@dataclass
class SearchResult:
    method: str
    best_tree: TreeNode
    best_value: float
    trace: list[tuple[int, float]]
    wall_times: list[tuple[int, float]]
    first_actions: list[str]
    table: LookupTable
    runtime: float
    periods: int = 0
    tree_values: list[float] = field(default_factory=list)

    def exact_value(self, problem: VerificationProblem) -> float:
        return strategy_value(problem, self.best_tree)


def _stop_everywhere(problem: VerificationProblem, config: SearchConfig) -> TreeNode:
    return build_sample_tree(problem, LookupTable(), config, choose=lambda s, acts, m: NA)


def run_search(
    problem: VerificationProblem,
    config: SearchConfig,
    prior=None,
    on_tree: Callable[[int, TreeNode, float], None] | None = None,
) -> SearchResult:
    """Run ``config.budget`` iterations and keep the best complete tree.

    For UCBRB2 a value prior is created from the config unless ``prior`` is
    given; any object with ``__call__(state)``, ``observe(tree)`` and
    ``end_of_tree(table)`` works.
    """
    start = time.monotonic()
    table = LookupTable(config.d7)
    if config.method == "UCBRB2" and prior is None:
        from .forest import RFRPrior

        prior = RFRPrior(
            problem,
            period=config.rfr_period,
            n_trees=config.rfr_trees,
            percentile=config.rfr_percentile,
            seed=config.seed,
        )
    if config.method != "UCBRB2":
        prior = None
    rng = random.Random(config.seed)

    def random_choice(state, actions, m):
        return actions[rng.randrange(len(actions))]

    best_tree, best_value = None, -math.inf
    trace, wall, firsts, values = [], [], [], []
    for i in range(1, config.budget + 1):
        if config.method == "MonteCarlo":
            tree = None
            for _ in range(config.mc_retries):
                tree = build_sample_tree(
                    problem, table, config, choose=random_choice, node_limit=config.d10
                )
                if tree is not None:
                    break
            if tree is None:
                tree = _stop_everywhere(problem, config)
            value = backup(problem, tree)
        else:
            tree = build_sample_tree(problem, table, config, prior_fn=prior)
            value = backup_and_update(problem, tree, table)
            if prior is not None:
                prior.observe(tree)
                prior.end_of_tree(table)
        values.append(value)
        firsts.append(problem.action_name(tree.action) if tree.action is not None else "")
        if value > best_value:
            best_tree, best_value = tree, value
        if on_tree is not None:
            on_tree(i, tree, value)
        if i % config.trace_every == 0 or i == config.budget:
            trace.append((i, best_value))
            wall.append((i, time.monotonic() - start))
    return SearchResult(
        method=config.method,
        best_tree=best_tree,
        best_value=best_value,
        trace=trace,
        wall_times=wall,
        first_actions=firsts,
        table=table,
        runtime=time.monotonic() - start,
        periods=getattr(prior, "periods", 0) if prior is not None else 0,
        tree_values=values,
    )


def first_turn_actions(result: SearchResult, start: int, stop: int) -> set[str]:
    """Distinct root activities chosen in sample trees ``start..stop`` (1-based, inclusive)."""
    return set(result.first_actions[start - 1:stop])
