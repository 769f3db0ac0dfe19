"""Deterministic JSON and DOT serialization of strategy trees."""

from __future__ import annotations

import json
from typing import Mapping

from .domain import FAIL_OUTCOME, NA, PASS_OUTCOME, Action, DomainError, SystemState, VerificationProblem
from .tree import Branch, TreeNode, check_complete

FORMATS = ("json", "dot")
_EDGE_LABEL = {PASS_OUTCOME: "P", FAIL_OUTCOME: "F"}


class UnknownActivity(DomainError):
    pass


def action_lookup(problem: VerificationProblem) -> dict[str, Action]:
    names = {"NA": NA}
    names.update({va.id: Action("VA", j) for j, va in enumerate(problem.scenario.vas)})
    names.update({ca.id: Action("CA", k) for k, ca in enumerate(problem.scenario.cas)})
    return names


def strategy_to_dict(problem: VerificationProblem, node: TreeNode) -> dict:
    out = {"state": node.state.to_dict(), "value": node.value}
    if node.is_leaf:
        out["terminal"] = node.terminal or problem.is_terminal(node.state)
        return out
    out["action"] = problem.action_name(node.action)
    out["branches"] = [
        {
            "outcome": b.outcome,
            "probability": b.probability,
            "child": strategy_to_dict(problem, b.child),
        }
        for b in node.branches
    ]
    return out


def strategy_from_dict(problem: VerificationProblem, data: Mapping) -> TreeNode:
    names = action_lookup(problem)
    return _node_from_dict(problem, names, data)


def _node_from_dict(problem, names, data) -> TreeNode:
    node = TreeNode(SystemState.from_dict(data["state"]), value=data.get("value"))
    if "action" not in data:
        node.terminal = problem.is_terminal(node.state)
        return node
    try:
        node.action = names[data["action"]]
    except KeyError:
        raise UnknownActivity(data["action"]) from None
    node.branches = [
        Branch(b["outcome"], float(b["probability"]), _node_from_dict(problem, names, b["child"]))
        for b in data["branches"]
    ]
    return node


def to_json(problem: VerificationProblem, root: TreeNode) -> bytes:
    check_complete(problem, root)
    return (json.dumps(strategy_to_dict(problem, root), indent=1, sort_keys=True) + "\n").encode()


def _skip_na(node: TreeNode) -> TreeNode:
    while node.action == NA:
        node = node.branches[0].child
    return node


def to_dot(problem: VerificationProblem, root: TreeNode) -> bytes:
    """Decision nodes are labeled with their activity, leaves with "Stop";
    VA edges carry P/F and the outcome probability.  NA nodes below the
    root only pass the turn and are folded into the edge above them."""
    check_complete(problem, root)
    ids: dict[int, str] = {}
    lines = ["digraph strategy {", "  node [fontname=Helvetica];"]
    edges = []
    stack = [root]
    while stack:
        node = stack.pop()
        nid = ids[id(node)] = f"n{len(ids)}"
        if node.is_leaf:
            lines.append(f'  {nid} [label="Stop", shape=box];')
            continue
        lines.append(f'  {nid} [label="{problem.action_name(node.action)}", shape=ellipse];')
        kids = [(b, _skip_na(b.child)) for b in node.branches]
        for b, child in kids:
            tag = _EDGE_LABEL.get(b.outcome)
            label = f"{tag} ({b.probability:.4f})" if tag else ""
            edges.append((nid, child, label))
        stack.extend(child for _, child in reversed(kids))
    lines += [f'  {a} -> {ids[id(c)]} [label="{label}"];' for a, c, label in edges]
    return ("\n".join(lines + ["}"]) + "\n").encode()


def export_strategy(problem: VerificationProblem, root: TreeNode, fmt: str = "json") -> bytes:
    if fmt == "json":
        return to_json(problem, root)
    if fmt == "dot":
        return to_dot(problem, root)
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
