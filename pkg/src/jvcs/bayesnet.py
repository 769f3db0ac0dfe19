"""Binary Bayesian networks with hard and virtual evidence.

Nodes are either hidden system parameters or observable verification
results.  Every node is binary (Fail=0, Pass=1) and carries a CPT giving
P(node=Pass) for each configuration of its parents.  CPT rows enumerate the
parents as a binary counter with the *last* parent as the least significant
bit.

Inference is exact variable elimination over numpy factors, with barren-node
pruning and a min-degree elimination order.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_PARENTS = 8

FAIL = 0
PASS = 1


class NodeKind(str, Enum):
    PARAMETER = "parameter"
    OBSERVABLE = "observable"


class NetworkError(ValueError):
    """Base class for malformed networks and bad queries."""


class CycleDetected(NetworkError):
    def __init__(self, nodes: Sequence[int]):
        self.nodes = list(nodes)
        super().__init__(f"cycle through nodes {self.nodes}")


class MalformedCpt(NetworkError):
    def __init__(self, node: int, row: int | None, reason: str = ""):
        self.node = node
        self.row = row
        super().__init__(f"node {node} row {row}: malformed CPT {reason}".strip())


class IllegalEdge(NetworkError):
    def __init__(self, src: int, dst: int):
        self.src = src
        self.dst = dst
        super().__init__(f"edge {src} -> {dst} goes from an observable to a parameter")


class TooManyParents(NetworkError):
    pass


class UnknownNode(NetworkError):
    pass


class InconsistentEvidence(NetworkError):
    pass


class AlreadyObserved(NetworkError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    name: str
    kind: NodeKind
    parents: tuple[int, ...]
    cpt: tuple[float, ...]


@dataclass(frozen=True)
class Hard:
    node: int
    state: int  # FAIL or PASS


@dataclass(frozen=True)
class Virtual:
    node: int
    likelihood: tuple[float, float]  # (L_pass, L_fail)

    def __post_init__(self):
        lp, lf = self.likelihood
        if lp < 0 or lf < 0:
            raise ValueError("likelihoods must be non-negative")
        if lp == 0 and lf == 0:
            raise ValueError("virtual evidence likelihood cannot be (0, 0)")
        top = max(lp, lf)
        object.__setattr__(self, "likelihood", (lp / top, lf / top))


Evidence = Hard | Virtual


def combine_virtual(node: int, likelihoods: Iterable[tuple[float, float]]) -> Virtual:
    """Compose several likelihood pairs on one node by multiplication."""
    lp, lf = 1.0, 1.0
    for a, b in likelihoods:
        lp *= a
        lf *= b
    return Virtual(node, (lp, lf))


@dataclass
class BayesianNetwork:
    nodes: list[Node]
    max_parents: int = MAX_PARENTS
    _children: list[list[int]] = field(init=False, repr=False)
    _factors: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self._children = [[] for _ in self.nodes]
        for node in self.nodes:
            for p in node.parents:
                if 0 <= p < len(self.nodes):
                    self._children[p].append(node.id)
        self._factors = []

    def __len__(self):
        return len(self.nodes)

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def index(self, ref: int | str) -> int:
        if isinstance(ref, str):
            for n in self.nodes:
                if n.name == ref:
                    return n.id
            raise UnknownNode(ref)
        if not 0 <= ref < len(self.nodes):
            raise UnknownNode(ref)
        return ref

    def parameters(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is NodeKind.PARAMETER]

    def observables(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is NodeKind.OBSERVABLE]

    def children(self, node: int) -> list[int]:
        return self._children[node]

    def factor(self, node: int) -> np.ndarray:
        """Factor over (parents..., node), indexed Fail=0/Pass=1."""
        if not self._factors:
            for n in self.nodes:
                t = np.asarray(n.cpt, dtype=float).reshape((2,) * len(n.parents))
                self._factors.append(np.stack([1.0 - t, t], axis=-1))
        return self._factors[node]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "name": n.name,
                    "kind": n.kind.value,
                    "parents": list(n.parents),
                    "cpt": list(n.cpt),
                }
                for n in self.nodes
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping, max_parents: int = MAX_PARENTS) -> "BayesianNetwork":
        raw = sorted(data["nodes"], key=lambda d: d["id"])
        nodes = [
            Node(
                id=int(d["id"]),
                name=str(d.get("name", f"n{d['id']}")),
                kind=NodeKind(d["kind"]),
                parents=tuple(int(p) for p in d.get("parents", [])),
                cpt=tuple(float(x) for x in d["cpt"]),
            )
            for d in raw
        ]
        for pos, n in enumerate(nodes):
            if n.id != pos:
                raise NetworkError(f"node ids must be dense 0..N-1, got {n.id} at {pos}")
        return cls(nodes, max_parents=max_parents)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BayesianNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def validate_network(net: BayesianNetwork) -> None:
    """Raise a NetworkError subclass if ``net`` is not a legal model."""
    n = len(net.nodes)
    for node in net.nodes:
        if len(node.parents) > net.max_parents:
            raise TooManyParents(f"node {node.id} has {len(node.parents)} parents")
        if len(node.cpt) != 2 ** len(node.parents):
            raise MalformedCpt(node.id, None, f"expected {2 ** len(node.parents)} rows")
        for row, p in enumerate(node.cpt):
            if not (0.0 <= p <= 1.0) or p != p:
                raise MalformedCpt(node.id, row, f"value {p} outside [0, 1]")
        for p in node.parents:
            if not 0 <= p < n:
                raise UnknownNode(p)
            if (
                net.nodes[p].kind is NodeKind.OBSERVABLE
                and node.kind is NodeKind.PARAMETER
            ):
                raise IllegalEdge(p, node.id)

    # Kahn's algorithm; leftovers lie on or behind a cycle.
    indeg = [len(node.parents) for node in net.nodes]
    queue = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while queue:
        i = queue.pop()
        seen += 1
        for c in net.children(i):
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if seen < n:
        raise CycleDetected(_find_cycle(net, {i for i in range(n) if indeg[i] > 0}))


def _find_cycle(net: BayesianNetwork, candidates: set[int]) -> list[int]:
    start = min(candidates)
    path = [start]
    on_path = {start: 0}
    node = start
    while True:
        nxt = min(p for p in net.nodes[node].parents if p in candidates)
        if nxt in on_path:
            return list(reversed(path[on_path[nxt]:]))
        on_path[nxt] = len(path)
        path.append(nxt)
        node = nxt


def descendants(net: BayesianNetwork, node: int) -> set[int]:
    node = net.index(node)
    out: set[int] = set()
    stack = list(net.children(node))
    while stack:
        c = stack.pop()
        if c not in out:
            out.add(c)
            stack.extend(net.children(c))
    return out


def ancestors(net: BayesianNetwork, nodes: Iterable[int]) -> set[int]:
    """The given nodes together with everything upstream of them."""
    out: set[int] = set()
    stack = list(nodes)
    while stack:
        v = stack.pop()
        if v not in out:
            out.add(v)
            stack.extend(net.nodes[v].parents)
    return out


# ---------------------------------------------------------------------------
# CPT generators
# ---------------------------------------------------------------------------


def _check_probs(values: Iterable[float]) -> None:
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"probability {v} outside [0, 1]")


def noisy_or_cpt(leak: float, weights: Sequence[float], max_parents: int = MAX_PARENTS) -> list[float]:
    """P(Pass | parents) = 1 - (1 - leak) * prod over Pass parents of (1 - w)."""
    _check_probs([leak, *weights])
    if len(weights) > max_parents:
        raise TooManyParents(f"{len(weights)} parents exceeds cap {max_parents}")
    k = len(weights)
    table = []
    for row in range(2**k):
        q = 1.0 - leak
        for i, w in enumerate(weights):
            if (row >> (k - 1 - i)) & 1:
                q *= 1.0 - w
        table.append(1.0 - q)
    return table


def noisy_and_cpt(leak: float, weights: Sequence[float], max_parents: int = MAX_PARENTS) -> list[float]:
    """P(Pass | parents) = leak * prod over Fail parents of (1 - w).

    ``leak`` is the Pass probability when every parent passes.
    """
    _check_probs([leak, *weights])
    if len(weights) > max_parents:
        raise TooManyParents(f"{len(weights)} parents exceeds cap {max_parents}")
    k = len(weights)
    table = []
    for row in range(2**k):
        p = leak
        for i, w in enumerate(weights):
            if not (row >> (k - 1 - i)) & 1:
                p *= 1.0 - w
        table.append(p)
    return table


# ---------------------------------------------------------------------------
# Variable elimination
# ---------------------------------------------------------------------------

_LETTERS = string.ascii_letters


class _Factor:
    __slots__ = ("vars", "table")

    def __init__(self, vars: tuple[int, ...], table: np.ndarray):
        self.vars = vars
        self.table = table


def _product_sum(factors: list[_Factor], out_vars: tuple[int, ...]) -> _Factor:
    """Multiply ``factors`` and sum out everything not in ``out_vars``."""
    letters: dict[int, str] = {}
    for f in factors:
        for v in f.vars:
            if v not in letters:
                letters[v] = _LETTERS[len(letters)]
    spec = ",".join("".join(letters[v] for v in f.vars) for f in factors)
    spec += "->" + "".join(letters[v] for v in out_vars)
    return _Factor(out_vars, np.einsum(spec, *(f.table for f in factors)))


def _normalize_evidence(net: BayesianNetwork, evidence: Iterable[Evidence]):
    hard: dict[int, int] = {}
    virtual: dict[int, tuple[float, float]] = {}
    for item in evidence:
        node = net.index(item.node)
        if node in hard or node in virtual:
            raise NetworkError(f"more than one evidence item on node {node}")
        if isinstance(item, Hard):
            if item.state not in (FAIL, PASS):
                raise ValueError(f"hard evidence state must be 0 or 1, got {item.state}")
            if net.nodes[node].kind is not NodeKind.OBSERVABLE:
                raise NetworkError(f"hard evidence on hidden node {node}")
            hard[node] = item.state
        else:
            virtual[node] = item.likelihood
    return hard, virtual


def joint_factor(
    net: BayesianNetwork, evidence: Iterable[Evidence], keep: Sequence[int]
) -> np.ndarray:
    """Unnormalized P(keep, evidence) as an array of shape (2,) * len(keep).

    With no ``keep`` nodes this is a 0-d array holding the (likelihood
    weighted) probability of the evidence.
    """
    hard, virtual = _normalize_evidence(net, evidence)
    keep = tuple(net.index(k) for k in keep)
    if len(set(keep)) != len(keep):
        raise ValueError("duplicate query nodes")

    relevant = ancestors(net, [*keep, *hard, *virtual])
    factors: list[_Factor] = []
    for v in sorted(relevant):
        node = net.nodes[v]
        table = net.factor(v)
        scope = (*node.parents, v)
        # Condition on hard evidence by slicing.
        if any(u in hard for u in scope):
            idx = tuple(hard[u] if u in hard else slice(None) for u in scope)
            table = table[idx]
            scope = tuple(u for u in scope if u not in hard)
        factors.append(_Factor(scope, table))
    for v, (lp, lf) in virtual.items():
        factors.append(_Factor((v,), np.array([lf, lp])))

    # Hard-evidence nodes in ``keep`` are already fixed; re-expand at the end.
    free_keep = tuple(k for k in keep if k not in hard)
    eliminate = {v for f in factors for v in f.vars} - set(free_keep)

    while eliminate:
        # Min-degree: pick the variable with the fewest neighbours.
        neigh: dict[int, set[int]] = {v: set() for v in eliminate}
        for f in factors:
            for v in f.vars:
                if v in neigh:
                    neigh[v].update(f.vars)
        var = min(eliminate, key=lambda v: (len(neigh[v]), v))
        touching = [f for f in factors if var in f.vars]
        rest = [f for f in factors if var not in f.vars]
        out = tuple(sorted(neigh[var] - {var}))
        rest.append(_product_sum(touching, out))
        factors = rest
        eliminate.discard(var)

    result = _product_sum(factors, free_keep) if factors else _Factor((), np.array(1.0))
    table = result.table
    if len(free_keep) == len(keep):
        return np.asarray(table, dtype=float)
    full = np.zeros((2,) * len(keep))
    idx = tuple(hard[k] if k in hard else slice(None) for k in keep)
    full[idx] = table
    return full


def evidence_probability(net: BayesianNetwork, evidence: Iterable[Evidence]) -> float:
    """Probability of the hard evidence, weighted by normalized likelihoods."""
    return float(joint_factor(net, evidence, ()))


def posterior(
    net: BayesianNetwork, evidence: Iterable[Evidence], query: Iterable[int]
) -> dict[int, float]:
    """Exact P(node=Pass | evidence) for each queried node."""
    evidence = list(evidence)
    out = {}
    for q in query:
        q = net.index(q)
        t = joint_factor(net, evidence, (q,))
        z = t[0] + t[1]
        if z <= 0.0:
            raise InconsistentEvidence("evidence has probability zero")
        out[q] = float(t[1] / z)
    return out


def predictive(net: BayesianNetwork, evidence: Iterable[Evidence], node: int) -> float:
    """P(next observation of ``node`` is Pass | evidence)."""
    evidence = list(evidence)
    node = net.index(node)
    if net.nodes[node].kind is not NodeKind.OBSERVABLE:
        raise NetworkError(f"node {node} is not observable")
    if any(isinstance(e, Hard) and e.node == node for e in evidence):
        raise AlreadyObserved(node)
    return posterior(net, evidence, [node])[node]


def prior_marginals(net: BayesianNetwork) -> dict[int, float]:
    return posterior(net, [], range(len(net)))
