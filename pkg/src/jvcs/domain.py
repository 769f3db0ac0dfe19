"""Verification planning domain: states, activities, transitions and values.

A system state records whose turn it is (verification or correction), the
status of every verification activity (VA) result and which correction
activities (CA) have been applied.  Its depth is deliberately not part of
its identity, so states reached along different paths share statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Mapping, NamedTuple

from .bayesnet import (
    FAIL,
    PASS,
    BayesianNetwork,
    Evidence,
    Hard,
    InconsistentEvidence,
    NetworkError,
    NodeKind,
    combine_virtual,
    descendants,
    joint_factor,
    posterior,
    validate_network,
)

# VA result status codes; also used verbatim as categorical features.
NONE, PASSED, FAILED = 0, 1, 2

PASS_OUTCOME = "Pass"
FAIL_OUTCOME = "Fail"
DONE_OUTCOME = "Done"

THRESHOLD_MET = "ThresholdMet"
NA_SELECTED = "NaSelected"


class Turn(IntEnum):
    VA = 0
    CA = 1
    STOP = 2  # reached by choosing NA as the verification activity


class SystemState(NamedTuple):
    turn: Turn
    va: tuple[int, ...]
    ca: tuple[int, ...]

    @property
    def evidence_key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return self.va, self.ca

    def to_dict(self) -> dict:
        return {"turn": self.turn.name, "va": list(self.va), "ca": list(self.ca)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SystemState":
        return cls(Turn[d["turn"]], tuple(int(x) for x in d["va"]), tuple(int(x) for x in d["ca"]))


class Action(NamedTuple):
    kind: str  # "VA", "CA" or "NA"
    index: int = -1


NA = Action("NA", -1)


class Outcome(NamedTuple):
    outcome: str
    probability: float
    next_state: SystemState


class DomainError(ValueError):
    pass


class TerminalState(DomainError):
    pass


class InfeasibleAction(DomainError):
    pass


class NonTerminalPath(DomainError):
    pass


class ScenarioError(DomainError):
    pass


@dataclass(frozen=True)
class VerificationActivity:
    id: str
    node: int
    cost: float
    failure_cost: float = 0.0


@dataclass(frozen=True)
class CorrectionActivity:
    id: str
    target: int
    cost: float
    effect: tuple[float, float]  # likelihood pair (L_pass, L_fail)


@dataclass(frozen=True)
class Target:
    node: int
    revenue: float
    threshold: float


@dataclass(frozen=True, eq=False)
class Scenario:
    network: BayesianNetwork
    vas: tuple[VerificationActivity, ...]
    cas: tuple[CorrectionActivity, ...]
    targets: tuple[Target, ...]
    name: str = ""

    def validate(self) -> None:
        net = self.network
        validate_network(net)
        ids = [a.id for a in self.vas] + [a.id for a in self.cas]
        if len(set(ids)) != len(ids):
            raise ScenarioError("activity ids must be unique")
        for va in self.vas:
            if not 0 <= va.node < len(net) or net.nodes[va.node].kind is not NodeKind.OBSERVABLE:
                raise ScenarioError(f"{va.id}: node {va.node} is not an observable node")
            if va.cost < 0 or va.failure_cost < 0:
                raise ScenarioError(f"{va.id}: negative cost")
        if len({va.node for va in self.vas}) != len(self.vas):
            raise ScenarioError("two verification activities observe the same node")
        for ca in self.cas:
            if not 0 <= ca.target < len(net) or net.nodes[ca.target].kind is not NodeKind.PARAMETER:
                raise ScenarioError(f"{ca.id}: target {ca.target} is not a parameter node")
            if ca.cost < 0:
                raise ScenarioError(f"{ca.id}: negative cost")
            lp, lf = ca.effect
            if lp < 0 or lf < 0 or (lp == 0 and lf == 0):
                raise ScenarioError(f"{ca.id}: invalid likelihood pair {ca.effect}")
        if not self.targets:
            raise ScenarioError("at least one target parameter is required")
        for t in self.targets:
            if not 0 <= t.node < len(net) or net.nodes[t.node].kind is not NodeKind.PARAMETER:
                raise ScenarioError(f"target {t.node} is not a parameter node")
            if not 0.0 < t.threshold <= 1.0:
                raise ScenarioError(f"target {t.node}: threshold must lie in (0, 1]")
            if t.revenue < 0:
                raise ScenarioError(f"target {t.node}: negative revenue")

    def to_dict(self) -> dict:
        names = self.network.names
        return {
            "name": self.name,
            "vas": [
                {"id": a.id, "node": names[a.node], "cost": a.cost, "failure_cost": a.failure_cost}
                for a in self.vas
            ],
            "cas": [
                {"id": a.id, "target": names[a.target], "cost": a.cost, "effect": list(a.effect)}
                for a in self.cas
            ],
            "targets": [
                {"node": names[t.node], "revenue": t.revenue, "threshold": t.threshold}
                for t in self.targets
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping, network: BayesianNetwork) -> "Scenario":
        def ref(x):
            try:
                return network.index(x)
            except NetworkError as exc:
                raise ScenarioError(f"unknown node reference {x!r}") from exc

        scenario = cls(
            network=network,
            vas=tuple(
                VerificationActivity(
                    str(d["id"]), ref(d["node"]), float(d["cost"]), float(d.get("failure_cost", 0.0))
                )
                for d in data.get("vas", [])
            ),
            cas=tuple(
                CorrectionActivity(
                    str(d["id"]), ref(d["target"]), float(d["cost"]),
                    (float(d["effect"][0]), float(d["effect"][1])),
                )
                for d in data.get("cas", [])
            ),
            targets=tuple(
                Target(ref(d["node"]), float(d["revenue"]), float(d["threshold"]))
                for d in data["targets"]
            ),
            name=str(data.get("name", "")),
        )
        scenario.validate()
        return scenario

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path, network: BayesianNetwork) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()), network)


@dataclass
class VerificationPath:
    steps: list[tuple[SystemState, Action, str]]
    terminal: SystemState
    probability: float = 1.0


@dataclass
class VerificationProblem:
    """A scenario plus memoized inference for the states it visits.

    All methods are pure functions of the state; the caches only avoid
    re-running inference for evidence sets that were already seen.
    """

    scenario: Scenario
    _z: dict = field(default_factory=dict, init=False, repr=False)
    _conf: dict = field(default_factory=dict, init=False, repr=False)
    _trans: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.scenario.validate()
        net = self.scenario.network
        va_node = {va.node: j for j, va in enumerate(self.scenario.vas)}
        self.invalidates: tuple[tuple[int, ...], ...] = tuple(
            tuple(sorted(va_node[d] for d in descendants(net, ca.target) if d in va_node))
            for ca in self.scenario.cas
        )
        self.target_nodes = tuple(t.node for t in self.scenario.targets)

    @property
    def network(self) -> BayesianNetwork:
        return self.scenario.network

    @property
    def n_vas(self) -> int:
        return len(self.scenario.vas)

    @property
    def n_cas(self) -> int:
        return len(self.scenario.cas)

    def initial_state(self) -> SystemState:
        return SystemState(Turn.VA, (NONE,) * self.n_vas, (0,) * self.n_cas)

    def evidence(self, state: SystemState) -> list[Evidence]:
        items: list[Evidence] = []
        for va, status in zip(self.scenario.vas, state.va):
            if status != NONE:
                items.append(Hard(va.node, PASS if status == PASSED else FAIL))
        by_param: dict[int, list[tuple[float, float]]] = {}
        for ca, applied in zip(self.scenario.cas, state.ca):
            if applied:
                by_param.setdefault(ca.target, []).append(ca.effect)
        for node in sorted(by_param):
            items.append(combine_virtual(node, by_param[node]))
        return items

    # -- inference -----------------------------------------------------------

    def _weigh(self, state: SystemState):
        key = state.evidence_key
        hit = self._z.get(key)
        if hit is None:
            table = joint_factor(self.network, self.evidence(state), self.target_nodes)
            z = float(table.sum())
            if z <= 0.0:
                return z, None
            confs = tuple(
                float(table.take(1, axis=i).sum() / z) for i in range(len(self.target_nodes))
            )
            hit = (z, confs)
            self._z[key] = hit
        return hit

    def _stats(self, state: SystemState) -> tuple[float, tuple[float, ...]]:
        """(evidence weight, target confidences), memoized per evidence key."""
        z, confs = self._weigh(state)
        if confs is None:
            raise InconsistentEvidence(f"state {state.evidence_key} has probability zero")
        return z, confs

    def target_confidences(self, state: SystemState) -> tuple[float, ...]:
        return self._stats(state)[1]

    def confidences(self, state: SystemState) -> tuple[float, ...]:
        """Posterior P(Pass) of every parameter node, in node order."""
        key = state.evidence_key
        hit = self._conf.get(key)
        if hit is None:
            params = self.network.parameters()
            post = posterior(self.network, self.evidence(state), params)
            hit = tuple(post[p] for p in params)
            self._conf[key] = hit
        return hit

    def is_terminal(self, state: SystemState) -> str | None:
        """Reason the state is terminal, or None if planning continues."""
        if state.turn is Turn.STOP:
            return NA_SELECTED
        confs = self._stats(state)[1]
        if all(c >= t.threshold for c, t in zip(confs, self.scenario.targets)):
            return THRESHOLD_MET
        return None

    def revenue(self, state: SystemState) -> float:
        confs = self._stats(state)[1]
        return sum(
            t.revenue * c for c, t in zip(confs, self.scenario.targets) if c >= t.threshold
        )

    # -- actions -------------------------------------------------------------

    def feasible_actions(self, state: SystemState) -> list[Action]:
        if self.is_terminal(state):
            raise TerminalState(state)
        if state.turn is Turn.VA:
            acts = [Action("VA", j) for j, s in enumerate(state.va) if s == NONE]
        else:
            acts = [Action("CA", k) for k, a in enumerate(state.ca) if not a]
        acts.append(NA)
        return acts

    def action_name(self, action: Action) -> str:
        if action.kind == "VA":
            return self.scenario.vas[action.index].id
        if action.kind == "CA":
            return self.scenario.cas[action.index].id
        return "NA"

    def transition(self, state: SystemState, action: Action) -> list[Outcome]:
        key = (state, action)
        hit = self._trans.get(key)
        if hit is not None:
            return hit
        if action not in self.feasible_actions(state):
            raise InfeasibleAction(f"{action} is not feasible in {state}")
        if action.kind == "VA":
            j = action.index
            va_pass = state.va[:j] + (PASSED,) + state.va[j + 1:]
            va_fail = state.va[:j] + (FAILED,) + state.va[j + 1:]
            s_pass = SystemState(Turn.CA, va_pass, state.ca)
            s_fail = SystemState(Turn.CA, va_fail, state.ca)
            z = self._stats(state)[0]
            # A zero-probability result has no defined posterior, so it is dropped.
            p = min(1.0, self._weigh(s_pass)[0] / z)
            out = []
            if p > 0.0:
                out.append(Outcome(PASS_OUTCOME, p, s_pass))
            if p < 1.0:
                out.append(Outcome(FAIL_OUTCOME, 1.0 - p, s_fail))
            if len(out) == 1:
                out[0] = out[0]._replace(probability=1.0)
        elif action.kind == "CA":
            k = action.index
            va = list(state.va)
            for j in self.invalidates[k]:
                va[j] = NONE
            ca = state.ca[:k] + (1,) + state.ca[k + 1:]
            out = [Outcome(DONE_OUTCOME, 1.0, SystemState(Turn.VA, tuple(va), ca))]
        elif state.turn is Turn.VA:
            out = [Outcome(DONE_OUTCOME, 1.0, SystemState(Turn.STOP, state.va, state.ca))]
        else:
            out = [Outcome(DONE_OUTCOME, 1.0, SystemState(Turn.VA, state.va, state.ca))]
        self._trans[key] = out
        return out

    def outcome_cost(self, action: Action, outcome: str) -> float:
        """Money spent when ``action`` realizes ``outcome``."""
        if action.kind == "VA":
            va = self.scenario.vas[action.index]
            return va.cost + (va.failure_cost if outcome == FAIL_OUTCOME else 0.0)
        if action.kind == "CA":
            return self.scenario.cas[action.index].cost
        return 0.0

    def expected_cost(self, state: SystemState, action: Action) -> float:
        """Activity cost plus failure cost weighted by its probability."""
        if action.kind == "VA":
            va = self.scenario.vas[action.index]
            p_fail = sum(o.probability for o in self.transition(state, action) if o.outcome == FAIL_OUTCOME)
            return va.cost + p_fail * va.failure_cost
        if action.kind == "CA":
            return self.scenario.cas[action.index].cost
        return 0.0

    def path_value(self, path: VerificationPath) -> float:
        if not self.is_terminal(path.terminal):
            raise NonTerminalPath(path.terminal)
        spent = sum(self.outcome_cost(a, o) for _, a, o in path.steps)
        return self.revenue(path.terminal) - spent

    def path_probability(self, path: VerificationPath) -> float:
        p = 1.0
        for state, action, outcome in path.steps:
            p *= next(o.probability for o in self.transition(state, action) if o.outcome == outcome)
        return p

    def states_seen(self) -> int:
        return len(self._z)
