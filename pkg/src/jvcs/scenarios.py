"""Synthetic scenario generation.

CPTs are drawn from seeded Noisy-OR / Noisy-AND families over a fixed
topology; activity costs come from the bundled topology file.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .bayesnet import BayesianNetwork, Node, NodeKind, noisy_and_cpt, noisy_or_cpt
from .domain import CorrectionActivity, Scenario, Target, VerificationActivity

TEMPLATES = ("tiny", "compact", "small", "large")

# The compact template is the small network with one verification and one
# correction activity withheld, which caps its state space at 2 * 2^4 * 3^8.
COMPACT_EXCLUDED = ("mu_14", "phi_2")

# Sampling ranges for the seeded CPTs.
ROOT_PRIOR = (0.75, 0.92)
PARAM_ALL_PASS = (0.9, 0.97)
PARAM_WEIGHT = (0.4, 0.8)
VA_ALL_PASS = (0.93, 0.99)
VA_PARAM_WEIGHT = (0.6, 0.85)
VA_VA_WEIGHT = (0.05, 0.2)
REPAIR_FAIL_LIKELIHOOD = (0.05, 0.3)


def load_topology(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("jvcs").joinpath("data/optical_instrument.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def tiny_scenario() -> Scenario:
    """One parameter, one verification activity, one (unprofitable) repair."""
    net = BayesianNetwork(
        [
            Node(0, "theta_1", NodeKind.PARAMETER, (), (0.85,)),
            Node(1, "mu_1", NodeKind.OBSERVABLE, (0,), (0.2, 0.9)),
        ]
    )
    return Scenario(
        network=net,
        vas=(VerificationActivity("mu_1", 1, 300.0, 0.0),),
        cas=(CorrectionActivity("phi_1", 0, 25000.0, (1.0, 0.1)),),
        targets=(Target(0, 20000.0, 0.9),),
        name="tiny",
    )


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    return float(rng.uniform(*bounds))


def generate_scenario(
    template: str,
    seed: int = 0,
    topology: Mapping | None = None,
    exclude: tuple[str, ...] = (),
) -> Scenario:
    """Build a seeded scenario.  ``exclude`` withholds activities by id; the
    network itself is unchanged."""
    if template == "tiny":
        return tiny_scenario()
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; expected one of {TEMPLATES}")
    topo = dict(topology) if topology is not None else load_topology()
    large = template == "large"
    if template == "compact":
        exclude = tuple(exclude) + COMPACT_EXCLUDED
    keep = {"small"} | ({"large"} if large else set())
    rng = np.random.default_rng(seed)

    params = [p for p in topo["parameters"] if p["tier"] in keep]
    obs = [o for o in topo["observables"] if o["tier"] in keep]
    names = [p["name"] for p in params] + [o["name"] for o in obs]
    index = {n: i for i, n in enumerate(names)}

    def parents_of(entry) -> list[str]:
        ps = list(entry.get("parents", []))
        if large:
            ps += entry.get("large_parents", [])
        return [p for p in ps if p in index]

    nodes = []
    for p in params:
        ps = parents_of(p)
        if ps:
            cpt = noisy_and_cpt(
                _uniform(rng, PARAM_ALL_PASS), [_uniform(rng, PARAM_WEIGHT) for _ in ps]
            )
        else:
            cpt = noisy_or_cpt(_uniform(rng, ROOT_PRIOR), [])
        nodes.append(Node(index[p["name"]], p["name"], NodeKind.PARAMETER,
                          tuple(index[x] for x in ps), tuple(cpt)))
    for o in obs:
        ps = parents_of(o)
        weights = [
            _uniform(rng, VA_VA_WEIGHT if x.startswith("mu") else VA_PARAM_WEIGHT) for x in ps
        ]
        cpt = noisy_and_cpt(_uniform(rng, VA_ALL_PASS), weights)
        nodes.append(Node(index[o["name"]], o["name"], NodeKind.OBSERVABLE,
                          tuple(index[x] for x in ps), tuple(cpt)))
    net = BayesianNetwork(nodes)

    vas = tuple(
        VerificationActivity(o["name"], index[o["name"]], float(o["cost"]), float(o["failure_cost"]))
        for o in obs
        if o["name"] not in exclude
    )
    # Effects are drawn for every correction so excluding one leaves the
    # others unchanged.
    effects = {
        c["id"]: (1.0, _uniform(rng, REPAIR_FAIL_LIKELIHOOD))
        for c in topo["corrections"]
        if c["tier"] in keep
    }
    cas = tuple(
        CorrectionActivity(c["id"], index[c["target"]], float(c["cost"]), effects[c["id"]])
        for c in topo["corrections"]
        if c["id"] in effects and c["id"] not in exclude
    )
    targets = tuple(
        Target(index[t["node"]], float(t["revenue"]), float(t["threshold"]))
        for t in topo["targets"]
    )
    scenario = Scenario(net, vas, cas, targets, name=f"{template}-{seed}")
    scenario.validate()
    return scenario


def random_network(
    rng: np.random.Generator, n_params: int, n_obs: int, max_parents: int = 3
) -> BayesianNetwork:
    """Random DAG obeying the parameter/observable edge rules, with Noisy-OR
    or Noisy-AND CPTs chosen per node."""
    nodes = []
    n = n_params + n_obs
    for i in range(n):
        kind = NodeKind.PARAMETER if i < n_params else NodeKind.OBSERVABLE
        pool = list(range(min(i, n_params))) if kind is NodeKind.PARAMETER else list(range(i))
        k = int(rng.integers(0, min(max_parents, len(pool)) + 1)) if pool else 0
        if kind is NodeKind.OBSERVABLE and n_params and k == 0:
            k = 1
            pool = list(range(n_params))
        parents = tuple(sorted(int(x) for x in rng.choice(pool, size=k, replace=False))) if k else ()
        leak = float(rng.uniform(0.05, 0.95))
        weights = [float(rng.uniform(0.05, 0.95)) for _ in parents]
        make = noisy_or_cpt if rng.random() < 0.5 else noisy_and_cpt
        nodes.append(Node(i, f"{'theta' if kind is NodeKind.PARAMETER else 'mu'}_{i}", kind,
                          parents, tuple(make(leak, weights))))
    return BayesianNetwork(nodes)
