"""Random-forest value prior for UCBRB2.

Non-terminal nodes of backed-up sample trees are buffered; every ``period``
nodes a forest is fitted on the buffer plus an equal number of states
resampled from the lookup table.  The low percentile of the per-tree
outputs becomes the prior value of a state during selection.

Fitting uses scikit-learn's CART implementation; the fitted trees are then
flattened into numpy arrays so that all of them can be walked in lockstep
and dumped as plain JSON.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

from .domain import NONE, DomainError, SystemState, VerificationProblem
from .tree import TreeNode

_LEAF = -2


class EmptyTrainingSet(DomainError):
    pass


class UntrainedForest(DomainError):
    pass


def extract_features(problem: VerificationProblem, state: SystemState) -> np.ndarray:
    """Parameter confidences, VA flags (0/1/2), CA flags, VA count, CA count."""
    conf = problem.confidences(state)
    va_count = sum(1 for s in state.va if s != NONE)
    ca_count = sum(state.ca)
    return np.array(
        [*conf, *state.va, *state.ca, va_count, ca_count], dtype=np.float64
    )


# Features are snapped to this grid.  The tree learner casts to float32 and
# treats values closer than 1e-7 as equal, so finer detail cannot be split on.
FEATURE_DECIMALS = 6


def quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(x, dtype=np.float64), FEATURE_DECIMALS).astype(np.float32)


def collapse_duplicates(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge rows with equal quantized features, keeping the largest target."""
    x32 = np.ascontiguousarray(quantize(x))
    uniq, inverse = np.unique(x32, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    best = np.full(len(uniq), -np.inf)
    np.maximum.at(best, inverse, y)
    return uniq.astype(np.float64), best


def nearest_rank(values: np.ndarray, k: float) -> float:
    """k-th percentile by nearest rank: the ceil(k/100 * n)-th smallest value."""
    ordered = np.sort(values)
    rank = max(1, math.ceil(k / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


class RegressionForest:
    """Flattened ensemble of regression trees, padded to a common size."""

    def __init__(self, feature, threshold, left, right, value, percentile: float = 5.0):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value
        self.percentile = percentile
        self._rows = np.arange(len(feature))

    @property
    def n_trees(self) -> int:
        return len(self.feature)

    @classmethod
    def fit(
        cls,
        x: np.ndarray,
        y: np.ndarray,
        n_trees: int = 100,
        percentile: float = 5.0,
        seed: int = 0,
    ) -> "RegressionForest":
        if len(y) == 0:
            raise EmptyTrainingSet("no training samples")
        x, y = collapse_duplicates(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        model = RandomForestRegressor(
            n_estimators=n_trees,
            bootstrap=False,
            max_features="sqrt",
            min_samples_leaf=1,
            random_state=seed,
        )
        scale = y.std() or 1.0
        model.fit(x, (y - y.mean()) / scale)
        x32 = x.astype(np.float32)
        estimators = list(model.estimators_)
        for i, est in enumerate(estimators):
            if _has_mixed_leaf(est.apply(x32), y):
                estimators[i] = DecisionTreeRegressor(
                    max_features="sqrt", random_state=est.random_state
                ).fit(x, _growth_targets(y))
        trees = [est.tree_ for est in estimators]
        width = max(t.node_count for t in trees)
        feature = np.full((n_trees, width), _LEAF, dtype=np.int64)
        threshold = np.zeros((n_trees, width))
        left = np.zeros((n_trees, width), dtype=np.int64)
        right = np.zeros((n_trees, width), dtype=np.int64)
        value = np.zeros((n_trees, width))
        for i, (est, t) in enumerate(zip(estimators, trees)):
            n = t.node_count
            feature[i, :n] = t.feature
            threshold[i, :n] = t.threshold
            left[i, :n] = t.children_left
            right[i, :n] = t.children_right
            value[i, :n] = _leaf_values(est.apply(x32), y, n)
        return cls(feature, threshold, left, right, value, percentile)

    def tree_outputs(self, x: np.ndarray) -> np.ndarray:
        """Output of every tree for one feature vector."""
        x = quantize(x).astype(np.float64)
        node = np.zeros(self.n_trees, dtype=np.int64)
        rows = self._rows
        while True:
            f = self.feature[rows, node]
            inner = f != _LEAF
            if not inner.any():
                break
            go_left = x[np.where(inner, f, 0)] <= self.threshold[rows, node]
            nxt = np.where(go_left, self.left[rows, node], self.right[rows, node])
            node = np.where(inner, nxt, node)
        return self.value[rows, node]

    def predict(self, x: np.ndarray) -> float:
        return nearest_rank(self.tree_outputs(x), self.percentile)

    def predict_many(self, x: np.ndarray) -> np.ndarray:
        """``predict`` for every row of ``x``."""
        x = quantize(np.atleast_2d(x)).astype(np.float64)
        cols = np.arange(len(x))
        rows = self._rows[:, None]
        node = np.zeros((self.n_trees, len(x)), dtype=np.int64)
        while True:
            f = self.feature[rows, node]
            inner = f != _LEAF
            if not inner.any():
                break
            go_left = x[cols, np.where(inner, f, 0)] <= self.threshold[rows, node]
            nxt = np.where(go_left, self.left[rows, node], self.right[rows, node])
            node = np.where(inner, nxt, node)
        out = np.sort(self.value[rows, node], axis=0)
        rank = max(1, math.ceil(self.percentile / 100.0 * self.n_trees))
        return out[rank - 1]

    def to_dict(self) -> dict:
        trees = []
        for i in range(self.n_trees):
            n = _used_width(self.left[i], self.right[i])
            trees.append(
                {
                    "feature": self.feature[i, :n].tolist(),
                    "threshold": self.threshold[i, :n].tolist(),
                    "left": self.left[i, :n].tolist(),
                    "right": self.right[i, :n].tolist(),
                    "value": self.value[i, :n].tolist(),
                }
            )
        return {"percentile": self.percentile, "trees": trees}


def _has_mixed_leaf(leaf_ids: np.ndarray, y: np.ndarray) -> bool:
    order = np.lexsort((y, leaf_ids))
    same_leaf = leaf_ids[order][1:] == leaf_ids[order][:-1]
    return bool(np.any(same_leaf & (y[order][1:] != y[order][:-1])))


def _growth_targets(y: np.ndarray) -> np.ndarray:
    """Value plus rank, both standardized.  The split search treats targets
    a few ulps apart as equal; the rank column keeps such leaves splittable."""
    rank = np.unique(y, return_inverse=True)[1].reshape(-1).astype(np.float64)
    cols = [(c - c.mean()) / (c.std() or 1.0) for c in (y, rank)]
    return np.column_stack(cols)


def _used_width(left: np.ndarray, right: np.ndarray) -> int:
    return int(max(left.max(), right.max(), 0)) + 1


def _leaf_values(leaf_ids: np.ndarray, y: np.ndarray, n_nodes: int) -> np.ndarray:
    """Leaf outputs recomputed from the training targets: exactly the shared
    target when a leaf is pure, otherwise the mean."""
    count = np.bincount(leaf_ids, minlength=n_nodes)
    total = np.bincount(leaf_ids, weights=y, minlength=n_nodes)
    hi = np.full(n_nodes, -np.inf)
    lo = np.full(n_nodes, np.inf)
    np.maximum.at(hi, leaf_ids, y)
    np.minimum.at(lo, leaf_ids, y)
    out = np.zeros(n_nodes)
    used = count > 0
    out[used] = np.where(hi[used] == lo[used], hi[used], total[used] / count[used])
    return out


class NullPrior:
    """A prior that never has an opinion; UCBRB2 then behaves as UCBRB1."""

    periods = 0

    def __call__(self, state: SystemState) -> float | None:
        return None

    def observe(self, tree: TreeNode) -> None:
        pass

    def end_of_tree(self, table) -> None:
        pass


class RFRPrior:
    """Periodically retrained forest prior.

    Only the latest forest is used.  A new forest is published at a sample
    tree boundary once the buffer holds ``period`` nodes; leftover nodes
    carry over to the next period.
    """

    def __init__(
        self,
        problem: VerificationProblem,
        period: int = 3000,
        n_trees: int = 100,
        percentile: float = 5.0,
        seed: int = 0,
        dump_dir: str | Path | None = None,
    ):
        if period < 1 or n_trees < 1:
            raise ValueError("period and n_trees must be positive")
        if not 0 < percentile <= 100:
            raise ValueError("percentile must lie in (0, 100]")
        self.problem = problem
        self.period = period
        self.n_trees = n_trees
        self.percentile = percentile
        self.seed = seed
        self.dump_dir = Path(dump_dir) if dump_dir is not None else None
        self.rng = np.random.default_rng(seed)
        self.buffer: list[tuple[SystemState, float]] = []
        self.forest: RegressionForest | None = None
        self.periods = 0
        self._cache: dict[SystemState, float] = {}

    def __call__(self, state: SystemState) -> float | None:
        if self.forest is None:
            return None
        hit = self._cache.get(state)
        if hit is None:
            hit = self._cache[state] = self.forest.predict(extract_features(self.problem, state))
        return hit

    def predict(self, state: SystemState) -> float:
        """Like calling the prior, but an untrained prior is an error."""
        if self.forest is None:
            raise UntrainedForest("no period has completed yet")
        return self(state)

    def observe(self, tree: TreeNode) -> None:
        for node in tree.iter_nodes():
            if node.terminal is None and not node.is_leaf:
                self.buffer.append((node.state, node.value))

    def end_of_tree(self, table) -> None:
        if len(self.buffer) >= self.period:
            batch, self.buffer = self.buffer[: self.period], self.buffer[self.period:]
            self.train(batch, table)

    def training_set(self, batch, table) -> tuple[np.ndarray, np.ndarray]:
        """The batch plus as many with-replacement draws from non-terminal
        table entries with known values."""
        pool = [
            (s, e.best)
            for s, e in table.entries.items()
            if e.best is not None and self.problem.is_terminal(s) is None
        ]
        samples = list(batch)
        if pool:
            picks = self.rng.integers(0, len(pool), size=len(batch))
            samples += [pool[i] for i in picks]
        x = np.array([extract_features(self.problem, s) for s, _ in samples])
        y = np.array([v for _, v in samples], dtype=np.float64)
        return x, y

    def train(self, batch, table) -> RegressionForest:
        x, y = self.training_set(batch, table)
        self.forest = RegressionForest.fit(
            x, y, self.n_trees, self.percentile, seed=self.seed * 100003 + self.periods
        )
        self.periods += 1
        self._cache.clear()
        if self.dump_dir is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
            out = self.dump_dir / f"forest_{self.periods:04d}.json"
            out.write_text(json.dumps({"period": self.periods, **self.forest.to_dict()}))
        return self.forest
