"""Repeatable-bandit laboratory.

Arm models, the UCBRB index and three comparison policies, cumulative
regret measured against arm suprema, D0 estimation, and a Monte Carlo
check of how fast the running maximum approaches the supremum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

D0_FLOOR = 1e-6
POLICIES = ("UCBRB", "UCT", "SPMCTS", "MARAB")


class UnplayedArm(ValueError):
    pass


class DegenerateArm(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Arm distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("Uniform needs a < b")

    @property
    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    @property
    def supremum(self) -> float:
        return self.b

    def cdf(self, x: float) -> float:
        return min(1.0, max(0.0, (x - self.a) / (self.b - self.a)))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.uniform(self.a, self.b, size)


@dataclass(frozen=True)
class TruncatedNormal:
    mu: float
    sigma: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.a < self.b and self.sigma > 0):
            raise ValueError("TruncatedNormal needs a < b and sigma > 0")

    @property
    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    @property
    def supremum(self) -> float:
        return self.b

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        out = np.empty(int(np.prod(shape)))
        filled = 0
        while filled < out.size:
            draw = rng.normal(self.mu, self.sigma, max(64, 2 * (out.size - filled)))
            draw = draw[(draw >= self.a) & (draw <= self.b)]
            take = min(len(draw), out.size - filled)
            out[filled:filled + take] = draw[:take]
            filled += take
        return out.reshape(shape)


@dataclass(frozen=True)
class BernoulliMixture:
    """With probability ``p`` draw from ``high``, otherwise from ``low``."""

    p: float
    low: Uniform
    high: Uniform

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @property
    def support(self) -> tuple[float, float]:
        parts = ([self.low] if self.p < 1 else []) + ([self.high] if self.p > 0 else [])
        return (min(d.a for d in parts), max(d.b for d in parts))

    @property
    def supremum(self) -> float:
        return self.support[1]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        pick = rng.random(size) < self.p
        return np.where(pick, self.high.sample(rng, size), self.low.sample(rng, size))


def arm_from_dict(d: dict):
    """Parse ``{"kind": "uniform", "a": .., "b": ..}`` style arm specs."""
    kind = d["kind"].lower()
    if kind == "uniform":
        return Uniform(float(d["a"]), float(d["b"]))
    if kind in ("truncnorm", "truncated_normal"):
        return TruncatedNormal(float(d["mu"]), float(d["sigma"]), float(d["a"]), float(d["b"]))
    if kind in ("mixture", "bernoulli_mixture"):
        return BernoulliMixture(float(d["p"]), arm_from_dict(d["low"]), arm_from_dict(d["high"]))
    raise ValueError(f"unknown arm kind {d['kind']!r}")


# ---------------------------------------------------------------------------
# Statistics and indices
# ---------------------------------------------------------------------------


@dataclass
class ArmStats:
    n: int = 0
    x_max: float = -math.inf
    x_min: float = math.inf
    x_sum: float = 0.0
    x_sq_sum: float = 0.0
    rewards: list[float] = field(default_factory=list)  # kept for CVaR only

    def update(self, x: float, keep: bool = False) -> None:
        self.n += 1
        self.x_max = max(self.x_max, x)
        self.x_min = min(self.x_min, x)
        self.x_sum += x
        self.x_sq_sum += x * x
        if keep:
            self.rewards.append(x)

    @property
    def mean(self) -> float:
        return self.x_sum / self.n if self.n else 0.0


@dataclass(frozen=True)
class Policy:
    name: str = "UCBRB"
    d0: float = 1.0
    d1: float = 0.5
    d2: float = 0.5
    d3: float = 1.0
    d4: float = 0.5
    alpha: float = 0.1

    def __post_init__(self):
        if self.name not in POLICIES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICIES}")
        if min(self.d0, self.d4, self.alpha) <= 0 or self.alpha > 1:
            raise ValueError("d0, d4 must be positive and alpha in (0, 1]")


def ucbrb_index(x_max, n_k, n, d0):
    return x_max + 4.0 * np.log(n) / (d0 * n_k)


def uct_index(mean, n_k, n, d1):
    return mean + d1 * np.sqrt(2.0 * np.log(n) / n_k)


def sp_mcts_index(mean, sq_sum, n_k, n, d2, d3):
    spread = np.maximum(0.0, (sq_sum - n_k * mean * mean + d3) / n_k)
    return uct_index(mean, n_k, n, d2) + np.sqrt(spread)


def empirical_cvar(rewards: Sequence[float], alpha: float) -> float:
    """Mean of the lowest ceil(alpha * n) rewards."""
    ordered = np.sort(np.asarray(rewards, dtype=float))
    k = max(1, math.ceil(alpha * len(ordered)))
    return float(ordered[:k].mean())


def _check_played(stats: Sequence[ArmStats]) -> None:
    for i, s in enumerate(stats):
        if s.n < 1:
            raise UnplayedArm(f"arm {i} has not been played")


def ucbrb_select(stats: Sequence[ArmStats], d0: float, n: int) -> int:
    _check_played(stats)
    idx = ucbrb_index(np.array([s.x_max for s in stats]), np.array([s.n for s in stats]), n, d0)
    return int(np.argmax(idx))


def uct_select(stats: Sequence[ArmStats], d1: float, n: int) -> int:
    _check_played(stats)
    idx = uct_index(np.array([s.mean for s in stats]), np.array([s.n for s in stats]), n, d1)
    return int(np.argmax(idx))


def sp_mcts_select(stats: Sequence[ArmStats], d2: float, d3: float, n: int) -> int:
    _check_played(stats)
    idx = sp_mcts_index(
        np.array([s.mean for s in stats]),
        np.array([s.x_sq_sum for s in stats]),
        np.array([s.n for s in stats]),
        n,
        d2,
        d3,
    )
    return int(np.argmax(idx))


def marab_select(stats: Sequence[ArmStats], d4: float, alpha: float, n: int) -> int:
    """Arm with the largest lower confidence bound on its empirical CVaR."""
    _check_played(stats)
    top = math.log(math.ceil(n * alpha)) if n * alpha > 1 else 0.0
    idx = [
        empirical_cvar(s.rewards, alpha) - d4 * math.sqrt(top / math.ceil(s.n * alpha))
        for s in stats
    ]
    return int(np.argmax(idx))


def select(policy: Policy, stats: Sequence[ArmStats], n: int) -> int:
    if policy.name == "UCBRB":
        return ucbrb_select(stats, policy.d0, n)
    if policy.name == "UCT":
        return uct_select(stats, policy.d1, n)
    if policy.name == "SPMCTS":
        return sp_mcts_select(stats, policy.d2, policy.d3, n)
    return marab_select(stats, policy.d4, policy.alpha, n)


def estimate_d0(stats: Sequence[ArmStats], floor: float = D0_FLOOR) -> float:
    """Density lower bound under a uniform-arm assumption:
    min over arms of (n-1) / ((n+1) (x_max - x_min))."""
    best = math.inf
    for i, s in enumerate(stats):
        width = s.x_max - s.x_min
        if s.n < 2 or width <= 0:
            warnings.warn(f"arm {i} has no spread; using the floor {floor}", DegenerateArm)
            return floor
        best = min(best, (s.n - 1) / ((s.n + 1) * width))
    return max(best, floor)


def pilot_stats(arms: Sequence, plays: int, seed: int = 0) -> list[ArmStats]:
    """Play every arm ``plays`` times; handy for estimating D0 up front."""
    rng = np.random.default_rng(seed)
    out = []
    for arm in arms:
        s = ArmStats()
        for x in arm.sample(rng, plays):
            s.update(float(x))
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# Regret simulation
# ---------------------------------------------------------------------------


@dataclass
class RegretCurve:
    n: np.ndarray  # checkpoints
    mean: np.ndarray  # mean cumulative regret at each checkpoint
    stderr: np.ndarray
    counts: np.ndarray  # mean plays per arm at each checkpoint, shape (len(n), K)
    replications: int

    def rows(self):
        for i, n in enumerate(self.n):
            yield int(n), float(self.mean[i]), [float(c) for c in self.counts[i]]


def default_checkpoints(horizon: int, k: int) -> np.ndarray:
    pts = {horizon}
    p = 10
    while p < horizon:
        if p >= k:
            pts.add(p)
        p *= 10
    return np.array(sorted(pts))


def simulate_regret(
    policy: Policy,
    arms: Sequence,
    horizon: int,
    replications: int = 50,
    seed: int = 0,
    checkpoints: Sequence[int] | None = None,
) -> RegretCurve:
    """Cumulative regret u*·n − Σ_k u_k·n_k, averaged over replications.

    Every arm is played once first; replications then advance in lockstep.
    """
    k = len(arms)
    if horizon < k:
        raise ValueError("horizon must be at least the number of arms")
    ck = np.array(sorted(set(checkpoints))) if checkpoints is not None else default_checkpoints(horizon, k)
    if ck[0] < k or ck[-1] > horizon:
        raise ValueError("checkpoints must lie in [number of arms, horizon]")
    sup = np.array([a.supremum for a in arms])
    rng = np.random.default_rng(seed)
    if policy.name == "MARAB":
        counts = np.array([_marab_run(policy, arms, horizon, ck, rng) for _ in range(replications)])
        counts = counts.transpose(1, 0, 2)  # (checkpoints, reps, K)
    else:
        counts = _lockstep(policy, arms, horizon, ck, replications, rng)
    regret = sup.max() * ck[:, None] - (counts * sup).sum(axis=2)
    mean = regret.mean(axis=1)
    se = regret.std(axis=1, ddof=1) / math.sqrt(replications) if replications > 1 else np.zeros(len(ck))
    return RegretCurve(ck, mean, se, counts.mean(axis=1), replications)


def _lockstep(policy, arms, horizon, ck, reps, rng) -> np.ndarray:
    k = len(arms)
    rows = np.arange(reps)
    n_k = np.zeros((reps, k))
    x_max = np.full((reps, k), -np.inf)
    x_sum = np.zeros((reps, k))
    x_sq = np.zeros((reps, k))
    out = np.zeros((len(ck), reps, k))
    # Rewards are drawn per arm in blocks to keep sampling vectorized.
    block = 4096
    pool = [a.sample(rng, (block, reps)) for a in arms]
    used = np.zeros(k, dtype=int)
    ci = 0
    for t in range(1, horizon + 1):
        if t <= k:
            choice = np.full(reps, t - 1)
        else:
            n = t - 1
            if policy.name == "UCBRB":
                idx = ucbrb_index(x_max, n_k, n, policy.d0)
            elif policy.name == "UCT":
                idx = uct_index(x_sum / n_k, n_k, n, policy.d1)
            else:
                idx = sp_mcts_index(x_sum / n_k, x_sq, n_k, n, policy.d2, policy.d3)
            choice = idx.argmax(axis=1)
        x = np.empty(reps)
        for a in np.unique(choice):
            if used[a] == block:
                pool[a] = arms[a].sample(rng, (block, reps))
                used[a] = 0
            sel = choice == a
            x[sel] = pool[a][used[a], sel]
            used[a] += 1
        n_k[rows, choice] += 1
        x_max[rows, choice] = np.maximum(x_max[rows, choice], x)
        x_sum[rows, choice] += x
        x_sq[rows, choice] += x * x
        while ci < len(ck) and ck[ci] == t:
            out[ci] = n_k
            ci += 1
    return out


def _marab_run(policy, arms, horizon, ck, rng) -> np.ndarray:
    stats = [ArmStats() for _ in arms]
    out = np.zeros((len(ck), len(arms)))
    ci = 0
    for t in range(1, horizon + 1):
        a = t - 1 if t <= len(arms) else marab_select(stats, policy.d4, policy.alpha, t - 1)
        stats[a].update(float(arms[a].sample(rng, 1)[0]), keep=True)
        while ci < len(ck) and ck[ci] == t:
            out[ci] = [s.n for s in stats]
            ci += 1
    return out


# ---------------------------------------------------------------------------
# Running-maximum tail
# ---------------------------------------------------------------------------


class TailEstimate(NamedTuple):
    probability: float
    stderr: float


def max_tail_probability(
    dist, t: int, epsilon: float, replications: int = 100_000, seed: int = 0
) -> TailEstimate:
    """Monte Carlo estimate of P(max of t draws <= supremum - epsilon)."""
    if t < 1 or epsilon < 0:
        raise ValueError("need t >= 1 and epsilon >= 0")
    rng = np.random.default_rng(seed)
    level = dist.supremum - epsilon
    hits = 0
    chunk = max(1, 2_000_000 // t)
    done = 0
    while done < replications:
        m = min(chunk, replications - done)
        hits += int((dist.sample(rng, (m, t)).max(axis=1) <= level).sum())
        done += m
    p = hits / replications
    return TailEstimate(p, math.sqrt(p * (1 - p) / replications))


def tail_bound(t: int, density_floor: float, epsilon: float) -> float:
    """exp(-t·D·ε), the exponential bound on the tail above."""
    return math.exp(-t * density_floor * epsilon)
