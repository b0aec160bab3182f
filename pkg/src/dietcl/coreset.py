"""Warm-up statistics and the five coreset selectors.

Every selector works per class (or on the pooled task when class balance is
off) and returns a :class:`Coreset` whose size is ``round(s * n)``. Positions
index into the task's training split; positions are assigned in ascending id
order, so "lowest position" and "lowest sample id" are the same tie rule.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from dietcl.errors import ContractError, InputError, RefusalError
from dietcl.nn import entropy

METHODS = ("random", "herding", "uncertainty", "forgetting", "graphcut")
FULL = "full"
POOLED = -1  # quota-table key used when class balance is off
MAX_BRUTE_FORCE = 16


@dataclass(frozen=True)
class WarmupStats:
    history: np.ndarray  # (n, epochs) bool, correctness after each warm-up epoch
    final_probs: np.ndarray  # (n, C_t) over the current task's classes
    embeddings: np.ndarray  # (n, h)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        history = np.array(self.history, dtype=bool)
        if history.ndim == 1:
            history = history[:, None]
        probs = np.atleast_2d(np.array(self.final_probs, dtype=float))
        emb = np.array(self.embeddings, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        labels = np.array(self.labels, dtype=int)
        n = len(labels)
        if not (len(history) == len(probs) == len(emb) == n):
            raise InputError("warm-up statistics disagree on the number of samples")
        for name, arr in (("history", history), ("final_probs", probs),
                          ("embeddings", emb), ("labels", labels)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def epochs(self) -> int:
        return self.history.shape[1]

    @classmethod
    def from_embeddings(cls, embeddings, labels=None) -> "WarmupStats":
        """Stats carrying only embeddings; enough for herding and graphcut."""
        emb = np.asarray(embeddings, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        n = len(emb)
        labels = np.zeros(n, dtype=int) if labels is None else labels
        return cls(np.ones((n, 1), dtype=bool), np.ones((n, 1)), emb, labels)


@dataclass(frozen=True)
class CoresetSpec:
    method: str = "random"
    fraction: float = 0.1
    class_balanced: bool = True
    graphcut_lambda: float = 1.0
    # select the least-forgettable / lowest-entropy samples instead
    invert: bool = False

    def __post_init__(self):
        if self.method not in METHODS + (FULL,):
            raise InputError(f"unknown coreset method {self.method!r}; accepted: {', '.join(METHODS + (FULL,))}")
        if self.method != FULL and not 0 < self.fraction < 1:
            raise InputError(f"coreset fraction {self.fraction} must lie in (0,1)")
        if not self.graphcut_lambda > 0:
            raise InputError("graphcut_lambda must be > 0")

    @property
    def is_full(self) -> bool:
        return self.method == FULL


@dataclass(frozen=True)
class Coreset:
    indices: tuple
    method: str
    fraction: float
    quotas: dict = field(default_factory=dict)
    graphcut_lambda: float = 1.0

    def __len__(self):
        return len(self.indices)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "s": self.fraction,
            "lambda": self.graphcut_lambda,
            "quotas": {str(k): int(v) for k, v in sorted(self.quotas.items())},
            "indices": [int(i) for i in self.indices],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Coreset":
        return cls(tuple(d["indices"]), d["method"], d["s"],
                   {int(k): v for k, v in d["quotas"].items()}, d["lambda"])


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def target_size(n: int, s: float, class_balanced=True, labels=None) -> dict[int, int]:
    """Per-class quota table summing to ``round(s * n)``.

    Balanced quotas use largest-remainder apportionment over the class sizes
    (remainder ties go to the larger class, then the lower class id). When the
    total covers every class, no class is left at zero; the seat comes from the
    class whose quota most exceeds its exact share.
    """
    if n < 1:
        raise InputError("task size must be >= 1")
    total = round_half_up(s * n)
    if total < 1:
        raise InputError(f"fraction too small for task size (s={s}, n={n})")
    total = min(total, n)
    if not class_balanced:
        return {POOLED: total}
    if labels is None:
        raise InputError("class-balanced quotas need the labels")
    classes, counts = np.unique(np.asarray(labels, dtype=int), return_counts=True)
    if counts.sum() != n:
        raise InputError(f"{counts.sum()} labels for a task of size {n}")
    shares = [Fraction(total * int(k), n) for k in counts]
    quotas = [math.floor(q) for q in shares]
    spare = total - sum(quotas)
    order = sorted(range(len(classes)), key=lambda i: (-(shares[i] - quotas[i]), -counts[i], classes[i]))
    for i in order[:spare]:
        quotas[i] += 1
    if total >= len(classes):
        for i in range(len(classes)):
            if quotas[i] == 0:
                # the donor is the class most over its exact share, so a larger
                # class never ends up with fewer seats than a smaller one
                rich = [j for j in range(len(classes)) if quotas[j] >= 2]
                donor = max(rich, key=lambda j: (quotas[j] - shares[j], -counts[j], classes[j]))
                quotas[donor] -= 1
                quotas[i] = 1
    return {int(c): int(q) for c, q in zip(classes, quotas)}


def _groups(labels: np.ndarray, quotas: dict):
    """Yield (class, member positions, quota) in ascending class order."""
    labels = np.asarray(labels, dtype=int)
    for c in sorted(quotas):
        members = np.arange(len(labels)) if c == POOLED else np.flatnonzero(labels == c)
        q = int(quotas[c])
        if q > len(members):
            raise InputError(f"quota {q} exceeds the {len(members)} samples of class {c}")
        if q < 0:
            raise InputError("quotas must be >= 0")
        yield c, members, q


def _coreset(picked, method, quotas, n, fraction=None, lam=1.0) -> Coreset:
    idx = tuple(sorted(int(i) for i in picked))
    if len(set(idx)) != len(idx):
        raise ContractError("selector produced duplicate indices")
    if fraction is None:
        fraction = sum(quotas.values()) / n
    return Coreset(idx, method, fraction, dict(quotas), lam)


def select_random(labels, quotas, rng: np.random.Generator, fraction=None) -> Coreset:
    picked = []
    for _, members, q in _groups(labels, quotas):
        picked.extend(rng.choice(members, size=q, replace=False).tolist())
    return _coreset(picked, "random", quotas, len(labels), fraction)


def herding_order(embeddings, quota: int) -> list[int]:
    """Greedy order minimising the distance between running mean and full mean."""
    emb = np.asarray(embeddings, dtype=float)
    if len(emb) == 0:
        raise ContractError("herding needs a non-empty embedding set")
    if quota > len(emb):
        raise InputError(f"quota {quota} exceeds class size {len(emb)}")
    mu = emb.mean(axis=0)
    running = np.zeros_like(mu)
    free = np.ones(len(emb), dtype=bool)
    order = []
    for k in range(quota):
        cand = np.flatnonzero(free)
        dist = np.linalg.norm(mu - (running + emb[cand]) / (k + 1), axis=1)
        j = int(cand[np.argmin(dist)])
        order.append(j)
        free[j] = False
        running += emb[j]
    return order


def select_herding(stats: WarmupStats, quotas, fraction=None) -> Coreset:
    picked = []
    for _, members, q in _groups(stats.labels, quotas):
        if len(members) == 0:
            raise ContractError("empty class embedding set")
        picked.extend(members[herding_order(stats.embeddings[members], q)].tolist())
    return _coreset(picked, "herding", quotas, stats.n, fraction)


def select_uncertainty(stats: WarmupStats, quotas, invert=False, fraction=None) -> Coreset:
    ent = entropy(stats.final_probs)
    picked = []
    for _, members, q in _groups(stats.labels, quotas):
        key = ent[members] if invert else -ent[members]
        picked.extend(members[np.lexsort((members, key))[:q]].tolist())
    return _coreset(picked, "uncertainty", quotas, stats.n, fraction)


def forgetting_counts(history) -> np.ndarray:
    """Correct->incorrect transitions per sample; never-correct samples get the epoch count."""
    h = np.asarray(history, dtype=bool)
    if h.ndim != 2 or h.shape[1] < 2:
        raise InputError("forgetting needs a correctness history of at least 2 epochs")
    counts = (h[:, :-1] & ~h[:, 1:]).sum(axis=1)
    return np.where(h.any(axis=1), counts, h.shape[1])


def select_forgetting(stats: WarmupStats, quotas, invert=False, fraction=None) -> Coreset:
    counts = forgetting_counts(stats.history)
    wrong_at_end = (~stats.history[:, -1]).astype(int)
    sign = 1 if invert else -1
    picked = []
    for _, members, q in _groups(stats.labels, quotas):
        order = np.lexsort((members, sign * wrong_at_end[members], sign * counts[members]))
        picked.extend(members[order[:q]].tolist())
    return _coreset(picked, "forgetting", quotas, stats.n, fraction)


def similarity_matrix(embeddings) -> np.ndarray:
    """Gaussian kernel with the median pairwise distance as bandwidth (1 if that is 0)."""
    emb = np.asarray(embeddings, dtype=float)
    if emb.ndim == 1:
        emb = emb[:, None]
    sq = ((emb[:, None, :] - emb[None, :, :]) ** 2).sum(axis=-1)
    iu = np.triu_indices(len(emb), k=1)
    sigma = float(np.median(np.sqrt(sq[iu]))) if len(iu[0]) else 0.0
    if sigma == 0.0:
        sigma = 1.0
    return np.exp(-sq / (2.0 * sigma**2))


def graphcut_objective(sim, subset, lam=1.0) -> float:
    """``lam * sum_{i in V, j in S} w_ij - sum_{j<j' in S} w_jj'``.

    Monotone submodular for ``lam >= 1`` since ``w_jj = 1``.
    """
    sim = np.asarray(sim)
    inside = np.zeros(len(sim), dtype=bool)
    inside[list(subset)] = True
    coverage = sim[:, inside].sum()
    block = sim[np.ix_(inside, inside)]
    redundancy = (block.sum() - np.trace(block)) / 2.0
    return float(lam * coverage - redundancy)


def greedy_graphcut(sim, quota: int, lam=1.0) -> tuple[list[int], list[float]]:
    """Greedy maximisation by best marginal gain; returns (order, gains)."""
    sim = np.asarray(sim, dtype=float)
    n = len(sim)
    if quota > n:
        raise InputError(f"quota {quota} exceeds class size {n}")
    # gain(v | S) = lam * sum_{i in V} w_iv - sum_{j in S} w_jv
    coverage = lam * sim.sum(axis=0)
    to_selected = np.zeros(n)
    free = np.ones(n, dtype=bool)
    order, gains = [], []
    for _ in range(quota):
        cand = np.flatnonzero(free)
        gain = coverage[cand] - to_selected[cand]
        k = int(np.argmax(gain))
        v = int(cand[k])
        order.append(v)
        gains.append(float(gain[k]))
        free[v] = False
        to_selected += sim[:, v]
    return order, gains


def select_graphcut(stats: WarmupStats, quotas, lam=1.0, fraction=None) -> Coreset:
    if not lam > 0:
        raise InputError("graphcut lambda must be > 0")
    picked = []
    for _, members, q in _groups(stats.labels, quotas):
        if q == 0:
            continue
        order, _ = greedy_graphcut(similarity_matrix(stats.embeddings[members]), q, lam)
        picked.extend(members[order].tolist())
    return _coreset(picked, "graphcut", quotas, stats.n, fraction, lam)


def brute_force_select(objective: str, embeddings, quota: int, lam=1.0) -> tuple[tuple, float]:
    """Exhaustive optimum over all ``quota``-subsets of one class.

    ``herding`` minimises the mean distance, ``graphcut`` maximises F. The
    first optimum in lexicographic subset order is returned.
    """
    emb = np.asarray(embeddings, dtype=float)
    if emb.ndim == 1:
        emb = emb[:, None]
    n = len(emb)
    if n > MAX_BRUTE_FORCE:
        raise RefusalError(f"{n} points exceed the exhaustive-search limit of {MAX_BRUTE_FORCE}")
    if not 0 <= quota <= n:
        raise InputError(f"quota {quota} outside [0, {n}]")
    if objective == "herding":
        mu = emb.mean(axis=0)
        best, best_val = None, math.inf
        for sub in itertools.combinations(range(n), quota):
            val = float(np.linalg.norm(mu - emb[list(sub)].mean(axis=0))) if sub else float(np.linalg.norm(mu))
            if val < best_val:
                best, best_val = sub, val
        return best, best_val
    if objective == "graphcut":
        sim = similarity_matrix(emb)
        best, best_val = None, -math.inf
        for sub in itertools.combinations(range(n), quota):
            val = graphcut_objective(sim, sub, lam)
            if val > best_val:
                best, best_val = sub, val
        return best, best_val
    raise InputError(f"unknown objective {objective!r}; accepted: herding, graphcut")


def select(spec: CoresetSpec, stats: WarmupStats, rng: np.random.Generator) -> Coreset:
    if spec.is_full:
        q = target_size(stats.n, 1.0, spec.class_balanced, stats.labels)
        return _coreset(range(stats.n), FULL, q, stats.n, 1.0, spec.graphcut_lambda)
    quotas = target_size(stats.n, spec.fraction, spec.class_balanced, stats.labels)
    s = spec.fraction
    if spec.method == "random":
        return select_random(stats.labels, quotas, rng, fraction=s)
    if spec.method == "herding":
        return select_herding(stats, quotas, fraction=s)
    if spec.method == "uncertainty":
        return select_uncertainty(stats, quotas, invert=spec.invert, fraction=s)
    if spec.method == "forgetting":
        return select_forgetting(stats, quotas, invert=spec.invert, fraction=s)
    return select_graphcut(stats, quotas, spec.graphcut_lambda, fraction=s)
