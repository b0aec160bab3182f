"""Independent reference computations used by the tests."""

import itertools
import math
from fractions import Fraction

import numpy as np


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at array ``x`` (restored afterwards)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max(initial=0.0))


def loop_forward(weights, biases, x, rectify_last=False, hidden_only=False):
    """Scalar-loop MLP forward, deliberately free of numpy matrix ops."""
    layers = list(zip(weights, biases))
    if hidden_only:
        layers = layers[:-1]
    out = []
    for row in x:
        a = [float(v) for v in row]
        for li, (w, b) in enumerate(layers):
            z = []
            for r in range(len(w)):
                s = float(b[r])
                for c in range(len(a)):
                    s += float(w[r][c]) * a[c]
                z.append(s)
            last = li == len(weights) - 1
            a = [max(v, 0.0) for v in z] if (not last or rectify_last) else z
        out.append(a)
    return np.array(out)


def random_net_dims(rng, max_dim=16, max_depth=3):
    depth = int(rng.integers(1, max_depth + 1))
    return [int(d) for d in rng.integers(1, max_dim + 1, size=depth + 1)]


def hamilton_oracle(sizes, total, floor=0):
    """All apportionments of ``total`` closest (L1) to the exact shares, by enumeration.

    ``floor=1`` restricts the search to apportionments giving every class a seat.
    """
    n = sum(sizes)
    shares = [Fraction(total * k, n) for k in sizes]
    best, best_cost = [], None
    for q in itertools.product(*[range(floor, k + 1) for k in sizes]):
        if sum(q) != total:
            continue
        cost = sum(abs(a - s) for a, s in zip(q, shares))
        if best_cost is None or cost < best_cost:
            best, best_cost = [q], cost
        elif cost == best_cost:
            best.append(q)
    return best


def herding_step_oracle(emb, chosen, candidates):
    mu = [sum(col) / len(emb) for col in zip(*emb)]
    best = None
    for c in candidates:
        sub = chosen + [c]
        mean = [sum(emb[i][d] for i in sub) / len(sub) for d in range(len(mu))]
        dist = math.sqrt(sum((a - b) ** 2 for a, b in zip(mu, mean)))
        best = dist if best is None else min(best, dist)
    return best


def naive_forgetting(row):
    if not any(row):
        return len(row)
    return sum(1 for a, b in zip(row, row[1:]) if a and not b)


def naive_F(emb, subset, lam=1.0):
    """Pairwise-loop evaluation of the coverage-minus-redundancy objective."""
    n = len(emb)
    d = [math.dist(emb[i], emb[j]) for i in range(n) for j in range(i + 1, n)]
    sigma = float(np.median(d)) if d else 0.0
    sigma = sigma or 1.0

    def w(i, j):
        return math.exp(-math.dist(emb[i], emb[j]) ** 2 / (2 * sigma**2))

    s = list(subset)
    cover = sum(w(i, j) for i in range(n) for j in s)
    red = sum(w(a, b) for a, b in itertools.combinations(s, 2))
    return lam * cover - red
