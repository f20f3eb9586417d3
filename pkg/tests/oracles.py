"""Independent reference computations used by the test suite.

Each oracle is written from the definition with plain loops and shares no
code with the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar f at x by central differences."""
    x = np.array(x, dtype=np.float64, order="C")
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a)))) if a.size else 0.0


def conv1d_loops(x, W, b, stride=1, padding=0):
    """x (C_in, L), W (C_out, C_in, w): cross-correlation by direct summation."""
    c_in, L = x.shape
    c_out, _, w = W.shape
    xp = np.zeros((c_in, L + 2 * padding))
    xp[:, padding : padding + L] = x
    l_out = (L + 2 * padding - w) // stride + 1
    y = np.zeros((c_out, l_out))
    for o in range(c_out):
        for t in range(l_out):
            s = b[o]
            for c in range(c_in):
                for j in range(w):
                    s += W[o, c, j] * xp[c, t * stride + j]
            y[o, t] = s
    return y


def maxpool_loops(x, window):
    """x (C, L): per-window max and arg-max (first maximum wins, partial last window allowed)."""
    C, L = x.shape
    n = -(-L // window)
    vals = np.zeros((C, n))
    idx = np.zeros((C, n), dtype=int)
    for c in range(C):
        for p in range(n):
            best, arg = -math.inf, -1
            for i in range(p * window, min(L, (p + 1) * window)):
                if x[c, i] > best:
                    best, arg = x[c, i], i
            vals[c, p] = best
            idx[c, p] = arg
    return vals, idx


def coalition_value(f, x, background, subset, target):
    rows = []
    for z in background:
        r = list(z)
        for i in subset:
            r[i] = x[i]
        rows.append(r)
    return float(np.mean(f(np.array(rows, dtype=np.float64))[:, target]))


def shapley_permutation_oracle(f, x, background, target):
    """Average marginal contribution over all k! orderings."""
    k = len(x)
    cache = {}

    def v(s):
        key = frozenset(s)
        if key not in cache:
            cache[key] = coalition_value(f, x, background, sorted(key), target)
        return cache[key]

    phi = np.zeros(k)
    perms = list(itertools.permutations(range(k)))
    for perm in perms:
        seen = []
        for i in perm:
            before = v(seen)
            seen.append(i)
            phi[i] += v(seen) - before
    return phi / len(perms)


def r_squared_direct(s, b):
    num = 0.0
    for si, bi in zip(s, b):
        num += (si - bi) ** 2
    mean = sum(b) / len(b)
    den = 0.0
    for bi in b:
        den += (bi - mean) ** 2
    return 1.0 - num / den


def gini_direct(dist):
    total = float(sum(dist))
    return sum((d / total) * (1 - d / total) for d in dist)


def best_split_exhaustive(X, y, n_classes):
    """Highest-gain (feature, midpoint) split over all candidates, ties to lower feature/threshold."""
    n = len(y)

    def g(idx):
        counts = [0] * n_classes
        for i in idx:
            counts[y[i]] += 1
        return gini_direct(counts)

    parent = g(range(n))
    best = None
    for f in range(X.shape[1]):
        vals = sorted(set(X[:, f].tolist()))
        for a, c in zip(vals[:-1], vals[1:]):
            t = (a + c) / 2
            left = [i for i in range(n) if X[i, f] < t]
            right = [i for i in range(n) if X[i, f] >= t]
            gain = parent - (len(left) * g(left) + len(right) * g(right)) / n
            if best is None or gain > best[2] + 1e-15:
                best = (f, t, gain)
    return best


def counterfactual_grid_cost(predict, x, sigma, lo, hi, steps=801):
    """Minimum sigma-weighted L1 cost over a dense 2-D grid of points that change the class."""
    y0 = predict(np.asarray([x]))[0]
    g0 = np.linspace(lo[0], hi[0], steps)
    g1 = np.linspace(lo[1], hi[1], steps)
    A, B = np.meshgrid(g0, g1, indexing="ij")
    pts = np.stack([A.ravel(), B.ravel()], axis=1)
    flips = predict(pts) != y0
    cost = np.abs(pts[:, 0] - x[0]) / sigma[0] + np.abs(pts[:, 1] - x[1]) / sigma[1]
    return float(cost[flips].min())


def macro_f1_direct(labels, preds, classes):
    f1s = []
    for c in classes:
        tp = sum(1 for a, b in zip(labels, preds) if a == c and b == c)
        fp = sum(1 for a, b in zip(labels, preds) if a != c and b == c)
        fn = sum(1 for a, b in zip(labels, preds) if a == c and b != c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return sum(f1s) / len(f1s)


def best_list_fidelity(rules_pred, covers, default_fn, target):
    """Best first-match agreement with ``target`` over all orderings of every rule subset of size <= 3."""
    n_rules = len(rules_pred)
    best = 0.0
    for size in range(0, min(3, n_rules) + 1):
        for subset in itertools.permutations(range(n_rules), size):
            pred = np.full(len(target), -1)
            for r in subset:
                m = (pred == -1) & covers[r]
                pred[m] = rules_pred[r]
            rest = pred == -1
            pred[rest] = default_fn(rest)
            best = max(best, float(np.mean(pred == target)))
    return best
