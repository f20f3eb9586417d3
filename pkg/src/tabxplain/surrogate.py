"""Gini decision trees, random forests and extremely randomized trees.

Trees are stored as flat node arrays. Routing convention: a row goes left
iff ``x[feature] < threshold``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyNode, InvalidConfig, ShapeMismatch, ZeroVariance

KINDS = ("DT", "RF", "ERT")


def gini(dist) -> float:
    """Gini impurity sum_k p_k (1 - p_k) of a count or proportion vector."""
    d = np.asarray(dist, dtype=np.float64)
    total = d.sum()
    if total <= 0 or np.any(d < 0):
        raise EmptyNode("gini of an empty or negative distribution")
    p = d / total
    return float(np.sum(p * (1.0 - p)))


def _gini_rows(counts: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = counts / n[:, None]
    return 1.0 - np.sum(p * p, axis=1)


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_leaf: int = 1
    # None = all features; "sqrt" = floor(sqrt(k)); int = that many
    max_features: int | str | None = None
    random_thresholds: bool = False

    def features_per_split(self, k: int) -> int:
        mf = self.max_features
        if mf is None:
            return k
        if mf == "sqrt":
            return max(1, int(np.sqrt(k)))
        if isinstance(mf, int) and mf >= 1:
            return min(k, mf)
        raise InvalidConfig(f"invalid max_features {mf!r}")


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, C) class distribution
    n_samples: np.ndarray
    impurity: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_classes(self) -> int:
        return self.value.shape[1]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if not self.is_leaf(node):
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeMismatch(f"expected width {self.n_features}, got {X.shape}")
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] < self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_json(self, node: int = 0) -> dict:
        if self.is_leaf(node):
            return {"leaf": {"dist": self.value[node].tolist(), "n": int(self.n_samples[node])}}
        return {"feature": int(self.feature[node]), "threshold": float(self.threshold[node]),
                "n": int(self.n_samples[node]), "impurity": float(self.impurity[node]),
                "left": self.to_json(int(self.left[node])), "right": self.to_json(int(self.right[node]))}

    @classmethod
    def from_json(cls, doc: dict, n_features: int) -> "Tree":
        b = _Builder()

        def visit(d):
            if "leaf" in d:
                dist = np.asarray(d["leaf"]["dist"], dtype=np.float64)
                return b.add(-1, 0.0, dist, d["leaf"]["n"], gini(dist) if dist.sum() > 0 else 0.0)
            node = b.add(d["feature"], d["threshold"], None, d.get("n", 0), d.get("impurity", 0.0))
            b.link(node, visit(d["left"]), visit(d["right"]))
            return node

        visit(doc)
        return b.build(n_features)


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.n, self.imp = [], [], []

    def add(self, feature, threshold, dist, n, impurity) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(dist)
        self.n.append(int(n))
        self.imp.append(float(impurity))
        return len(self.feature) - 1

    def link(self, node, left, right):
        self.left[node] = left
        self.right[node] = right

    def build(self, n_features: int) -> Tree:
        c = next(len(v) for v in self.value if v is not None)
        value = np.array([v if v is not None else np.zeros(c) for v in self.value], dtype=np.float64)
        # internal nodes carry the mean of their subtree only if unset; fill from children
        for node in range(len(value) - 1, -1, -1):
            if self.value[node] is None:
                l, r = self.left[node], self.right[node]
                nl, nr = self.n[l], self.n[r]
                tot = nl + nr
                value[node] = (nl * value[l] + nr * value[r]) / tot if tot else (value[l] + value[r]) / 2
        return Tree(np.array(self.feature, dtype=np.int64), np.array(self.threshold),
                    np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
                    value, np.array(self.n, dtype=np.int64), np.array(self.imp), n_features)


def _best_split(X: np.ndarray, y_onehot: np.ndarray, rows: np.ndarray, features: Sequence[int],
                parent_imp: float, min_leaf: int, random_thresholds: bool, rng) -> tuple[int, float, float] | None:
    """Highest Gini-gain split among ``features`` (ties: lower feature, then lower threshold)."""
    n = len(rows)
    best = None
    Yn = y_onehot[rows]
    features = sorted(features)
    if random_thresholds:
        # one uniform threshold per feature, drawn for all candidates at once
        xs = X[np.ix_(rows, features)]
        lo, hi = xs.min(axis=0), xs.max(axis=0)
        t = rng.uniform(lo, hi)
        go_left = xs < t
        nl = go_left.sum(axis=0)
        ok = (lo < hi) & (t > lo) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            return None
        cl = go_left.T.astype(np.float64) @ Yn
        cr = Yn.sum(axis=0)[None, :] - cl
        nlf = np.maximum(nl, 1).astype(np.float64)
        nrf = np.maximum(n - nl, 1).astype(np.float64)
        gains = parent_imp - (nl * _gini_rows(cl, nlf) + (n - nl) * _gini_rows(cr, nrf)) / n
        gains = np.where(ok, gains, -np.inf)
        j = int(np.argmax(gains))  # first maximum = lowest feature index
        return features[j], float(t[j]), float(gains[j])
    for f in features:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_s = xs[order]
        cum = np.cumsum(Yn[order], axis=0)
        total = cum[-1]
        pos = np.arange(1, n)  # left gets the first `pos` sorted rows
        valid = (xs_s[:-1] < xs_s[1:]) & (pos >= min_leaf) & (n - pos >= min_leaf)
        if not valid.any():
            continue
        pos = pos[valid]
        cl = cum[pos - 1]
        cr = total - cl
        w = (pos * _gini_rows(cl, pos.astype(np.float64))
             + (n - pos) * _gini_rows(cr, (n - pos).astype(np.float64))) / n
        gains = parent_imp - w
        j = int(np.argmax(gains))
        a, b = xs_s[pos[j] - 1], xs_s[pos[j]]
        t = (a + b) / 2.0
        if not a < t:
            t = b
        if best is None or gains[j] > best[2]:
            best = (f, float(t), float(gains[j]))
    return best


def fit_tree(X: np.ndarray, y: np.ndarray, n_classes: int, params: TreeParams = TreeParams(),
             seed: int = 0) -> Tree:
    """Greedy Gini tree; grows until max depth, min leaf size, purity, or no valid split."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) < 1 or len(y) != len(X):
        raise ShapeMismatch("fit_tree needs a nonempty matrix and one label per row")
    if params.min_leaf < 1:
        raise InvalidConfig("min_leaf must be >= 1")
    rng = np.random.default_rng(seed)
    k = X.shape[1]
    mf = params.features_per_split(k)
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y] = 1.0
    b = _Builder()

    def grow(rows: np.ndarray, depth: int) -> int:
        counts = onehot[rows].sum(axis=0)
        n = len(rows)
        imp = gini(counts)
        dist = counts / n
        stop = (imp == 0.0 or (params.max_depth is not None and depth >= params.max_depth)
                or n < 2 * params.min_leaf)
        split = None
        if not stop:
            if mf >= k:
                split = _best_split(X, onehot, rows, range(k), imp, params.min_leaf, params.random_thresholds, rng)
            else:
                perm = rng.permutation(k)
                split = _best_split(X, onehot, rows, perm[:mf], imp, params.min_leaf, params.random_thresholds, rng)
                # keep drawing features until some split is valid
                extra = mf
                while split is None and extra < k:
                    split = _best_split(X, onehot, rows, perm[extra:extra + 1], imp, params.min_leaf,
                                        params.random_thresholds, rng)
                    extra += 1
        if split is None:
            return b.add(-1, 0.0, dist, n, imp)
        f, t, _ = split
        node = b.add(f, t, dist, n, imp)
        go_left = X[rows, f] < t
        left = grow(rows[go_left], depth + 1)
        right = grow(rows[~go_left], depth + 1)
        b.link(node, left, right)
        return node

    import sys
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10_000))
    try:
        grow(np.arange(len(X)), 0)
    finally:
        sys.setrecursionlimit(limit)
    return b.build(k)


@dataclass(frozen=True)
class SurrogateModel:
    kind: str
    trees: tuple[Tree, ...]
    seeds: tuple[int, ...]
    params: TreeParams
    n_trees: int = 1
    n_classes: int = 2
    feature_indices: tuple[int, ...] = ()  # original columns of the reduced space

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None]
        acc = np.zeros((len(X), self.n_classes))
        for t in self.trees:
            acc += t.predict_proba(X)
        return acc / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def to_json(self) -> dict:
        return {"kind": self.kind, "seeds": list(self.seeds), "n_classes": self.n_classes,
                "params": {"max_depth": self.params.max_depth, "min_leaf": self.params.min_leaf,
                           "max_features": self.params.max_features,
                           "random_thresholds": self.params.random_thresholds},
                "feature_indices": list(self.feature_indices),
                "trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, d: dict) -> "SurrogateModel":
        k = len(d["feature_indices"])
        trees = tuple(Tree.from_json(t, k) for t in d["trees"])
        return cls(d["kind"], trees, tuple(d["seeds"]), TreeParams(**d["params"]), len(trees),
                   d["n_classes"], tuple(d["feature_indices"]))


def predict(model: SurrogateModel, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Class and distribution for one row (ties go to the lower class index)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != model.n_features:
        raise ShapeMismatch(f"expected a row of width {model.n_features}")
    dist = model.predict_proba(x[None])[0]
    return int(np.argmax(dist)), dist


def tree_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def fit_dt(X, y, n_classes: int, max_depth: int | None = 8, min_leaf: int = 1, seed: int = 0,
           feature_indices: Sequence[int] = ()) -> SurrogateModel:
    params = TreeParams(max_depth=max_depth, min_leaf=min_leaf)
    tree = fit_tree(X, y, n_classes, params, seed)
    return SurrogateModel("DT", (tree,), (seed,), params, 1, n_classes, tuple(feature_indices))


def fit_forest(X, y, n_classes: int, kind: str = "RF", n_trees: int = 100, max_depth: int | None = None,
               min_leaf: int = 2, seed: int = 0, threads: int = 1,
               feature_indices: Sequence[int] = ()) -> SurrogateModel:
    """RF: bootstrap rows, best midpoint splits. ERT: all rows, one random threshold per feature.
    Both consider floor(sqrt(k)) features per split. Tree t uses seed hash(seed, t)."""
    if kind not in ("RF", "ERT"):
        raise InvalidConfig(f"forest kind must be RF or ERT, got {kind!r}")
    if n_trees < 1:
        raise InvalidConfig("n_trees must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    params = TreeParams(max_depth=max_depth, min_leaf=min_leaf, max_features="sqrt",
                        random_thresholds=(kind == "ERT"))
    seeds = tuple(tree_seed(seed, t) for t in range(n_trees))

    def one(s: int) -> Tree:
        if kind == "RF":
            rows = np.random.default_rng([s, 0]).integers(0, len(X), size=len(X))
            return fit_tree(X[rows], y[rows], n_classes, params, s)
        return fit_tree(X, y, n_classes, params, s)

    if threads > 1 and n_trees > 1:
        with ThreadPoolExecutor(threads) as ex:
            trees = tuple(ex.map(one, seeds))
    else:
        trees = tuple(one(s) for s in seeds)
    return SurrogateModel(kind, trees, seeds, params, n_trees, n_classes, tuple(feature_indices))


def fit_surrogate(kind: str, X, y, n_classes: int, seed: int = 0, threads: int = 1,
                  max_depth: int | None = None, min_leaf: int | None = None, n_trees: int = 100,
                  feature_indices: Sequence[int] = ()) -> SurrogateModel:
    kind = kind.upper()
    if kind == "DT":
        return fit_dt(X, y, n_classes, 8 if max_depth is None else max_depth,
                      1 if min_leaf is None else min_leaf, seed, feature_indices)
    return fit_forest(X, y, n_classes, kind, n_trees, max_depth, 2 if min_leaf is None else min_leaf,
                      seed, threads, feature_indices)


def tree_mdi(tree: Tree) -> np.ndarray:
    """Unnormalised weighted Gini decrease per feature for one tree."""
    imp = np.zeros(tree.n_features)
    total = tree.n_samples[0]
    for node in np.flatnonzero(tree.feature >= 0):
        l, r = tree.left[node], tree.right[node]
        n = tree.n_samples[node]
        dec = tree.impurity[node] - (tree.n_samples[l] * tree.impurity[l]
                                     + tree.n_samples[r] * tree.impurity[r]) / n
        imp[tree.feature[node]] += n / total * dec
    return imp


def mdi_importance(model: SurrogateModel) -> np.ndarray:
    """Mean-decrease-in-impurity, averaged over trees and scaled to sum 1."""
    acc = np.mean([tree_mdi(t) for t in model.trees], axis=0)
    s = acc.sum()
    if s <= 0:
        return np.full(len(acc), 1.0 / len(acc))
    return acc / s


@dataclass(frozen=True)
class FidelityScore:
    r_squared: float
    sse_surrogate: float
    sse_blackbox: float
    verdict: str
    threshold: float

    def to_json(self) -> dict:
        return {"r_squared": self.r_squared, "sse_surrogate": self.sse_surrogate,
                "sse_blackbox": self.sse_blackbox, "verdict": self.verdict, "threshold": self.threshold}


def r_squared(surrogate_preds, blackbox_preds, threshold: float = 0.8) -> FidelityScore:
    """1 - sum (s_i - b_i)^2 / sum (b_i - mean b)^2; 'replace' iff R^2 >= threshold."""
    s = np.asarray(surrogate_preds, dtype=np.float64)
    b = np.asarray(blackbox_preds, dtype=np.float64)
    if s.shape != b.shape or s.ndim != 1 or len(s) < 2:
        raise ShapeMismatch("r_squared needs two equal-length sequences of length >= 2")
    sse_s = float(np.sum((s - b) ** 2))
    sse_b = float(np.sum((b - b.mean()) ** 2))
    if sse_b == 0:
        raise ZeroVariance("black-box predictions are constant")
    r2 = 1.0 - sse_s / sse_b
    return FidelityScore(r2, sse_s, sse_b, "replace" if r2 >= threshold else "reject", threshold)


def fidelity_inputs(surrogate: SurrogateModel, X_reduced: np.ndarray, blackbox_proba: np.ndarray,
                    mode: str = "label") -> tuple[np.ndarray, np.ndarray]:
    """Prediction sequences fed to :func:`r_squared`.

    ``label``: predicted class indices as floats. ``proba``: probability each
    model assigns to the black-box's predicted class.
    """
    bb_cls = blackbox_proba.argmax(axis=1)
    if mode == "label":
        return surrogate.predict(X_reduced).astype(np.float64), bb_cls.astype(np.float64)
    if mode == "proba":
        rows = np.arange(len(bb_cls))
        return surrogate.predict_proba(X_reduced)[rows, bb_cls], blackbox_proba[rows, bb_cls]
    raise InvalidConfig(f"unknown fidelity mode {mode!r}")
