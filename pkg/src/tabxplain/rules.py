"""Decision rules from surrogate trees, decision lists, counterfactuals and what-if analysis.

A condition is the half-open interval ``lower <= x < upper``, matching the
tree routing convention (left iff ``x < threshold``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .attribution import ShapleyResult, shapley
from .errors import InvalidConfig, InvalidFeature, NoCounterfactualFound
from .surrogate import SurrogateModel, Tree

log = logging.getLogger(__name__)

INF = float("inf")


@dataclass(frozen=True)
class Condition:
    feature: int
    lower: float = -INF
    upper: float = INF

    def mask(self, X: np.ndarray) -> np.ndarray:
        col = X[:, self.feature]
        return (col >= self.lower) & (col < self.upper)

    def render(self, names: Sequence[str] | None = None) -> str:
        name = names[self.feature] if names is not None else f"f{self.feature}"
        if self.lower == -INF and self.upper == INF:
            return f"{name} is any"
        if self.lower == -INF:
            return f"{name} < {self.upper:.4g}"
        if self.upper == INF:
            return f"{name} >= {self.lower:.4g}"
        return f"{name} ∈ [{self.lower:.4g}, {self.upper:.4g})"

    def to_json(self) -> dict:
        return {"feature": self.feature,
                "lower": None if self.lower == -INF else self.lower,
                "upper": None if self.upper == INF else self.upper}

    @classmethod
    def from_json(cls, d: dict) -> "Condition":
        return cls(d["feature"], -INF if d["lower"] is None else d["lower"],
                   INF if d["upper"] is None else d["upper"])


@dataclass(frozen=True, eq=False)
class Rule:
    conditions: tuple[Condition, ...]
    consequent: np.ndarray
    support: float = 0.0
    confidence: float = 0.0
    coverage: int = 0
    source: tuple[int, int] = (0, 0)  # (tree id, leaf node id)

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.consequent))

    def covers(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        m = np.ones(len(X), dtype=bool)
        for c in self.conditions:
            m &= c.mask(X)
        return m

    def render(self, feature_names: Sequence[str] | None = None,
               class_names: Sequence[str] | None = None) -> str:
        ante = " AND ".join(c.render(feature_names) for c in self.conditions) or "TRUE"
        cls = class_names[self.prediction] if class_names is not None else str(self.prediction)
        return f"IF {ante} THEN class={cls} (conf {self.confidence:.2f}, supp {self.support:.2f})"

    def to_json(self) -> dict:
        return {"conditions": [c.to_json() for c in self.conditions],
                "consequent": self.consequent.tolist(), "prediction": self.prediction,
                "support": self.support, "confidence": self.confidence, "coverage": self.coverage,
                "source": list(self.source)}

    @classmethod
    def from_json(cls, d: dict) -> "Rule":
        return cls(tuple(Condition.from_json(c) for c in d["conditions"]),
                   np.asarray(d["consequent"], dtype=np.float64), d["support"], d["confidence"],
                   d["coverage"], tuple(d["source"]))


def extract_rules(tree: Tree, tree_id: int = 0) -> list[Rule]:
    """One rule per leaf (left-first order) with per-feature conditions merged into intervals."""
    rules = []
    stack: list[tuple[int, dict[int, tuple[float, float]]]] = [(0, {})]
    while stack:
        node, bounds = stack.pop()
        if tree.is_leaf(node):
            conds = tuple(Condition(f, lo, hi) for f, (lo, hi) in sorted(bounds.items()))
            rules.append(Rule(conds, np.array(tree.value[node]), source=(tree_id, int(node))))
            continue
        f, t = int(tree.feature[node]), float(tree.threshold[node])
        lo, hi = bounds.get(f, (-INF, INF))
        right = dict(bounds)
        right[f] = (max(lo, t), hi)
        left = dict(bounds)
        left[f] = (lo, min(hi, t))
        stack.append((int(tree.right[node]), right))
        stack.append((int(tree.left[node]), left))
    return rules


def score_rule(rule: Rule, X: np.ndarray, Y: np.ndarray) -> Rule:
    """Support (covered fraction), confidence (covered rows labelled as predicted), coverage."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    cov = rule.covers(X)
    n = int(cov.sum())
    conf = float(np.mean(Y[cov] == rule.prediction)) if n else 0.0
    return replace(rule, support=n / len(X), confidence=conf, coverage=n)


def filter_rules(rules: Iterable[Rule], min_support: float = 0.0, min_confidence: float = 0.0,
                 min_coverage: int = 0) -> list[Rule]:
    return [r for r in rules
            if r.support >= min_support and r.confidence >= min_confidence and r.coverage >= min_coverage]


@dataclass(frozen=True)
class DecisionList:
    rules: tuple[Rule, ...]
    default_class: int
    n_classes: int
    thresholds: dict = field(default_factory=dict)
    degenerate: bool = False

    def match(self, X: np.ndarray) -> np.ndarray:
        """Index of the first matching rule per row; -1 means the default rule."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(len(X), -1, dtype=np.int64)
        open_rows = np.ones(len(X), dtype=bool)
        for i, r in enumerate(self.rules):
            hit = open_rows & r.covers(X)
            out[hit] = i
            open_rows &= ~hit
            if not open_rows.any():
                break
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = self.match(X)
        preds = np.array([r.prediction for r in self.rules] + [self.default_class], dtype=np.int64)
        return preds[idx]  # -1 indexes the trailing default entry

    def render(self, feature_names=None, class_names=None) -> str:
        lines = [("IF " if i == 0 else "ELSE ") + r.render(feature_names, class_names)[3:]
                 for i, r in enumerate(self.rules)]
        default = class_names[self.default_class] if class_names is not None else str(self.default_class)
        lines.append(f"ELSE class={default}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"rules": [r.to_json() for r in self.rules], "default_class": self.default_class,
                "n_classes": self.n_classes, "thresholds": dict(self.thresholds),
                "degenerate": self.degenerate}

    @classmethod
    def from_json(cls, d: dict) -> "DecisionList":
        return cls(tuple(Rule.from_json(r) for r in d["rules"]), d["default_class"], d["n_classes"],
                   dict(d.get("thresholds", {})), d.get("degenerate", False))


def _majority(Y: np.ndarray, n_classes: int) -> int:
    return int(np.argmax(np.bincount(Y, minlength=n_classes)))


def assemble_decision_list(rules: Sequence[Rule], X: np.ndarray, Y: np.ndarray, n_classes: int,
                           min_support: float = 0.0, min_confidence: float = 0.0,
                           min_coverage: int = 0, max_rules: int | None = None) -> DecisionList:
    """Greedy sequential covering.

    Each round picks, on the still-uncovered rows, the rule with the highest
    confidence, then support, then fewer conditions, then earliest position;
    covered rows are removed. Rounds stop when no rule covers new rows while
    meeting the thresholds.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    N = len(X)
    thresholds = {"min_support": min_support, "min_confidence": min_confidence, "min_coverage": min_coverage}
    rules = list(rules)
    if not rules:
        log.warning("no rules survived filtering; decision list is default-only")
        return DecisionList((), _majority(Y, n_classes), n_classes, thresholds, degenerate=True)
    cover = np.array([r.covers(X) for r in rules])
    correct = cover & (Y[None, :] == np.array([r.prediction for r in rules])[:, None])
    n_conds = np.array([len(r.conditions) for r in rules])
    remaining = np.ones(N, dtype=bool)
    available = np.ones(len(rules), dtype=bool)
    chosen: list[int] = []
    while remaining.any() and available.any():
        if max_rules is not None and len(chosen) >= max_rules:
            break
        n = cover[:, remaining].sum(axis=1)
        hits = correct[:, remaining].sum(axis=1)
        conf = np.divide(hits, n, out=np.zeros(len(rules)), where=n > 0)
        supp = n / N
        ok = available & (n > 0) & (n >= min_coverage) & (conf >= min_confidence) & (supp >= min_support)
        if not ok.any():
            break
        cand = np.flatnonzero(ok)
        # lexicographic: conf desc, support desc, conditions asc, position asc
        best = cand[np.lexsort((cand, n_conds[cand], -supp[cand], -conf[cand]))[0]]
        chosen.append(int(best))
        available[best] = False
        remaining &= ~cover[best]
    default = _majority(Y[remaining], n_classes) if remaining.any() else _majority(Y, n_classes)
    if not chosen:
        log.warning("no rule met the thresholds; decision list is default-only")
    return DecisionList(tuple(rules[i] for i in chosen), default, n_classes, thresholds,
                        degenerate=not chosen)


def tree_decision_list(tree: Tree, X: np.ndarray, Y: np.ndarray, tree_id: int = 0) -> DecisionList:
    """All leaf rules of one tree, scored, in extraction order (mutually exclusive)."""
    rules = [score_rule(r, X, Y) for r in extract_rules(tree, tree_id)]
    return DecisionList(tuple(rules), _majority(np.asarray(Y, dtype=np.int64), tree.n_classes), tree.n_classes)


def list_fidelity(dl: DecisionList, model, X: np.ndarray) -> float:
    """Fraction of rows where the list's first-match prediction equals the model's."""
    X = np.asarray(X, dtype=np.float64)
    preds = model.predict(X) if hasattr(model, "predict") else np.asarray(model(X))
    return float(np.mean(dl.predict(X) == preds))


def list_confidence(dl: DecisionList, X: np.ndarray, Y: np.ndarray) -> float:
    """Coverage-weighted mean confidence of the rules that fire (default: its empirical accuracy)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    idx = dl.match(X)
    total = 0.0
    for i, r in enumerate(dl.rules):
        total += np.count_nonzero(idx == i) * r.confidence
    dflt = idx == -1
    if dflt.any():
        total += np.count_nonzero(Y[dflt] == dl.default_class)
    return float(total / len(X))


def forest_rules(model: SurrogateModel, X: np.ndarray, Y: np.ndarray, n_best: int = 10) -> list[Rule]:
    """Scored leaf rules of the ``n_best`` trees that agree most with the whole ensemble."""
    ens = model.predict(X)
    agree = np.array([np.mean(t.predict_proba(X).argmax(axis=1) == ens) for t in model.trees])
    order = np.lexsort((np.arange(len(agree)), -agree))[:n_best]
    out = []
    for tid in order:
        out.extend(score_rule(r, X, Y) for r in extract_rules(model.trees[tid], int(tid)))
    return out


# --- counterfactuals -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Counterfactual:
    delta: dict[int, float]
    x_new: np.ndarray
    original_class: int
    new_class: int
    cost: float
    verified: bool | None = None  # validity on a second model, when one was given

    @property
    def n_changed(self) -> int:
        return len(self.delta)

    def to_json(self, feature_names: Sequence[str] | None = None) -> dict:
        changes = [{"feature": int(f), "delta": float(d),
                    **({"name": feature_names[f]} if feature_names is not None else {})}
                   for f, d in sorted(self.delta.items())]
        return {"changes": changes, "original_class": self.original_class, "new_class": self.new_class,
                "cost": self.cost, "n_changed": self.n_changed, "verified": self.verified}


def candidate_values(features: Sequence[int], background: np.ndarray,
                     decision_list: DecisionList | None = None,
                     thresholds: Mapping[int, Sequence[float]] | None = None,
                     quantiles: Sequence[float] = (0.05, 0.15, 0.25, 0.35, 0.5, 0.65, 0.75, 0.85, 0.95),
                     eps: float = 1e-6) -> dict[int, np.ndarray]:
    """Interval boundaries (each side, +-eps) and background quantiles per feature."""
    bounds: dict[int, set[float]] = {f: set() for f in features}
    if decision_list is not None:
        for r in decision_list.rules:
            for c in r.conditions:
                if c.feature in bounds:
                    for b in (c.lower, c.upper):
                        if np.isfinite(b):
                            bounds[c.feature].add(float(b))
    if thresholds is not None:
        for f, ts in thresholds.items():
            if f in bounds:
                bounds[f].update(float(t) for t in ts)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    out = {}
    for f in features:
        vals = set()
        for b in bounds[f]:
            vals.update((b - eps, b + eps))
        if len(background):
            vals.update(np.quantile(background[:, f], quantiles).tolist())
        out[f] = np.array(sorted(vals))
    return out


def counterfactual(predict_fn: Callable[[np.ndarray], np.ndarray], x, features: Sequence[int],
                   candidates: Mapping[int, Sequence[float]], sigma: np.ndarray | None = None,
                   target: int | None = None, max_changes: int = 2, n_solutions: int = 3,
                   budget: int = 200_000, refine: bool = True,
                   verify_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> list[Counterfactual]:
    """Cheapest class-flipping edits of at most ``max_changes`` features.

    Edits move a feature to one of its candidate values; cost is the
    sigma-weighted L1 distance. Combinations are evaluated in increasing cost
    order, edits that contain a cheaper valid edit's feature set are skipped,
    and up to ``n_solutions`` results (distinct feature sets) are returned.
    With ``refine`` each edit is shrunk toward ``x`` by bisection while it stays
    valid.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if max_changes < 1:
        raise InvalidConfig("max_changes must be >= 1")
    sigma = np.ones(len(x)) if sigma is None else np.where(np.asarray(sigma) > 0, sigma, 1.0)
    y = int(np.asarray(predict_fn(x[None]))[0])

    def valid(cls):
        return cls == target if target is not None else cls != y

    if target is not None and y == target:
        return [Counterfactual({}, x.copy(), y, y, 0.0)]

    singles = []  # (cost, feature, value)
    for f in features:
        for v in np.unique(np.asarray(candidates.get(f, ()), dtype=np.float64)):
            if v != x[f]:
                singles.append((abs(v - x[f]) / sigma[f], int(f), float(v)))
    singles.sort()

    found: list[tuple[float, tuple[int, ...], dict[int, float]]] = []
    evaluated = 0

    def dominated(fs: tuple[int, ...]) -> bool:
        return any(set(sol).issubset(fs) for _, sol, _ in found)

    def bound() -> float:
        return found[n_solutions - 1][0] if len(found) >= n_solutions else INF

    frontier = singles
    for size in range(1, max_changes + 1):
        if size == 1:
            combos = [(c, (f,), ((f, v),)) for c, f, v in singles]
        else:
            combos = []
            for c0, fs, moves in frontier:
                for c1, f, v in singles:
                    if f <= fs[-1]:
                        continue
                    c = c0 + c1
                    if c >= bound():
                        break
                    combos.append((c, fs + (f,), moves + ((f, v),)))
            combos.sort(key=lambda t: (t[0], t[1]))
        kept = []
        for start in range(0, len(combos), 2048):
            batch = [cb for cb in combos[start : start + 2048] if cb[0] < bound() and not dominated(cb[1])]
            if not batch:
                if combos[start][0] >= bound():
                    break
                continue
            if evaluated + len(batch) > budget:
                batch = batch[: max(0, budget - evaluated)]
            rows = np.repeat(x[None], len(batch), axis=0)
            for r, (_, _, moves) in enumerate(batch):
                for f, v in moves:
                    rows[r, f] = v
            preds = np.asarray(predict_fn(rows))
            evaluated += len(batch)
            for cb, p in zip(batch, preds):
                if valid(int(p)):
                    if not dominated(cb[1]):
                        found.append((cb[0], cb[1], dict(cb[2])))
                        found.sort(key=lambda t: (t[0], t[1]))
                else:
                    kept.append(cb)
            if evaluated >= budget:
                break
        frontier = kept
        if evaluated >= budget or len(found) >= n_solutions and (not frontier or frontier[0][0] >= bound()):
            break

    if not found:
        raise NoCounterfactualFound(evaluated)

    results = []
    for _, fs, moves in found[:n_solutions]:
        delta = np.zeros(len(x))
        for f, v in moves.items():
            delta[f] = v - x[f]
        if refine:
            delta = _shrink(predict_fn, x, delta, valid)
        x_new = x + delta
        new_cls = int(np.asarray(predict_fn(x_new[None]))[0])
        if not valid(new_cls):  # pragma: no cover - _shrink only returns valid points
            continue
        verified = None
        if verify_fn is not None:
            verified = bool(np.asarray(verify_fn(x_new[None]))[0] != np.asarray(verify_fn(x[None]))[0])
        cost = float(np.sum(np.abs(delta) / sigma))
        results.append(Counterfactual({int(f): float(delta[f]) for f in fs}, x_new, y, new_cls, cost, verified))
    results.sort(key=lambda c: (c.cost, sorted(c.delta)))
    return results


def _shrink(predict_fn, x, delta, valid, iters: int = 40) -> np.ndarray:
    lo, hi = 0.0, 1.0  # x + hi*delta is valid
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if valid(int(np.asarray(predict_fn((x + mid * delta)[None]))[0])):
            hi = mid
        else:
            lo = mid
    return hi * delta


# --- what-if -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WhatIf:
    feature: int
    old_value: float
    new_value: float
    old_dist: np.ndarray
    new_dist: np.ndarray

    @property
    def old_class(self) -> int:
        return int(np.argmax(self.old_dist))

    @property
    def new_class(self) -> int:
        return int(np.argmax(self.new_dist))

    @property
    def flipped(self) -> bool:
        return self.old_class != self.new_class

    def to_json(self, feature_names: Sequence[str] | None = None) -> dict:
        d = {"feature": self.feature, "old_value": self.old_value, "new_value": self.new_value,
             "old_dist": self.old_dist.tolist(), "new_dist": self.new_dist.tolist(),
             "old_class": self.old_class, "new_class": self.new_class, "flipped": self.flipped,
             "predicted_class_shift": float(self.new_dist[self.old_class] - self.old_dist[self.old_class])}
        if feature_names is not None:
            d["name"] = feature_names[self.feature]
        return d


def whatif_remove_feature(proba_fn: Callable[[np.ndarray], np.ndarray], x, feature: int, background,
                          allowed: Sequence[int] | None = None) -> WhatIf:
    """Replace one feature by its background mean and report both class distributions."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if not 0 <= feature < len(x) or (allowed is not None and feature not in allowed):
        raise InvalidFeature(f"feature {feature} is not available for what-if analysis")
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    x2 = x.copy()
    x2[feature] = background[:, feature].mean()
    dists = np.asarray(proba_fn(np.stack([x, x2])))
    return WhatIf(int(feature), float(x[feature]), float(x2[feature]), dists[0], dists[1])


# --- local explanation ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LocalExplanation:
    instance_id: int
    predicted_class: int
    probability: float
    contributions: ShapleyResult
    rule_index: int  # -1 when only the default rule matches
    rule_text: str
    counterfactuals: tuple[Counterfactual, ...]
    whatif: tuple[WhatIf, ...]
    blackbox_class: int | None = None

    def to_json(self, feature_names: Sequence[str] | None = None,
                class_names: Sequence[str] | None = None) -> dict:
        return {"instance_id": self.instance_id, "predicted_class": self.predicted_class,
                "predicted_name": class_names[self.predicted_class] if class_names is not None else None,
                "probability": self.probability, "blackbox_class": self.blackbox_class,
                "contributions": self.contributions.to_json(),
                "rule": {"index": self.rule_index, "text": self.rule_text},
                "counterfactuals": [c.to_json(feature_names) for c in self.counterfactuals],
                "whatif": [w.to_json(feature_names) for w in self.whatif]}


def explain_instance(surrogate, decision_list: DecisionList, x, background, instance_id: int = 0,
                     sigma: np.ndarray | None = None, blackbox_fn: Callable | None = None,
                     max_changes: int = 2, n_perms: int = 256, seed: int = 0, n_whatif: int = 5,
                     feature_names: Sequence[str] | None = None,
                     class_names: Sequence[str] | None = None) -> LocalExplanation:
    """Prediction, Shapley contributions, matched rule, counterfactuals and what-if table for one row.

    Everything operates in the surrogate's reduced space; ``blackbox_fn``
    (reduced rows to labels) is used only to re-check counterfactuals.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    dist = surrogate.predict_proba(x[None])[0]
    cls = int(np.argmax(dist))
    phi = shapley(surrogate.predict_proba, x, background, target_class=cls, n_perms=n_perms, seed=seed)
    idx = int(decision_list.match(x[None])[0])
    if idx >= 0:
        text = decision_list.rules[idx].render(feature_names, class_names)
    else:
        dflt = class_names[decision_list.default_class] if class_names is not None else str(decision_list.default_class)
        text = f"DEFAULT class={dflt}"
    features = list(range(len(x)))
    cands = candidate_values(features, background, decision_list=decision_list)
    try:
        cfs = counterfactual(surrogate.predict, x, features, cands, sigma=sigma, max_changes=max_changes,
                             verify_fn=blackbox_fn)
    except NoCounterfactualFound:
        cfs = []
    ranked = np.lexsort((np.arange(len(x)), -np.abs(phi.phi)))[:n_whatif]
    whatifs = tuple(whatif_remove_feature(surrogate.predict_proba, x, int(f), background) for f in ranked)
    bb = int(np.asarray(blackbox_fn(x[None]))[0]) if blackbox_fn is not None else None
    return LocalExplanation(int(instance_id), cls, float(dist[cls]), phi, idx, text, tuple(cfs), whatifs, bb)
