"""Model-agnostic attribution: permutation importance and Shapley values.

Shapley value functions use interventional substitution: for a coalition S,
v(S) is the mean predicted probability of the target class over background
rows whose S-columns are replaced by the explained instance's values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptySample, InvalidConfig, MismatchedFeatureSpaces, TooManyFeatures
from .metrics import accuracy, macro_f1

EXACT_LIMIT = 12
ProbaFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ShapleyResult:
    phi: np.ndarray
    base: float  # v(empty): mean target probability over the background
    value: float  # f(x) for the target class
    target_class: int
    method: str
    stderr: np.ndarray | None = None

    def efficiency_gap(self) -> float:
        return float(self.phi.sum() + self.base - self.value)

    def to_json(self) -> dict:
        d = {"phi": self.phi.tolist(), "base": self.base, "value": self.value,
             "target_class": self.target_class, "method": self.method}
        if self.stderr is not None:
            d["stderr"] = self.stderr.tolist()
        return d


@dataclass(frozen=True)
class AttributionResult:
    gfi: np.ndarray  # mean |phi| per feature
    mean_phi: np.ndarray
    local: tuple[ShapleyResult, ...]
    method: str
    background_size: int
    seed: int

    def sorted_features(self) -> np.ndarray:
        return np.lexsort((np.arange(len(self.gfi)), -self.gfi))

    def to_json(self, feature_names: Sequence[str] | None = None) -> dict:
        rows = []
        for i in self.sorted_features():
            r = {"feature": int(i), "gfi": float(self.gfi[i]), "sign_summary": {"mean_phi": float(self.mean_phi[i])}}
            if feature_names is not None:
                r["name"] = feature_names[i]
            rows.append(r)
        return {"method": self.method, "background_size": self.background_size, "seed": self.seed,
                "features": rows}


def _coalition_values(predict_fn: ProbaFn, x: np.ndarray, background: np.ndarray,
                      masks: np.ndarray, target: int, chunk_rows: int = 65536) -> np.ndarray:
    """v(S) for every bitmask in ``masks`` (bit i set = feature i taken from x)."""
    k = len(x)
    B = len(background)
    bits = ((masks[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)
    out = np.empty(len(masks))
    per = max(1, chunk_rows // B)
    for start in range(0, len(masks), per):
        sel = bits[start : start + per]
        rows = np.where(sel[:, None, :], x[None, None, :], background[None, :, :]).reshape(-1, k)
        probs = np.asarray(predict_fn(rows))[:, target]
        out[start : start + per] = probs.reshape(len(sel), B).mean(axis=1)
    return out


def _prepare(predict_fn, x, background, target_class):
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.asarray(background, dtype=np.float64)
    if background.ndim == 1:
        background = background[None]
    if background.ndim != 2 or len(background) == 0 or background.shape[1] != len(x):
        raise EmptySample("background must be a nonempty matrix with the instance's width")
    probs = np.asarray(predict_fn(x[None]))[0]
    target = int(np.argmax(probs)) if target_class is None else int(target_class)
    return x, background, target, float(probs[target])


def shapley_exact(predict_fn: ProbaFn, x, background, target_class: int | None = None) -> ShapleyResult:
    """Exact Shapley values by enumerating all 2^k coalitions (k <= 12)."""
    x, background, target, fx = _prepare(predict_fn, x, background, target_class)
    k = len(x)
    if k > EXACT_LIMIT:
        raise TooManyFeatures(k, EXACT_LIMIT)
    masks = np.arange(1 << k, dtype=np.int64)
    v = _coalition_values(predict_fn, x, background, masks, target)
    sizes = np.array([bin(m).count("1") for m in range(1 << k)])
    weights = np.array([math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) if s < k else 0.0
                        for s in range(k + 1)])
    phi = np.empty(k)
    for i in range(k):
        bit = 1 << i
        without = masks[(masks & bit) == 0]  # ascending
        # fsum is order-free, so symmetric players get bit-identical values
        phi[i] = math.fsum(weights[sizes[without]] * (v[without | bit] - v[without]))
    return ShapleyResult(phi, float(v[0]), fx, target, "exact")


def shapley_sampled(predict_fn: ProbaFn, x, background, n_perms: int = 1000, seed: int = 0,
                    target_class: int | None = None,
                    orderings: Iterable[Sequence[int]] | None = None) -> ShapleyResult:
    """Monte-Carlo Shapley values over random feature orderings.

    ``orderings`` replaces the random draw with explicit permutations (for
    instance all k! of them, which reproduces the exact values).
    """
    x, background, target, fx = _prepare(predict_fn, x, background, target_class)
    k = len(x)
    if orderings is None:
        if n_perms < 1:
            raise InvalidConfig("n_perms must be >= 1")
        rng = np.random.default_rng(seed)
        perms = np.array([rng.permutation(k) for _ in range(n_perms)], dtype=np.int64)
    else:
        perms = np.array([list(p) for p in orderings], dtype=np.int64)
    n = len(perms)
    # prefix masks: prefix[p, j] = coalition of the first j features of ordering p
    pref = np.zeros((n, k + 1), dtype=np.int64)
    pref[:, 1:] = np.cumsum(np.left_shift(1, perms), axis=1)
    uniq, inv = np.unique(pref.ravel(), return_inverse=True)
    v = _coalition_values(predict_fn, x, background, uniq, target)[inv].reshape(n, k + 1)
    marg = np.diff(v, axis=1)  # marg[p, j]: contribution of perms[p, j]
    contrib = np.empty((n, k))
    contrib[np.arange(n)[:, None], perms] = marg
    phi = contrib.mean(axis=0)
    stderr = contrib.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(k)
    return ShapleyResult(phi, float(v[0, 0]), fx, target, "sampled", stderr)


def shapley(predict_fn: ProbaFn, x, background, target_class: int | None = None,
            n_perms: int = 256, seed: int = 0) -> ShapleyResult:
    """Exact when the feature count allows it, sampled otherwise."""
    if np.asarray(x).size <= EXACT_LIMIT:
        return shapley_exact(predict_fn, x, background, target_class)
    return shapley_sampled(predict_fn, x, background, n_perms, seed, target_class)


def global_shap(predict_fn: ProbaFn, X, background, n_perms: int = 256, seed: int = 0,
                method: str = "auto") -> AttributionResult:
    """Per-feature mean |phi| over instances, each explained for its predicted class."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptySample("evaluation set is empty")
    k = X.shape[1]
    use_exact = method == "exact" or (method == "auto" and k <= EXACT_LIMIT)
    local = []
    for r, x in enumerate(X):
        if use_exact:
            local.append(shapley_exact(predict_fn, x, background))
        else:
            local.append(shapley_sampled(predict_fn, x, background, n_perms, seed=[seed, r]))
    phis = np.array([res.phi for res in local])
    return AttributionResult(np.abs(phis).mean(axis=0), phis.mean(axis=0), tuple(local),
                             "exact" if use_exact else "sampled", len(np.atleast_2d(background)),
                             int(seed))


def stack_gfi(gfis: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted mean of per-model global importance vectors."""
    arrs = [np.asarray(g, dtype=np.float64) for g in gfis]
    if not arrs or any(a.shape != arrs[0].shape for a in arrs):
        raise MismatchedFeatureSpaces("GFI vectors must share one feature space")
    return np.mean(arrs, axis=0)


def stacked_shap(models: Mapping[str, object], X, background, n_perms: int = 256,
                 seed: int = 0) -> tuple[np.ndarray, dict[str, AttributionResult]]:
    """Stacked GFI of several surrogates (DT, RF, ERT) fitted on the same reduced space."""
    spaces = {tuple(getattr(m, "feature_indices", ())) for m in models.values()}
    widths = {m.n_features for m in models.values()}
    if len(spaces) > 1 or len(widths) > 1:
        raise MismatchedFeatureSpaces("surrogates were fitted on different feature spaces")
    per_model = {name: global_shap(m.predict_proba, X, background, n_perms, seed)
                 for name, m in models.items()}
    return stack_gfi([r.gfi for r in per_model.values()]), per_model


def permutation_importance(predict_fn: Callable[[np.ndarray], np.ndarray], X, Y, metric: str = "accuracy",
                           repeats: int = 5, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Metric drop when one column is shuffled: (mean, std) over repeats per feature.

    ``predict_fn`` returns class labels.
    """
    if repeats < 1:
        raise InvalidConfig("repeats must be >= 1")
    score = {"accuracy": accuracy, "macro-F1": macro_f1}.get(metric)
    if score is None:
        raise InvalidConfig(f"metric must be 'accuracy' or 'macro-F1', got {metric!r}")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    rng = np.random.default_rng(seed)
    base_pred = np.asarray(predict_fn(X))
    baseline = score(Y, base_pred)
    means = np.zeros(X.shape[1])
    stds = np.zeros(X.shape[1])
    for i in range(X.shape[1]):
        drops = np.empty(repeats)
        for r in range(repeats):
            Xp = X.copy()
            Xp[:, i] = X[rng.permutation(len(X)), i]
            pred = np.asarray(predict_fn(Xp))
            drops[r] = baseline - score(Y, pred)
        means[i] = drops.mean()
        stds[i] = drops.std()
    return means, stds
