"""Attention probing and perturbation sensitivity of the black-box.

The probe is a softmax-gated elementwise-product layer (one gate per head,
averaged) followed by two dense layers. It sits either on the standardized
input or on the frozen encoder embedding. Relevance is read off the
attention weight diagonals.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import blackbox as bb
from .data import Dataset
from .errors import EmptySample, InvalidConfig, InvalidFeature, NonFiniteLoss, ShapeMismatch
from .numeric import ops
from .numeric.optim import AdamState, adam_step, glorot_init
from .numeric.tensor import GradTape, Tensor, emit

log = logging.getLogger(__name__)

PLACEMENTS = ("input", "embedding")
SCHEMES = ("gaussian-noise", "permute")


@dataclass(frozen=True)
class AttentionProbe:
    att_W: np.ndarray  # (heads, D, D)
    att_b: np.ndarray  # (heads, D)
    dense1_W: np.ndarray
    dense1_b: np.ndarray
    dense2_W: np.ndarray
    dense2_b: np.ndarray
    placement: str = "input"

    @property
    def heads(self) -> int:
        return self.att_W.shape[0]

    @property
    def width(self) -> int:
        return self.att_W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"att_W": self.att_W, "att_b": self.att_b, "dense1_W": self.dense1_W,
                "dense1_b": self.dense1_b, "dense2_W": self.dense2_W, "dense2_b": self.dense2_b}

    def to_json(self) -> dict:
        from .numeric.checkpoint import params_to_json
        return {"placement": self.placement, "params": params_to_json(self.params())}

    @classmethod
    def from_json(cls, d: dict) -> "AttentionProbe":
        from .numeric.checkpoint import params_from_json
        return cls(**params_from_json(d["params"]), placement=d["placement"])


@dataclass(frozen=True)
class FeatureRanking:
    scores: np.ndarray
    order: np.ndarray
    k_cut: int
    method: str

    @classmethod
    def from_scores(cls, scores, k_cut: int, method: str) -> "FeatureRanking":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 1 or not np.all(np.isfinite(scores)) or np.any(scores < 0):
            raise InvalidConfig("relevance scores must be finite and nonnegative")
        if not 0 <= k_cut <= len(scores):
            raise InvalidConfig(f"k_cut {k_cut} outside [0, {len(scores)}]")
        order = rank_order(scores)
        return cls(scores, order, int(k_cut), method)

    def with_k(self, k_cut: int) -> "FeatureRanking":
        return FeatureRanking.from_scores(self.scores, k_cut, self.method)

    @property
    def top(self) -> np.ndarray:
        return self.order[: self.k_cut]

    def to_json(self, feature_names: Sequence[str] | None = None) -> dict:
        rank = np.empty(len(self.order), dtype=np.int64)
        rank[self.order] = np.arange(len(self.order))
        entries = []
        for i in self.order:
            e = {"feature": int(i), "score": float(self.scores[i]), "rank": int(rank[i])}
            if feature_names is not None:
                e["name"] = feature_names[i]
            entries.append(e)
        return {"method": self.method, "k_cut": self.k_cut, "ranking": entries}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureRanking":
        entries = sorted(d["ranking"], key=lambda e: e["feature"])
        return cls.from_scores([e["score"] for e in entries], d["k_cut"], d["method"])


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; equal scores keep ascending index order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


@dataclass(frozen=True)
class SensitivityReport:
    features: np.ndarray
    values: np.ndarray  # S per feature
    top2_shift: np.ndarray  # (k, 2) mean |delta p| of the two most probable classes
    w: float
    scheme: str
    seed: int

    def to_json(self, feature_names: Sequence[str] | None = None) -> dict:
        rows = []
        for f, s, sh in zip(self.features, self.values, self.top2_shift):
            r = {"feature": int(f), "S": float(s), "top2_shift": [float(sh[0]), float(sh[1])]}
            if feature_names is not None:
                r["name"] = feature_names[f]
            rows.append(r)
        return {"w": self.w, "scheme": self.scheme, "seed": self.seed, "features": rows}


# --- probe ---------------------------------------------------------------------------

def _omega(t: dict[str, Tensor], V: Tensor, heads: int) -> Tensor:
    acc = None
    for h in range(heads):
        W = _head(t["att_W"], h)
        b = _head(t["att_b"], h)
        gated = ops.mul(V, ops.softmax(ops.linear(V, W, b), axis=1))
        acc = gated if acc is None else ops.add(acc, gated)
    return ops.scale(acc, 1.0 / heads)


def _head(x: Tensor, h: int) -> Tensor:
    # slice one head out of a stacked parameter, differentiably
    def vjp(g):
        out = np.zeros(x.shape)
        out[h] = g
        return (out,)

    return emit(x.value[h], (x,), vjp)


def _probe_graph(t: dict[str, Tensor], V: Tensor, heads: int) -> Tensor:
    h = _omega(t, V, heads)
    h = ops.elu(ops.linear(h, t["dense1_W"], t["dense1_b"]))
    return ops.softmax(ops.linear(h, t["dense2_W"], t["dense2_b"]), axis=1)


def attention_forward(probe: AttentionProbe, V: np.ndarray) -> np.ndarray:
    """Omega(V) = mean over heads of V * softmax(V W_h^T + b_h)."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        V = V[None]
    if V.shape[1] != probe.width:
        raise ShapeMismatch(f"probe expects width {probe.width}, got {V.shape[1]}")
    t = {k: Tensor(v, copy=False) for k, v in probe.params().items()}
    return np.array(_omega(t, Tensor(V), probe.heads).value)


def probe_predict_proba(probe: AttentionProbe, V: np.ndarray) -> np.ndarray:
    t = {k: Tensor(v, copy=False) for k, v in probe.params().items()}
    return np.array(_probe_graph(t, Tensor(np.atleast_2d(V)), probe.heads).value)


def extract_relevance(probe: AttentionProbe) -> np.ndarray:
    """Mean over heads of softmax(diag(W_h))."""
    diag = np.diagonal(probe.att_W, axis1=1, axis2=2)
    return ops.softmax_np(diag, axis=1).mean(axis=0)


def probe_inputs(model: bb.CAEClassifier | None, X: np.ndarray, placement: str) -> np.ndarray:
    if placement == "input":
        return np.asarray(X, dtype=np.float64)
    if placement == "embedding":
        if model is None:
            raise InvalidConfig("embedding placement needs the trained black-box")
        return bb.encode(model, X)
    raise InvalidConfig(f"placement must be one of {PLACEMENTS}, got {placement!r}")


def init_probe(width: int, n_classes: int, heads: int = 1, hidden: int = 32,
               placement: str = "input", seed: int = 0) -> AttentionProbe:
    if heads < 1:
        raise InvalidConfig("heads must be >= 1")
    rng = np.random.default_rng(seed)
    return AttentionProbe(
        att_W=np.stack([glorot_init((width, width), rng) for _ in range(heads)]),
        att_b=np.zeros((heads, width)),
        dense1_W=glorot_init((hidden, width), rng),
        dense1_b=np.zeros(hidden),
        dense2_W=glorot_init((n_classes, hidden), rng),
        dense2_b=np.zeros(n_classes),
        placement=placement,
    )


def train_probe(model: bb.CAEClassifier | None, dataset: Dataset, placement: str = "embedding",
                k_heads: int = 1, epochs: int = 30, hidden: int = 32, lr: float = 1e-3,
                batch_size: int = 64, seed: int = 0) -> AttentionProbe:
    """Fit the probe to the labels by cross-entropy; the black-box is only read."""
    V = probe_inputs(model, dataset.features, placement)
    y = dataset.labels
    probe = init_probe(V.shape[1], dataset.n_classes, k_heads, hidden, placement, seed)
    names = sorted(probe.params())
    params = [probe.params()[n] for n in names]
    state = AdamState.zeros_like(params)
    onehot = np.zeros((len(y), dataset.n_classes))
    onehot[np.arange(len(y)), y] = 1.0
    rng = np.random.default_rng([seed, 2])
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(V))
        for start in range(0, len(V), batch_size):
            idx = order[start : start + batch_size]
            with GradTape() as tape:
                t = {n: Tensor(p, copy=False) for n, p in zip(names, params)}
                probs = _probe_graph(t, Tensor(V[idx], copy=False), k_heads)
                loss = ops.scale(ops.sum(ops.mul(Tensor(onehot[idx], copy=False), ops.log(probs, bb.CE_FLOOR))),
                                 -1.0 / len(idx))
            if not np.isfinite(loss.value):
                raise NonFiniteLoss(epoch, "attention probe")
            grads = tape.backward(loss, [t[n] for n in names])
            params, state = adam_step(params, grads, state, lr=lr)
    return AttentionProbe(**dict(zip(names, params)), placement=placement)


def chain_relevance(relevance: np.ndarray, mean_abs_jacobian: np.ndarray) -> np.ndarray:
    """score_i = sum_j R[j] * mean|dz_j/dx_i|, normalised to sum 1 (uniform if all zero)."""
    s = np.asarray(relevance) @ np.asarray(mean_abs_jacobian)
    total = s.sum()
    if total <= 0:
        return np.full(len(s), 1.0 / len(s))
    return s / total


def input_attribution(model: bb.CAEClassifier, probe: AttentionProbe, X: np.ndarray,
                      k_cut: int | None = None, chunk: int = 256) -> FeatureRanking:
    """Map embedding-level relevances back to input features through the encoder Jacobian."""
    if probe.placement != "embedding":
        raise InvalidConfig("input_attribution needs an embedding-level probe")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptySample("attribution sample is empty")
    acc = np.zeros((model.config.embedding_dim, model.n_features))
    for start in range(0, len(X), chunk):
        acc += np.abs(bb.encoder_jacobian(model, X[start : start + chunk])).sum(axis=0)
    scores = chain_relevance(extract_relevance(probe), acc / len(X))
    k = model.n_features if k_cut is None else k_cut
    return FeatureRanking.from_scores(scores, k, "attention-embedding-chained")


def input_ranking(probe: AttentionProbe, k_cut: int | None = None) -> FeatureRanking:
    if probe.placement != "input":
        raise InvalidConfig("input_ranking needs an input-level probe")
    r = extract_relevance(probe)
    return FeatureRanking.from_scores(r, len(r) if k_cut is None else k_cut, "attention-input")


# --- sensitivity -----------------------------------------------------------------------

def as_proba_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, bb.CAEClassifier):
        return lambda X: bb.predict_proba(model, X)
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    if callable(model):
        return model
    raise TypeError(f"cannot derive a probability function from {type(model).__name__}")


def perturb_column(X: np.ndarray, feature: int, w: float, scheme: str, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, feature])
    Xp = np.array(X, dtype=np.float64)
    col = Xp[:, feature]
    if scheme == "gaussian-noise":
        sigma = col.std()
        Xp[:, feature] = col + w * sigma * rng.standard_normal(len(col))
    elif scheme == "permute":
        Xp[:, feature] = col[rng.permutation(len(col))]
    else:
        raise InvalidConfig(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    return Xp


def _mse_vs_onehot(probs: np.ndarray, labels: np.ndarray) -> float:
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    d = onehot - probs
    return float((d * d).mean())


def sensitivity(model, dataset: Dataset, feature: int, w: float = 1.0, scheme: str = "gaussian-noise",
                seed: int = 0, base_probs: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """S = MSE(one-hot, perturbed probs) - MSE(one-hot, original probs) and top-2 class shifts."""
    if not 0 <= feature < dataset.n_features:
        raise InvalidFeature(f"feature {feature} outside [0, {dataset.n_features})")
    if w < 0:
        raise InvalidConfig("perturbation magnitude w must be nonnegative")
    proba = as_proba_fn(model)
    X = dataset.features
    if base_probs is None:
        base_probs = proba(X)
    if w == 0 and scheme == "gaussian-noise":
        return 0.0, np.zeros(2)
    pert = proba(perturb_column(X, feature, w, scheme, seed))
    s = _mse_vs_onehot(pert, dataset.labels) - _mse_vs_onehot(base_probs, dataset.labels)
    top2 = np.argsort(-base_probs, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(X))[:, None]
    shift = np.abs(pert[rows, top2] - base_probs[rows, top2]).mean(axis=0)
    if shift.shape[0] < 2:
        shift = np.pad(shift, (0, 2 - shift.shape[0]))
    return s, shift


def sensitivity_scan(model, dataset: Dataset, features: Sequence[int], w: float = 1.0,
                     scheme: str = "gaussian-noise", seed: int = 0, threads: int = 1) -> SensitivityReport:
    features = np.asarray(list(features), dtype=np.int64)
    proba = as_proba_fn(model)
    base = proba(dataset.features)

    def one(f):
        return sensitivity(proba, dataset, int(f), w, scheme, seed, base)

    if threads > 1 and len(features) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, features))
    else:
        results = [one(f) for f in features]
    values = np.array([r[0] for r in results], dtype=np.float64)
    shifts = np.array([r[1] for r in results], dtype=np.float64).reshape(len(features), 2)
    return SensitivityReport(features, values, shifts, float(w), scheme, int(seed))


def validate_topk(model, dataset: Dataset, ranking: FeatureRanking, w: float = 1.0,
                  scheme: str = "gaussian-noise", seed: int = 0, threads: int = 1) -> SensitivityReport:
    """Sensitivity of the ranking's top ``k_cut`` features only, in ranking order."""
    return sensitivity_scan(model, dataset, ranking.top, w, scheme, seed, threads)
