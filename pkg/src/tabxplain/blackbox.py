"""Convolutional autoencoder with a softmax head, trained on a joint objective.

Rows of the standardized feature matrix are treated as single-channel 1-D
signals of length M. Each encoder stage is conv -> ELU -> max-pool; a dense
layer maps the flattened maps to the K-dimensional embedding. The decoder
mirrors the encoder with unpooling (reusing the forward switches) and
transposed convolutions, ending in a sigmoid. The classification head is a
dense softmax layer on the embedding.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Dataset, ScalerParams
from .errors import InvalidConfig, NonFiniteLoss, ShapeMismatch
from .numeric import ops
from .numeric.checkpoint import params_from_json, params_to_json
from .numeric.ops import Switches, center_switches, conv_out_len
from .numeric.optim import AdamState, adam_step, glorot_init
from .numeric.tensor import GradTape, Tensor

log = logging.getLogger(__name__)

CE_FLOOR = 1e-12


@dataclass(frozen=True)
class CAEConfig:
    # (channels, width, stride) per encoder stage
    conv_layers: tuple[tuple[int, int, int], ...] = ((8, 5, 1), (16, 5, 1))
    pool: int = 2
    embedding_dim: int = 16
    dense_bottleneck: bool = True
    latent_activation: str = "elu"
    alpha_r: float = 0.5
    alpha_ce: float = 0.5
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in c) for c in self.conv_layers))

    def validate(self, n_features: int) -> None:
        if self.embedding_dim < 1 or self.embedding_dim >= n_features:
            raise InvalidConfig(f"embedding_dim must satisfy 1 <= K < M={n_features}, got {self.embedding_dim}")
        if self.alpha_r < 0 or self.alpha_ce < 0 or (self.alpha_r == 0 and self.alpha_ce == 0):
            raise InvalidConfig("loss weights must be nonnegative and not both zero")
        if self.weight_decay < 0 or self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.pool < 1:
            raise InvalidConfig("invalid optimisation settings")
        if self.latent_activation not in ("elu", "linear"):
            raise InvalidConfig(f"unknown latent_activation {self.latent_activation!r}")
        for ch, width, stride in self.conv_layers:
            if ch < 1 or width < 1 or stride < 1:
                raise InvalidConfig(f"invalid conv layer {(ch, width, stride)}")
        flat = architecture(self, n_features)[-1]
        if not self.dense_bottleneck and flat != self.embedding_dim:
            raise InvalidConfig(f"without a dense bottleneck K must equal the flattened size {flat}")


def architecture(cfg: CAEConfig, n_features: int) -> tuple[list[dict], int]:
    """Per-stage geometry and the flattened encoder output size."""
    stages = []
    length, channels = n_features, 1
    for ch, width, stride in cfg.conv_layers:
        pad = (width - 1) // 2
        conv_len = conv_out_len(length, width, stride, pad)
        pooled = -(-conv_len // cfg.pool)
        stages.append(dict(c_in=channels, c_out=ch, width=width, stride=stride, padding=pad,
                           in_len=length, conv_len=conv_len, pooled_len=pooled))
        length, channels = pooled, ch
    return stages, channels * length


@dataclass(frozen=True)
class CAEClassifier:
    params: dict[str, np.ndarray]
    config: CAEConfig
    n_features: int
    n_classes: int
    target_min: np.ndarray
    target_max: np.ndarray
    scaler: ScalerParams | None = None
    history: tuple[dict, ...] = ()
    feature_names: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "params": params_to_json(self.params),
            "target_min": self.target_min.tolist(),
            "target_max": self.target_max.tolist(),
            "scaler": self.scaler.to_json() if self.scaler is not None else None,
            "history": list(self.history),
            "feature_names": list(self.feature_names),
            "class_names": list(self.class_names),
        }

    @classmethod
    def from_json(cls, d: dict) -> "CAEClassifier":
        cfg = dict(d["config"])
        cfg["conv_layers"] = tuple(tuple(c) for c in cfg["conv_layers"])
        return cls(
            params=params_from_json(d["params"]),
            config=CAEConfig(**cfg),
            n_features=d["n_features"],
            n_classes=d["n_classes"],
            target_min=np.asarray(d["target_min"], dtype=np.float64),
            target_max=np.asarray(d["target_max"], dtype=np.float64),
            scaler=ScalerParams.from_json(d["scaler"]) if d.get("scaler") else None,
            history=tuple(d.get("history", ())),
            feature_names=tuple(d.get("feature_names", ())),
            class_names=tuple(d.get("class_names", ())),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "CAEClassifier":
        return cls.from_json(json.loads(text))


def init_params(cfg: CAEConfig, n_features: int, n_classes: int) -> dict[str, np.ndarray]:
    stages, flat = architecture(cfg, n_features)
    rng = np.random.default_rng(cfg.seed)
    p: dict[str, np.ndarray] = {}
    for i, st in enumerate(stages):
        p[f"enc{i}.W"] = glorot_init((st["c_out"], st["c_in"], st["width"]), rng)
        p[f"enc{i}.b"] = np.zeros(st["c_out"])
    K = cfg.embedding_dim
    if cfg.dense_bottleneck:
        p["bottleneck.W"] = glorot_init((K, flat), rng)
        p["bottleneck.b"] = np.zeros(K)
        p["dec_dense.W"] = glorot_init((flat, K), rng)
        p["dec_dense.b"] = np.zeros(flat)
    for i, st in reversed(list(enumerate(stages))):
        p[f"dec{i}.W"] = glorot_init((st["c_out"], st["c_in"], st["width"]), rng)
        p[f"dec{i}.b"] = np.zeros(st["c_in"])
    p["head.W"] = glorot_init((n_classes, K), rng)
    p["head.b"] = np.zeros(n_classes)
    return p


def reconstruction_target(X: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Min-max map into [0, 1] (the sigmoid's range); constant columns map to 0.5."""
    span = hi - lo
    const = span <= 0
    T = (X - lo) / np.where(const, 1.0, span)
    T = np.clip(T, 0.0, 1.0)
    if np.any(const):
        T[:, const] = 0.5
    return T


def _check_width(model: CAEClassifier, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"expected rows of width {model.n_features}, got shape {X.shape}")
    return X


def _encode_graph(t: dict[str, Tensor], X: Tensor, cfg: CAEConfig, stages) -> tuple[Tensor, list[Switches], tuple]:
    n = X.shape[0]
    h = ops.reshape(X, (n, 1, X.shape[1]))
    switches = []
    for i, st in enumerate(stages):
        h = ops.conv1d(h, t[f"enc{i}.W"], t[f"enc{i}.b"], st["stride"], st["padding"])
        h = ops.elu(h)
        h, sw = ops.maxpool(h, cfg.pool)
        switches.append(sw)
    maps_shape = h.shape
    h = ops.reshape(h, (n, int(np.prod(maps_shape[1:]))))
    if cfg.dense_bottleneck:
        h = ops.linear(h, t["bottleneck.W"], t["bottleneck.b"])
        if cfg.latent_activation == "elu":
            h = ops.elu(h)
    return h, switches, maps_shape


def _decode_graph(t: dict[str, Tensor], Z: Tensor, cfg: CAEConfig, stages, maps_shape,
                  switches: Sequence[Switches] | None) -> Tensor:
    n = Z.shape[0]
    h = Z
    if cfg.dense_bottleneck:
        h = ops.elu(ops.linear(h, t["dec_dense.W"], t["dec_dense.b"]))
    h = ops.reshape(h, (n,) + tuple(maps_shape[1:]))
    for i in reversed(range(len(stages))):
        st = stages[i]
        if switches is not None:
            sw = switches[i]
        else:
            sw = center_switches((n, st["c_out"], st["pooled_len"]), cfg.pool, st["conv_len"])
        h = ops.unpool(h, sw, st["conv_len"])
        h = ops.transposed_conv1d(h, t[f"dec{i}.W"], t[f"dec{i}.b"], st["stride"], st["padding"],
                                  out_len=st["in_len"])
        h = ops.elu(h) if i > 0 else ops.sigmoid(h)
    if not stages:
        h = ops.sigmoid(h)
    return ops.reshape(h, (n, h.shape[-1]))


def _tensors(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, name=k, copy=False) for k, v in params.items()}


def encode(model: CAEClassifier, X: np.ndarray) -> np.ndarray:
    X = _check_width(model, X)
    stages, _ = architecture(model.config, model.n_features)
    Z, _, _ = _encode_graph(_tensors(model.params), Tensor(X), model.config, stages)
    return np.array(Z.value)


def decode(model: CAEClassifier, Z: np.ndarray, switches: Sequence[Switches] | None = None) -> np.ndarray:
    """Map embeddings back to reconstructions in (0, 1).

    Without switches from a paired forward pass, unpooling places each value
    at the centre of its window.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != model.config.embedding_dim:
        raise ShapeMismatch(f"expected embeddings of width {model.config.embedding_dim}, got {Z.shape}")
    stages, flat = architecture(model.config, model.n_features)
    last = stages[-1] if stages else None
    maps_shape = (Z.shape[0], last["c_out"], last["pooled_len"]) if last else (Z.shape[0], 1, model.n_features)
    out = _decode_graph(_tensors(model.params), Tensor(Z), model.config, stages, maps_shape, switches)
    return np.array(out.value)


def reconstruct(model: CAEClassifier, X: np.ndarray) -> np.ndarray:
    """Encode then decode, reusing the forward-pass switches."""
    X = _check_width(model, X)
    stages, _ = architecture(model.config, model.n_features)
    t = _tensors(model.params)
    Z, sw, maps_shape = _encode_graph(t, Tensor(X), model.config, stages)
    return np.array(_decode_graph(t, Z, model.config, stages, maps_shape, sw).value)


def _logits_to_proba(model: CAEClassifier, Z: np.ndarray) -> np.ndarray:
    return ops.softmax_np(Z @ model.params["head.W"].T + model.params["head.b"], axis=1)


def predict_proba(model: CAEClassifier, X: np.ndarray) -> np.ndarray:
    return _logits_to_proba(model, encode(model, X))


def predict(model: CAEClassifier, X: np.ndarray) -> np.ndarray:
    return predict_proba(model, X).argmax(axis=1)


def reconstruction_mse(target: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Per-row mean squared difference."""
    d = np.asarray(target, dtype=np.float64) - np.asarray(recon, dtype=np.float64)
    return (d * d).mean(axis=1)


def reconstruct_error(model: CAEClassifier, X: np.ndarray) -> np.ndarray:
    X = _check_width(model, X)
    return reconstruction_mse(reconstruction_target(X, model.target_min, model.target_max),
                              reconstruct(model, X))


def _loss_graph(t: dict[str, Tensor], X: np.ndarray, T: np.ndarray, onehot: np.ndarray,
                cfg: CAEConfig, stages) -> tuple[Tensor, dict[str, Tensor]]:
    Z, sw, maps_shape = _encode_graph(t, Tensor(X, copy=False), cfg, stages)
    probs = ops.softmax(ops.linear(Z, t["head.W"], t["head.b"]), axis=1)
    n = X.shape[0]
    ce = ops.scale(ops.sum(ops.mul(Tensor(onehot, copy=False), ops.log(probs, CE_FLOOR))), -1.0 / n)
    parts = {"ce": ce}
    total = ops.scale(ce, cfg.alpha_ce)
    if cfg.alpha_r > 0:
        recon = _decode_graph(t, Z, cfg, stages, maps_shape, sw)
        mse = ops.mean(ops.square(ops.sub(recon, Tensor(T, copy=False))))
        reg = None
        for name in sorted(t):
            if name.endswith(".W"):
                term = ops.sum(ops.square(t[name]))
                reg = term if reg is None else ops.add(reg, term)
        loss_r = ops.add(mse, ops.scale(reg, cfg.weight_decay)) if reg is not None else mse
        parts["mse"] = mse
        parts["r"] = loss_r
        total = ops.add(total, ops.scale(loss_r, cfg.alpha_r))
    return total, parts


def _onehot(y: np.ndarray, c: int) -> np.ndarray:
    out = np.zeros((len(y), c))
    out[np.arange(len(y)), y] = 1.0
    return out


def joint_loss(model: CAEClassifier, X: np.ndarray, labels: np.ndarray) -> tuple[float, dict[str, float]]:
    """alpha_r * (MSE + lambda * ||W||^2) + alpha_ce * cross-entropy, with components.

    With ``alpha_r == 0`` the decoder is not evaluated and ``loss_r`` is reported as 0.
    """
    X = _check_width(model, X)
    labels = np.asarray(labels, dtype=np.int64)
    if len(X) == 0 or len(labels) != len(X):
        raise ShapeMismatch("batch must be nonempty with one label per row")
    cfg = model.config
    stages, _ = architecture(cfg, model.n_features)
    T = reconstruction_target(X, model.target_min, model.target_max)
    total, parts = _loss_graph(_tensors(model.params), X, T, _onehot(labels, model.n_classes), cfg, stages)
    comp = {"loss": float(total.value), "loss_ce": float(parts["ce"].value),
            "loss_r": float(parts["r"].value) if "r" in parts else 0.0,
            "mse": float(parts["mse"].value) if "mse" in parts else 0.0}
    return comp["loss"], comp


def loss_and_grads(model: CAEClassifier, X: np.ndarray, labels: np.ndarray,
                   params: dict[str, np.ndarray] | None = None) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Joint loss and its gradient with respect to every parameter."""
    params = model.params if params is None else params
    cfg = model.config
    stages, _ = architecture(cfg, model.n_features)
    X = _check_width(model, X)
    T = reconstruction_target(X, model.target_min, model.target_max)
    names = sorted(params)
    with GradTape() as tape:
        t = _tensors(params)
        total, parts = _loss_graph(t, X, T, _onehot(np.asarray(labels), model.n_classes), cfg, stages)
    grads = tape.backward(total, [t[n] for n in names])
    comp = {"loss": float(total.value), "loss_ce": float(parts["ce"].value),
            "loss_r": float(parts["r"].value) if "r" in parts else 0.0}
    return comp["loss"], dict(zip(names, grads)), comp


def untrained(dataset: Dataset, config: CAEConfig, scaler: ScalerParams | None = None) -> CAEClassifier:
    config.validate(dataset.n_features)
    X = dataset.features
    return CAEClassifier(
        params=init_params(config, dataset.n_features, dataset.n_classes),
        config=config,
        n_features=dataset.n_features,
        n_classes=dataset.n_classes,
        target_min=X.min(axis=0),
        target_max=X.max(axis=0),
        scaler=scaler,
        feature_names=dataset.feature_names,
        class_names=dataset.class_names,
    )


def train(dataset: Dataset, config: CAEConfig, scaler: ScalerParams | None = None) -> CAEClassifier:
    """Mini-batch Adam on the joint objective; deterministic for a fixed seed."""
    model = untrained(dataset, config, scaler)
    X, y = dataset.features, dataset.labels
    names = sorted(model.params)
    params = [model.params[n] for n in names]
    state = AdamState.zeros_like(params)
    stages, _ = architecture(config, dataset.n_features)
    T_all = reconstruction_target(X, model.target_min, model.target_max)
    onehot_all = _onehot(y, dataset.n_classes)
    rng = np.random.default_rng([config.seed, 1])
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X))
        sums = {"loss": 0.0, "loss_r": 0.0, "loss_ce": 0.0}
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            with GradTape() as tape:
                t = {n: Tensor(p, name=n, copy=False) for n, p in zip(names, params)}
                total, parts = _loss_graph(t, X[idx], T_all[idx], onehot_all[idx], config, stages)
            loss = float(total.value)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, f"batch starting at {start}")
            grads = tape.backward(total, [t[n] for n in names])
            params, state = adam_step(params, grads, state, lr=config.lr)
            w = len(idx)
            sums["loss"] += w * loss
            sums["loss_ce"] += w * float(parts["ce"].value)
            sums["loss_r"] += w * (float(parts["r"].value) if "r" in parts else 0.0)
        rec = {"epoch": epoch, **{k: v / len(X) for k, v in sums.items()}}
        history.append(rec)
        log.debug("epoch %d loss %.5f (r %.5f, ce %.5f)", epoch, rec["loss"], rec["loss_r"], rec["loss_ce"])
    return replace(model, params=dict(zip(names, params)), history=tuple(history))


def encoder_jacobian(model: CAEClassifier, X: np.ndarray) -> np.ndarray:
    """d z_j / d x_i for every row: array of shape (N, K, M).

    Rows do not interact in the encoder, so one backward pass per embedding
    dimension over the summed batch yields all per-row gradients.
    """
    X = _check_width(model, X)
    stages, _ = architecture(model.config, model.n_features)
    K = model.config.embedding_dim
    with GradTape() as tape:
        xt = Tensor(X)
        Z, _, _ = _encode_graph(_tensors(model.params), xt, model.config, stages)
        col_sums = [ops.sum(ops.mul(Z, Tensor(np.eye(K)[j]))) for j in range(K)]
    jac = np.empty((X.shape[0], K, X.shape[1]))
    for j, s in enumerate(col_sums):
        jac[:, j, :] = tape.backward(s, [xt])[0]
    return jac
