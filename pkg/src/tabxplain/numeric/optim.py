"""Parameter initialisation and the Adam update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def glorot_bound(shape: tuple[int, ...]) -> float:
    if len(shape) < 2:
        raise ValueError(f"cannot derive fan-in/fan-out from shape {shape}")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out = shape[0] * receptive
    fan_in = shape[1] * receptive
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_init(shape: tuple[int, ...], seed) -> np.ndarray:
    """Glorot/Xavier uniform draw for a (out, in[, width]) weight."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = glorot_bound(tuple(shape))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam step. Returns new arrays; inputs are not modified."""
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)
