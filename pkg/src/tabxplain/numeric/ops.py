"""Differentiable primitives.

Convolution-family ops work on batched signals of shape ``(N, C, L)``; a
single unbatched ``(C, L)`` signal is accepted too and keeps its rank.
Convolutions follow the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch, SwitchOutOfRange
from .tensor import Tensor, as_tensor, emit


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return emit(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return emit(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return emit(a.value * b.value, (a, b),
                lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return emit(a.value * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    return emit(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return emit(out, (a,), vjp)


def mean(a: Tensor) -> Tensor:
    n = a.size
    return emit(a.value.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.value
    neg = x < 0
    out = np.where(neg, alpha * np.expm1(np.minimum(x, 0.0)), x)

    def vjp(g):
        return (np.where(neg, g * (out + alpha), g),)

    return emit(out, (a,), vjp)


def elu_np(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return np.where(x >= 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_np(a.value)
    return emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def softmax_np(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    s = softmax_np(a.value, axis)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return emit(s, (a,), vjp)


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with the argument clamped from below at ``floor``."""
    x = a.value
    live = x > floor
    out = np.log(np.maximum(x, floor))
    return emit(out, (a,), lambda g: (np.where(live, g / np.where(live, x, 1.0), 0.0),))


# --- dense -------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    return emit(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W.T + b`` with ``W`` of shape (out, in)."""
    if x.value.ndim != 2 or W.value.ndim != 2 or x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeMismatch(f"linear x{x.shape} W{W.shape} b{b.shape}")
    out = x.value @ W.value.T + b.value

    def vjp(g):
        return g @ W.value, g.T @ x.value, g.sum(axis=0)

    return emit(out, (x, W, b), vjp)


# --- 1-D convolution family ------------------------------------------------------

def conv_out_len(length: int, width: int, stride: int, padding: int) -> int:
    if length + 2 * padding < width:
        raise ShapeMismatch(f"signal of length {length} (padding {padding}) shorter than kernel {width}")
    return (length + 2 * padding - width) // stride + 1


def _im2col(xp: np.ndarray, width: int, stride: int, l_out: int) -> np.ndarray:
    n, c, _ = xp.shape
    win = sliding_window_view(xp, width, axis=2)[:, :, : stride * (l_out - 1) + 1 : stride]
    return win.transpose(0, 2, 1, 3).reshape(n, l_out, c * width)


def _col2im(cols: np.ndarray, channels: int, width: int, stride: int, length: int) -> np.ndarray:
    n, l_out, _ = cols.shape
    cols = cols.reshape(n, l_out, channels, width)
    out = np.zeros((n, channels, length))
    span = stride * (l_out - 1) + 1
    for j in range(width):
        out[:, :, j : j + span : stride] += cols[:, :, :, j].transpose(0, 2, 1)
    return out


def _batched(x: Tensor) -> bool:
    if x.value.ndim == 3:
        return True
    if x.value.ndim == 2:
        return False
    raise ShapeMismatch(f"expected (N, C, L) or (C, L), got {x.shape}")


def _as3(v: np.ndarray, batched: bool) -> np.ndarray:
    return v if batched else v[None]


def _back(v: np.ndarray, batched: bool) -> np.ndarray:
    return v if batched else v[0]


def conv1d(x: Tensor, W: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (C_in, L) with ``W`` (C_out, C_in, width) plus bias."""
    batched = _batched(x)
    xv = _as3(x.value, batched)
    n, c_in, length = xv.shape
    c_out, w_in, width = W.shape
    if w_in != c_in or b.shape != (c_out,) or stride < 1 or padding < 0:
        raise ShapeMismatch(f"conv1d input {x.shape} kernel {W.shape} bias {b.shape}")
    l_out = conv_out_len(length, width, stride, padding)
    xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding)))
    cols = _im2col(xp, width, stride, l_out)
    Wm = W.value.reshape(c_out, c_in * width)
    out = (cols @ Wm.T).transpose(0, 2, 1) + b.value[:, None]

    def vjp(g):
        g3 = _as3(g, batched).transpose(0, 2, 1)
        dW = (g3.reshape(-1, c_out).T @ cols.reshape(-1, c_in * width)).reshape(W.shape)
        db = g3.sum(axis=(0, 1))
        dxp = _col2im(g3 @ Wm, c_in, width, stride, length + 2 * padding)
        return _back(dxp[:, :, padding : padding + length], batched), dW, db

    return emit(_back(out, batched), (x, W, b), vjp)


def transposed_conv1d(y: Tensor, W: Tensor, b: Tensor, stride: int = 1, padding: int = 0,
                      out_len: int | None = None) -> Tensor:
    """Adjoint of :func:`conv1d` (bias aside): maps (C_out, L_out) back to (C_in, L).

    ``W`` has the conv1d layout (C_out, C_in, width); ``b`` has length C_in.
    ``out_len`` selects L when several lengths share the same conv output size.
    """
    batched = _batched(y)
    yv = _as3(y.value, batched)
    n, c_out, l_in = yv.shape
    w_out, c_in, width = W.shape
    if w_out != c_out or b.shape != (c_in,) or stride < 1 or padding < 0:
        raise ShapeMismatch(f"transposed_conv1d input {y.shape} kernel {W.shape} bias {b.shape}")
    natural = (l_in - 1) * stride + width - 2 * padding
    if out_len is None:
        out_len = natural
    if out_len < 1 or conv_out_len(out_len, width, stride, padding) != l_in:
        raise ShapeMismatch(f"out_len {out_len} incompatible with input length {l_in}")
    full = out_len + 2 * padding
    Wm = W.value.reshape(c_out, c_in * width)
    yt = yv.transpose(0, 2, 1)
    xp = _col2im(yt @ Wm, c_in, width, stride, full)
    out = xp[:, :, padding : padding + out_len] + b.value[:, None]

    def vjp(g):
        g3 = _as3(g, batched)
        gp = np.pad(g3, ((0, 0), (0, 0), (padding, padding)))
        cols = _im2col(gp, width, stride, l_in)
        dy = (cols @ Wm.T).transpose(0, 2, 1)
        dW = (yt.reshape(-1, c_out).T @ cols.reshape(-1, c_in * width)).reshape(W.shape)
        db = g3.sum(axis=(0, 2))
        return _back(dy, batched), dW, db

    return emit(_back(out, batched), (y, W, b), vjp)


@dataclass(frozen=True)
class Switches:
    """Arg-max positions (indices along the length axis) recorded by max-pooling."""

    indices: np.ndarray  # (N, C, P) or (C, P), int64
    window: int
    input_len: int

    @property
    def pooled_shape(self) -> tuple[int, ...]:
        return self.indices.shape


def maxpool(x: Tensor, window: int) -> tuple[Tensor, Switches]:
    """Non-overlapping max-pooling; ties go to the lowest index.

    A trailing partial window is padded with ``-inf`` (never selected).
    """
    if window < 1:
        raise ShapeMismatch("pool window must be >= 1")
    batched = _batched(x)
    xv = _as3(x.value, batched)
    n, c, length = xv.shape
    p = -(-length // window)
    xp = np.pad(xv, ((0, 0), (0, 0), (0, p * window - length)), constant_values=-np.inf)
    windows = xp.reshape(n, c, p, window)
    am = windows.argmax(axis=3)
    idx = am + (np.arange(p) * window)[None, None, :]
    out = windows.max(axis=3)
    sw = Switches(_back(idx, batched), window, length)
    hit = am[..., None] == np.arange(window)

    def vjp(g):
        dx = (hit * _as3(g, batched)[..., None]).reshape(n, c, p * window)
        return (_back(dx[:, :, :length], batched),)

    return emit(_back(out, batched), (x,), vjp), sw


def unpool(x: Tensor, switches: Switches, out_len: int) -> Tensor:
    """Place pooled values at their switch positions, zeros elsewhere."""
    batched = _batched(x)
    if x.shape != switches.indices.shape:
        raise SwitchOutOfRange(f"pooled shape {x.shape} != switch shape {switches.indices.shape}")
    idx = _as3(switches.indices, batched)
    if idx.size and (idx.min() < 0 or idx.max() >= out_len):
        raise SwitchOutOfRange(f"switch index outside [0, {out_len})")
    xv = _as3(x.value, batched)
    n, c, p = xv.shape
    w = switches.window
    local = idx - (np.arange(p) * w)[None, None, :]
    if p * w >= out_len and local.min(initial=0) >= 0 and local.max(initial=0) < w:
        hit = local[..., None] == np.arange(w)
        out = (hit * xv[..., None]).reshape(n, c, p * w)[:, :, :out_len]

        def vjp(g):
            gp = np.pad(_as3(g, batched), ((0, 0), (0, 0), (0, p * w - out_len)))
            return (_back((gp.reshape(n, c, p, w) * hit).sum(axis=3), batched),)
    else:
        out = np.zeros((n, c, out_len))
        np.put_along_axis(out, idx, xv, axis=2)

        def vjp(g):
            return (_back(np.take_along_axis(_as3(g, batched), idx, axis=2), batched),)

    return emit(_back(out, batched), (x,), vjp)


def center_switches(pooled_shape: tuple[int, ...], window: int, out_len: int) -> Switches:
    """Switches pointing at the centre of each window, for decoding without a forward pass."""
    p = pooled_shape[-1]
    starts = np.arange(p) * window
    ends = np.minimum(starts + window, out_len)
    centre = starts + (ends - starts - 1) // 2
    idx = np.broadcast_to(centre, pooled_shape).astype(np.int64).copy()
    return Switches(idx, window, out_len)
