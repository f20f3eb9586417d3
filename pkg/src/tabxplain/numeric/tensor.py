"""Tensors and a reverse-mode gradient tape.

Operations in :mod:`tabxplain.numeric.ops` record themselves on every active
:class:`GradTape`; outside a tape they are plain numpy computations.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import GraphCycle, NumericError, ShapeMismatch


class Tensor:
    """An immutable float64 array with identity (used as a graph node)."""

    __slots__ = ("value", "name", "__weakref__")

    def __init__(self, value, name: str | None = None, copy: bool = True):
        arr = np.array(value, dtype=np.float64) if copy else np.asarray(value, dtype=np.float64)
        arr.flags.writeable = False
        self.value = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    # operator sugar; imports deferred to avoid a cycle with ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, as_tensor(other))

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_ACTIVE: list["GradTape"] = []


class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: VJP):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class GradTape:
    """Records differentiable operations executed inside a ``with`` block.

    >>> with GradTape() as tape:
    ...     y = ops.sum(ops.square(x))
    >>> (gx,) = tape.backward(y, [x])
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: VJP) -> None:
        key = id(out)
        if key in self._index:
            raise GraphCycle(f"{out!r} recorded twice")
        self._index[key] = len(self._records)
        self._records.append(_Record(out, inputs, vjp))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

        Tensors that did not influence ``loss`` get an all-zero gradient.
        """
        wrt = list(wrt)
        if loss.size != 1:
            raise ShapeMismatch(f"loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._index and all(w is not loss for w in wrt):
            return [np.zeros(w.shape) for w in wrt]
        keep = {id(w) for w in wrt}
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        start = self._index.get(id(loss), -1)
        for pos in range(start, -1, -1):
            rec = self._records[pos]
            g = grads.get(id(rec.out)) if id(rec.out) in keep else grads.pop(id(rec.out), None)
            if g is None:
                continue
            for inp in rec.inputs:
                src = self._index.get(id(inp))
                if src is not None and src >= pos:
                    raise GraphCycle(f"{inp!r} consumed before it was produced")
            in_grads = rec.vjp(g)
            for inp, gi in zip(rec.inputs, in_grads):
                if gi is None:
                    continue
                if gi.shape != inp.shape:
                    raise NumericError(f"gradient shape {gi.shape} != input shape {inp.shape}")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(w), np.zeros(w.shape)) for w in wrt]


def emit(value: np.ndarray, inputs: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    out = Tensor(value, copy=False)
    for tape in _ACTIVE:
        tape.record(out, inputs, vjp)
    return out


def recording() -> bool:
    return bool(_ACTIVE)
