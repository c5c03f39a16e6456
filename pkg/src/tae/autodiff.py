"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records primitive operations eagerly as they are applied to
:class:`Var` handles. The recording can be replayed with new leaf values
(:meth:`Tape.forward`) and differentiated (:meth:`Tape.backward`). Replay is
what makes finite-difference checking cheap: perturb a parameter, replay,
read the output.

Leaves come in three kinds:

* ``param``  named, differentiable, reported by :meth:`Tape.backward`
* ``input``  named, differentiable, fed at replay time
* ``const``  anonymous, never differentiated (use for frozen weights)
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


class ShapeError(TapeError):
    def __init__(self, node: int, label: str, expected, got):
        self.node = node
        self.label = label
        super().__init__(
            f"shape mismatch at node {node} ({label}): expected {tuple(expected)}, got {tuple(got)}"
        )


def as_array(value, name: str = "array") -> np.ndarray:
    """Validate and convert to a float64 array; NaN/Inf are rejected."""
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive registry: name -> (forward, backward)
#   forward(vals, **attrs) -> (out, cache)
#   backward(g, vals, out, cache, **attrs) -> list of input grads (None allowed)

_OPS: dict[str, tuple[Callable, Callable]] = {}


def _primitive(name):
    def register(cls):
        _OPS[name] = (cls.forward, cls.backward)
        return cls
    return register


@_primitive("add")
class _Add:
    @staticmethod
    def forward(vals):
        a, b = vals
        return a + b, None

    @staticmethod
    def backward(g, vals, out, cache):
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]


@_primitive("sub")
class _Sub:
    @staticmethod
    def forward(vals):
        a, b = vals
        return a - b, None

    @staticmethod
    def backward(g, vals, out, cache):
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)]


@_primitive("mul")
class _Mul:
    @staticmethod
    def forward(vals):
        a, b = vals
        return a * b, None

    @staticmethod
    def backward(g, vals, out, cache):
        a, b = vals
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


@_primitive("scale")
class _Scale:
    @staticmethod
    def forward(vals, factor):
        return vals[0] * factor, None

    @staticmethod
    def backward(g, vals, out, cache, factor):
        return [g * factor]


@_primitive("matmul")
class _MatMul:
    # (..., n, k) @ (k, m); the right operand is always 2-D (weights)
    @staticmethod
    def forward(vals):
        a, b = vals
        if a.shape[-1] != b.shape[0] or b.ndim != 2:
            raise ValueError(f"matmul operands {a.shape} @ {b.shape}")
        return a @ b, None

    @staticmethod
    def backward(g, vals, out, cache):
        a, b = vals
        ga = g @ b.T
        a2 = a.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return [ga, a2.T @ g2]


@_primitive("conv1d")
class _Conv1d:
    """Causal dilated convolution. x: (N, T, C), w: (k, C, O) -> (N, T, O).

    Tap j reads x[t - (k - 1 - j) * dilation]; positions before 0 are zero.
    """

    @staticmethod
    def _columns(x, k, dilation):
        n, t, c = x.shape
        pad = (k - 1) * dilation
        xp = np.concatenate([np.zeros((n, pad, c)), x], axis=1)
        cols = np.stack([xp[:, j * dilation: j * dilation + t, :] for j in range(k)], axis=2)
        return cols  # (N, T, k, C)

    @staticmethod
    def forward(vals, dilation):
        x, w = vals
        k, c, o = w.shape
        if x.ndim != 3 or x.shape[2] != c:
            raise ValueError(f"conv1d input {x.shape} vs kernel {w.shape}")
        cols = _Conv1d._columns(x, k, dilation)
        out = cols.reshape(x.shape[0] * x.shape[1], k * c) @ w.reshape(k * c, o)
        return out.reshape(x.shape[0], x.shape[1], o), cols

    @staticmethod
    def backward(g, vals, out, cols, dilation):
        x, w = vals
        k, c, o = w.shape
        n, t, _ = x.shape
        g2 = g.reshape(n * t, o)
        gw = (cols.reshape(n * t, k * c).T @ g2).reshape(k, c, o)
        gcols = (g2 @ w.reshape(k * c, o).T).reshape(n, t, k, c)
        pad = (k - 1) * dilation
        gxp = np.zeros((n, t + pad, c))
        for j in range(k):
            gxp[:, j * dilation: j * dilation + t, :] += gcols[:, :, j, :]
        return [gxp[:, pad:, :], gw]


@_primitive("relu")
class _Relu:
    @staticmethod
    def forward(vals):
        return np.maximum(vals[0], 0.0), None

    @staticmethod
    def backward(g, vals, out, cache):
        # subgradient at 0 is 0
        return [g * (vals[0] > 0.0)]


@_primitive("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(vals):
        x = vals[0]
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, None

    @staticmethod
    def backward(g, vals, out, cache):
        return [g * out * (1.0 - out)]


@_primitive("softmax")
class _Softmax:
    @staticmethod
    def forward(vals, axis):
        x = vals[0]
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True), None

    @staticmethod
    def backward(g, vals, out, cache, axis):
        return [out * (g - (g * out).sum(axis=axis, keepdims=True))]


@_primitive("exp")
class _Exp:
    @staticmethod
    def forward(vals):
        return np.exp(vals[0]), None

    @staticmethod
    def backward(g, vals, out, cache):
        return [g * out]


@_primitive("log")
class _Log:
    @staticmethod
    def forward(vals):
        if np.any(vals[0] <= 0.0):
            raise ValueError("log of non-positive value")
        return np.log(vals[0]), None

    @staticmethod
    def backward(g, vals, out, cache):
        return [g / vals[0]]


@_primitive("clip")
class _Clip:
    @staticmethod
    def forward(vals, lo, hi):
        return np.clip(vals[0], lo, hi), None

    @staticmethod
    def backward(g, vals, out, cache, lo, hi):
        x = vals[0]
        return [g * ((x >= lo) & (x <= hi))]


@_primitive("gather")
class _Gather:
    """Rows of x selected by an integer index array (axis 0)."""

    @staticmethod
    def forward(vals, index):
        return vals[0][index], None

    @staticmethod
    def backward(g, vals, out, cache, index):
        gx = np.zeros_like(vals[0])
        np.add.at(gx, index, g)
        return [gx]


@_primitive("segment_sum")
class _SegmentSum:
    """Sum rows of x into ``num`` buckets given by ``segments`` (axis 0).

    Rows are accumulated in their stored order, so callers that need
    order-independent results must sort rows by a stable intrinsic key.
    """

    @staticmethod
    def forward(vals, segments, num):
        x = vals[0]
        out = np.zeros((num,) + x.shape[1:])
        np.add.at(out, segments, x)
        return out, None

    @staticmethod
    def backward(g, vals, out, cache, segments, num):
        return [g[segments]]


@_primitive("concat")
class _Concat:
    @staticmethod
    def forward(vals, axis):
        return np.concatenate(vals, axis=axis), [v.shape[axis] for v in vals]

    @staticmethod
    def backward(g, vals, out, sizes, axis):
        splits = np.cumsum(sizes)[:-1]
        return list(np.split(g, splits, axis=axis))


@_primitive("slice")
class _Slice:
    @staticmethod
    def forward(vals, key):
        return vals[0][key], None

    @staticmethod
    def backward(g, vals, out, cache, key):
        gx = np.zeros_like(vals[0])
        gx[key] = g
        return [gx]


@_primitive("reshape")
class _Reshape:
    @staticmethod
    def forward(vals, shape):
        return vals[0].reshape(shape), None

    @staticmethod
    def backward(g, vals, out, cache, shape):
        return [g.reshape(vals[0].shape)]


@_primitive("sum")
class _Sum:
    @staticmethod
    def forward(vals, axis, keepdims):
        return np.sum(vals[0], axis=axis, keepdims=keepdims), None

    @staticmethod
    def backward(g, vals, out, cache, axis, keepdims):
        x = vals[0]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, x.shape).copy()]


@_primitive("mean")
class _Mean:
    @staticmethod
    def forward(vals, axis, keepdims):
        return np.mean(vals[0], axis=axis, keepdims=keepdims), None

    @staticmethod
    def backward(g, vals, out, cache, axis, keepdims):
        x = vals[0]
        count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g / count, x.shape).copy()]


@_primitive("sq_err")
class _SqErr:
    """Sum of squared differences, reduced to a scalar."""

    @staticmethod
    def forward(vals):
        d = vals[0] - vals[1]
        return np.array(np.sum(d * d)), d

    @staticmethod
    def backward(g, vals, out, d):
        return [2.0 * g * d, -2.0 * g * d]


PRIMITIVES = tuple(sorted(_OPS))


# ---------------------------------------------------------------------------


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "idx")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.idx]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def _lift(self, other) -> "Var":
        return other if isinstance(other, Var) else self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.apply("scale", self, factor=float(other))
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.apply("scale", self, factor=-1.0)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def __getitem__(self, key):
        return self.tape.apply("slice", self, key=key)

    def __repr__(self):
        return f"Var(node={self.idx}, shape={self.shape})"


class Tape:
    """Eager recording of a composition of primitives."""

    def __init__(self):
        self.ops: list[tuple[str, tuple[int, ...], dict]] = []
        self.values: list[np.ndarray] = []
        self.caches: list = []
        self.kinds: list[str] = []
        self.names: list[str | None] = []
        self.params: dict[str, int] = {}
        self.inputs: dict[str, int] = {}
        self._fresh = True

    def __len__(self):
        return len(self.ops)

    # -- leaves ------------------------------------------------------------
    def _leaf(self, kind, name, value) -> Var:
        arr = as_array(value, name or kind)
        self.ops.append(("leaf", (), {}))
        self.values.append(arr)
        self.caches.append(None)
        self.kinds.append(kind)
        self.names.append(name)
        return Var(self, len(self.values) - 1)

    def param(self, name: str, value) -> Var:
        if name in self.params:
            return Var(self, self.params[name])
        v = self._leaf("param", name, value)
        self.params[name] = v.idx
        return v

    def input(self, name: str, value) -> Var:
        if name in self.inputs:
            raise TapeError(f"input {name!r} registered twice")
        v = self._leaf("input", name, value)
        self.inputs[name] = v.idx
        return v

    def const(self, value) -> Var:
        return self._leaf("const", None, value)

    # -- recording -----------------------------------------------------------
    def apply(self, op: str, *args: Var, **attrs) -> Var:
        fwd, _ = _OPS[op]
        for a in args:
            if a.tape is not self:
                raise TapeError("operands belong to different tapes")
        idx = tuple(a.idx for a in args)
        out, cache = fwd([self.values[i] for i in idx], **attrs)
        self.ops.append((op, idx, attrs))
        self.values.append(np.asarray(out, dtype=np.float64))
        self.caches.append(cache)
        self.kinds.append("op")
        self.names.append(None)
        return Var(self, len(self.values) - 1)

    # -- replay --------------------------------------------------------------
    def forward(self, feeds: dict[str, np.ndarray] | None = None, output: Var | int | None = None):
        """Recompute every node with the given leaf replacements.

        ``feeds`` maps param or input names to new values of identical shape.
        Returns the value of ``output`` (default: last node).
        """
        feeds = feeds or {}
        known = {**self.params, **self.inputs}
        for name in feeds:
            if name not in known:
                raise TapeError(f"unknown leaf {name!r}")
        for i, (op, idx, attrs) in enumerate(self.ops):
            if op == "leaf":
                name = self.names[i]
                if name in feeds:
                    new = as_array(feeds[name], name)
                    if new.shape != self.values[i].shape:
                        raise ShapeError(i, name, self.values[i].shape, new.shape)
                    self.values[i] = new
                continue
            fwd, _ = _OPS[op]
            try:
                out, cache = fwd([self.values[j] for j in idx], **attrs)
            except (ValueError, IndexError) as exc:
                raise TapeError(f"node {i} ({op}): {exc}") from exc
            out = np.asarray(out, dtype=np.float64)
            if out.shape != self.values[i].shape:
                raise ShapeError(i, op, self.values[i].shape, out.shape)
            self.values[i] = out
            self.caches[i] = cache
        self._fresh = True
        return self.values[self._index(output)]

    def _index(self, node):
        if node is None:
            if not self.values:
                raise TapeError("empty tape")
            return len(self.values) - 1
        return node.idx if isinstance(node, Var) else int(node)

    # -- differentiation -----------------------------------------------------
    def backward(self, output: Var | int | None = None, seed=None) -> dict[str, np.ndarray]:
        """Gradients of ``output`` with respect to every param and input.

        Leaves not on any path to the output get zero arrays.
        """
        if not self.values:
            raise TapeError("backward before forward: tape is empty")
        out_idx = self._index(output)
        out_val = self.values[out_idx]
        seed = np.ones_like(out_val) if seed is None else as_array(seed, "seed")
        if seed.shape != out_val.shape:
            raise ShapeError(out_idx, "seed", out_val.shape, seed.shape)
        grads: dict[int, np.ndarray] = {out_idx: seed}
        for i in range(out_idx, -1, -1):
            g = grads.pop(i, None)
            op, idx, attrs = self.ops[i]
            if g is None or op == "leaf":
                if g is not None:
                    grads[i] = g  # keep leaf grads
                continue
            _, bwd = _OPS[op]
            in_grads = bwd(g, [self.values[j] for j in idx], self.values[i], self.caches[i], **attrs)
            for j, gj in zip(idx, in_grads):
                if gj is None or self.kinds[j] == "const":
                    continue
                if j in grads:
                    grads[j] = grads[j] + gj
                else:
                    grads[j] = gj
        result = {}
        for name, i in {**self.params, **self.inputs}.items():
            result[name] = grads.get(i, np.zeros_like(self.values[i]))
        return result


# ---------------------------------------------------------------------------
# functional helpers (all compositions of primitives)


def relu(x: Var) -> Var:
    return x.tape.apply("relu", x)


def sigmoid(x: Var) -> Var:
    return x.tape.apply("sigmoid", x)


def softmax(x: Var, axis: int = -1) -> Var:
    return x.tape.apply("softmax", x, axis=axis)


def exp(x: Var) -> Var:
    return x.tape.apply("exp", x)


def log(x: Var) -> Var:
    return x.tape.apply("log", x)


def clip(x: Var, lo: float, hi: float) -> Var:
    return x.tape.apply("clip", x, lo=lo, hi=hi)


def gather(x: Var, index) -> Var:
    return x.tape.apply("gather", x, index=np.asarray(index, dtype=np.int64))


def segment_sum(x: Var, segments, num: int) -> Var:
    return x.tape.apply("segment_sum", x, segments=np.asarray(segments, dtype=np.int64), num=int(num))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    return xs[0].tape.apply("concat", *xs, axis=axis)


def reshape(x: Var, shape) -> Var:
    return x.tape.apply("reshape", x, shape=tuple(shape))


def vsum(x: Var, axis=None, keepdims: bool = False) -> Var:
    return x.tape.apply("sum", x, axis=axis, keepdims=keepdims)


def mean(x: Var, axis=None, keepdims: bool = False) -> Var:
    return x.tape.apply("mean", x, axis=axis, keepdims=keepdims)


def sq_err(a: Var, b: Var) -> Var:
    return a.tape.apply("sq_err", a, b)


def conv1d(x: Var, w: Var, dilation: int = 1) -> Var:
    return x.tape.apply("conv1d", x, w, dilation=int(dilation))


def abs_(x: Var) -> Var:
    return relu(x) + relu(-x)


def dense(x: Var, w: Var, b: Var) -> Var:
    return x @ w + b


def segment_softmax(scores: Var, segments, num: int) -> Var:
    """Softmax of a 1-D score vector within each segment.

    The per-segment max is subtracted as a constant; it cancels exactly in
    the normalized result, so gradients are unaffected.
    """
    segments = np.asarray(segments, dtype=np.int64)
    s = scores.value
    seg_max = np.full(num, -np.inf)
    np.maximum.at(seg_max, segments, s)
    shifted = scores - seg_max[segments]
    e = exp(shifted)
    denom = segment_sum(e, segments, num)
    empty = np.ones(num)
    empty[segments] = 0.0
    denom = denom + empty
    return exp(shifted - gather(log(denom), segments))


def check_scalar(x: Var) -> float:
    v = float(x.value)
    if not math.isfinite(v):
        raise FloatingPointError("non-finite scalar")
    return v
