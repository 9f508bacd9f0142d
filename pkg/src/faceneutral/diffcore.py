"""Reverse-mode differentiation on dense float64 arrays.

The engine is deliberately small: values are numpy arrays, a :class:`Tape`
records each primitive application in execution order (inputs always
precede their consumers), and :func:`backward` replays the record in
reverse, accumulating per-node gradient buffers in one pass. Everything is
double precision with no hidden randomness, so fixed inputs always produce
bit-identical values and gradients — the property the finite-difference
harness and the training determinism contract both rely on.

Kink conventions are pinned for testability: ``relu`` and ``abs_sum`` use
subgradient 0 exactly at the kink, ``leaky_relu`` takes the negative-side
slope at 0, and ``clip`` passes gradient on the closed interval.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible shapes; message names the operation."""


class Node:
    """One value in the computation record, plus its gradient buffer."""

    __slots__ = ("value", "grad", "tape", "_parents", "_pull")

    def __init__(self, value, tape, parents, pull):
        self.value = value
        self.grad = None
        self.tape = tape
        self._parents = parents
        self._pull = pull


class Tape:
    """Execution-ordered record of primitive applications.

    A tape is single-owner: build a fresh one per training step or per
    evaluation, call :meth:`backward` at most once.
    """

    __slots__ = ("nodes", "_done")

    def __init__(self):
        self.nodes: list[Node] = []
        self._done = False

    def leaf(self, value) -> Node:
        """Enter an input or parameter value (no parents)."""
        return self._record(_as_value(value), (), None)

    def _record(self, value, parents, pull) -> Node:
        node = Node(value, self, parents, pull)
        self.nodes.append(node)
        return node

    def backward(self, root: Node) -> None:
        if root.tape is not self:
            raise ValueError("root node belongs to a different tape")
        if self._done:
            raise RuntimeError("backward already ran on this tape")
        if root.value.shape != ():
            raise ShapeError(f"backward: root must be scalar, got shape {root.value.shape}")
        self._done = True
        root.grad = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node._pull is None:
                continue
            for parent, contrib in zip(node._parents, node._pull(g)):
                if contrib is None:
                    continue
                parent.grad = contrib if parent.grad is None else parent.grad + contrib


def backward(tape: Tape, root: Node) -> None:
    tape.backward(root)


def grad(node: Node) -> np.ndarray:
    """Gradient of the backward root w.r.t. this node (zeros if unreachable)."""
    return node.grad if node.grad is not None else np.zeros_like(node.value)


def _as_value(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _tape_of(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for node in nodes[1:]:
        if node.tape is not tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g if g.shape == tuple(shape) else g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    """Matrix product: (m,k)@(k,n) -> (m,n), or (k,)@(k,n) -> (n,)."""
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} x {bv.shape}")
    if av.ndim == 2:
        def pull(g):
            return g @ bv.T, av.T @ g
    else:
        def pull(g):
            return bv @ g, np.outer(av, g)
    return tape._record(av @ bv, (a, b), pull)


def sparse_matvec_batch(matrix, x: Node, symmetric: bool = False) -> Node:
    """Sparse (n, n) times dense (n, f). The matrix is a constant.

    With ``symmetric=True`` the backward pass reuses the matrix itself
    instead of materializing its transpose.
    """
    xv = x.value
    if xv.ndim != 2 or matrix.shape != (xv.shape[0], xv.shape[0]):
        raise ShapeError(f"sparse_matvec_batch: matrix {matrix.shape} vs features {xv.shape}")
    mt = matrix if symmetric else matrix.T.tocsr()

    def pull(g):
        return (mt @ g,)

    return x.tape._record(matrix @ xv, (x,), pull)


def add(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.value.shape} + {b.value.shape}") from None

    def pull(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return tape._record(value, (a, b), pull)


def sub(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    try:
        value = a.value - b.value
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.value.shape} - {b.value.shape}") from None

    def pull(g):
        return _unbroadcast(g, a.value.shape), -_unbroadcast(g, b.value.shape)

    return tape._record(value, (a, b), pull)


def mul(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.value.shape} * {b.value.shape}") from None

    def pull(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return tape._record(value, (a, b), pull)


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)

    def pull(g):
        return (g * factor,)

    return a.tape._record(a.value * factor, (a,), pull)


def shift(a: Node, offset: float) -> Node:
    offset = float(offset)

    def pull(g):
        return (g,)

    return a.tape._record(a.value + offset, (a,), pull)


def concat_last_axis(*nodes: Node) -> Node:
    if len(nodes) < 2:
        raise ShapeError("concat_last_axis: need at least two operands")
    tape = _tape_of(*nodes)
    values = [n.value for n in nodes]
    lead = values[0].shape[:-1]
    if any(v.shape[:-1] != lead for v in values):
        raise ShapeError(
            f"concat_last_axis: leading shapes differ: {[v.shape for v in values]}"
        )
    offsets = np.cumsum([v.shape[-1] for v in values])[:-1]

    def pull(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=-1))

    return tape._record(np.concatenate(values, axis=-1), nodes, pull)


def reshape(a: Node, shape) -> Node:
    old = a.value.shape

    def pull(g):
        return (g.reshape(old),)

    return a.tape._record(a.value.reshape(shape), (a,), pull)


def swapaxes01(x: Node) -> Node:
    """Exchange the two leading axes of a >=2-d node."""
    if x.value.ndim < 2:
        raise ShapeError(f"swapaxes01: need >= 2 dims, got shape {x.value.shape}")

    def pull(g):
        return (np.ascontiguousarray(g.swapaxes(0, 1)),)

    return x.tape._record(np.ascontiguousarray(x.value.swapaxes(0, 1)), (x,), pull)


def segment(x: Node, start: int, stop: int) -> Node:
    """Contiguous slice [start, stop) of a 1-d node."""
    if x.value.ndim != 1:
        raise ShapeError(f"segment: need a 1-d operand, got shape {x.value.shape}")
    if not 0 <= start < stop <= x.value.shape[0]:
        raise ShapeError(f"segment: bad range [{start}, {stop}) for length {x.value.shape[0]}")

    def pull(g):
        out = np.zeros_like(x.value)
        out[start:stop] = g
        return (out,)

    return x.tape._record(x.value[start:stop].copy(), (x,), pull)


def relu(x: Node) -> Node:
    mask = x.value > 0

    def pull(g):
        return (g * mask,)

    return x.tape._record(np.maximum(x.value, 0.0), (x,), pull)


def leaky_relu(x: Node, slope: float) -> Node:
    slope = float(slope)
    factor = np.where(x.value > 0, 1.0, slope)

    def pull(g):
        return (g * factor,)

    return x.tape._record(np.where(x.value > 0, x.value, slope * x.value), (x,), pull)


def sigmoid(x: Node) -> Node:
    # Stable on both tails: 1/(1+e^-x) for x >= 0, e^x/(1+e^x) otherwise.
    v = x.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ex = np.exp(v[~pos])
    out[~pos] = ex / (1.0 + ex)

    def pull(g):
        return (g * out * (1.0 - out),)

    return x.tape._record(out, (x,), pull)


def softmax_last_axis(x: Node) -> Node:
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def pull(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return x.tape._record(out, (x,), pull)


def log(x: Node) -> Node:
    def pull(g):
        return (g / x.value,)

    return x.tape._record(np.log(x.value), (x,), pull)


def clip(x: Node, lo: float, hi: float) -> Node:
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"clip: need lo < hi, got {lo}, {hi}")
    mask = (x.value >= lo) & (x.value <= hi)

    def pull(g):
        return (g * mask,)

    return x.tape._record(np.clip(x.value, lo, hi), (x,), pull)


def mean(x: Node) -> Node:
    size = x.value.size

    def pull(g):
        return (np.full(x.value.shape, float(g) / size),)

    return x.tape._record(np.asarray(x.value.mean()), (x,), pull)


def sum(x: Node) -> Node:  # noqa: A001 - mirrors the numpy naming
    def pull(g):
        return (np.full(x.value.shape, float(g)),)

    return x.tape._record(np.asarray(x.value.sum()), (x,), pull)


def abs_sum(x: Node) -> Node:
    sign = np.sign(x.value)

    def pull(g):
        return (float(g) * sign,)

    return x.tape._record(np.asarray(np.abs(x.value).sum()), (x,), pull)


def square_sum(x: Node) -> Node:
    def pull(g):
        return (2.0 * float(g) * x.value,)

    return x.tape._record(np.asarray((x.value * x.value).sum()), (x,), pull)


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

def gradient_check(f, point, step: float = 1e-5, coords=None) -> float:
    """Max relative error between the taped gradient of ``f`` and central
    differences at ``point``.

    ``f`` maps a leaf Node to a scalar Node. The error at coordinate i is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|); ``coords``
    restricts the sweep to a subset of flat indices (all by default).
    """
    point = np.array(point, dtype=np.float64)
    tape = Tape()
    x = tape.leaf(point.copy())
    out = f(x)
    if out.value.shape != ():
        raise ShapeError(f"gradient_check: f must return a scalar, got {out.value.shape}")
    if not np.isfinite(out.value):
        raise FloatingPointError("gradient_check: non-finite value at base point")
    tape.backward(out)
    analytic = grad(x)
    if not np.isfinite(analytic).all():
        raise FloatingPointError("gradient_check: non-finite analytic gradient")
    indices = range(point.size) if coords is None else coords
    worst = 0.0
    for i in indices:
        saved = point.flat[i]
        point.flat[i] = saved + step
        fp = _eval_scalar(f, point)
        point.flat[i] = saved - step
        fm = _eval_scalar(f, point)
        point.flat[i] = saved
        numeric = (fp - fm) / (2.0 * step)
        a = float(analytic.flat[i])
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        if err > worst:
            worst = err
    return worst


def _eval_scalar(f, point: np.ndarray) -> float:
    value = float(f(Tape().leaf(point.copy())).value)
    if not math.isfinite(value):
        raise FloatingPointError("gradient_check: non-finite value during sweep")
    return value
