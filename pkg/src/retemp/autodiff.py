"""Dense reverse-mode automatic differentiation on top of numpy.

A :class:`Tensor` wraps an ``np.ndarray``. Every operation that touches a tensor
requiring gradients records a node (inputs plus a local backward rule); the
nodes reachable from a scalar loss form the computation record that
:func:`backward` walks in reverse topological order.

Only the operations the model needs are provided. Broadcasting is supported for
``add`` and ``mul``; everything else is strict about shapes.
"""

from __future__ import annotations

import contextlib
import itertools
from collections.abc import Callable, Mapping, Sequence
from typing import Any

import numpy as np

from retemp.errors import GradientError, NonFiniteError, ShapeError

_ids = itertools.count()
_recording = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording nodes (evaluation and finite differences)."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.node_id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: scale(self, -1.0)  # noqa: E731
    __sub__ = lambda self, other: add(self, scale(as_tensor(other), -1.0))  # noqa: E731


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    out.node_id = next(_ids)
    track = _recording and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out.grad = None
    out.parents = tuple(parents) if track else ()
    out.backward_fn = backward_fn if track else None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accumulate(a, g * c)

    return _node(a.data * c, (a,), bw, "scale")


def sine(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, g * np.cos(a.data))

    return _node(np.sin(a.data), (a,), bw, "sine")


def rrelu(a: Tensor, lower: float = 1 / 8, upper: float = 1 / 3, training: bool = False,
          rng: np.random.Generator | None = None) -> Tensor:
    """Randomized leaky ReLU.

    In training mode every negative element gets its own slope drawn uniformly
    from ``[lower, upper]``; otherwise the slope is fixed at ``(lower+upper)/2``.
    """
    if not 0 < lower <= upper < 1:
        raise ValueError(f"rrelu bounds must satisfy 0 < lower <= upper < 1, got {lower}, {upper}")
    if training:
        if rng is None:
            raise ValueError("rrelu in training mode needs an rng")
        slope = rng.uniform(lower, upper, size=a.shape).astype(a.dtype)
    else:
        slope = np.asarray((lower + upper) / 2, dtype=a.dtype)
    factor = np.where(a.data >= 0, np.ones((), dtype=a.dtype), slope)

    def bw(g):
        _accumulate(a, g * factor)

    return _node(a.data * factor, (a,), bw, "rrelu")


def dropout(a: Tensor, rate: float, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-rate); identity in eval mode."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(a.shape) >= rate).astype(a.dtype) / a.dtype.type(1 - rate)

    def bw(g):
        _accumulate(a, g * mask)

    return _node(a.data * mask, (a,), bw, "dropout")


# ---------------------------------------------------------------- shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expects a matrix")

    def bw(g):
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), bw, "transpose")


def concat_last_axis(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError("concat_last_axis", a.shape, b.shape)
    n = a.shape[-1]

    def bw(g):
        _accumulate(a, g[..., :n])
        _accumulate(b, g[..., n:])

    return _node(np.concatenate([a.data, b.data], axis=-1), (a, b), bw, "concat_last_axis")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack of zero tensors")
    if any(t.shape != tensors[0].shape for t in tensors):
        raise ShapeError("stack", *(t.shape for t in tensors))

    def bw(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(out, (a,), bw, "reshape")


def flatten(a: Tensor, start_axis: int = 0) -> Tensor:
    """Merge all axes from ``start_axis`` on into one."""
    return reshape(a, a.shape[:start_axis] + (-1,))


def gather_rows(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for table with {n} rows")

    def bw(g):
        if table.requires_grad:
            np.add.at(table.grad, idx, g)

    return _node(table.data[idx], (table,), bw, "gather_rows")


def segment_mean(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Mean of the rows of ``values`` grouped by ``segment_ids``.

    Segments with no rows produce a zero row. Summation follows the given row
    order, so callers wanting order invariance pass rows in a canonical order.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != values.shape[:1]:
        raise ShapeError("segment_mean", values.shape, seg.shape)
    counts = np.bincount(seg, minlength=num_segments).astype(values.dtype)
    inv = np.zeros_like(counts)
    np.divide(1, counts, out=inv, where=counts > 0)
    out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, seg, values.data)
    out *= inv.reshape((-1,) + (1,) * (values.data.ndim - 1))

    def bw(g):
        _accumulate(values, g[seg] * inv[seg].reshape((-1,) + (1,) * (g.ndim - 1)))

    return _node(out, (values,), bw, "segment_mean")


# ---------------------------------------------------------------- reductions


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _node(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean_rows(a: Tensor) -> Tensor:
    n = a.shape[0]

    def bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _node(a.data.mean(axis=0), (a,), bw, "mean_rows")


def softmax_over_positions(scores: Tensor) -> Tensor:
    """Softmax along axis 0, independently for every trailing coordinate.

    ``scores`` is a stack of P same-shape score arrays; the result stacks the P
    weight arrays, which are nonnegative and sum to one over axis 0.
    """
    z = scores.data - scores.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)

    def bw(g):
        _accumulate(scores, y * (g - (g * y).sum(axis=0, keepdims=True)))

    return _node(y, (scores,), bw, "softmax_over_positions")


def log_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(scores: Tensor, gold) -> Tensor:
    """Softmax cross-entropy; for a batch of score rows the mean over rows."""
    gold_arr = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    s = scores.data if scores.data.ndim == 2 else scores.data[None, :]
    if s.ndim != 2 or gold_arr.shape != (s.shape[0],):
        raise ShapeError("cross_entropy", scores.shape, gold_arr.shape)
    if gold_arr.min() < 0 or gold_arr.max() >= s.shape[1]:
        raise IndexError(f"cross_entropy: gold index out of range for {s.shape[1]} classes")
    rows = np.arange(s.shape[0])
    logp = log_softmax(s)
    loss = -logp[rows, gold_arr].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, gold_arr] -= 1
        _accumulate(scores, (g * p / s.shape[0]).reshape(scores.shape))

    return _node(np.asarray(loss, dtype=s.dtype), (scores,), bw, "cross_entropy")


# ---------------------------------------------------------------- convolution


def conv1d(x: Tensor, kernels: Tensor, padding: int = 0) -> Tensor:
    """1-D cross-correlation.

    x: (C_in, L) or (N, C_in, L); kernels: (C_out, C_in, K). Output length is
    L + 2*padding - K + 1, so ``padding=(K-1)//2`` keeps L for odd K.
    """
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or kernels.data.ndim != 3 or kernels.shape[1] != xd.shape[1]:
        raise ShapeError("conv1d", x.shape, kernels.shape)
    k = kernels.shape[2]
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    length = xp.shape[2] - k + 1
    if length < 1:
        raise ShapeError("conv1d", x.shape, kernels.shape, detail="kernel longer than padded signal")
    w = kernels.data
    out = np.zeros((xd.shape[0], w.shape[0], length), dtype=np.result_type(xd, w))
    for j in range(k):
        out += np.einsum("ncl,oc->nol", xp[:, :, j:j + length], w[:, :, j])

    def bw(g):
        g3 = g if batched else g[None]
        if kernels.requires_grad:
            gk = np.empty_like(w)
            for j in range(k):
                gk[:, :, j] = np.einsum("nol,ncl->oc", g3, xp[:, :, j:j + length])
            kernels.grad += gk
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j:j + length] += np.einsum("nol,oc->ncl", g3, w[:, :, j])
            gx = gxp[:, :, padding:padding + xd.shape[2]]
            x.grad += gx if batched else gx[0]

    return _node(out if batched else out[0], (x, kernels), bw, "conv1d")


# ---------------------------------------------------------------- backward


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require gradients, inputs before outputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen or not node.requires_grad:
            continue
        seen.add(node.node_id)
        stack_.append((node, True))
        for p in node.parents:
            if p.node_id not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Fill ``.grad`` of every node of the record with d(loss)/d(node).

    Gradients of all recorded nodes (leaves included) are reset first, so
    running backward twice on the same record gives identical results. Leaves
    outside the record keep whatever gradient they held (zero after
    ``zero_grad``).
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is not None:
            node.backward_fn(node.grad)


# ---------------------------------------------------------------- gradient check


def _structure(point) -> tuple[list[np.ndarray], Callable[[list[Tensor]], Any]]:
    if isinstance(point, np.ndarray) or np.isscalar(point):
        return [np.array(point, dtype=np.float64)], lambda ts: ts[0]
    if isinstance(point, Mapping):
        keys = list(point)
        return ([np.array(point[k], dtype=np.float64) for k in keys],
                lambda ts: dict(zip(keys, ts)))
    arrays = [np.array(p, dtype=np.float64) for p in point]
    return arrays, lambda ts: list(ts)


def grad_check(fn: Callable, point, h: float = 1e-5, tolerance: float | None = None,
               samples: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare reverse-mode gradients with central finite differences.

    ``point`` is an array, a sequence of arrays or a mapping of arrays; ``fn``
    receives leaf tensors in the same structure and returns a scalar tensor.
    Returns the max over checked coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``. With
    ``samples`` only that many randomly chosen coordinates are checked. If
    ``tolerance`` is given and exceeded, raises GradientError.
    """
    arrays, wrap = _structure(point)
    leaves = [Tensor(a, requires_grad=True) for a in arrays]

    def evaluate() -> float:
        with no_grad():
            out = fn(wrap([Tensor(l.data) for l in leaves]))
        return float(np.asarray(out.data).reshape(-1)[0])

    base = evaluate()
    if evaluate() != base:
        raise GradientError("grad_check: fn is not deterministic; evaluate it in deterministic "
                            "mode (training=False: fixed rrelu slope, dropout off)")
    loss = fn(wrap(leaves))
    if loss.data.size != 1:
        raise GradientError(f"grad_check: fn must be scalar-valued, got shape {loss.shape}")
    backward(loss)
    if float(loss.data.reshape(-1)[0]) != base:
        raise GradientError("grad_check: recorded and unrecorded evaluations disagree; "
                            "use deterministic mode")

    coords = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
    if samples is not None and samples < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[p] for p in sorted(pick)]

    worst = 0.0
    for i, j in coords:
        flat = leaves[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = evaluate()
        flat[j] = orig - h
        fm = evaluate()
        flat[j] = orig
        numeric = (fp - fm) / (2 * h)
        analytic = float(leaves[i].grad.reshape(-1)[j])
        err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    if tolerance is not None and worst > tolerance:
        raise GradientError(f"grad_check: max relative error {worst:.3g} exceeds {tolerance:g}")
    return worst
