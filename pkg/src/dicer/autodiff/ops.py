"""Differentiable primitives.

Each primitive is a :class:`Function` subclass with a static ``forward`` on
raw arrays and a static ``backward`` mapping the upstream gradient to one
gradient per tensor input (``None`` for inputs that need none). Integer
arguments such as row indices and segment ids are passed as keywords and are
never differentiated.

Segment ops group the rows of a 2-D input by a non-decreasing vector of
segment ids in ``[0, num_segments)``; empty segments produce zero rows.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..exceptions import NumericalError, ShapeError
from . import kernels
from .tensor import Tensor, active_tape, as_tensor

PRED_CLAMP = 1e-7


class Function:
    name = "function"

    @staticmethod
    def forward(ctx, *arrays, **kwargs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        inputs = tuple(as_tensor(t) for t in inputs)
        ctx = {}
        out = cls.forward(ctx, *(t.data for t in inputs), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"{cls.name}: non-finite value in forward output")
        result = Tensor(out)
        result.is_leaf = False
        if any(t.requires_grad for t in inputs):
            tape = active_tape()
            if tape is not None:
                result.requires_grad = True
                tape.record(cls, inputs, result, ctx)
        return result


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(name, a, b):
    # Only same-shape, row-vector (1, d) and column-vector (n, 1) operands.
    if a.shape == b.shape:
        return
    if a.ndim == b.ndim == 2:
        rows_ok = a.shape[0] == b.shape[0] or 1 in (a.shape[0], b.shape[0])
        cols_ok = a.shape[1] == b.shape[1] or 1 in (a.shape[1], b.shape[1])
        if rows_ok and cols_ok:
            return
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _segment_matrix(segment_ids, num_segments, weights=None):
    n = len(segment_ids)
    vals = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    return sp.csr_matrix((vals, (segment_ids, np.arange(n))), shape=(num_segments, n))


def _check_segments(name, rows, segment_ids, num_segments):
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.ndim != 1 or len(segment_ids) != rows:
        raise ShapeError(f"{name}: {len(segment_ids)} segment ids for {rows} rows")
    if rows and (segment_ids[0] < 0 or segment_ids[-1] >= num_segments):
        raise ShapeError(f"{name}: segment id out of range [0, {num_segments})")
    if rows > 1 and np.any(np.diff(segment_ids) < 0):
        raise ShapeError(f"{name}: segment ids must be non-decreasing")
    return segment_ids


class MatMul(Function):
    name = "matmul"

    @staticmethod
    def forward(ctx, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        ctx["a"], ctx["b"] = a, b
        return a @ b

    @staticmethod
    def backward(ctx, grad):
        return grad @ ctx["b"].T, ctx["a"].T @ grad


class Add(Function):
    name = "add"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast("add", a, b)
        ctx["shapes"] = (a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, grad):
        sa, sb = ctx["shapes"]
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)


class Mul(Function):
    name = "elementwise_mul"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast("elementwise_mul", a, b)
        ctx["a"], ctx["b"] = a, b
        return a * b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx["a"], ctx["b"]
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Scale(Function):
    name = "scale"

    @staticmethod
    def forward(ctx, a, factor=1.0):
        ctx["factor"] = factor
        return a * factor

    @staticmethod
    def backward(ctx, grad):
        return (grad * ctx["factor"],)


class SumLastDim(Function):
    name = "sum_last_dim"

    @staticmethod
    def forward(ctx, a):
        ctx["shape"] = a.shape
        return a.sum(axis=-1, keepdims=True)

    @staticmethod
    def backward(ctx, grad):
        return (np.broadcast_to(grad, ctx["shape"]).copy(),)


class Sum(Function):
    name = "sum"

    @staticmethod
    def forward(ctx, a):
        ctx["shape"] = a.shape
        return np.asarray(a.sum())

    @staticmethod
    def backward(ctx, grad):
        return (np.full(ctx["shape"], float(grad)),)


class ConcatLastDim(Function):
    name = "concat_last_dim"

    @staticmethod
    def forward(ctx, *arrays):
        rows = {a.shape[:-1] for a in arrays}
        if len(rows) != 1:
            raise ShapeError(f"concat_last_dim: mismatched leading shapes {[a.shape for a in arrays]}")
        ctx["splits"] = np.cumsum([a.shape[-1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=-1)

    @staticmethod
    def backward(ctx, grad):
        return tuple(np.split(grad, ctx["splits"], axis=-1))


class GatherRows(Function):
    name = "gather_rows"

    @staticmethod
    def forward(ctx, a, index=None):
        index = np.asarray(index, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
            raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
        ctx["index"], ctx["rows"] = index, a.shape[0]
        return a[index]

    @staticmethod
    def backward(ctx, grad):
        index = ctx["index"]
        m = sp.csr_matrix(
            (np.ones(len(index)), (index, np.arange(len(index)))),
            shape=(ctx["rows"], len(index)),
        )
        return (np.asarray(m @ grad),)


class SegmentSum(Function):
    name = "segment_sum"

    @staticmethod
    def forward(ctx, a, segment_ids=None, num_segments=0, weights=None):
        segment_ids = _check_segments("segment_sum", a.shape[0], segment_ids, num_segments)
        m = _segment_matrix(segment_ids, num_segments, weights)
        ctx["m"] = m
        return np.asarray(m @ a).reshape(num_segments, *a.shape[1:])

    @staticmethod
    def backward(ctx, grad):
        return (np.asarray(ctx["m"].T @ grad),)


def _numpy_segment_max(a, segment_ids, num_segments):
    out = np.zeros((num_segments, a.shape[1]))
    arg = np.full((num_segments, a.shape[1]), -1, dtype=np.int64)
    starts, _, present = kernels.segment_bounds(segment_ids)
    if len(starts) == 0:
        return out, arg
    seg_max = np.maximum.reduceat(a, starts, axis=0)
    out[present] = seg_max
    # First row attaining the max, per (segment, column).
    hit = a == seg_max[np.searchsorted(present, segment_ids)]
    row_idx = np.where(hit, np.arange(a.shape[0])[:, None], a.shape[0])
    arg[present] = np.minimum.reduceat(row_idx, starts, axis=0)
    return out, arg


def _segment_max(a, segment_ids, num_segments):
    if kernels.HAVE_NUMBA:
        starts, ends, present = kernels.segment_bounds(segment_ids)
        return kernels.segment_max_rows(np.ascontiguousarray(a), starts, ends, num_segments, present)
    return _numpy_segment_max(a, segment_ids, num_segments)


class SegmentMax(Function):
    name = "segment_max"

    @staticmethod
    def forward(ctx, a, segment_ids=None, num_segments=0):
        if a.ndim != 2:
            raise ShapeError(f"segment_max: expects a 2-D input, got {a.shape}")
        segment_ids = _check_segments("segment_max", a.shape[0], segment_ids, num_segments)
        out, arg = _segment_max(a, segment_ids, num_segments)
        ctx["rows"], ctx["arg"] = a.shape[0], arg
        return out

    @staticmethod
    def backward(ctx, grad):
        g = np.zeros((ctx["rows"], grad.shape[1]))
        arg = ctx["arg"]
        hit = arg >= 0
        cols = np.broadcast_to(np.arange(grad.shape[1]), arg.shape)
        g[arg[hit], cols[hit]] = grad[hit]
        return (g,)


class GatherMulSegmentMax(Function):
    """``segment_max(gather_rows(table, members) * gather_rows(context, ctx_index))``

    in one pass, without materializing the gathered rows.
    """

    name = "gather_mul_segment_max"

    @staticmethod
    def forward(ctx, table, context, members=None, ctx_index=None, segment_ids=None, num_segments=0):
        if table.ndim != 2 or context.ndim != 2 or table.shape[1] != context.shape[1]:
            raise ShapeError(f"gather_mul_segment_max: incompatible shapes {table.shape} and {context.shape}")
        members = np.asarray(members, dtype=np.int64)
        ctx_index = np.asarray(ctx_index, dtype=np.int64)
        segment_ids = _check_segments("gather_mul_segment_max", len(members), segment_ids, num_segments)
        if len(ctx_index) != len(members):
            raise ShapeError("gather_mul_segment_max: members and ctx_index lengths differ")
        if kernels.HAVE_NUMBA:
            starts, ends, present = kernels.segment_bounds(segment_ids)
            out, arg = kernels.gather_mul_segment_max(
                np.ascontiguousarray(table), members, np.ascontiguousarray(context), ctx_index,
                starts, ends, num_segments, present)
        else:
            out, arg = _numpy_segment_max(table[members] * context[ctx_index], segment_ids, num_segments)
        ctx.update(table=table, context=context, members=members, ctx_index=ctx_index, arg=arg)
        return out

    @staticmethod
    def backward(ctx, grad):
        table, context = ctx["table"], ctx["context"]
        members, ctx_index, arg = ctx["members"], ctx["ctx_index"], ctx["arg"]
        if kernels.HAVE_NUMBA:
            return kernels.gather_mul_segment_max_backward(
                np.ascontiguousarray(grad), arg, table, members, context, ctx_index)
        g_table = np.zeros_like(table)
        g_ctx = np.zeros_like(context)
        hit = arg >= 0
        rows = arg[hit]
        cols = np.broadcast_to(np.arange(grad.shape[1]), arg.shape)[hit]
        g = grad[hit]
        np.add.at(g_table, (members[rows], cols), g * context[ctx_index[rows], cols])
        np.add.at(g_ctx, (ctx_index[rows], cols), g * table[members[rows], cols])
        return g_table, g_ctx


class SegmentSoftmax(Function):
    name = "segment_softmax"

    @staticmethod
    def forward(ctx, scores, segment_ids=None, num_segments=0):
        if scores.ndim != 2 or scores.shape[1] != 1:
            raise ShapeError(f"segment_softmax: expects an (n, 1) column, got {scores.shape}")
        segment_ids = _check_segments("segment_softmax", scores.shape[0], segment_ids, num_segments)
        s = scores[:, 0]
        seg_max = np.full(num_segments, -np.inf)
        np.maximum.at(seg_max, segment_ids, s)
        e = np.exp(s - seg_max[segment_ids])
        denom = np.bincount(segment_ids, weights=e, minlength=num_segments)
        out = (e / denom[segment_ids])[:, None]
        ctx["out"], ctx["seg"], ctx["n"] = out, segment_ids, num_segments
        return out

    @staticmethod
    def backward(ctx, grad):
        out, seg = ctx["out"], ctx["seg"]
        dot = np.bincount(seg, weights=(out * grad)[:, 0], minlength=ctx["n"])
        return (out * (grad - dot[seg][:, None]),)


class LeakyReLU(Function):
    name = "leaky_relu"

    @staticmethod
    def forward(ctx, a, slope=0.2):
        ctx["mask"] = a > 0
        ctx["slope"] = slope
        return np.where(a > 0, a, slope * a)

    @staticmethod
    def backward(ctx, grad):
        return (np.where(ctx["mask"], grad, ctx["slope"] * grad),)


class Sigmoid(Function):
    name = "sigmoid"

    @staticmethod
    def forward(ctx, a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        ctx["out"] = out
        return out

    @staticmethod
    def backward(ctx, grad):
        s = ctx["out"]
        return (grad * s * (1.0 - s),)


class Dropout(Function):
    name = "dropout"

    @staticmethod
    def forward(ctx, a, rate=0.0, rng=None):
        keep = 1.0 - rate
        mask = (rng.random(a.shape) < keep) / keep
        ctx["mask"] = mask
        return a * mask

    @staticmethod
    def backward(ctx, grad):
        return (grad * ctx["mask"],)


class BinaryCrossEntropy(Function):
    name = "binary_cross_entropy"

    @staticmethod
    def forward(ctx, preds, labels=None):
        labels = np.asarray(labels, dtype=np.float64).reshape(preds.shape)
        p = np.clip(preds, PRED_CLAMP, 1.0 - PRED_CLAMP)
        ctx["p"], ctx["labels"] = p, labels
        ctx["inside"] = (preds > PRED_CLAMP) & (preds < 1.0 - PRED_CLAMP)
        return np.asarray(-np.sum(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))

    @staticmethod
    def backward(ctx, grad):
        p, y = ctx["p"], ctx["labels"]
        g = (p - y) / (p * (1.0 - p))
        return (float(grad) * g * ctx["inside"],)


def matmul(a, b):
    return MatMul.apply(a, b)


def add(a, b):
    return Add.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def scale(a, factor):
    return Scale.apply(a, factor=float(factor))


def sum_last_dim(a):
    return SumLastDim.apply(a)


def total(a):
    return Sum.apply(a)


def concat_last_dim(tensors):
    return ConcatLastDim.apply(*tensors)


def gather_rows(a, index):
    return GatherRows.apply(a, index=index)


def segment_sum(a, segment_ids, num_segments, weights=None):
    return SegmentSum.apply(a, segment_ids=segment_ids, num_segments=num_segments, weights=weights)


def segment_max(a, segment_ids, num_segments):
    return SegmentMax.apply(a, segment_ids=segment_ids, num_segments=num_segments)


def gather_mul_segment_max(table, members, context, ctx_index, segment_ids, num_segments):
    return GatherMulSegmentMax.apply(table, context, members=members, ctx_index=ctx_index,
                                     segment_ids=segment_ids, num_segments=num_segments)


def segment_softmax(scores, segment_ids, num_segments):
    return SegmentSoftmax.apply(scores, segment_ids=segment_ids, num_segments=num_segments)


def leaky_relu(a, slope=0.2):
    return LeakyReLU.apply(a, slope=slope)


def sigmoid(a):
    return Sigmoid.apply(a)


def dropout(a, rate, train, rng=None):
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return as_tensor(a)
    if rng is None:
        raise ValueError("dropout: an explicit rng is required in training mode")
    return Dropout.apply(a, rate=rate, rng=rng)


def binary_cross_entropy(preds, labels):
    """Summed cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    return BinaryCrossEntropy.apply(preds, labels=labels)
