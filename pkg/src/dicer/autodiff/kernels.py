"""Compiled inner loops for the segment reductions.

numba is optional; without it the callers fall back to numpy compositions
with identical results.
"""
from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

HAVE_NUMBA = numba is not None


def _segment_max_rows(values, starts, ends, num_segments, present):
    # values: (n, w); segments [starts[k], ends[k]) map to output row present[k]
    w = values.shape[1]
    out = np.zeros((num_segments, w))
    arg = np.full((num_segments, w), -1, dtype=np.int64)
    for k in range(len(starts)):
        s = present[k]
        st = starts[k]
        en = ends[k]
        for d in range(w):
            best = values[st, d]
            bi = st
            for r in range(st + 1, en):
                v = values[r, d]
                if v > best:
                    best = v
                    bi = r
            out[s, d] = best
            arg[s, d] = bi
    return out, arg


def _gather_mul_segment_max(table, members, context, ctx_index, starts, ends, num_segments, present):
    # out[s, d] = max_r table[members[r], d] * context[ctx_index[r], d] over r in segment s
    w = table.shape[1]
    out = np.zeros((num_segments, w))
    arg = np.full((num_segments, w), -1, dtype=np.int64)
    for k in range(len(starts)):
        s = present[k]
        st = starts[k]
        en = ends[k]
        for d in range(w):
            best = table[members[st], d] * context[ctx_index[st], d]
            bi = st
            for r in range(st + 1, en):
                v = table[members[r], d] * context[ctx_index[r], d]
                if v > best:
                    best = v
                    bi = r
            out[s, d] = best
            arg[s, d] = bi
    return out, arg


def _gather_mul_segment_max_backward(grad, arg, table, members, context, ctx_index):
    g_table = np.zeros_like(table)
    g_ctx = np.zeros_like(context)
    S, w = grad.shape
    for s in range(S):
        for d in range(w):
            r = arg[s, d]
            if r < 0:
                continue
            g = grad[s, d]
            j = members[r]
            c = ctx_index[r]
            g_table[j, d] += g * context[c, d]
            g_ctx[c, d] += g * table[j, d]
    return g_table, g_ctx


if HAVE_NUMBA:
    segment_max_rows = numba.njit(cache=True, nogil=True)(_segment_max_rows)
    gather_mul_segment_max = numba.njit(cache=True, nogil=True)(_gather_mul_segment_max)
    gather_mul_segment_max_backward = numba.njit(cache=True, nogil=True)(_gather_mul_segment_max_backward)
else:  # pragma: no cover
    segment_max_rows = None
    gather_mul_segment_max = None
    gather_mul_segment_max_backward = None


def segment_bounds(segment_ids):
    """Start/end of every non-empty run of equal ids, and the id of each run."""
    n = len(segment_ids)
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    starts = np.flatnonzero(np.r_[True, segment_ids[1:] != segment_ids[:-1]])
    ends = np.r_[starts[1:], n]
    return starts.astype(np.int64), ends.astype(np.int64), segment_ids[starts].astype(np.int64)
