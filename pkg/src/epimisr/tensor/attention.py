"""Scaled dot-product multi-head attention.

Projections live in the caller (transformer layers); this op only splits
heads, applies masked softmax over keys and recombines. Leading batch
axes are carried through unchanged.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .core import Tensor, as_tensor, _check_dtypes, matmul, reshape, transpose
from .functional import softmax


def _swap_last(t: Tensor) -> Tensor:
    nd = t.ndim
    return transpose(t, tuple(range(nd - 2)) + (nd - 1, nd - 2))


def multi_head_attention(q, k, v, heads: int, mask: np.ndarray | None = None):
    """Attention over the last two axes; returns (output, attention weights).

    q: (..., Lq, D), k/v: (..., Lk, D). Scores are scaled by
    1/sqrt(D/heads); mask (True = attend) broadcasts to
    (..., heads, Lq, Lk). Attention weights come back as a plain array
    for inspection (the depth-map pathway); gradients flow through the
    internal graph node.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    _check_dtypes(q, k, v)
    d = q.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"feature width {d} not divisible by heads {heads}")
    if k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeError(f"q/k/v width mismatch: {q.shape}, {k.shape}, {v.shape}")
    if k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"k/v length mismatch: {k.shape} vs {v.shape}")
    dh = d // heads
    lead = q.shape[:-2]

    def split(t: Tensor) -> Tensor:
        b = t.ndim - 2
        t = reshape(t, t.shape[:-1] + (heads, dh))
        return transpose(t, tuple(range(b)) + (b + 1, b, b + 2))

    qh = split(q)  # (..., h, Lq, dh)
    kh = split(k)
    vh = split(v)
    scores = matmul(qh, _swap_last(kh))  # (..., h, Lq, Lk)
    scores = scores * float(1.0 / np.sqrt(dh))
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    attn = softmax(scores, axis=-1, mask=mask)
    out = matmul(attn, vh)  # (..., h, Lq, dh)
    b = out.ndim - 3
    out = transpose(out, tuple(range(b)) + (b + 1, b, b + 2))
    out = reshape(out, lead + (q.shape[-2], d))
    return out, attn.data
