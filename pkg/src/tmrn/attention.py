"""Single-head scaled dot-product attention and attention pooling.

All functions take either one sequence (T, d) or a padded batch (B, T, d).
Masks are boolean with True marking valid time steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor


@dataclass
class AttentionParams:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor


def _check_mask(mask, T: int) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-1] != T:
        raise DimensionError(f"mask length {mask.shape[-1]} != sequence length {T}")
    if not np.all(mask.any(axis=-1)):
        raise ValueError("attention over a fully masked sequence")
    return mask


def attend(q_in: Tensor, k_in: Tensor, v_in: Tensor, p: AttentionParams, kv_mask=None) -> Tensor:
    """softmax((q_in W_Q)(k_in W_K)^T / sqrt(d)) (v_in W_V)."""
    d = q_in.shape[-1]
    if k_in.shape[-1] != d or v_in.shape[-1] != d:
        raise DimensionError(f"attention widths differ: {q_in.shape}, {k_in.shape}, {v_in.shape}")
    if q_in.data.ndim != k_in.data.ndim:
        raise DimensionError("query and key/value must both be batched or both unbatched")
    mask = _check_mask(kv_mask, k_in.shape[-2])
    Q = ad.matmul(q_in, p.W_Q)
    K = ad.matmul(k_in, p.W_K)
    V = ad.matmul(v_in, p.W_V)
    scores = ad.scale(ad.matmul(Q, ad.transpose(K)), 1.0 / np.sqrt(d))
    weights = ad.softmax_rows(scores, None if mask is None else mask[..., None, :])
    return ad.matmul(weights, V)


def cross_attention(query_seq: Tensor, kv_seq: Tensor, p: AttentionParams, kv_mask=None) -> Tensor:
    """Queries from ``query_seq``; keys and values from ``kv_seq``. Output keeps the query length."""
    return attend(query_seq, kv_seq, kv_seq, p, kv_mask)


def self_attention(x: Tensor, p: AttentionParams, mask=None) -> Tensor:
    return cross_attention(x, x, p, mask)


def attention_pool(F: Tensor, w: Tensor, mask=None) -> Tensor:
    """Collapse (…, T, d) to (…, d) with weights softmax(F w / sqrt(d)) over valid steps."""
    d = F.shape[-1]
    if w.shape != (d,):
        raise DimensionError(f"pooling vector shape {w.shape} != ({d},)")
    mask = _check_mask(mask, F.shape[-2])
    scores = ad.scale(ad.transpose(ad.matmul(F, ad.reshape(w, (d, 1)))), 1.0 / np.sqrt(d))
    a = ad.softmax_rows(scores, None if mask is None else mask[..., None, :])
    pooled = ad.matmul(a, F)
    return ad.reshape(pooled, pooled.shape[:-2] + (d,))


def masked_mean(F: Tensor, mask=None) -> Tensor:
    """Mean over valid time steps, kept as a single row: (…, 1, d)."""
    T = F.shape[-2]
    mask = np.ones(F.shape[:-1], dtype=bool) if mask is None else _check_mask(mask, T)
    weights = mask / mask.sum(axis=-1, keepdims=True)
    return ad.matmul(Tensor(weights[..., None, :]), F)
