"""Attention operators shared by the three forecaster architectures.

``scaled_dot_attention`` is the full quadratic form. ``prob_sparse_attention``
ranks queries by a max-minus-mean sparsity score estimated on a key subset
and gives full attention only to the top-ranked queries; the rest fall back
to the mean of the values. Both accept single matrices ``[L, d]`` or stacks
``[N, L, d]``.
"""

import math

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, matmul, softmax

__all__ = ["scaled_dot_attention", "prob_sparse_attention"]


def _transpose_last(t):
    if t.ndim == 2:
        return t.transpose((1, 0))
    return t.transpose((0, 2, 1))


def _check_qkv(q, k, v):
    if q.ndim != k.ndim or q.ndim != v.ndim or q.ndim not in (2, 3):
        raise DimensionError(
            f"attention expects matching 2-D or 3-D Q/K/V, got {q.shape}, {k.shape}, {v.shape}"
        )
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"Q and K key dimensions disagree: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"K and V sequence lengths disagree: {k.shape} vs {v.shape}")
    if q.ndim == 3 and not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise DimensionError(f"attention batch dimensions disagree: {q.shape}, {k.shape}, {v.shape}")


def scaled_dot_attention(q, k, v):
    """softmax(Q Kᵀ / sqrt(d_k)) V."""
    _check_qkv(q, k, v)
    d_k = q.shape[-1]
    scores = matmul(q, _transpose_last(k)) * (1.0 / math.sqrt(d_k))
    return matmul(softmax(scores, axis=-1), v)


def _spread_order(n):
    """Deterministic permutation of range(n) whose prefixes spread evenly.

    Bit-reversal ordering: prefixes are nested as the sample size grows,
    which keeps the sparsity-score estimate stable and the op a pure
    function of its inputs (no RNG consumed).
    """
    bits = max(1, (n - 1).bit_length())
    order = []
    for i in range(1 << bits):
        rev = int(format(i, f"0{bits}b")[::-1], 2)
        if rev < n:
            order.append(rev)
    return np.array(order, dtype=np.intp)


def _sample_count(length, c):
    # ceil(c * ln L), clamped to [1, L]; ln 1 = 0 would otherwise empty it
    return min(length, max(1, math.ceil(c * math.log(length)))) if length > 1 else 1


def prob_sparse_attention(q, k, v, c):
    """Sparse attention keyed on a max-minus-mean query score.

    For each query the score ``M = max_j(q·k_j/sqrt(d_k)) - mean_j(...)``
    is estimated over ``min(L_K, ceil(c ln L_K))`` sampled keys. The
    ``u = min(L_Q, ceil(c ln L_Q))`` highest-scoring queries receive full
    attention; every other output row is the mean of V. Large ``c``
    therefore recovers ``scaled_dot_attention`` exactly.
    """
    if c <= 0:
        raise ConfigError(f"probsparse factor must be positive, got {c}")
    _check_qkv(q, k, v)

    squeeze = q.ndim == 2
    q_arr = q.data[None] if squeeze else q.data
    k_arr = k.data[None] if squeeze else k.data
    v_arr = v.data[None] if squeeze else v.data

    batch, len_q, d_k = q_arr.shape
    len_k = k_arr.shape[1]
    d_v = v_arr.shape[2]
    scale = 1.0 / math.sqrt(d_k)

    n_sample = _sample_count(len_k, c)
    u = _sample_count(len_q, c)
    sample_idx = _spread_order(len_k)[:n_sample]

    out = np.empty((batch, len_q, d_v))
    caches = []
    for b in range(batch):
        qb, kb, vb = q_arr[b], k_arr[b], v_arr[b]
        scores_sample = (qb @ kb[sample_idx].T) * scale
        sparsity = scores_sample.max(axis=1) - scores_sample.mean(axis=1)
        ranked = np.argsort(-sparsity, kind="stable")
        selected = np.sort(ranked[:u])

        vmean = vb.mean(axis=0)
        out[b, :, :] = vmean
        scores_full = (qb[selected] @ kb.T) * scale
        shifted = scores_full - scores_full.max(axis=1, keepdims=True)
        attn = np.exp(shifted)
        attn /= attn.sum(axis=1, keepdims=True)
        out[b, selected, :] = attn @ vb
        caches.append((selected, attn))

    def backward(g):
        g_arr = g[None] if squeeze else g
        dq = np.zeros_like(q_arr)
        dk_ = np.zeros_like(k_arr)
        dv = np.zeros_like(v_arr)
        for b in range(batch):
            selected, attn = caches[b]
            gb = g_arr[b]
            not_selected = np.ones(len_q, dtype=bool)
            not_selected[selected] = False
            # mean(V) rows spread their gradient uniformly over the keys
            dv[b] += gb[not_selected].sum(axis=0)[None, :] / len_k
            g_sel = gb[selected]
            dv[b] += attn.T @ g_sel
            d_attn = g_sel @ v_arr[b].T
            d_scores = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
            dq[b][selected] = (d_scores @ k_arr[b]) * scale
            dk_[b] += (d_scores.T @ q_arr[b][selected]) * scale
        if squeeze:
            dq, dk_, dv = dq[0], dk_[0], dv[0]
        if q.requires_grad:
            q._accumulate(dq)
        if k.requires_grad:
            k._accumulate(dk_)
        if v.requires_grad:
            v._accumulate(dv)

    result = out[0] if squeeze else out
    return Tensor._result(result, (q, k, v), "prob_sparse_attention", backward)


def _selection_margin(q_arr, k_arr, c):
    """Smallest sparsity-score gap at the selection boundary (diagnostic).

    Used by gradient checks to confirm the discrete top-u choice cannot
    flip under finite-difference perturbations.
    """
    if q_arr.ndim == 2:
        q_arr = q_arr[None]
        k_arr = k_arr[None]
    len_q, d_k = q_arr.shape[1], q_arr.shape[2]
    len_k = k_arr.shape[1]
    u = _sample_count(len_q, c)
    if u >= len_q:
        return np.inf
    sample_idx = _spread_order(len_k)[: _sample_count(len_k, c)]
    margin = np.inf
    for b in range(q_arr.shape[0]):
        s = (q_arr[b] @ k_arr[b][sample_idx].T) / math.sqrt(d_k)
        m = s.max(axis=1) - s.mean(axis=1)
        ranked = np.sort(m)[::-1]
        margin = min(margin, ranked[u - 1] - ranked[u])
    return margin
