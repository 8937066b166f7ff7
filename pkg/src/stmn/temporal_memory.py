"""Key-value memory that maps a sequence's temporal context to frame attention.

An LSTM summarizes the spatially pooled temporal-query maps; the final
hidden state addresses the memory, the read is an L-vector of attention
logits, and its softmax weights the pooled refined frame features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    LSTMParams,
    Tensor,
    global_average_pool,
    l2_normalize,
    lift,
    lstm_cell,
    matmul,
    relu,
    softmax,
    stack,
)
from .module import Module
from .spatial_memory import random_unit_columns


class TemporalMemoryBank(Module):
    """``keys`` are ``(D, N)`` pattern prototypes, ``values`` ``(L, N)`` stored attentions."""

    def __init__(self, D: int, N: int, L: int, rng: np.random.Generator, dtype=np.float32):
        if N < 1:
            raise ValueError("temporal memory needs at least one item")
        self.keys = Tensor(random_unit_columns(rng, D, N, dtype), requires_grad=True)
        self.values = Tensor(np.zeros((L, N), dtype=dtype), requires_grad=True)
        self.lstm = LSTMParams.uniform(D, D, rng, dtype)

    @property
    def D(self) -> int:
        return self.keys.shape[0]

    @property
    def N(self) -> int:
        return self.keys.shape[1]

    @property
    def L(self) -> int:
        return self.values.shape[0]


@dataclass
class AttentionVector:
    logits: Tensor
    normalized: Tensor | None = None

    def __post_init__(self):
        if self.normalized is None:
            self.normalized = softmax(self.logits, axis=-1)


def run_lstm(steps: Tensor, lstm: LSTMParams) -> Tensor:
    """Final hidden state of the LSTM over ``(L, D)`` or ``(B, L, D)`` inputs, zero start."""
    batched = steps.ndim == 3
    if not batched:
        steps = steps.reshape(1, *steps.shape)
    b, L, _ = steps.shape
    h = Tensor(np.zeros((b, lstm.hidden_size), dtype=steps.dtype))
    c = h
    for t in range(L):
        h, c = lstm_cell(steps[:, t, :], h, c, lstm)
    return h if batched else h.reshape(-1)


def encode_context(q_maps, bank: TemporalMemoryBank) -> Tensor:
    """Temporal context from L query maps.

    Accepts a list of L ``(D, H, W)`` maps or a ``(B, L, D, H, W)`` tensor;
    returns ``(D,)`` or ``(B, D)``.
    """
    if isinstance(q_maps, Tensor) and q_maps.ndim == 5:
        pooled = global_average_pool(q_maps)
    else:
        if len(q_maps) != bank.L:
            raise ValueError(f"expected {bank.L} query maps, got {len(q_maps)}")
        pooled = stack([global_average_pool(lift(m)) for m in q_maps])
    if pooled.shape[-2] != bank.L:
        raise ValueError(f"expected {bank.L} frames, got {pooled.shape[-2]}")
    return run_lstm(pooled, bank.lstm)


def address_temporal(ctx, bank: TemporalMemoryBank) -> Tensor:
    ctx = lift(ctx)
    if ctx.shape[-1] != bank.D:
        raise ValueError(f"context extent {ctx.shape[-1]} != memory D {bank.D}")
    return softmax(matmul(l2_normalize(ctx, axis=-1), l2_normalize(bank.keys, axis=0)), axis=-1)


def synthesize_attention(probs, bank: TemporalMemoryBank) -> AttentionVector:
    probs = lift(probs)
    if probs.shape[-1] != bank.N:
        raise ValueError(f"probability length {probs.shape[-1]} != memory N {bank.N}")
    return AttentionVector(matmul(probs, bank.values.T))


def aggregate_pooled(attn: AttentionVector, pooled: Tensor) -> Tensor:
    """Weighted sum of ``(..., L, D)`` pooled frame features by the normalized attention."""
    weights = attn.normalized
    if weights.shape[-1] != pooled.shape[-2]:
        raise ValueError(f"attention length {weights.shape[-1]} != frame count {pooled.shape[-2]}")
    if pooled.ndim == 2:
        return matmul(weights, pooled)
    return matmul(weights.reshape(weights.shape[0], 1, -1), pooled).reshape(pooled.shape[0], -1)


def aggregate(attn: AttentionVector, refined) -> Tensor:
    """Sequence representation from L refined maps (list of ``(D, H, W)`` or ``(B, L, D, H, W)``)."""
    if isinstance(refined, Tensor) and refined.ndim == 5:
        pooled = global_average_pool(refined)
    else:
        pooled = stack([global_average_pool(lift(m)) for m in refined])
    return aggregate_pooled(attn, pooled)


class MLPAttention(Module):
    """Two-layer perceptron regressing attention logits from the context (ablation only).

    Sized ``D x N`` and ``N x L`` so its weight count equals the memory's
    keys plus values.
    """

    def __init__(self, D: int, N: int, L: int, rng: np.random.Generator, dtype=np.float32):
        self.w1 = Tensor((rng.standard_normal((D, N)) * np.sqrt(2.0 / D)).astype(dtype),
                         requires_grad=True)
        self.b1 = Tensor(np.zeros(N, dtype=dtype), requires_grad=True)
        self.w2 = Tensor(np.zeros((N, L), dtype=dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(L, dtype=dtype), requires_grad=True)

    def weight_count(self) -> int:
        return self.w1.size + self.w2.size


def mlp_attention_baseline(ctx, params: MLPAttention) -> AttentionVector:
    ctx = lift(ctx)
    if ctx.shape[-1] != params.w1.shape[0]:
        raise ValueError(f"context extent {ctx.shape[-1]} != MLP input {params.w1.shape[0]}")
    hidden = relu(matmul(ctx, params.w1) + params.b1)
    return AttentionVector(matmul(hidden, params.w2) + params.b2)
