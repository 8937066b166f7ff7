"""Key-value memory holding recurring scene-detail features.

Each position of a frame's query map addresses the memory by cosine
similarity, reads a probability-weighted value, and the batch-normalized
read is subtracted from the person representation at that position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import BatchNormState, Tensor, batch_norm, l2_normalize, lift, matmul, softmax, stack
from .encoder import EncoderOutput
from .module import Module


def random_unit_columns(rng: np.random.Generator, d: int, m: int, dtype=np.float32) -> np.ndarray:
    keys = rng.standard_normal((d, m))
    return (keys / np.linalg.norm(keys, axis=0, keepdims=True)).astype(dtype)


class SpatialMemoryBank(Module):
    """``keys`` and ``values`` are ``(D, M)``; ``bn`` normalizes memory reads."""

    def __init__(self, D: int, M: int, rng: np.random.Generator, dtype=np.float32,
                 value_std: float = 0.01, bn_gamma: float = 0.0):
        if M < 1:
            raise ValueError("spatial memory needs at least one item")
        self.keys = Tensor(random_unit_columns(rng, D, M, dtype), requires_grad=True)
        self.values = Tensor((rng.standard_normal((D, M)) * value_std).astype(dtype),
                             requires_grad=True)
        self.bn = BatchNormState.create(D, dtype, gamma_init=bn_gamma)

    @property
    def D(self) -> int:
        return self.keys.shape[0]

    @property
    def M(self) -> int:
        return self.keys.shape[1]


@dataclass
class SpatialMatchMap:
    """Matching probabilities, one row per (sequence b, frame i, position k).

    Rows are ordered ``(b * L + i) * K + k``.
    """

    probs: Tensor
    L: int
    K: int

    def row_index(self, b: int, i: int, k: int) -> int:
        return (b * self.L + i) * self.K + k

    @property
    def B(self) -> int:
        return self.probs.shape[0] // (self.L * self.K)


def address_spatial(q, bank: SpatialMemoryBank) -> Tensor:
    """Softmax over cosine similarities of ``(..., D)`` queries against every key."""
    q = lift(q)
    if q.shape[-1] != bank.D:
        raise ValueError(f"query extent {q.shape[-1]} != memory D {bank.D}")
    return softmax(matmul(l2_normalize(q, axis=-1), l2_normalize(bank.keys, axis=0)), axis=-1)


def read_spatial(probs, bank: SpatialMemoryBank) -> Tensor:
    probs = lift(probs)
    if probs.shape[-1] != bank.M:
        raise ValueError(f"probability length {probs.shape[-1]} != memory M {bank.M}")
    return matmul(probs, bank.values.T)


def refine(f_o, o_s, bank: SpatialMemoryBank, training: bool) -> Tensor:
    """``f_o - BN(o_s)`` for ``(R, D)`` rows; BN statistics span all R rows."""
    f_o, o_s = lift(f_o), lift(o_s)
    if f_o.shape != o_s.shape:
        raise ValueError(f"refine shape mismatch: {f_o.shape} vs {o_s.shape}")
    squeeze = f_o.ndim == 1
    if squeeze:
        f_o, o_s = f_o.reshape(1, -1), o_s.reshape(1, -1)
    out = f_o - batch_norm(o_s, bank.bn, training)
    return out.reshape(-1) if squeeze else out


def maps_to_rows(maps: Tensor) -> Tensor:
    """``(n, D, H, W) -> (n * H * W, D)`` with row index ``frame * K + position``."""
    n, d, h, w = maps.shape
    return maps.transpose(0, 2, 3, 1).reshape(n * h * w, d)


def rows_to_maps(rows: Tensor, n: int, h: int, w: int) -> Tensor:
    return rows.reshape(n, h, w, rows.shape[-1]).transpose(0, 3, 1, 2)


def spatial_forward(outputs, bank: SpatialMemoryBank, training: bool,
                    frames_per_sequence: int | None = None) -> tuple[Tensor, SpatialMatchMap]:
    """Address, read and refine at every position of every frame.

    ``outputs`` is a batched ``EncoderOutput`` (maps ``(n, D, H, W)``) or a
    list of per-frame outputs. Returns refined maps shaped like ``f_o`` and
    the full matching map.
    """
    if isinstance(outputs, EncoderOutput):
        f_o, q_s = outputs.f_o, outputs.q_s
        single = f_o.ndim == 3
        if single:
            f_o, q_s = f_o.reshape(1, *f_o.shape), q_s.reshape(1, *q_s.shape)
    else:
        if not outputs:
            raise ValueError("spatial_forward needs at least one frame")
        f_o = stack([o.f_o for o in outputs])
        q_s = stack([o.q_s for o in outputs])
        single = False
    if q_s is None:
        raise ValueError("spatial_forward needs spatial query maps")
    if f_o.shape != q_s.shape:
        raise ValueError(f"f_o {f_o.shape} and q_s {q_s.shape} differ")
    n, _, h, w = f_o.shape
    probs = address_spatial(maps_to_rows(q_s), bank)
    o_s = read_spatial(probs, bank)
    refined = rows_to_maps(refine(maps_to_rows(f_o), o_s, bank, training), n, h, w)
    if single:
        refined = refined.reshape(*refined.shape[1:])
    L = frames_per_sequence or n
    return refined, SpatialMatchMap(probs, L=L, K=h * w)
