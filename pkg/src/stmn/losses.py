"""Memory-spread regularizer and identification losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    lift,
    log_softmax,
    matmul,
    maximum,
    reduce_max,
    reduce_min,
    relu,
    sqrt,
)
from .module import Module


@dataclass
class BatchComposition:
    P: int = 8
    S: int = 4

    def __post_init__(self):
        if self.P < 2 or self.S < 2:
            raise ValueError("batch needs P >= 2 identities and S >= 2 sequences each")

    @property
    def B(self) -> int:
        return self.P * self.S


@dataclass
class LossBreakdown:
    total: Tensor
    l_s: Tensor
    ce_seq: Tensor
    triplet_seq: Tensor
    ce_frame: Tensor
    triplet_frame: Tensor

    FIELDS = ("total", "l_s", "ce_seq", "triplet_seq", "ce_frame", "triplet_frame")

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name).data) for name in self.FIELDS}


class Classifier(Module):
    """Linear map from D features to identity logits."""

    def __init__(self, D: int, n_classes: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / np.sqrt(D)
        self.weight = Tensor(rng.uniform(-bound, bound, (n_classes, D)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def __call__(self, features: Tensor) -> Tensor:
        return matmul(features, self.weight.T) + self.bias


def _spread_term(A: Tensor, alpha: float) -> Tensor:
    return relu(reduce_min(A, axis=0) - reduce_max(A, axis=0) + alpha).sum()


def memory_spread_loss(A_s, A_t, alpha: float = 0.3) -> Tensor:
    """Hinge on each memory column's min-to-max matching-probability spread.

    ``A_s`` is ``(L*K*B, M)``, ``A_t`` is ``(B, N)``; either may be None when
    that memory is disabled. The temporal term sums over its own N columns.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    terms = [_spread_term(lift(A), alpha) for A in (A_s, A_t) if A is not None]
    if not terms:
        return Tensor(np.zeros((), dtype=np.float32))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def cross_entropy_id(features, labels, classifier: Classifier) -> Tensor:
    features = lift(features)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= classifier.n_classes:
        raise ValueError(f"labels must lie in [0, {classifier.n_classes}), got {labels.min()}..{labels.max()}")
    logp = log_softmax(classifier(features), axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


def pairwise_distances(features: Tensor) -> Tensor:
    """Euclidean distance matrix; squared distances clamp at 1e-12 before the root."""
    sq = (features * features).sum(axis=1, keepdims=True)
    d2 = sq + sq.T - 2.0 * matmul(features, features.T)
    return sqrt(maximum(d2, 1e-12))


def batch_hard_triplet(features, labels, margin: float = 0.3) -> Tensor:
    """Mean over anchors of ``[hardest positive - hardest negative + margin]_+``."""
    features = lift(features)
    labels = np.asarray(labels)
    _, counts = np.unique(labels, return_counts=True)
    if (counts < 2).any():
        raise ValueError("every label needs at least two samples in the batch")
    if len(counts) < 2:
        raise ValueError("batch-hard triplet needs at least two identities")
    same = labels[:, None] == labels[None, :]
    pos = (same & ~np.eye(len(labels), dtype=bool)).astype(features.dtype)
    neg = (~same).astype(features.dtype)
    dist = pairwise_distances(features)
    big = float(dist.data.max()) + 1.0
    hardest_pos = reduce_max(dist * pos + (pos - 1.0), axis=1)
    hardest_neg = reduce_min(dist * neg + (1.0 - neg) * big, axis=1)
    return relu(hardest_pos - hardest_neg + margin).mean()


def total_loss(output, labels, classifier_seq: Classifier, classifier_frame: Classifier,
               alpha: float = 0.3, margin: float = 0.3, use_spread: bool = True) -> LossBreakdown:
    """Spread term plus CE and triplet on both the sequence feature and the pooled frame feature."""
    if use_spread:
        A_s = output.match_s.probs if output.match_s is not None else None
        l_s = memory_spread_loss(A_s, output.probs_t, alpha)
    else:
        l_s = Tensor(np.zeros((), dtype=output.f_t.dtype))
    ce_seq = cross_entropy_id(output.f_t, labels, classifier_seq)
    tri_seq = batch_hard_triplet(output.f_t, labels, margin)
    ce_frame = cross_entropy_id(output.f_avg, labels, classifier_frame)
    tri_frame = batch_hard_triplet(output.f_avg, labels, margin)
    total = l_s + ce_seq + tri_seq + ce_frame + tri_frame
    return LossBreakdown(total, l_s, ce_seq, tri_seq, ce_frame, tri_frame)
