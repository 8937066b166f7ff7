"""Naive loop-based reference implementations, written straight from the definitions.

They share no code with the package: plain Python loops over scalars and
``math`` functions, float64 throughout.
"""

from __future__ import annotations

import math

import numpy as np


def _norm(v):
    return math.sqrt(sum(x * x for x in v))


def _cosine_softmax(q, keys_cols):
    """Softmax over cosine similarities of ``q`` with each key column (eps 1e-12 like the engine)."""
    qn = _norm(q) + 1e-12
    sims = []
    for k in keys_cols:
        kn = _norm(k) + 1e-12
        sims.append(sum(a * b for a, b in zip(q, k)) / (qn * kn))
    m = max(sims)
    e = [math.exp(s - m) for s in sims]
    z = sum(e)
    return [x / z for x in e]


def address(q, keys):
    """``keys`` is ``(D, M)``; returns the M matching probabilities."""
    D, M = keys.shape
    return np.array(_cosine_softmax(list(q), [list(keys[:, n]) for n in range(M)]))


def read(probs, values):
    """Probability-weighted sum of the value columns of a ``(R, M)`` value matrix."""
    R, M = values.shape
    return np.array([sum(probs[n] * values[r, n] for n in range(M)) for r in range(R)])


def spatial_forward(f_o, q_s, keys, values, gamma, beta, eps=1e-5):
    """Train-mode refinement of ``(n, D, H, W)`` maps by a double loop over frames and positions.

    BN statistics are taken over all (frame, position) rows with the biased
    variance, as in train-mode normalization.
    """
    n, D, H, W = f_o.shape
    M = keys.shape[1]
    probs = np.zeros((n * H * W, M))
    reads = np.zeros((n * H * W, D))
    row = 0
    for i in range(n):
        for y in range(H):
            for x in range(W):
                p = address(q_s[i, :, y, x], keys)
                probs[row] = p
                reads[row] = read(p, values)
                row += 1
    rows = n * H * W
    out = np.zeros_like(f_o)
    mean = [sum(reads[r, d] for r in range(rows)) / rows for d in range(D)]
    var = [sum((reads[r, d] - mean[d]) ** 2 for r in range(rows)) / rows for d in range(D)]
    row = 0
    for i in range(n):
        for y in range(H):
            for x in range(W):
                for d in range(D):
                    bn = gamma[d] * (reads[row, d] - mean[d]) / math.sqrt(var[d] + eps) + beta[d]
                    out[i, d, y, x] = f_o[i, d, y, x] - bn
                row += 1
    return out, probs


def spread_loss(A_s, A_t, alpha):
    total = 0.0
    for A in (A_s, A_t):
        if A is None:
            continue
        for n in range(A.shape[1]):
            col = [A[r, n] for r in range(A.shape[0])]
            total += max(0.0, min(col) - max(col) + alpha)
    return total


def batch_hard_triplet(features, labels, margin):
    B = len(labels)

    def dist(a, b):
        return math.sqrt(max(sum((features[a, d] - features[b, d]) ** 2 for d in range(features.shape[1])), 1e-12))

    total = 0.0
    for a in range(B):
        pos = [dist(a, p) for p in range(B) if p != a and labels[p] == labels[a]]
        neg = [dist(a, q) for q in range(B) if labels[q] != labels[a]]
        total += max(0.0, max(pos) - min(neg) + margin)
    return total / B


def retrieval(query, gallery, camera_filter=True, max_rank=50):
    """Explicit sort per query, manual AP; returns (rank1, mAP, cmc, per_query_ap)."""
    aps, firsts = [], []
    for qv, qid, qcam in query:
        scored = []
        for g, (gv, gid, gcam) in enumerate(gallery):
            if camera_filter and gid == qid and gcam == qcam:
                continue
            d = sum((a - b) ** 2 for a, b in zip(qv, gv))
            scored.append((d, g, gid))
        scored.sort(key=lambda t: (t[0], t[1]))
        flags = [gid == qid for _, _, gid in scored]
        if not any(flags):
            continue
        hits, precisions = 0, []
        for rank, flag in enumerate(flags, start=1):
            if flag:
                hits += 1
                precisions.append(hits / rank)
        aps.append(sum(precisions) / len(precisions))
        firsts.append(flags.index(True))
    R = min(max_rank, len(gallery))
    n = len(aps)
    cmc = [sum(1 for f in firsts if f <= r) / n for r in range(R)] if n else [0.0] * R
    return (cmc[0] if n else 0.0), (sum(aps) / n if n else 0.0), cmc, aps


def random_stochastic_rows(rng, rows, cols):
    x = rng.random((rows, cols)) ** 3
    return x / x.sum(axis=1, keepdims=True)
