"""Fused differentiable ops used by the model: softmax, BN, conv, LSTM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, lift, make_node, matmul, sigmoid, tanh


def _norm_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(x, axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_node(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(x, axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return make_node(out, (x,), backward, "log_softmax")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / (||x|| + eps)`` along ``axis``; a zero vector maps to zero."""
    axis = _norm_axis(x, axis)
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=axis, keepdims=True))
    denom = norm + eps
    out = xd / denom

    def backward(g):
        dot = np.sum(g * xd, axis=axis, keepdims=True)
        safe = np.where(norm > 0, norm, 1)
        coef = np.where(norm > 0, dot / (denom * denom * safe), 0)
        return (g / denom - xd * coef,)

    return make_node(out, (x,), backward, "l2_normalize")


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over the two trailing (spatial) axes: ``(..., D, H, W) -> (..., D)``."""
    if x.ndim < 3:
        raise ValueError(f"global_average_pool needs (..., D, H, W), got {x.shape}")
    shape = x.shape
    count = shape[-1] * shape[-2]

    def backward(g):
        return (np.broadcast_to(g[..., None, None] / count, shape).copy(),)

    return make_node(x.data.mean(axis=(-2, -1)), (x,), backward, "gap")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over ``(N, C, H, W)`` with an ``(O, C, kh, kw)`` kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d needs 4-d input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {wc}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({o},)")
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d kernel larger than padded input")

    xd = x.data
    if kh == 1 and kw == 1 and p == 0:
        xs = xd[:, :, ::s, ::s]
        cols = xs.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gb = g2.sum(axis=0) if bias is not None else None
        gx = None
        if x.requires_grad:
            dcols = g2 @ wmat
            if kh == 1 and kw == 1 and p == 0:
                gx = np.zeros_like(xd)
                gx[:, :, ::s, ::s] = dcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
            else:
                # (kh, kw, n, c, ho, wo) so each tap is one contiguous slab
                dcols = np.ascontiguousarray(dcols.reshape(n, ho, wo, c, kh, kw).transpose(4, 5, 0, 3, 1, 2))
                gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[i, j]
                gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(np.ascontiguousarray(out), parents, backward, "conv2d")


@dataclass
class BatchNormState:
    """Affine parameters and running statistics for one BN layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32, gamma_init: float = 1.0,
               eps: float = 1e-5, momentum: float = 0.1) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.full(channels, gamma_init, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )


def batch_norm(x: Tensor, params: BatchNormState, training: bool) -> Tensor:
    """Normalize channel axis 1 of ``(N, C, ...)`` input.

    Training mode uses batch statistics over every non-channel axis and
    updates the running averages in ``params``; eval mode uses the running
    statistics.
    """
    if x.ndim < 2 or x.shape[1] != params.gamma.shape[0]:
        raise ValueError(f"batch_norm channel mismatch: {x.shape} vs {params.gamma.shape}")
    gamma, beta = params.gamma, params.beta
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    xd = x.data
    count = xd.size // xd.shape[1]
    if training:
        if count == 0:
            raise ValueError("batch_norm in train mode needs a non-empty batch")
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = params.momentum
        unbiased = var * count / (count - 1) if count > 1 else var
        params.running_mean[...] = (1 - m) * params.running_mean + m * mean
        params.running_var[...] = (1 - m) * params.running_var + m * unbiased
    else:
        mean = params.running_mean.astype(xd.dtype, copy=False)
        var = params.running_var.astype(xd.dtype, copy=False)
    inv = (1.0 / np.sqrt(var + params.eps)).astype(xd.dtype)
    xhat = (xd - mean.reshape(bshape)) * inv.reshape(bshape)
    g_d = gamma.data.reshape(bshape)
    out = xhat * g_d + beta.data.reshape(bshape)

    def backward(grad):
        dgamma = np.sum(grad * xhat, axis=axes)
        dbeta = np.sum(grad, axis=axes)
        dxhat = grad * g_d
        if training:
            dx = (inv.reshape(bshape) / count) * (
                count * dxhat
                - np.sum(dxhat, axis=axes).reshape(bshape)
                - xhat * np.sum(dxhat * xhat, axis=axes).reshape(bshape)
            )
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return make_node(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


@dataclass
class LSTMParams:
    """Single-layer LSTM weights; gate order is input, forget, candidate, output."""

    w_ih: Tensor  # (4H, I)
    w_hh: Tensor  # (4H, H)
    bias: Tensor  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, dtype=np.float32) -> "LSTMParams":
        return cls(
            Tensor(np.zeros((4 * hidden_size, input_size), dtype=dtype), requires_grad=True),
            Tensor(np.zeros((4 * hidden_size, hidden_size), dtype=dtype), requires_grad=True),
            Tensor(np.zeros(4 * hidden_size, dtype=dtype), requires_grad=True),
        )

    @classmethod
    def uniform(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
                dtype=np.float32) -> "LSTMParams":
        bound = 1.0 / np.sqrt(hidden_size)

        def draw(*shape):
            return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

        return cls(draw(4 * hidden_size, input_size), draw(4 * hidden_size, hidden_size),
                   draw(4 * hidden_size))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LSTMParams) -> tuple[Tensor, Tensor]:
    """One LSTM step on ``(I,)`` or ``(B, I)`` input."""
    x, h, c = lift(x), lift(h), lift(c)
    hid = params.hidden_size
    if x.shape[-1] != params.input_size:
        raise ValueError(f"lstm_cell input extent {x.shape[-1]} != {params.input_size}")
    if h.shape[-1] != hid or c.shape != h.shape:
        raise ValueError(f"lstm_cell state shapes {h.shape}, {c.shape} != hidden {hid}")
    if x.shape[:-1] != h.shape[:-1]:
        raise ValueError(f"lstm_cell batch mismatch: {x.shape} vs {h.shape}")
    gates = matmul(x, params.w_ih.T) + matmul(h, params.w_hh.T) + params.bias
    i = sigmoid(gates[..., 0:hid])
    f = sigmoid(gates[..., hid:2 * hid])
    g = tanh(gates[..., 2 * hid:3 * hid])
    o = sigmoid(gates[..., 3 * hid:4 * hid])
    c_next = f * c + i * g
    h_next = o * tanh(c_next)
    return h_next, c_next
