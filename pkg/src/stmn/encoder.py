"""Per-frame CNN encoder with three independent 1x1 heads.

The default config maps a 3x32x16 frame through three conv-BN-ReLU blocks
(16, 32, 64 channels; strides 2, 2, 1) to an 8x4 grid, so K = 32 positions
and every head emits a 64x8x4 map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import BatchNormState, Tensor, batch_norm, conv2d, relu
from .module import Module

HEADS = ("f_o", "q_s", "q_t")


@dataclass
class EncoderConfig:
    in_channels: int = 3
    input_hw: tuple[int, int] = (32, 16)
    stem_channels: tuple[int, ...] = (16, 32, 64)
    stem_strides: tuple[int, ...] = (2, 2, 1)
    D: int = 64

    def __post_init__(self):
        self.input_hw = tuple(int(v) for v in self.input_hw)
        self.stem_channels = tuple(int(v) for v in self.stem_channels)
        self.stem_strides = tuple(int(v) for v in self.stem_strides)
        if len(self.stem_channels) != len(self.stem_strides) or not self.stem_channels:
            raise ValueError("stem_channels and stem_strides must be non-empty and equal length")
        if self.D < 8:
            raise ValueError(f"D must be >= 8, got {self.D}")
        if self.H * self.W < 4:
            raise ValueError(f"feature grid {self.H}x{self.W} has fewer than 4 positions")

    @property
    def H(self) -> int:
        h = self.input_hw[0]
        for s in self.stem_strides:
            h = (h - 1) // s + 1  # 3x3 kernel, padding 1
        return h

    @property
    def W(self) -> int:
        w = self.input_hw[1]
        for s in self.stem_strides:
            w = (w - 1) // s + 1
        return w

    @property
    def K(self) -> int:
        return self.H * self.W


@dataclass
class EncoderOutput:
    """Person map and query maps; ``(D, H, W)`` per frame or ``(n, D, H, W)`` batched."""

    f_o: Tensor
    q_s: Tensor | None = None
    q_t: Tensor | None = None


class Encoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator,
                 heads: tuple[str, ...] = HEADS, dtype=np.float32):
        unknown = set(heads) - set(HEADS)
        if unknown or "f_o" not in heads:
            raise ValueError(f"heads must include 'f_o' and come from {HEADS}, got {heads}")
        self.config = config
        self.heads = tuple(h for h in HEADS if h in heads)
        self.stem_weights: list[Tensor] = []
        self.stem_bn: list[BatchNormState] = []
        # separate streams for the stem and each head, so that a head's presence
        # does not shift the init of anything else
        root = int(rng.integers(2**63))
        stem_rng = np.random.default_rng([root, 0])
        c_in = config.in_channels
        for c_out in config.stem_channels:
            std = np.sqrt(2.0 / (c_in * 9))
            self.stem_weights.append(
                Tensor((stem_rng.standard_normal((c_out, c_in, 3, 3)) * std).astype(dtype), requires_grad=True))
            self.stem_bn.append(BatchNormState.create(c_out, dtype))
            c_in = c_out
        std = np.sqrt(2.0 / c_in)
        for head in self.heads:
            head_rng = np.random.default_rng([root, 1 + HEADS.index(head)])
            setattr(self, f"head_{head}_w", Tensor(
                (head_rng.standard_normal((config.D, c_in, 1, 1)) * std).astype(dtype), requires_grad=True))
            setattr(self, f"head_{head}_b", Tensor(np.zeros(config.D, dtype=dtype), requires_grad=True))

    def named_parameters(self, prefix: str = ""):
        # explicit order keeps stem weights, BN and heads grouped in checkpoints
        for i, (w, bn) in enumerate(zip(self.stem_weights, self.stem_bn)):
            yield f"{prefix}stem.{i}.weight", w
            yield f"{prefix}stem.{i}.bn.gamma", bn.gamma
            yield f"{prefix}stem.{i}.bn.beta", bn.beta
        for head in self.heads:
            yield f"{prefix}head.{head}.weight", getattr(self, f"head_{head}_w")
            yield f"{prefix}head.{head}.bias", getattr(self, f"head_{head}_b")

    def named_buffers(self, prefix: str = ""):
        for i, bn in enumerate(self.stem_bn):
            yield f"{prefix}stem.{i}.bn.running_mean", bn.running_mean
            yield f"{prefix}stem.{i}.bn.running_var", bn.running_var

    def stem(self, x: Tensor) -> Tensor:
        for w, bn, s in zip(self.stem_weights, self.stem_bn, self.config.stem_strides):
            x = relu(batch_norm(conv2d(x, w, None, stride=s, padding=1), bn, self.training))
        return x

    def forward(self, frames) -> EncoderOutput:
        """Encode a batch ``(n, C, H0, W0)`` into batched head maps."""
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames))
        expected = (self.config.in_channels, *self.config.input_hw)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"encoder expects (n, {', '.join(map(str, expected))}), got {x.shape}")
        feats = self.stem(x)
        maps = {head: conv2d(feats, getattr(self, f"head_{head}_w"), getattr(self, f"head_{head}_b"))
                for head in self.heads}
        return EncoderOutput(maps["f_o"], maps.get("q_s"), maps.get("q_t"))

    __call__ = forward


def encode_frame(encoder: Encoder, frame) -> EncoderOutput:
    """Encode one ``(C, H0, W0)`` frame into three ``(D, H, W)`` maps."""
    data = frame.data if isinstance(frame, Tensor) else np.asarray(frame)
    expected = (encoder.config.in_channels, *encoder.config.input_hw)
    if tuple(data.shape) != expected:
        raise ValueError(f"frame shape {data.shape} != {expected}")
    out = encoder(data[None])
    return EncoderOutput(*(None if m is None else m[0] for m in (out.f_o, out.q_s, out.q_t)))


def encode_sequence(encoder: Encoder, frames) -> list[EncoderOutput]:
    """Encode each of the L frames independently (no cross-frame interaction)."""
    if len(frames) == 0:
        raise ValueError("encode_sequence needs at least one frame")
    return [encode_frame(encoder, f) for f in frames]
