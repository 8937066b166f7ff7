"""Full network: encoder, optional spatial/temporal memories, classifiers.

Variant flags reproduce the ablation rows. With both memories disabled the
encoder keeps only the person head and the sequence feature is the temporal
average of pooled frame features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, global_average_pool, softmax
from .encoder import Encoder, EncoderConfig, EncoderOutput
from .losses import Classifier
from .module import Module
from .spatial_memory import SpatialMatchMap, SpatialMemoryBank, spatial_forward
from .temporal_memory import (
    AttentionVector,
    MLPAttention,
    TemporalMemoryBank,
    address_temporal,
    aggregate_pooled,
    encode_context,
    mlp_attention_baseline,
    synthesize_attention,
)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    M: int = 10
    N: int = 5
    L: int = 6
    n_classes: int = 20
    enable_sm: bool = True
    enable_tm: bool = True
    mlp_baseline: bool = False

    @property
    def D(self) -> int:
        return self.encoder.D

    @property
    def uses_context(self) -> bool:
        return self.enable_tm or self.mlp_baseline


@dataclass
class ModelOutput:
    f_t: Tensor                      # (B, D) sequence representation
    f_avg: Tensor                    # (B, D) temporal mean of pooled refined frames
    attention: Tensor                # (B, L) normalized frame weights
    encoded: EncoderOutput           # batched maps, (B*L, D, H, W)
    f_s: Tensor                      # refined maps, (B*L, D, H, W)
    match_s: SpatialMatchMap | None  # spatial matching probabilities
    probs_t: Tensor | None           # (B, N) temporal matching probabilities
    attention_logits: Tensor | None


class STMN(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        if config.enable_tm and config.mlp_baseline:
            raise ValueError("mlp_baseline replaces the temporal memory; enable only one")
        self.config = config
        D = config.D
        heads = ["f_o"]
        if config.enable_sm:
            heads.append("q_s")
        if config.uses_context:
            heads.append("q_t")
        # one derived stream per component: variants that share a component
        # start from identical weights for it
        root = int(rng.integers(2**63))
        def stream(k: int) -> np.random.Generator:
            return np.random.default_rng([root, k])
        self.encoder = Encoder(config.encoder, stream(0), tuple(heads), dtype)
        self.spatial = SpatialMemoryBank(D, config.M, stream(1), dtype) if config.enable_sm else None
        if config.uses_context:
            self.temporal = TemporalMemoryBank(D, config.N, config.L, stream(2), dtype)
            if config.mlp_baseline:
                # the MLP replaces keys/values; the LSTM context encoder stays
                self.temporal.keys.requires_grad = False
                self.temporal.values.requires_grad = False
                self.mlp = MLPAttention(D, config.N, config.L, stream(3), dtype)
        self.classifier_seq = Classifier(D, config.n_classes, stream(4), dtype)
        self.classifier_frame = Classifier(D, config.n_classes, stream(5), dtype)

    def memory_parameters(self) -> list[Tensor]:
        """Trainable key and value banks of both memories."""
        banks = [self.spatial, getattr(self, "temporal", None)]
        return [t for b in banks if b is not None for t in (b.keys, b.values) if t.requires_grad]

    def forward(self, clips) -> ModelOutput:
        """Run a batch of clips shaped ``(B, L, C, H0, W0)``."""
        clips = clips.data if isinstance(clips, Tensor) else np.asarray(clips)
        cfg = self.config
        if clips.ndim != 5 or clips.shape[1] != cfg.L:
            raise ValueError(f"expected clips (B, {cfg.L}, C, H, W), got {clips.shape}")
        B, L = clips.shape[:2]
        dtype = self.encoder.stem_weights[0].dtype
        frames = Tensor(clips.reshape(B * L, *clips.shape[2:]).astype(dtype, copy=False))
        enc = self.encoder(frames)
        D, H, W = enc.f_o.shape[1:]

        if cfg.enable_sm:
            f_s, match_s = spatial_forward(enc, self.spatial, self.training, frames_per_sequence=L)
        else:
            f_s, match_s = enc.f_o, None
        pooled = global_average_pool(f_s).reshape(B, L, D)
        f_avg = pooled.mean(axis=1)

        probs_t = logits = None
        if cfg.uses_context:
            ctx = encode_context(enc.q_t.reshape(B, L, D, H, W), self.temporal)
            if cfg.mlp_baseline:
                attn = mlp_attention_baseline(ctx, self.mlp)
            else:
                probs_t = address_temporal(ctx, self.temporal)
                attn = synthesize_attention(probs_t, self.temporal)
            logits = attn.logits
            f_t = aggregate_pooled(attn, pooled)
            attention = attn.normalized
        else:
            f_t = f_avg
            attention = Tensor(np.full((B, L), 1.0 / L, dtype=dtype))
        return ModelOutput(f_t, f_avg, attention, enc, f_s, match_s, probs_t, logits)

    __call__ = forward
