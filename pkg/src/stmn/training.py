"""Training loop: P x S identity batches, RRS train sampling, Adam, step decay."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .config import RunConfig
from .losses import LossBreakdown, total_loss
from .model import STMN, ModelConfig
from .synth_data import Dataset, augment_sequence, derive_rng, generate_dataset, rrs_sample

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step",) + LossBreakdown.FIELDS

# sub-seed streams derived from the run seed
_STREAM_INIT, _STREAM_SAMPLER = 101, 102


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, losses: dict):
        super().__init__(f"non-finite loss at step {step}: {losses}")
        self.step = step
        self.losses = losses


class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, lr_mult: list[float] | None = None):
        self.params = params
        self.lr_mult = lr_mult if lr_mult is not None else [1.0] * len(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v, mult in zip(self.params, self.m, self.v, self.lr_mult):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * mult * update).astype(p.data.dtype)


def learning_rate(cfg: RunConfig, epoch: int) -> float:
    o = cfg.optim
    return o.lr * o.decay_factor ** (epoch // o.decay_every)


def build_model(cfg: RunConfig, n_classes: int, dtype=np.float32) -> STMN:
    v = cfg.variant
    mcfg = ModelConfig(encoder=cfg.encoder_config(), M=cfg.model.M, N=cfg.model.N, L=cfg.model.L,
                       n_classes=n_classes, enable_sm=v.enable_sm, enable_tm=v.enable_tm,
                       mlp_baseline=v.mlp_baseline)
    return STMN(mcfg, derive_rng(cfg.seed, _STREAM_INIT), dtype)


class IdentitySampler:
    """Epochs of P-identity batches with S sequences each (last partial batch dropped)."""

    def __init__(self, sequences, P: int, S: int, rng: np.random.Generator):
        self.by_id: dict[int, list[int]] = {}
        for idx, seq in enumerate(sequences):
            self.by_id.setdefault(seq.identity, []).append(idx)
        self.ids = sorted(self.by_id)
        if len(self.ids) < P:
            raise ValueError(f"need at least {P} identities, have {len(self.ids)}")
        self.P, self.S, self.rng = P, S, rng

    def __len__(self) -> int:
        return len(self.ids) // self.P

    def epoch(self):
        order = self.rng.permutation(self.ids)
        for b in range(len(self)):
            batch = []
            for pid in order[b * self.P:(b + 1) * self.P]:
                pool = self.by_id[int(pid)]
                replace = len(pool) < self.S
                batch.extend(int(i) for i in self.rng.choice(pool, self.S, replace=replace))
            yield batch


@dataclass
class TrainResult:
    model: STMN
    label_map: dict[int, int]
    history: list[dict] = field(default_factory=list)
    epochs: int = 0


def make_clip_batch(dataset: Dataset, indices, cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    L = cfg.model.L
    clips = []
    for i in indices:
        frames = rrs_sample(dataset.train[i], L, "train", rng)
        clips.append(augment_sequence(frames, rng, cfg.train.flip_prob, cfg.train.erase_prob))
    return np.stack(clips)


def train(cfg: RunConfig, dataset: Dataset | None = None, out_dir=None) -> TrainResult:
    """Train one model; writes ``train_log.csv`` and checkpoints when ``out_dir`` is given."""
    dataset = dataset if dataset is not None else generate_dataset(cfg.dataset_config())
    train_ids = dataset.train_identities
    label_map = {pid: k for k, pid in enumerate(train_ids)}
    model = build_model(cfg, len(train_ids))
    params = model.parameters()
    memory = {id(p) for p in model.memory_parameters()}
    mult = [cfg.optim.memory_lr_mult if id(p) in memory else 1.0 for p in params]
    opt = Adam(params, cfg.optim.lr, (cfg.optim.beta1, cfg.optim.beta2), cfg.optim.eps,
               cfg.optim.weight_decay, mult)
    rng = derive_rng(cfg.seed, _STREAM_SAMPLER)
    sampler = IdentitySampler(dataset.train, cfg.batch.P, cfg.batch.S, rng)
    result = TrainResult(model, label_map)

    out = Path(out_dir) if out_dir is not None else None
    writer = log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.csv", "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)
        save_checkpoint(model.state_dict(), out / "checkpoint_epoch0000.json", run_snapshot(cfg, label_map), 0)

    step = 0
    try:
        model.train()
        for epoch in range(cfg.optim.epochs):
            opt.lr = learning_rate(cfg, epoch)
            for batch in sampler.epoch():
                clips = make_clip_batch(dataset, batch, cfg, rng)
                labels = np.array([label_map[dataset.train[i].identity] for i in batch])
                model.zero_grad()
                output = model(clips)
                losses = total_loss(output, labels, model.classifier_seq, model.classifier_frame,
                                    cfg.loss.alpha, cfg.loss.margin, cfg.variant.enable_spread)
                row = losses.as_dict()
                if not np.all(np.isfinite(list(row.values()))):
                    raise NonFiniteLossError(step, row)
                losses.total.backward()
                opt.step()
                result.history.append({"step": step, **row})
                if writer is not None:
                    writer.writerow([step] + [f"{row[k]:.8g}" for k in LossBreakdown.FIELDS])
                step += 1
            result.epochs = epoch + 1
            if out is not None and (epoch + 1) % cfg.train.checkpoint_every == 0:
                save_checkpoint(model.state_dict(), out / f"checkpoint_epoch{epoch + 1:04d}.json",
                                run_snapshot(cfg, label_map), epoch + 1)
            log.debug("epoch %d done, last loss %.4f", epoch, result.history[-1]["total"] if result.history else float("nan"))
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    if out is not None:
        save_checkpoint(model.state_dict(), out / "final.json", run_snapshot(cfg, label_map), result.epochs)
    return result


def run_snapshot(cfg: RunConfig, label_map: dict[int, int]) -> dict:
    return {"run": cfg.to_dict(), "n_classes": len(label_map)}
