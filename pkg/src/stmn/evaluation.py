"""Representation extraction, retrieval metrics and diagnostic exports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .model import STMN
from .synth_data import Dataset, VideoSequence, all_frames_chunks, frame_masks, rrs_indices, rrs_sample

log = logging.getLogger(__name__)

STRATEGIES = ("rrs", "all_frames")

REPORT_SCHEMA = {
    "type": "object",
    "required": ["rank1", "mAP", "cmc", "per_query_ap", "n_queries", "n_skipped"],
    "properties": {
        "rank1": {"type": "number", "minimum": 0, "maximum": 1},
        "mAP": {"type": "number", "minimum": 0, "maximum": 1},
        "cmc": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "per_query_ap": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "n_queries": {"type": "integer", "minimum": 0},
        "n_skipped": {"type": "integer", "minimum": 0},
        "strategy": {"type": "string"},
    },
}


@dataclass
class RetrievalReport:
    rank1: float
    mAP: float
    cmc: list[float]
    per_query_ap: list[float]
    n_queries: int
    n_skipped: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text


# -- extraction ----------------------------------------------------------------

def _forward_clips(model: STMN, clips: np.ndarray, batch_size: int = 64):
    outs = []
    with no_grad():
        for start in range(0, len(clips), batch_size):
            outs.append(model(clips[start:start + batch_size]))
    return outs


def extract_representations(model: STMN, sequences, strategy: str = "rrs",
                            batch_size: int = 64) -> np.ndarray:
    """``(n, D)`` sequence features in eval mode under the chosen test strategy."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    L = model.config.L
    clips, owner = [], []
    for s, seq in enumerate(sequences):
        if len(seq.frames) == 0:
            raise ValueError("cannot extract a representation from an empty sequence")
        chunks = [rrs_sample(seq, L, "test")] if strategy == "rrs" else all_frames_chunks(seq, L)
        clips.extend(chunks)
        owner.extend([s] * len(chunks))
    if not clips:
        return np.zeros((0, model.config.D), dtype=np.float32)
    model.eval()
    feats = np.concatenate([o.f_t.data for o in _forward_clips(model, np.stack(clips), batch_size)])
    owner = np.asarray(owner)
    out = np.zeros((len(sequences), feats.shape[1]), dtype=feats.dtype)
    for s in range(len(sequences)):
        out[s] = feats[owner == s].mean(axis=0)
    return out


def extract_representation(model: STMN, seq: VideoSequence, strategy: str = "rrs") -> np.ndarray:
    return extract_representations(model, [seq], strategy)[0]


# -- metrics -------------------------------------------------------------------

def _unpack(items):
    vecs = np.asarray([it[0] for it in items], dtype=np.float64)
    ids = np.asarray([it[1] for it in items])
    cams = np.asarray([it[2] for it in items])
    return vecs, ids, cams


def evaluate_retrieval(query, gallery, max_rank: int = 50, camera_filter: bool = True) -> RetrievalReport:
    """CMC and mAP over Euclidean rankings.

    ``query`` and ``gallery`` are sequences of ``(vector, identity, camera)``.
    Gallery entries sharing both identity and camera with a query are dropped
    from that query's ranking; distance ties keep gallery order. Queries with
    no remaining positive are skipped and counted in ``n_skipped``.
    """
    qv, qid, qcam = _unpack(query)
    gv, gid, gcam = _unpack(gallery)
    if len(gallery) == 0:
        raise ValueError("empty gallery")
    d2 = ((qv[:, None, :] - gv[None, :, :]) ** 2).sum(-1)
    R = min(max_rank, len(gallery))
    cmc = np.zeros(R)
    aps = []
    skipped = 0
    for q in range(len(query)):
        order = np.argsort(d2[q], kind="stable")
        keep = ~((gid[order] == qid[q]) & (gcam[order] == qcam[q])) if camera_filter else np.ones(len(order), bool)
        matches = gid[order][keep] == qid[q]
        if not matches.any():
            skipped += 1
            continue
        hits = np.flatnonzero(matches)
        first = hits[0]
        if first < R:
            cmc[first:] += 1
        precision = np.arange(1, len(hits) + 1) / (hits + 1)
        aps.append(float(precision.mean()))
    if skipped:
        log.warning("%d queries had no valid gallery match and were skipped", skipped)
    n = len(aps)
    cmc = (cmc / n).tolist() if n else [0.0] * R
    return RetrievalReport(rank1=cmc[0] if n else 0.0, mAP=float(np.mean(aps)) if n else 0.0,
                           cmc=cmc, per_query_ap=aps, n_queries=n, n_skipped=skipped)


def evaluate_model(model: STMN, dataset: Dataset, strategy: str = "rrs",
                   camera_filter: bool = True) -> RetrievalReport:
    qf = extract_representations(model, dataset.query, strategy)
    gf = extract_representations(model, dataset.gallery, strategy)
    report = evaluate_retrieval([(v, s.identity, s.camera) for v, s in zip(qf, dataset.query)],
                                [(v, s.identity, s.camera) for v, s in zip(gf, dataset.gallery)],
                                camera_filter=camera_filter)
    report.extra["strategy"] = strategy
    return report


# -- diagnostics ---------------------------------------------------------------

def _test_clips(model: STMN, sequences) -> np.ndarray:
    return np.stack([rrs_sample(s, model.config.L, "test") for s in sequences])


def matching_maps(model: STMN, sequences) -> dict[str, np.ndarray]:
    """Matching probabilities of probe sequences against both memories.

    ``spatial`` is ``(n_probes, L, K, M)`` and ``temporal`` ``(n_probes, N)``;
    an entry is absent when that memory is disabled.
    """
    model.eval()
    L = model.config.L
    spatial, temporal = [], []
    for out in _forward_clips(model, _test_clips(model, sequences)):
        if out.match_s is not None:
            spatial.append(out.match_s.probs.data.reshape(-1, L, out.match_s.K, model.config.M))
        if out.probs_t is not None:
            temporal.append(out.probs_t.data)
    maps = {}
    if spatial:
        maps["spatial"] = np.concatenate(spatial)
    if temporal:
        maps["temporal"] = np.concatenate(temporal)
    return maps


def export_matching_maps(model: STMN, sequences, path) -> Path:
    """Long-format CSV: memory, probe, frame, position, item, probability."""
    maps = matching_maps(model, sequences)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["memory", "probe", "frame", "position", "item", "probability"])
        if "spatial" in maps:
            for (p, i, k, n), value in np.ndenumerate(maps["spatial"]):
                w.writerow(["spatial", p, i, k, n, f"{value:.9g}"])
        if "temporal" in maps:
            for (p, n), value in np.ndenumerate(maps["temporal"]):
                w.writerow(["temporal", p, "", "", n, f"{value:.9g}"])
    return path


def column_usage(probs: np.ndarray, threshold: float = 0.1) -> int:
    """Count of memory items whose max matching probability over probes reaches ``threshold``."""
    return int((probs.reshape(-1, probs.shape[-1]).max(axis=0) >= threshold).sum())


def magnitude_diff_maps(model: STMN, frames: np.ndarray) -> np.ndarray:
    """``||f_s|| - ||f_o||`` per position for each ``(C, H0, W0)`` frame; returns ``(n, H, W)``.

    Frames are fed as length-L clips of one repeated frame so BN and memory
    paths see exactly the per-frame features.
    """
    model.eval()
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[None]
    L = model.config.L
    clips = np.repeat(frames[:, None], L, axis=1)
    maps = []
    for out in _forward_clips(model, clips):
        f_o = out.encoded.f_o.data[::L]
        f_s = out.f_s.data[::L]
        maps.append(np.linalg.norm(f_s, axis=1) - np.linalg.norm(f_o, axis=1))
    return np.concatenate(maps)


def magnitude_diff_map(model: STMN, frame: np.ndarray) -> np.ndarray:
    return magnitude_diff_maps(model, np.asarray(frame)[None])[0]


def export_magnitude_maps(model: STMN, frames: np.ndarray, path) -> Path:
    """Long-format CSV: probe, row, col, value."""
    maps = magnitude_diff_maps(model, frames)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe", "row", "col", "value"])
        for (p, r, c), value in np.ndenumerate(maps):
            w.writerow([p, r, c, f"{value:.9g}"])
    return path


def downsample_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Fraction of each feature cell covered by a pixel mask (block average)."""
    H0, W0 = mask.shape
    return mask.reshape(h, H0 // h, w, W0 // w).mean(axis=(1, 3))


def region_magnitudes(model: STMN, dataset: Dataset, probes: list[tuple[VideoSequence, int]],
                      cover: float = 0.5) -> tuple[float, float]:
    """Mean magnitude difference over distractor cells and over person cells.

    A feature cell belongs to a region when more than ``cover`` of its pixels
    do.
    """
    frames = np.stack([seq.frames[t] for seq, t in probes])
    maps = magnitude_diff_maps(model, frames)
    h, w = maps.shape[1:]
    dis_vals, per_vals = [], []
    for m, (seq, t) in zip(maps, probes):
        person, distractor = frame_masks(dataset, seq, t)
        dis_vals.extend(m[downsample_mask(distractor, h, w) > cover])
        per_vals.extend(m[downsample_mask(person, h, w) > cover])
    return float(np.mean(dis_vals)), float(np.mean(per_vals))


def attention_traces(model: STMN, sequences) -> tuple[np.ndarray, np.ndarray]:
    """Normalized attention ``(n, L)`` on RRS test clips and the matching corrupted flags."""
    model.eval()
    L = model.config.L
    attn = np.concatenate([o.attention.data for o in _forward_clips(model, _test_clips(model, sequences))])
    flags = np.stack([s.corrupted[rrs_indices(len(s.frames), L, "test")] for s in sequences])
    return attn, flags


def export_attention_traces(model: STMN, sequences, path) -> Path:
    """Long-format CSV: sequence, identity, camera, pattern, frame, attention, corrupted."""
    attn, flags = attention_traces(model, sequences)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "identity", "camera", "pattern", "frame", "attention", "corrupted"])
        for s, seq in enumerate(sequences):
            for i in range(attn.shape[1]):
                w.writerow([s, seq.identity, seq.camera, seq.truth.get("pattern", "none"), i,
                            f"{attn[s, i]:.9g}", int(flags[s, i])])
    return path
