"""Synthetic video re-identification benchmark with planted distractors.

Identities are parametric pedestrian templates (head, shirt, trousers,
optional stripes). Every camera owns one background clutter pattern drawn
at a fixed location in all of its frames. Each sequence carries one of the
temporal patterns below, which corrupts a contiguous run of frames. All
randomness derives from the master seed through per-item seed sequences, so
the dataset is a pure function of the config.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TEMPORAL_PATTERNS = ("none", "occlude_first", "disappear_end", "occlude_mid")
BACKGROUND_KINDS = ("pole", "band", "block", "checker")
BG_LEVEL = 0.45


@dataclass
class SynthConfig:
    n_identities: int = 40
    n_cameras: int = 4
    sequences_per_identity: int = 6
    frames_per_sequence: int = 24
    image_size: tuple[int, int, int] = (3, 32, 16)
    distractor_pool: int = 4
    temporal_patterns: tuple[str, ...] = TEMPORAL_PATTERNS
    noise_std: float = 0.03
    train_fraction: float = 0.5
    queries_per_identity: int = 2
    spatial_distractors: bool = True
    temporal_distractors: bool = True
    seed: int = 0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.temporal_patterns = tuple(self.temporal_patterns)
        self.validate()

    def validate(self) -> None:
        for name in ("n_identities", "n_cameras", "sequences_per_identity",
                     "frames_per_sequence", "distractor_pool"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if len(self.image_size) != 3 or min(self.image_size) < 1:
            raise ValueError(f"image_size must be (C, H, W) with positive extents, got {self.image_size}")
        if self.image_size[0] != 3:
            raise ValueError("synthetic renders are RGB (3 channels)")
        if self.image_size[1] < 16 or self.image_size[2] < 8:
            raise ValueError("image must be at least 16x8 pixels")
        if self.n_cameras < 2 or self.sequences_per_identity < 2:
            raise ValueError("every identity must appear in at least two cameras")
        unknown = set(self.temporal_patterns) - set(TEMPORAL_PATTERNS)
        if unknown or not self.temporal_patterns:
            raise ValueError(f"unknown temporal patterns {sorted(unknown)}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        n_train = self.n_train_identities
        if n_train < 2 or self.n_identities - n_train < 2:
            raise ValueError("each split needs at least two identities")
        if not 1 <= self.queries_per_identity < self.sequences_per_identity:
            raise ValueError("queries_per_identity must leave gallery sequences")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def n_train_identities(self) -> int:
        return int(round(self.n_identities * self.train_fraction))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_size"] = list(self.image_size)
        d["temporal_patterns"] = list(self.temporal_patterns)
        return d


@dataclass
class VideoSequence:
    frames: np.ndarray  # (T, C, H, W) float32
    identity: int
    camera: int
    truth: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def corrupted(self) -> np.ndarray:
        return np.asarray(self.truth.get("corrupted", [False] * len(self.frames)), dtype=bool)


@dataclass
class Dataset:
    config: SynthConfig
    train: list[VideoSequence]
    query: list[VideoSequence]
    gallery: list[VideoSequence]
    identities: dict[int, dict]
    backgrounds: list[dict]

    def background_for_camera(self, camera: int) -> dict:
        return self.backgrounds[camera % len(self.backgrounds)]

    @property
    def train_identities(self) -> list[int]:
        return sorted({s.identity for s in self.train})


# -- seeding -----------------------------------------------------------------

def derive_rng(master: int, *keys: int) -> np.random.Generator:
    """Independent generator for a (master, key...) path; order-independent."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys)))


_STREAM_IDENTITY, _STREAM_BACKGROUND, _STREAM_SEQUENCE, _STREAM_SPLIT = 1, 2, 3, 4


# -- rendering ---------------------------------------------------------------

def _palette_color(rng: np.random.Generator) -> list[float]:
    return [float(v) for v in rng.uniform(0.05, 0.95, 3)]


def draw_identity(rng: np.random.Generator) -> dict:
    return {
        "shirt": _palette_color(rng),
        "pants": _palette_color(rng),
        "head": [float(v) for v in rng.uniform([0.55, 0.35, 0.25], [0.9, 0.7, 0.55])],
        "stripes": bool(rng.random() < 0.5),
        "stripe_color": _palette_color(rng),
        "torso_half_width": int(rng.integers(3, 5)),
    }


def draw_background(rng: np.random.Generator, index: int, hw: tuple[int, int]) -> dict:
    h, w = hw
    kind = BACKGROUND_KINDS[index % len(BACKGROUND_KINDS)]
    colors = [_palette_color(rng), _palette_color(rng)]
    if kind == "pole":
        c0 = int(rng.choice([1, w - 4]))
        box = [0, h, c0, c0 + 3]
    elif kind == "band":
        r0 = int(rng.integers(h - 10, h - 6))
        box = [r0, r0 + 7, 0, w]
    elif kind == "block":
        c0 = int(rng.choice([0, w - 7]))
        r0 = int(rng.integers(2, h // 3))
        box = [r0, r0 + h // 2, c0, c0 + 7]
    else:
        r0 = int(rng.integers(1, h // 4))
        box = [r0, r0 + 9, 0, w]
    return {"index": index, "kind": kind, "colors": colors, "box": box}


def render_background(bg: dict, hw: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Pattern pixels ``(3, H, W)`` and its boolean footprint ``(H, W)``."""
    h, w = hw
    img = np.zeros((3, h, w), dtype=np.float32)
    mask = np.zeros((h, w), dtype=bool)
    r0, r1, c0, c1 = bg["box"]
    a, b = (np.asarray(c, dtype=np.float32)[:, None, None] for c in bg["colors"])
    rr, cc = np.mgrid[r0:r1, c0:c1]
    kind = bg["kind"]
    if kind == "pole":
        sel = np.ones_like(rr, dtype=bool)
        tex = (rr % 6) < 3
        lamp_r1 = min(h, r0 + 5)
        img[:, r0:lamp_r1, max(0, c0 - 1):min(w, c1 + 1)] = b
        mask[r0:lamp_r1, max(0, c0 - 1):min(w, c1 + 1)] = True
    elif kind == "band":
        sel = np.ones_like(rr, dtype=bool)
        tex = ((rr // 2 + cc // 2) % 2) == 0
    elif kind == "block":
        sel = np.ones_like(rr, dtype=bool)
        tex = ((cc + rr) % 4) < 2
    else:
        sel = np.ones_like(rr, dtype=bool)
        tex = ((rr // 3 + cc // 3) % 2) == 0
    patch = np.where(tex[None], a, b)
    region = img[:, r0:r1, c0:c1]
    region[:, sel] = patch[:, sel]
    mask[r0:r1, c0:c1] |= sel
    return img, mask


def person_mask(ident: dict, dx: int, hw: tuple[int, int]) -> dict[str, np.ndarray]:
    """Boolean masks for head, torso and legs with the body centred at ``W/2 + dx``."""
    h, w = hw
    cx = w // 2 + dx
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    sy = h / 32.0
    head = (rows >= round(2 * sy)) & (rows < round(7 * sy)) & (np.abs(cols - cx + 0.5) <= 2)
    tw = ident["torso_half_width"]
    torso = (rows >= round(7 * sy)) & (rows < round(18 * sy)) & (cols >= cx - tw) & (cols < cx + tw)
    legs = (rows >= round(18 * sy)) & (rows < round(30 * sy)) & (
        ((cols >= cx - 3) & (cols < cx - 1)) | ((cols >= cx + 1) & (cols < cx + 3)))
    return {"head": head, "torso": torso, "legs": legs}


def render_person(img: np.ndarray, ident: dict, dx: int) -> np.ndarray:
    """Paint the identity template onto ``img`` in place; returns the body mask."""
    hw = img.shape[1:]
    parts = person_mask(ident, dx, hw)
    img[:, parts["head"]] = np.asarray(ident["head"], dtype=np.float32)[:, None]
    torso_color = np.asarray(ident["shirt"], dtype=np.float32)
    img[:, parts["torso"]] = torso_color[:, None]
    if ident["stripes"]:
        stripe = parts["torso"] & ((np.arange(hw[0])[:, None] // 2) % 2 == 0)
        img[:, stripe] = np.asarray(ident["stripe_color"], dtype=np.float32)[:, None]
    img[:, parts["legs"]] = np.asarray(ident["pants"], dtype=np.float32)[:, None]
    return parts["head"] | parts["torso"] | parts["legs"]


def _draw_temporal(rng: np.random.Generator, patterns, T: int, hw) -> dict:
    h, w = hw
    name = patterns[int(rng.integers(len(patterns)))]
    corrupted = np.zeros(T, dtype=bool)
    if name == "occlude_first":
        corrupted[: max(1, int(round(T * rng.uniform(0.22, 0.4))))] = True
    elif name == "disappear_end":
        corrupted[T - max(1, int(round(T * rng.uniform(0.22, 0.4)))):] = True
    elif name == "occlude_mid":
        k = max(1, int(round(T * rng.uniform(0.2, 0.34))))
        start = int(rng.integers(max(1, T // 2 - k), max(2, T // 2) + 1))
        corrupted[start:min(T, start + k)] = True
    # a passer-by walking in front of the target, slightly off-centre
    side = 1 if rng.random() < 0.5 else -1
    occluder = {"template": draw_identity(rng), "offset": side * int(rng.integers(1, max(2, w // 6) + 1))}
    if not corrupted.any():
        name = "none"
    return {"pattern": name, "corrupted": corrupted.tolist(), "occluder": occluder}


def occluder_mask(occ: dict, dx: int, hw: tuple[int, int]) -> np.ndarray:
    parts = person_mask(occ["template"], dx + occ["offset"], hw)
    return parts["head"] | parts["torso"] | parts["legs"]


def render_sequence(ident: dict, bg: dict, camera_gain: float, temporal: dict, dx: np.ndarray,
                    noise: np.ndarray, cfg: SynthConfig, spatial: bool, temporal_on: bool) -> np.ndarray:
    c, h, w = cfg.image_size
    bg_img, bg_mask = render_background(bg, (h, w))
    frames = np.empty((len(dx), c, h, w), dtype=np.float32)
    corrupted = temporal["corrupted"]
    for t in range(len(dx)):
        img = np.full((c, h, w), BG_LEVEL, dtype=np.float32)
        if spatial:
            img[:, bg_mask] = bg_img[:, bg_mask]
        pattern = temporal["pattern"] if temporal_on else "none"
        hidden = corrupted[t] and pattern == "disappear_end"
        if not hidden:
            render_person(img, ident, int(dx[t]))
        if corrupted[t] and pattern in ("occlude_first", "occlude_mid"):
            occ = temporal["occluder"]
            render_person(img, occ["template"], int(dx[t]) + occ["offset"])
        frames[t] = img
    frames = frames * np.float32(camera_gain) + noise
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _camera_gains(cfg: SynthConfig) -> list[float]:
    rng = derive_rng(cfg.seed, _STREAM_BACKGROUND, 10 ** 6)
    return [float(g) for g in rng.uniform(0.9, 1.1, cfg.n_cameras)]


def generate_dataset(cfg: SynthConfig) -> Dataset:
    """Render the full benchmark and split it by identity into train / query / gallery."""
    cfg.validate()
    c, h, w = cfg.image_size
    identities = {i: draw_identity(derive_rng(cfg.seed, _STREAM_IDENTITY, i))
                  for i in range(cfg.n_identities)}
    backgrounds = [draw_background(derive_rng(cfg.seed, _STREAM_BACKGROUND, j), j, (h, w))
                   for j in range(cfg.distractor_pool)]
    gains = _camera_gains(cfg)
    order = derive_rng(cfg.seed, _STREAM_SPLIT).permutation(cfg.n_identities)
    train_ids = set(int(i) for i in order[: cfg.n_train_identities])

    train, query, gallery = [], [], []
    for pid in range(cfg.n_identities):
        cam0 = int(derive_rng(cfg.seed, _STREAM_IDENTITY, pid, 1).integers(cfg.n_cameras))
        for j in range(cfg.sequences_per_identity):
            seq = _make_sequence(cfg, pid, j, (cam0 + j) % cfg.n_cameras, identities[pid],
                                 backgrounds, gains)
            if pid in train_ids:
                train.append(seq)
            elif j < cfg.queries_per_identity:
                query.append(seq)
            else:
                gallery.append(seq)
    return Dataset(cfg, train, query, gallery, identities, backgrounds)


def _make_sequence(cfg, pid, j, camera, ident, backgrounds, gains, spatial=None, temporal_on=None):
    c, h, w = cfg.image_size
    T = cfg.frames_per_sequence
    rng = derive_rng(cfg.seed, _STREAM_SEQUENCE, pid, j)
    temporal = _draw_temporal(rng, cfg.temporal_patterns, T, (h, w))
    steps = rng.integers(-1, 2, T)
    dx = np.clip(np.cumsum(steps) + int(rng.integers(-1, 2)), -2, 2)
    noise = (rng.standard_normal((T, c, h, w)) * cfg.noise_std).astype(np.float32)
    bg = backgrounds[camera % len(backgrounds)]
    spatial = cfg.spatial_distractors if spatial is None else spatial
    temporal_on = cfg.temporal_distractors if temporal_on is None else temporal_on
    frames = render_sequence(ident, bg, gains[camera], temporal, dx, noise, cfg, spatial, temporal_on)
    if not temporal_on:
        temporal = {**temporal, "pattern": "none", "corrupted": [False] * T}
    truth = {
        "pattern": temporal["pattern"],
        "corrupted": temporal["corrupted"],
        "occluder": temporal["occluder"],
        "background": bg["index"] if spatial else None,
        "background_box": bg["box"] if spatial else None,
        "person_dx": [int(v) for v in dx],
        "sequence_index": j,
    }
    return VideoSequence(frames, pid, camera, truth)


def clean_render(dataset: Dataset, seq: VideoSequence) -> np.ndarray:
    """The same sequence rendered without any spatial or temporal distractor."""
    cfg = dataset.config
    return _make_sequence(cfg, seq.identity, seq.truth["sequence_index"], seq.camera,
                          dataset.identities[seq.identity], dataset.backgrounds,
                          _camera_gains(cfg), spatial=False, temporal_on=False).frames


def frame_masks(dataset: Dataset, seq: VideoSequence, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel masks ``(person, distractor)`` for frame ``t``; they never overlap.

    Hidden people (disappear pattern) have an empty person mask; occluded
    regions are removed from both masks.
    """
    _, h, w = dataset.config.image_size
    dx = seq.truth["person_dx"][t]
    ident = dataset.identities[seq.identity]
    parts = person_mask(ident, dx, (h, w))
    person = parts["head"] | parts["torso"] | parts["legs"]
    corrupted = seq.truth["corrupted"][t]
    pattern = seq.truth["pattern"]
    if corrupted and pattern == "disappear_end":
        person = np.zeros_like(person)
    occluded = np.zeros((h, w), dtype=bool)
    if corrupted and pattern in ("occlude_first", "occlude_mid"):
        occluded = occluder_mask(seq.truth["occluder"], dx, (h, w))
    if seq.truth.get("background") is None:
        distractor = np.zeros((h, w), dtype=bool)
    else:
        _, distractor = render_background(dataset.backgrounds[seq.truth["background"]], (h, w))
    return person & ~occluded, distractor & ~person & ~occluded


# -- sampling ----------------------------------------------------------------

def loop_pad(n: int, L: int) -> list[int]:
    return [i % n for i in range(max(n, L))]


def chunk_bounds(n: int, L: int) -> list[tuple[int, int]]:
    """L contiguous chunks of ``n >= L`` items; remainder goes to the leading chunks."""
    base, extra = divmod(n, L)
    bounds, start = [], 0
    for c in range(L):
        size = base + (1 if c < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def rrs_indices(n: int, L: int, mode: str = "test", rng: np.random.Generator | None = None) -> list[int]:
    """Restricted random sampling: one frame per chunk (random in train, first in test)."""
    if n < 1:
        raise ValueError("cannot sample from an empty sequence")
    if L < 1:
        raise ValueError("L must be positive")
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    padded = loop_pad(n, L)
    if mode == "train" and rng is None:
        raise ValueError("train-mode sampling needs an rng")
    picks = []
    for lo, hi in chunk_bounds(len(padded), L):
        pos = lo if mode == "test" else int(rng.integers(lo, hi))
        picks.append(padded[pos])
    return picks


def rrs_sample(seq, L: int, mode: str = "test", rng: np.random.Generator | None = None) -> np.ndarray:
    frames = seq.frames if isinstance(seq, VideoSequence) else np.asarray(seq)
    return frames[rrs_indices(len(frames), L, mode, rng)]


def all_frames_chunk_indices(n: int, L: int) -> list[list[int]]:
    """Consecutive length-L chunks; the final partial chunk cycles its own frames."""
    if n < 1:
        raise ValueError("cannot chunk an empty sequence")
    if L < 1:
        raise ValueError("L must be positive")
    chunks = []
    for start in range(0, n, L):
        idx = list(range(start, min(n, start + L)))
        chunks.append([idx[i % len(idx)] for i in range(L)])
    return chunks


def all_frames_chunks(seq, L: int) -> list[np.ndarray]:
    frames = seq.frames if isinstance(seq, VideoSequence) else np.asarray(seq)
    return [frames[idx] for idx in all_frames_chunk_indices(len(frames), L)]


# -- augmentation -------------------------------------------------------------

def hflip(frame: np.ndarray) -> np.ndarray:
    return frame[..., ::-1].copy()


def erase_box(h: int, w: int, rng: np.random.Generator, area=(0.02, 0.4), aspect=(0.3, 3.3),
              attempts: int = 100) -> tuple[int, int, int, int] | None:
    """Random-erasing rectangle ``(top, left, height, width)`` inside an ``h x w`` image."""
    for _ in range(attempts):
        target = rng.uniform(*area) * h * w
        ratio = rng.uniform(*aspect)
        eh = int(round(np.sqrt(target * ratio)))
        ew = int(round(np.sqrt(target / ratio)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            return top, left, eh, ew
    return None


def augment(frame: np.ndarray, rng: np.random.Generator, flip: bool | None = None,
            flip_prob: float = 0.5, erase_prob: float = 0.5) -> np.ndarray:
    """Horizontal flip then random erasing with uniform-noise fill.

    Pass ``flip`` to impose a decision shared across a sequence.
    """
    out = np.array(frame, dtype=np.float32, copy=True)
    if flip is None:
        flip = rng.random() < flip_prob
    if flip:
        out = hflip(out)
    if erase_prob > 0 and rng.random() < erase_prob:
        box = erase_box(out.shape[-2], out.shape[-1], rng)
        if box is not None:
            t, l, eh, ew = box
            out[..., t:t + eh, l:l + ew] = rng.random((out.shape[0], eh, ew)).astype(np.float32)
    return out


def augment_sequence(frames: np.ndarray, rng: np.random.Generator, flip_prob: float = 0.5,
                     erase_prob: float = 0.5) -> np.ndarray:
    flip = bool(rng.random() < flip_prob)
    return np.stack([augment(f, rng, flip=flip, erase_prob=erase_prob) for f in frames])


# -- export / import ----------------------------------------------------------

MANIFEST_VERSION = 1


def _seq_record(seq: VideoSequence, split: str, filename: str) -> dict:
    return {
        "split": split,
        "file": filename,
        "identity": seq.identity,
        "camera": seq.camera,
        "n_frames": len(seq.frames),
        "truth": seq.truth,
    }


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write ``manifest.json`` plus one little-endian float32 pixel file per sequence."""
    directory = Path(directory)
    (directory / "sequences").mkdir(parents=True, exist_ok=True)
    records = []
    k = 0
    for split in ("train", "query", "gallery"):
        for seq in getattr(dataset, split):
            name = f"sequences/{k:05d}.f32"
            np.ascontiguousarray(seq.frames, dtype="<f4").tofile(directory / name)
            records.append(_seq_record(seq, split, name))
            k += 1
    manifest = {
        "format_version": MANIFEST_VERSION,
        "config": dataset.config.to_dict(),
        "frame_shape": list(dataset.config.image_size),
        "identities": {str(k): v for k, v in dataset.identities.items()},
        "backgrounds": dataset.backgrounds,
        "sequences": records,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported dataset manifest version {manifest.get('format_version')}")
    cfg = SynthConfig(**manifest["config"])
    shape = tuple(manifest["frame_shape"])
    splits: dict[str, list[VideoSequence]] = {"train": [], "query": [], "gallery": []}
    for rec in manifest["sequences"]:
        raw = np.fromfile(path.parent / rec["file"], dtype="<f4")
        frames = raw.reshape(rec["n_frames"], *shape).astype(np.float32)
        splits[rec["split"]].append(VideoSequence(frames, rec["identity"], rec["camera"], rec["truth"]))
    identities = {int(k): v for k, v in manifest["identities"].items()}
    return Dataset(cfg, splits["train"], splits["query"], splits["gallery"], identities,
                   manifest["backgrounds"])
