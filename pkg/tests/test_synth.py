import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stmn.synth_data import (
    SynthConfig,
    all_frames_chunk_indices,
    all_frames_chunks,
    augment,
    augment_sequence,
    clean_render,
    erase_box,
    frame_masks,
    generate_dataset,
    hflip,
    load_dataset,
    rrs_indices,
    rrs_sample,
    save_dataset,
)

SMALL = dict(n_identities=20, sequences_per_identity=4, frames_per_sequence=12, seed=3)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(SynthConfig(**SMALL))


def test_rrs_test_indices():
    assert rrs_indices(12, 6) == [0, 2, 4, 6, 8, 10]
    assert rrs_indices(13, 6) == [0, 3, 5, 7, 9, 11]
    assert rrs_indices(4, 6) == [0, 1, 2, 3, 0, 1]


def test_rrs_train_containment_and_coverage():
    rng = np.random.default_rng(0)
    seen = [set() for _ in range(6)]
    for _ in range(1000):
        idx = rrs_indices(12, 6, "train", rng)
        for c, i in enumerate(idx):
            assert 2 * c <= i < 2 * c + 2
            seen[c].add(i)
    assert all(s == {2 * c, 2 * c + 1} for c, s in enumerate(seen))


def test_rrs_errors():
    with pytest.raises(ValueError):
        rrs_indices(0, 6)
    with pytest.raises(ValueError):
        rrs_indices(5, 0)
    with pytest.raises(ValueError):
        rrs_indices(12, 6, "train")
    with pytest.raises(ValueError):
        rrs_indices(12, 6, "eval")


def test_rrs_sample_frames():
    frames = np.arange(12)[:, None, None, None] * np.ones((12, 3, 2, 2))
    np.testing.assert_array_equal(rrs_sample(frames, 6)[:, 0, 0, 0], [0, 2, 4, 6, 8, 10])


def test_all_frames_chunking():
    assert all_frames_chunk_indices(12, 6) == [list(range(6)), list(range(6, 12))]
    assert all_frames_chunk_indices(6, 6) == [list(range(6))]
    chunks = all_frames_chunk_indices(14, 6)
    assert len(chunks) == 3 and chunks[-1] == [12, 13, 12, 13, 12, 13]
    assert all_frames_chunk_indices(4, 6) == [[0, 1, 2, 3, 0, 1]]
    with pytest.raises(ValueError):
        all_frames_chunk_indices(0, 6)
    frames = np.zeros((14, 3, 2, 2))
    assert [c.shape for c in all_frames_chunks(frames, 6)] == [(6, 3, 2, 2)] * 3


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_identities=3)
    with pytest.raises(ValueError):
        SynthConfig(n_cameras=1)
    with pytest.raises(ValueError):
        SynthConfig(temporal_patterns=("wobble",))
    with pytest.raises(ValueError):
        SynthConfig(frames_per_sequence=0)


def test_counts_and_splits(small):
    assert len(small.train) + len(small.query) + len(small.gallery) == 80
    train_ids = {s.identity for s in small.train}
    test_ids = {s.identity for s in small.query + small.gallery}
    assert not train_ids & test_ids
    assert {s.identity for s in small.query} <= {s.identity for s in small.gallery}
    for pid in range(20):
        cams = {s.camera for s in small.train + small.query + small.gallery if s.identity == pid}
        assert len(cams) >= 2


def test_generation_is_deterministic(small):
    again = generate_dataset(SynthConfig(**SMALL))
    for a, b in zip(small.train + small.query, again.train + again.query):
        assert a.frames.tobytes() == b.frames.tobytes() and a.truth == b.truth
    other = generate_dataset(SynthConfig(**{**SMALL, "seed": 4}))
    assert other.train[0].frames.tobytes() != small.train[0].frames.tobytes()


def test_background_identical_within_camera():
    ds = generate_dataset(SynthConfig(**{**SMALL, "noise_std": 0.0}))
    seqs = ds.train + ds.query + ds.gallery
    for cam in range(ds.config.n_cameras):
        same = [s for s in seqs if s.camera == cam]
        first = same[0]
        _, ref_mask = frame_masks(ds, first, 0)
        for s in same[1:]:
            _, mask = frame_masks(ds, s, 0)
            both = ref_mask & mask
            assert both.sum() > 10
            np.testing.assert_array_equal(s.frames[0][:, both], first.frames[0][:, both])


def test_truth_consistent_with_pixels(small):
    for seq in small.query + small.gallery:
        clean = clean_render(small, seq)
        for t, bad in enumerate(seq.corrupted):
            if bad:
                assert np.abs(seq.frames[t] - clean[t]).max() > 0.05


def test_masks_disjoint(small):
    for seq in small.query[:10]:
        for t in range(len(seq)):
            person, distractor = frame_masks(small, seq, t)
            assert not np.any(person & distractor)


def _nn_rank1(query, gallery):
    g = np.stack([v for v, _ in gallery])
    hits = 0
    for v, pid in query:
        d = ((g - v) ** 2).sum(axis=1)
        hits += gallery[int(np.argmin(d))][1] == pid
    return hits / len(query)


def test_task_solvable_and_distractors_matter(small):
    def vec(frames):
        return frames.mean(axis=0).ravel()
    clean_q = [(vec(clean_render(small, s)), s.identity) for s in small.query]
    clean_g = [(vec(clean_render(small, s)), s.identity) for s in small.gallery]
    raw_q = [(vec(s.frames), s.identity) for s in small.query]
    raw_g = [(vec(s.frames), s.identity) for s in small.gallery]
    clean, raw = _nn_rank1(clean_q, clean_g), _nn_rank1(raw_q, raw_g)
    assert clean > 0.9
    assert raw < clean
    # measured on this instance: background clutter dominates raw pixel distances
    assert (clean, raw) == (1.0, 0.0)


def test_save_load_round_trip(small, tmp_path):
    small_path = tmp_path / "ds"
    save_dataset(small, small_path)
    back = load_dataset(small_path)
    assert back.config == small.config
    for split in ("train", "query", "gallery"):
        for a, b in zip(getattr(small, split), getattr(back, split)):
            assert a.frames.tobytes() == b.frames.tobytes()
            assert (a.identity, a.camera, a.truth) == (b.identity, b.camera, b.truth)
    assert back.identities == small.identities


def test_flip_involution_and_disabled_erasing():
    frame = np.random.default_rng(0).random((3, 8, 4)).astype(np.float32)
    np.testing.assert_array_equal(hflip(hflip(frame)), frame)
    out = augment(frame, np.random.default_rng(1), flip=False, erase_prob=0.0)
    np.testing.assert_array_equal(out, frame)


def test_erase_box_inside_image():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        box = erase_box(32, 16, rng)
        if box is None:
            continue
        t, l, eh, ew = box
        assert 0 <= t and t + eh <= 32 and 0 <= l and l + ew <= 16 and eh > 0 and ew > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_sequence_flip_is_shared(seed):
    frames = np.random.default_rng(seed).random((4, 3, 8, 4)).astype(np.float32)
    out = augment_sequence(frames, np.random.default_rng(seed), erase_prob=0.0)
    flipped = [np.array_equal(o, hflip(f)) for o, f in zip(out, frames)]
    kept = [np.array_equal(o, f) for o, f in zip(out, frames)]
    assert all(flipped) or all(kept)
