import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stmn.autodiff import LSTMParams, Tensor, lstm_cell
from stmn.temporal_memory import (
    AttentionVector,
    MLPAttention,
    TemporalMemoryBank,
    address_temporal,
    aggregate,
    aggregate_pooled,
    encode_context,
    mlp_attention_baseline,
    synthesize_attention,
)

import oracles


def bank(D=4, N=3, L=6, seed=0):
    return TemporalMemoryBank(D, N, L, np.random.default_rng(seed), np.float64)


def maps(rng, L, D=4, H=2, W=2):
    return [Tensor(rng.standard_normal((D, H, W))) for _ in range(L)]


def test_initial_state():
    b = bank()
    np.testing.assert_array_equal(b.values.data, 0)
    np.testing.assert_allclose(np.linalg.norm(b.keys.data, axis=0), 1.0, atol=1e-12)


def test_context_zero_lstm():
    b = bank(L=3)
    b.lstm = LSTMParams.zeros(4, 4, np.float64)
    ctx = encode_context(maps(np.random.default_rng(0), 3), b)
    np.testing.assert_array_equal(ctx.data, 0)


def test_context_single_step():
    b = bank(L=1)
    m = maps(np.random.default_rng(1), 1)
    h, _ = lstm_cell(Tensor(m[0].data.mean(axis=(1, 2))), Tensor(np.zeros(4)), Tensor(np.zeros(4)), b.lstm)
    np.testing.assert_allclose(encode_context(m, b).data, h.data, atol=1e-12)


def test_context_order_sensitive():
    b = bank(L=3)
    m = maps(np.random.default_rng(2), 3)
    swapped = [m[1], m[0], m[2]]
    assert np.abs(encode_context(m, b).data - encode_context(swapped, b).data).max() > 1e-6


def test_context_length_check():
    with pytest.raises(ValueError):
        encode_context(maps(np.random.default_rng(0), 4), bank(L=6))


def test_context_batched_matches_list():
    b = bank(L=3)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 4, 2, 2))
    batched = encode_context(Tensor(x), b).data
    for s in range(2):
        single = encode_context([Tensor(x[s, i]) for i in range(3)], b).data
        np.testing.assert_allclose(batched[s], single, atol=1e-12)


def test_address_values():
    b = bank(D=2, N=1)
    np.testing.assert_allclose(address_temporal(Tensor([0.3, 0.4]), b).data, [1.0])
    b = bank(D=2, N=2)
    b.keys.data[...] = [[1.0, 0.0], [0.0, 1.0]]
    np.testing.assert_allclose(address_temporal(Tensor([5.0, 0.0]), b).data, [0.731059, 0.268941], atol=1e-6)
    b.keys.data[...] = [[1.0, 1.0], [2.0, 2.0]]
    np.testing.assert_allclose(address_temporal(Tensor([-1.0, 0.2]), b).data, [0.5, 0.5])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_address_scale_invariant(seed, c):
    b = bank(seed=seed)
    q = np.random.default_rng(seed).standard_normal(4)
    np.testing.assert_allclose(address_temporal(Tensor(q), b).data,
                               address_temporal(Tensor(q * c), b).data, atol=1e-6)


def test_address_matches_oracle():
    rng = np.random.default_rng(5)
    b = bank(D=6, N=5)
    for _ in range(10):
        q = rng.standard_normal(6)
        np.testing.assert_allclose(address_temporal(Tensor(q), b).data, oracles.address(q, b.keys.data), atol=1e-12)


def test_synthesize_values():
    b = bank(N=2, L=6)
    b.values.data[...] = 0
    b.values.data[0, 0] = 1.0
    b.values.data[1, 1] = 1.0
    np.testing.assert_allclose(synthesize_attention(Tensor([0.5, 0.5]), b).logits.data, [0.5, 0.5, 0, 0, 0, 0])
    np.testing.assert_allclose(synthesize_attention(Tensor([0.0, 1.0]), b).logits.data, b.values.data[:, 1])


def test_synthesize_constant_columns_uniform():
    b = bank(N=3, L=4)
    b.values.data[...] = 2.5
    attn = synthesize_attention(Tensor([0.2, 0.5, 0.3]), b)
    np.testing.assert_allclose(attn.logits.data, 2.5)
    np.testing.assert_allclose(attn.normalized.data, 0.25)


def test_synthesize_shape_mismatch():
    with pytest.raises(ValueError):
        synthesize_attention(Tensor([0.5, 0.5]), bank(N=3))


def test_aggregate_cases():
    rng = np.random.default_rng(7)
    refined = maps(rng, 3)
    pooled = np.stack([m.data.mean(axis=(1, 2)) for m in refined])
    np.testing.assert_allclose(aggregate(AttentionVector(Tensor(np.zeros(3))), refined).data, pooled.mean(0))
    sat = aggregate(AttentionVector(Tensor(np.array([0.0, 1000.0, 0.0]))), refined).data
    assert np.abs(sat - pooled[1]).max() < 1e-9
    one = aggregate(AttentionVector(Tensor(np.array([-7.0]))), refined[:1]).data
    np.testing.assert_allclose(one, pooled[0])


def test_aggregate_length_mismatch():
    with pytest.raises(ValueError):
        aggregate(AttentionVector(Tensor(np.zeros(2))), maps(np.random.default_rng(0), 3))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_attention_properties(seed, shift):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal(5) * 3
    a = AttentionVector(Tensor(logits)).normalized.data
    b = AttentionVector(Tensor(logits + shift)).normalized.data
    assert abs(a.sum() - 1) < 1e-6 and np.all((a > 0) & (a < 1))
    np.testing.assert_allclose(a, b, atol=1e-9)
    pooled = rng.standard_normal((5, 3))
    f = aggregate_pooled(AttentionVector(Tensor(logits)), Tensor(pooled)).data
    assert np.all(f >= pooled.min(0) - 1e-6) and np.all(f <= pooled.max(0) + 1e-6)


def test_attention_decoupled_from_person_maps():
    """Changing the refined maps while holding the temporal queries leaves the attention unchanged."""
    rng = np.random.default_rng(9)
    b = bank(L=3)
    b.values.data[...] = rng.standard_normal(b.values.shape)
    q = maps(rng, 3)
    attn1 = synthesize_attention(address_temporal(encode_context(q, b), b), b)
    _ = aggregate(attn1, maps(rng, 3))
    attn2 = synthesize_attention(address_temporal(encode_context(q, b), b), b)
    _ = aggregate(attn2, [Tensor(m.data * 5 + 1) for m in maps(rng, 3)])
    np.testing.assert_array_equal(attn1.normalized.data, attn2.normalized.data)


def test_mlp_zero_weights_uniform():
    mlp = MLPAttention(4, 3, 6, np.random.default_rng(0), np.float64)
    mlp.w1.data[...] = 0
    attn = mlp_attention_baseline(Tensor(np.ones(4)), mlp)
    np.testing.assert_array_equal(attn.logits.data, 0)
    np.testing.assert_allclose(attn.normalized.data, 1 / 6)


def test_mlp_hand_product():
    mlp = MLPAttention(2, 2, 2, np.random.default_rng(0), np.float64)
    mlp.w1.data[...] = [[1.0, -1.0], [0.5, 2.0]]
    mlp.w2.data[...] = [[2.0, 0.0], [1.0, 3.0]]
    q = np.array([1.0, 2.0])
    hidden = np.maximum(0, q @ mlp.w1.data)  # [2, 3]
    np.testing.assert_allclose(hidden, [2.0, 3.0])
    np.testing.assert_allclose(mlp_attention_baseline(Tensor(q), mlp).logits.data, [7.0, 9.0])


def test_mlp_parameter_count_matches_memory():
    D, N, L = 64, 5, 6
    mlp = MLPAttention(D, N, L, np.random.default_rng(0))
    b = TemporalMemoryBank(D, N, L, np.random.default_rng(0))
    assert mlp.weight_count() == b.keys.size + b.values.size == 350


def test_mlp_shape_mismatch():
    mlp = MLPAttention(4, 3, 6, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_attention_baseline(Tensor(np.ones(5)), mlp)
