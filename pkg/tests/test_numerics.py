import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnsim.numerics import (
    AttentionConfig,
    OpCounters,
    dense_attention,
    quantize,
    round_half_away,
    softmax_row,
)


def brute_force_attention(q, k, v, scale):
    """Explicit-loop reference, no vectorization, no tiling."""
    t, d = q.shape
    s, _ = k.shape
    out = np.zeros((t, d))
    for i in range(t):
        scores = [scale * sum(q[i][c] * k[j][c] for c in range(d)) for j in range(s)]
        mx = max(scores)
        exps = [math.exp(x - mx) for x in scores]
        total = sum(exps)
        for j in range(s):
            w = exps[j] / total
            for c in range(d):
                out[i][c] += w * v[j][c]
    return out


class TestSoftmaxRow:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax_row([1.0, 1.0]), [0.5, 0.5], atol=1e-15)

    def test_large_inputs_stable(self):
        out = softmax_row([1000.0, 1000.0])
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_direct_evaluation(self):
        np.testing.assert_allclose(softmax_row([0.0, math.log(3)]), [0.25, 0.75], atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax_row([])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            softmax_row([1.0, math.inf])

    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=64))
    def test_sums_to_one_nonnegative(self, xs):
        out = softmax_row(xs)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-12


class TestDenseAttention:
    def test_single_element(self):
        out = dense_attention([[1.0]], [[1.0]], [[1.0]], 1.0)
        np.testing.assert_allclose(out, [[1.0]], atol=1e-15)

    def test_zero_queries_give_column_mean(self):
        rng = np.random.default_rng(0)
        k = rng.normal(size=(6, 3))
        v = rng.normal(size=(6, 3))
        out = dense_attention(np.zeros((2, 3)), k, v, 1.0)
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(4, 4))
        k = rng.normal(size=(4, 4))
        v = rng.normal(size=(4, 4))
        scale = 0.5
        np.testing.assert_allclose(
            dense_attention(q, k, v, scale), brute_force_attention(q, k, v, scale),
            atol=1e-12,
        )

    def test_row_shift_invariance(self):
        # appending a ones column to K and a per-row constant column to Q adds
        # a constant to each pre-softmax row, which must not change the output
        rng = np.random.default_rng(2)
        q = rng.normal(size=(5, 4))
        k = rng.normal(size=(7, 4))
        v = rng.normal(size=(7, 4))
        shifts = rng.normal(size=(5, 1)) * 10
        q_aug = np.hstack([q, shifts])
        k_aug = np.hstack([k, np.ones((7, 1))])
        np.testing.assert_allclose(
            dense_attention(q, k, v, 1.0), dense_attention(q_aug, k_aug, v, 1.0),
            atol=1e-12,
        )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dense_attention(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros((4, 3)), 1.0)


class TestQuantize:
    def test_stated_rounding(self):
        qt = quantize(np.array([[-1.0, 0.5, 1.0]]), 8)
        np.testing.assert_array_equal(qt.data, [[-127, 64, 127]])
        assert qt.scale == pytest.approx(1 / 127)

    def test_all_zero(self):
        qt = quantize(np.zeros((2, 2)), 8)
        assert qt.scale == 1.0
        assert np.all(qt.data == 0)

    def test_single_element_maps_to_top_code(self):
        qt = quantize(np.array([[3.0]]), 8)
        np.testing.assert_array_equal(qt.data, [[127]])
        assert qt.scale == pytest.approx(3 / 127)

    def test_bitwidth_bounds(self):
        with pytest.raises(ValueError):
            quantize(np.ones((1, 1)), 3)
        with pytest.raises(ValueError):
            quantize(np.ones((1, 1)), 17)

    @given(
        st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=1, max_size=32),
        st.integers(min_value=4, max_value=16),
    )
    @settings(max_examples=60)
    def test_round_trip_within_half_scale(self, xs, width):
        m = np.array([xs])
        qt = quantize(m, width)
        err = np.abs(qt.dequantize() - m)
        assert err.max() <= qt.scale / 2 + 1e-12

    def test_round_half_away(self):
        assert round_half_away(0.5) == 1.0
        assert round_half_away(-0.5) == -1.0
        assert round_half_away(2.5) == 3.0
        assert round_half_away(-2.5) == -3.0


counters_strategy = st.builds(
    OpCounters,
    n_add=st.integers(0, 10**6),
    n_mul=st.integers(0, 10**6),
    n_cmp=st.integers(0, 10**6),
    n_div=st.integers(0, 10**6),
    n_exp=st.integers(0, 10**6),
    n_shift=st.integers(0, 10**6),
)


class TestOpCounters:
    def test_identity(self):
        c = OpCounters(n_add=3, n_exp=1)
        assert OpCounters.zero().merge(c) == c

    def test_fieldwise_sum(self):
        merged = OpCounters(n_add=1).merge(OpCounters(n_add=2, n_exp=3))
        assert merged == OpCounters(n_add=3, n_exp=3)

    @given(counters_strategy, counters_strategy)
    def test_commutative(self, a, b):
        assert a.merge(b) == b.merge(a)

    @given(counters_strategy, counters_strategy, counters_strategy)
    def test_associative(self, a, b, c):
        assert a.merge(b).merge(c) == a.merge(b.merge(c))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            OpCounters(n_add=-1)


class TestAttentionConfig:
    def test_tile_counts(self):
        cfg = AttentionConfig(seq_len=100, head_dim=8, n_queries=50, tile_rows=16, tile_cols=16)
        assert cfg.n_col_tiles == 7
        assert cfg.n_row_tiles == 4
        assert cfg.scale == pytest.approx(1 / math.sqrt(8))

    def test_hidden(self):
        assert AttentionConfig(seq_len=8, head_dim=4, n_heads=3).hidden == 12

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            AttentionConfig(seq_len=0, head_dim=8)
