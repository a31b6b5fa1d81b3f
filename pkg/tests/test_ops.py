import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsgp import ops
from tsgp.errors import (
    EmptyMap,
    KernelLongerThanPatch,
    KernelTooShort,
    OutOfRange,
    PatchTooShort,
    PatchTooSmall,
    TooShort,
)

from oracles import direct_dft_magnitude, slice_patches, statis_hand

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def series(min_size=2, max_size=64):
    return st.integers(min_size, max_size).flatmap(lambda n: arrays(np.float64, n, elements=finite))


class TestSegDetect:
    def test_hand_cases(self):
        assert ops.seg_detect([5, 6, 7, 8], 2, 3).tolist() == [7, 8]
        assert ops.seg_detect([1, 2, 3], 2, 1).tolist() == [1, 2]

    def test_case_study_window(self):
        x = np.arange(1, 141, dtype=float)  # value equals 1-based position
        seg = ops.seg_detect(x, 21, 103)
        assert seg[0] == 103 and seg[-1] == 123 and seg.size == 21

    @pytest.mark.parametrize("length,start", [(0, 1), (4, 1), (2, 4), (2, 0)])
    def test_out_of_range(self, length, start):
        with pytest.raises(OutOfRange):
            ops.seg_detect([1, 2, 3, 4], length, start)

    def test_output_is_independent_of_source(self):
        x = np.array([1.0, 2.0, 3.0])
        seg = ops.seg_detect(x, 2, 1)
        x[0] = 99
        assert seg[0] == 1

    @given(st.data())
    def test_slice_composition(self, data):
        x = np.arange(30, dtype=float)
        l1 = data.draw(st.integers(2, 29))
        s1 = data.draw(st.integers(1, 30 - l1 + 1))
        l2 = data.draw(st.integers(1, l1 - 1))
        s2 = data.draw(st.integers(1, l1 - l2 + 1))
        nested = ops.seg_detect(ops.seg_detect(x, l1, s1), l2, s2)
        assert nested.tolist() == ops.seg_detect(x, l2, s1 + s2 - 1).tolist()

    def test_batched(self):
        X = np.arange(12.0).reshape(3, 4)
        assert ops.seg_detect(X, 2, 2).tolist() == [[1, 2], [5, 6], [9, 10]]


class TestDomFreq:
    def test_dc_only(self):
        np.testing.assert_allclose(ops.dom_freq([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-12)

    def test_cosine(self):
        np.testing.assert_allclose(ops.dom_freq([1, 0, -1, 0]), [0, 2, 0, 2], atol=1e-12)

    def test_matches_direct_sum(self, rng):
        x = rng.normal(size=16)
        np.testing.assert_allclose(ops.dom_freq(x), direct_dft_magnitude(x), rtol=1e-9, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(series(2, 40))
    def test_parseval_and_symmetry(self, x):
        f = ops.dom_freq(x)
        n = len(x)
        energy = n * np.sum(x * x)
        assert abs(np.sum(f * f) - energy) <= 1e-9 * max(energy, 1.0)
        scale = max(1.0, f.max())
        for u in range(1, n):
            assert abs(f[u] - f[n - u]) <= 1e-9 * scale


class TestDomDiff:
    def test_hand_cases(self):
        assert ops.dom_diff([1, 3, 2]).tolist() == [2, -1]
        assert ops.dom_diff([0, 2, 4, 6]).tolist() == [2, 2, 2]

    def test_too_short(self):
        with pytest.raises(TooShort):
            ops.dom_diff([7])

    @given(series(), finite)
    def test_constant_and_shift(self, x, c):
        assert np.all(ops.dom_diff(np.full_like(x, c)) == 0)
        # exact for integer-valued data; float rounding otherwise allows a few ulps
        base, shifted = ops.dom_diff(x), ops.dom_diff(x + c)
        assert np.allclose(shifted, base, rtol=0, atol=1e-9 * (1 + np.abs(x).max() + abs(c)))
        ints = np.round(x)
        assert np.array_equal(ops.dom_diff(ints + 7.0), ops.dom_diff(ints))


class TestPatching:
    def test_hundred_by_four(self):
        assert ops.patch_geometry(100, 4) == (25, 12, 7)
        ps = ops.ada_patch(np.arange(100.0), 4)
        assert ps.n_patches == 7 and ps.patch_len == 25

    def test_eight_by_two(self):
        ps = ops.ada_patch(np.arange(8.0), 2)
        assert (ps.patch_len, ps.stride, ps.n_patches) == (4, 2, 3)
        assert ps.starts == [0, 2, 4]
        assert ps.patches[2].tolist() == [4, 5, 6, 7]

    def test_too_small(self):
        with pytest.raises(PatchTooSmall):
            ops.ada_patch(np.zeros(64), 64)

    def test_unknown_divisor(self):
        with pytest.raises(OutOfRange):
            ops.ada_patch(np.zeros(64), 3)

    @settings(max_examples=80)
    @given(st.integers(4, 300), st.sampled_from(ops.DIVISORS))
    def test_patches_lie_inside_source(self, n, divisor):
        if n // divisor < 2:
            return
        ps = ops.ada_patch(np.arange(float(n)), divisor)
        assert ps.n_patches == (n - ps.patch_len) // ps.stride + 1
        assert ps.starts[-1] + ps.patch_len <= n
        for start, patch in zip(ps.starts, ps.patches):
            assert patch[0] == start


class TestKernels:
    def test_inc_dec_length_two(self):
        r = 1 / math.sqrt(2)
        np.testing.assert_allclose(ops.make_shape_kernel("Inc", 2).weights, [-r, r])
        np.testing.assert_allclose(ops.make_shape_kernel("Dec", 2).weights, [r, -r])

    def test_peak_three(self):
        w = ops.make_shape_kernel("Peak", 3).weights
        assert w[1] > 0 and w[0] < 0 and w[0] == pytest.approx(w[2])
        assert abs(w.sum()) < 1e-12 and np.linalg.norm(w) == pytest.approx(1)

    @pytest.mark.parametrize("kind", ops.SHAPE_KINDS)
    @pytest.mark.parametrize("c", [3, 4, 8, 16, 33])
    def test_zero_mean_unit_norm(self, kind, c):
        w = ops.make_shape_kernel(kind, c).weights
        assert abs(w.sum()) < 1e-12
        assert np.linalg.norm(w) == pytest.approx(1)

    @pytest.mark.parametrize("c", [2, 5, 16])
    def test_dec_is_negated_inc(self, c):
        assert np.array_equal(ops.make_shape_kernel("Dec", c).weights, -ops.make_shape_kernel("Inc", c).weights)

    def test_too_short(self):
        with pytest.raises(KernelTooShort):
            ops.make_shape_kernel("Peak", 2)
        with pytest.raises(KernelTooShort):
            ops.make_shape_kernel("Inc", 1)

    def test_weights_are_read_only(self):
        with pytest.raises(ValueError):
            ops.make_shape_kernel("Inc", 4).weights[0] = 1.0


class TestConvolution:
    def test_hand_cases(self):
        assert ops.convolve_valid([1, 2, 3], [1, -1]).tolist() == [-1, -1]
        assert ops.convolve_valid([1, 0, 0, 1], [1, 1]).tolist() == [1, 0, 1]
        assert np.all(ops.convolve_valid(np.zeros(4), ops.make_shape_kernel("Peak", 3)) == 0)

    def test_longer_than_patch(self):
        with pytest.raises(KernelLongerThanPatch):
            ops.convolve_valid([1, 2], [1, 0, -1])

    @settings(max_examples=50)
    @given(series(2, 40), st.integers(2, 12))
    def test_matches_loop(self, p, c):
        if c > p.size:
            return
        w = np.linspace(-1, 1, c)
        expected = [sum(p[j + i] * w[i] for i in range(c)) for j in range(p.size - c + 1)]
        np.testing.assert_allclose(ops.convolve_valid(p, w), expected, atol=1e-9)


class TestPool:
    def test_hand_cases(self):
        assert ops.pool([1, -1, 2, 0]) == (0.5, 2, 0.5)
        assert ops.pool([-3]) == (0, -3, -3)
        assert ops.pool([0, 0]) == (0, 0, 0)

    def test_empty(self):
        with pytest.raises(EmptyMap):
            ops.pool([])

    @given(series(1, 30))
    def test_bounds(self, r):
        ppv, mx, mean = ops.pool(r)
        assert 0 <= ppv <= 1
        assert r.min() - 1e-9 <= mean <= mx + 1e-9


class TestShapeExtraction:
    def test_dimension_forty(self):
        assert ops.kernel_lengths(40, 0.5) == [2, 4, 8, 16]
        assert ops.extract_shape(np.random.default_rng(0).normal(size=40), "Inc", 0.5).size == 12

    def test_fallback(self):
        assert ops.kernel_lengths(4, 0.25) == [2]
        assert ops.extract_shape(np.arange(4.0), "Dec", 0.25).size == 3

    @pytest.mark.parametrize("kind", ops.SHAPE_KINDS)
    def test_zero_patch(self, kind):
        assert np.all(ops.extract_shape(np.zeros(20), kind, 0.75) == 0)

    def test_peak_needs_three(self):
        with pytest.raises(PatchTooShort):
            ops.extract_shape(np.zeros(2), "Peak", 0.5)
        assert ops.extract_shape(np.array([0.0, 1.0, 0.0]), "Peak", 0.25).size == 3

    def test_layout_is_ppv_max_mean_per_kernel(self, rng):
        p = rng.normal(size=20)
        feats = ops.extract_shape(p, "Inc", 0.5)
        for i, c in enumerate(ops.kernel_lengths(20, 0.5)):
            r = ops.convolve_valid(p, ops.make_shape_kernel("Inc", c))
            assert tuple(feats[3 * i: 3 * i + 3]) == ops.pool(r)

    @settings(max_examples=40)
    @given(series(2, 50), st.sampled_from(ops.RATIOS))
    def test_dec_inc_antisymmetry(self, p, lam):
        for c in ops.kernel_lengths(p.size, lam):
            r_inc = ops.convolve_valid(p, ops.make_shape_kernel("Inc", c))
            r_dec = ops.convolve_valid(p, ops.make_shape_kernel("Dec", c))
            assert ops.pool(r_dec)[0] == ops.pool(-r_inc)[0]
            assert ops.pool(r_dec)[1] == -r_inc.min()


class TestStatisDist:
    def test_indices_hand_evaluated(self):
        assert (ops.statis_indices(8, 0.5) + 1).tolist() == [1, 3, 6, 8]
        p = [80, 10, 60, 30, 50, 20, 70, 40]
        assert ops.extract_statis_dist(p, 0.5).tolist() == [10, 30, 60, 80]

    def test_constant(self):
        assert np.all(ops.extract_statis_dist(np.full(9, 2.5), 0.75) == 2.5)

    def test_half_away_from_zero(self):
        assert ops.round_half_away(np.array([0.5, 1.5, 2.5, -0.5])).tolist() == [1, 2, 3, -1]

    def test_too_short(self):
        with pytest.raises(PatchTooShort):
            ops.extract_statis_dist([1.0], 0.5)

    @settings(max_examples=80)
    @given(series(2, 60), st.sampled_from(ops.RATIOS))
    def test_matches_hand_oracle_and_brackets(self, p, tau):
        out = ops.extract_statis_dist(p, tau)
        assert out.tolist() == statis_hand(p.tolist(), tau)
        assert np.all(np.diff(out) >= 0)
        assert out[0] == p.min() and out[-1] == p.max()
        assert out.size == ops.extractor_dim("StatisDist", p.size, tau)


class TestOverPatches:
    def test_dimension(self, rng):
        ps = ops.ada_patch(rng.normal(size=100), 8)  # 12-long patches, 7 of them
        f = ops.extract_over_patches(ps, lambda p: ops.extract_shape(p, "Inc", 0.75))
        assert f.size == ps.n_patches * 9

    def test_single_patch_identity(self, rng):
        x = rng.normal(size=30)
        f = ops.extract_over_patches(x, lambda p: ops.extract_statis_dist(p, 0.5))
        assert np.array_equal(f, ops.extract_statis_dist(x, 0.5))

    def test_slice_and_concatenate_oracle(self, rng):
        x = rng.normal(size=37)
        got = ops.extract_over_patches(ops.ada_patch(x, 2), lambda p: ops.extract_statis_dist(p, 0.5))
        expected = sum((statis_hand(s, 0.5) for s in slice_patches(x, 2)), [])
        assert got.tolist() == expected

    def test_batch_equals_rows(self, rng):
        X = rng.normal(size=(5, 64))
        extractor = lambda p: ops.extract_shape(p, "Peak", 0.5)  # noqa: E731
        batch = ops.extract_over_patches(ops.ada_patch(X, 4), extractor)
        for i in range(5):
            row = ops.extract_over_patches(ops.ada_patch(X[i], 4), extractor)
            np.testing.assert_array_equal(batch[i], row)
