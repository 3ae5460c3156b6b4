import numpy as np
import pytest

from localprompt.errors import (
    EmptyInputError,
    NonPositiveTemperatureError,
    ZeroNormVectorError,
)
from localprompt.numerics import (
    cosine_sim,
    softmax_T,
    topk_mean,
    topk_sum,
    topk_support,
)


class TestCosineSim:
    def test_identical(self):
        assert cosine_sim((1, 0, 0), (1, 0, 0)) == 1.0

    def test_orthogonal(self):
        assert cosine_sim((1, 0, 0), (0, 1, 0)) == 0.0

    def test_hand_value(self):
        # (1,1) vs (1,0) is 1/sqrt(2)
        assert cosine_sim((1, 1), (1, 0)) == pytest.approx(0.7071067811865476, abs=1e-9)

    def test_zero_norm_rejected(self):
        with pytest.raises(ZeroNormVectorError):
            cosine_sim((0, 0, 0), (1, 0, 0))
        with pytest.raises(ZeroNormVectorError):
            cosine_sim((1, 0), (1e-13, 0))

    def test_scale_invariance_and_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.standard_normal(6)
            b = rng.standard_normal(6)
            c = float(rng.uniform(0.1, 50))
            assert cosine_sim(a, c * a) == pytest.approx(1.0, abs=1e-12)
            assert cosine_sim(a, b) == pytest.approx(cosine_sim(b, a), abs=0)
            assert abs(cosine_sim(a, b)) <= 1.0 + 1e-12


class TestSoftmaxT:
    def test_uniform_input(self):
        out = softmax_T((0.5, 0.5, 0.5), 1.0)
        np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-12)

    def test_hand_value(self):
        # e^10 / (e^10 + 1)
        out = softmax_T((10.0, 0.0), 1.0)
        np.testing.assert_allclose(out, [0.9999546021312976, 4.5397868702434395e-05],
                                   atol=1e-6)

    def test_sums_to_one_across_temperatures(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            row = rng.uniform(-50, 50, size=rng.integers(1, 12))
            for T in (0.01, 1.0, 100.0):
                assert softmax_T(row, T).sum() == pytest.approx(1.0, abs=1e-9)

    def test_argmax_invariant_in_temperature(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            row = rng.standard_normal(8)  # ties have measure zero
            ref = int(np.argmax(softmax_T(row, 1.0)))
            for T in (0.01, 0.5, 100.0):
                assert int(np.argmax(softmax_T(row, T))) == ref
                assert int(np.argmax(row)) == ref

    def test_bad_temperature(self):
        for T in (0.0, -1.0):
            with pytest.raises(NonPositiveTemperatureError):
                softmax_T((1.0, 2.0), T)


class TestTopK:
    def test_sum_basic(self):
        assert topk_sum((3, 1, 2), 2) == 5.0

    def test_sum_clamps(self):
        assert topk_sum((3, 1, 2), 10) == 6.0

    def test_sum_duplicate_maxima(self):
        assert topk_sum((0.2, 0.8, 0.8, 0.1), 2) == pytest.approx(1.6)

    def test_mean_basic(self):
        assert topk_mean((3, 1, 2), 2) == 2.5
        assert topk_mean((5,), 3) == 5.0

    def test_reductions(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            xs = rng.standard_normal(rng.integers(1, 20))
            assert topk_sum(xs, 1) == pytest.approx(xs.max())
            assert topk_mean(xs, 1) == pytest.approx(xs.max())
            assert topk_sum(xs, len(xs)) == pytest.approx(xs.sum())
            assert topk_mean(xs, len(xs)) == pytest.approx(xs.mean())

    def test_monotone_in_elements(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            xs = rng.standard_normal(10)
            k = int(rng.integers(1, 11))
            base = topk_sum(xs, k)
            bumped = xs.copy()
            i = int(rng.integers(0, 10))
            bumped[i] += abs(rng.standard_normal()) + 0.01
            assert topk_sum(bumped, k) >= base

    def test_support_basic(self):
        np.testing.assert_array_equal(topk_support((3, 1, 2), 2), [0, 2])

    def test_support_tie_break_lowest_index(self):
        np.testing.assert_array_equal(topk_support((1, 1, 1), 2), [0, 1])
        np.testing.assert_array_equal(topk_support((0.2, 0.9, 0.9), 1), [1])

    def test_support_matches_sum(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            xs = rng.standard_normal(9)
            k = int(rng.integers(1, 12))
            idx = topk_support(xs, k)
            assert topk_sum(xs, k) == pytest.approx(xs[idx].sum())

    def test_empty_rejected(self):
        for fn in (topk_sum, topk_mean, topk_support):
            with pytest.raises(EmptyInputError):
                fn((), 2)

    def test_nonpositive_k_rejected(self):
        with pytest.raises(ValueError):
            topk_sum((1, 2), 0)
