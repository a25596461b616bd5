import math

import numpy as np
import pytest

from vpqa.errors import ConfigError, InputError
from vpqa.scoring import LogitVector, TokenSets, quality_score, quality_score_gradient

from oracles import central_difference

PN = TokenSets(positive=(0, 1), negative=(2, 3))


def random_case(rng, max_v=12):
    v = int(rng.integers(4, max_v + 1))
    ids = rng.permutation(v)
    npos = int(rng.integers(1, v - 1))
    nneg = int(rng.integers(1, v - npos))
    sets = TokenSets(tuple(ids[:npos]), tuple(ids[npos:npos + nneg]))
    logits = rng.normal(scale=3.0, size=v)
    return logits, sets


class TestTokenSets:
    def test_overlap_rejected(self):
        with pytest.raises(ConfigError):
            TokenSets((0, 1), (1, 2))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            TokenSets((), (1,))

    def test_duplicate_rejected(self):
        with pytest.raises(ConfigError):
            TokenSets((0, 0), (1,))

    def test_out_of_vocab(self):
        with pytest.raises(ConfigError):
            TokenSets((0,), (5,)).validate_against(4)


class TestQualityScore:
    def test_symmetric_logits_give_half(self):
        assert quality_score(np.ones(4), PN) == pytest.approx(0.5, abs=1e-15)

    def test_three_to_one_odds(self):
        logits = np.array([math.log(3.0), math.log(1.0)])
        sets = TokenSets((0,), (1,))
        assert quality_score(logits, sets) == pytest.approx(0.75, abs=1e-12)

    def test_two_two_zero_zero(self):
        assert quality_score(np.array([2.0, 2.0, 0.0, 0.0]), PN) == pytest.approx(
            0.8807970779778824, abs=1e-14
        )

    def test_huge_logits_stable(self):
        s = quality_score(np.array([1e4, 1e4 - 1, -1e4, 2e3]), PN)
        assert 0.0 < s < 1.0 and np.isfinite(s)

    def test_accepts_logit_vector(self):
        lv = LogitVector(values=[2.0, 2.0, 0.0, 0.0], position=7)
        assert quality_score(lv, PN) == quality_score(np.array([2.0, 2.0, 0.0, 0.0]), PN)

    def test_shift_invariance(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            logits, sets = random_case(rng)
            shifted = logits.copy()
            c = rng.normal(scale=10.0)
            ids = list(sets.positive + sets.negative)
            shifted[ids] += c
            assert quality_score(shifted, sets) == pytest.approx(
                quality_score(logits, sets), abs=1e-12
            )

    def test_open_interval(self):
        rng = np.random.default_rng(23)
        for _ in range(500):
            logits, sets = random_case(rng)
            s = quality_score(logits, sets)
            assert 0.0 < s < 1.0

    def test_monotone_in_single_logits(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            logits, sets = random_case(rng)
            s = quality_score(logits, sets)
            up = logits.copy()
            j = sets.positive[int(rng.integers(len(sets.positive)))]
            up[j] += abs(rng.normal()) + 1e-3
            assert quality_score(up, sets) > s
            down = logits.copy()
            k = sets.negative[int(rng.integers(len(sets.negative)))]
            down[k] += abs(rng.normal()) + 1e-3
            assert quality_score(down, sets) < s

    def test_swapping_sets_complements(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            logits, sets = random_case(rng)
            swapped = TokenSets(sets.negative, sets.positive)
            assert quality_score(logits, swapped) == pytest.approx(
                1.0 - quality_score(logits, sets), abs=1e-12
            )

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            quality_score(np.array([1.0, np.nan, 0.0, 0.0]), PN)
        with pytest.raises(InputError):
            LogitVector(values=[np.inf, 0.0, 0.0, 0.0])

    def test_id_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            quality_score(np.zeros(3), PN)


class TestQualityScoreGradient:
    def test_single_pair_equal_logits(self):
        sets = TokenSets((0,), (1,))
        grad = quality_score_gradient(np.zeros(2), sets)
        np.testing.assert_allclose(grad, [0.25, -0.25], atol=1e-15)

    def test_gradient_sums_to_zero(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            logits, sets = random_case(rng)
            grad = quality_score_gradient(logits, sets)
            assert abs(grad.sum()) < 1e-15
            untouched = np.setdiff1d(
                np.arange(logits.size), np.array(sets.positive + sets.negative)
            )
            assert not grad[untouched].any()

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        for _ in range(100):
            logits, sets = random_case(rng)
            analytic = quality_score_gradient(logits, sets)

            def f(values, sets=sets):
                return quality_score(values, sets)

            numeric = central_difference(f, logits.copy(), step=1e-5)
            denom = np.maximum(np.abs(numeric), 1e-8)
            assert (np.abs(analytic - numeric) / denom).max() < 1e-6

    def test_explicit_case(self):
        logits = np.array([2.0, 2.0, 0.0, 0.0])
        analytic = quality_score_gradient(logits, PN)
        numeric = central_difference(lambda v: quality_score(v, PN), logits.copy(), step=1e-5)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6)
