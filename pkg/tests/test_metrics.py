"""Metric tests: sort-based median oracles, window locality, scale
covariance, rolling-median smoothing, quadrant labels."""

import numpy as np
import pytest

from hemirl.errors import UsageError
from hemirl.metrics import (
    MetricResult,
    MetricWindow,
    RewardSeries,
    frr,
    irr,
    median_over_seeds,
    quadrant_label,
    quadrant_summary,
    rolling_median,
)


def median_oracle(values):
    """Sort-based median: middle element, or average of the two central."""
    s = sorted(values)
    n = len(s)
    if n % 2 == 1:
        return s[n // 2]
    return 0.5 * (s[n // 2 - 1] + s[n // 2])


def series(rewards, steps=None, **kw):
    rewards = np.asarray(rewards, dtype=np.float64)
    if steps is None:
        steps = np.arange(1, len(rewards) + 1)
    return RewardSeries(steps, rewards, **kw)


class TestRewardSeries:
    def test_rejects_non_increasing_steps(self):
        with pytest.raises(UsageError):
            RewardSeries(np.array([1, 1, 2]), np.zeros(3))
        with pytest.raises(UsageError):
            RewardSeries(np.array([3, 2, 1]), np.zeros(3))

    def test_rejects_empty_or_ragged(self):
        with pytest.raises(UsageError):
            RewardSeries(np.array([], dtype=int), np.array([]))
        with pytest.raises(UsageError):
            RewardSeries(np.array([1, 2]), np.zeros(3))

    def test_window_validation(self):
        with pytest.raises(UsageError):
            MetricWindow(0, 10)
        with pytest.raises(UsageError):
            MetricWindow(11, 10)
        MetricWindow(10, 10)


class TestIRR:
    def test_identical_series_gives_one(self):
        s = series([3.0, 5.0, 4.0, 6.0])
        assert irr(s, s, MetricWindow(4, 4)).value == 1.0

    def test_arithmetic_example(self):
        r = irr(series([2.0, 4.0, 6.0]), series([1.0, 2.0, 3.0]), MetricWindow(3, 3))
        assert r.value == 2.0
        assert r.defined

    def test_matches_sort_oracle_on_random_series(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 50, 999, 10_000):
            a = rng.uniform(0.1, 10.0, size=n)
            b = rng.uniform(0.1, 10.0, size=n)
            got = irr(series(a), series(b), MetricWindow(n, n)).value
            assert got == pytest.approx(median_oracle(a) / median_oracle(b), rel=1e-12)

    def test_uses_only_first_k_steps(self):
        a = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        b = np.ones(5)
        w = MetricWindow(3, 5)
        base = irr(series(a), series(b), w).value
        a2 = a.copy()
        a2[3:] = 1e9
        b2 = b.copy()
        b2[3:] = -7.0
        assert irr(series(a2), series(b2), w).value == base

    def test_scale_covariance(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.5, 5.0, size=31)
        b = rng.uniform(0.5, 5.0, size=31)
        w = MetricWindow(20, 31)
        base = irr(series(a), series(b), w).value
        for c in (0.001, 3.0, 1e6):
            scaled = irr(series(c * a), series(c * b), w).value
            assert scaled == pytest.approx(base, rel=1e-12)

    def test_nonpositive_denominator_flagged(self):
        r = irr(series([1.0, 2.0]), series([0.0, 0.0]), MetricWindow(2, 2))
        assert not r.defined
        assert np.isnan(r.value)
        r2 = irr(series([1.0]), series([-3.0]), MetricWindow(1, 1))
        assert not r2.defined

    def test_empty_window_is_usage_error(self):
        s = series([1.0, 2.0], steps=np.array([50, 60]))
        with pytest.raises(UsageError):
            irr(s, s, MetricWindow(10, 100))

    def test_even_window_averages_central_pair(self):
        got = irr(series([2.0, 4.0, 6.0, 100.0]), series([1.0, 1.0, 1.0, 1.0]),
                  MetricWindow(4, 4))
        assert got.value == 5.0


class TestFRR:
    def test_identical_series_gives_one(self):
        s = series([3.0, 5.0, 4.0, 6.0])
        assert frr(s, s, MetricWindow(2, 4)).value == 1.0

    def test_half_ratio(self):
        num = series([1.0, 1.0, 2.0, 2.0])
        den = series([1.0, 1.0, 4.0, 4.0])
        assert frr(num, den, MetricWindow(2, 4)).value == 0.5

    def test_uses_only_last_k_steps(self):
        a = np.array([9.0, 9.0, 1.0, 2.0, 3.0])
        w = MetricWindow(2, 5)  # keeps steps >= 3, i.e. the last three samples
        base = frr(series(a), series(np.ones(5)), w).value
        a2 = a.copy()
        a2[:2] = -1e9
        assert frr(series(a2), series(np.ones(5)), w).value == base

    def test_differs_from_irr_on_monotone_series(self):
        a = series(np.arange(1.0, 11.0))
        b = series(np.ones(10))
        w = MetricWindow(4, 10)
        early = irr(a, b, w).value
        late = frr(a, b, w).value
        assert early != late
        assert late > early

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0.1, 9.0, size=101)
        b = rng.uniform(0.1, 9.0, size=101)
        w = MetricWindow(37, 101)
        got = frr(series(a), series(b), w).value
        # steps are 1..101; t >= T - k = 64 keeps indices 63..100
        want = median_oracle(a[63:]) / median_oracle(b[63:])
        assert got == pytest.approx(want, rel=1e-12)


class TestRollingMedian:
    def test_constant_series_unchanged(self):
        s = series(np.full(20, 4.2))
        out = rolling_median(s, 5)
        np.testing.assert_array_equal(out.rewards, s.rewards)
        np.testing.assert_array_equal(out.steps, s.steps)

    def test_single_outlier_removed(self):
        vals = np.full(50, 2.0)
        vals[25] = 500.0
        out = rolling_median(series(vals), 7)
        assert np.max(np.abs(out.rewards[np.arange(50) != 25] - 2.0)) == 0.0
        assert out.rewards[25] == 2.0

    def test_matches_brute_force_window(self):
        rng = np.random.default_rng(3)
        vals = rng.normal(size=200)
        out = rolling_median(series(vals), 5)
        for i in range(200):
            lo = max(0, i - 4)  # steps are 1..200, window (step-5, step]
            assert out.rewards[i] == pytest.approx(median_oracle(vals[lo:i + 1]),
                                                   rel=1e-12)

    def test_respects_step_gaps(self):
        s = RewardSeries(np.array([1, 2, 100]), np.array([5.0, 7.0, 9.0]))
        out = rolling_median(s, 10)
        # the sample at step 100 is alone in its window
        np.testing.assert_array_equal(out.rewards, [5.0, 6.0, 9.0])

    def test_invalid_window(self):
        with pytest.raises(UsageError):
            rolling_median(series([1.0]), 0)

    def test_partial_windows_average_even_counts(self):
        out = rolling_median(series([1.0, 3.0]), 10)
        np.testing.assert_array_equal(out.rewards, [1.0, 2.0])


class TestQuadrants:
    def test_examples(self):
        ok = MetricResult(1.0, True)
        assert quadrant_label(MetricResult(1.5, True), MetricResult(1.1, True)) \
            == "upper-right"
        assert quadrant_label(MetricResult(0.8, True), MetricResult(0.7, True)) \
            == "lower-left"
        assert quadrant_label(MetricResult(1.2, True), MetricResult(0.9, True)) \
            == "lower-right"
        assert quadrant_label(MetricResult(0.9, True), ok) == "upper-left"

    def test_boundaries_follow_objectives(self):
        # objective 1 needs IRR > 1; objective 2 needs FRR >= 1
        assert quadrant_label(MetricResult(1.0, True), MetricResult(1.0, True)) \
            == "upper-left"
        assert quadrant_label(MetricResult(1.0 + 1e-12, True),
                              MetricResult(1.0, True)) == "upper-right"

    def test_undefined_propagates(self):
        bad = MetricResult(float("nan"), False, "zero denominator")
        good = MetricResult(1.5, True)
        summary = quadrant_summary({"reach": (bad, good), "push": (good, good)})
        assert summary["reach"] == "undefined"
        assert summary["push"] == "upper-right"

    def test_empty_summary_rejected(self):
        with pytest.raises(UsageError):
            quadrant_summary({})

    def test_median_over_seeds(self):
        vals = [MetricResult(v, True) for v in (0.5, 2.0, 1.5, 9.0, 1.0)]
        assert median_over_seeds(vals).value == 1.5
        vals.append(MetricResult(float("nan"), False))
        assert not median_over_seeds(vals).defined
        with pytest.raises(UsageError):
            median_over_seeds([])
