import math

import numpy as np
import pytest
from scipy import stats

from nsfde.errors import DomainError
from nsfde.fractional_noise import TimeGrid
from nsfde.jump_noise import (
    Degenerate,
    Gaussian,
    JumpTrain,
    MarkSpaceSpec,
    TwoPoint,
    Uniform,
    compensated_sum,
    mark_sampler_from_dict,
    merge_trains,
    sample_jump_train,
)

SAMPLERS = [
    (Degenerate(1.5), 1.5, 2.25),
    (Uniform(-1.0, 3.0), 1.0, 7.0 / 3.0),
    (Gaussian(0.3, 2.0), 0.3, 4.09),
    (TwoPoint(-1.0, 0.25, 2.0), 1.25, 3.25),
]


class TestMarks:
    @pytest.mark.parametrize("sampler, mean, second", SAMPLERS)
    def test_closed_form_moments(self, sampler, mean, second):
        assert sampler.mean == pytest.approx(mean, rel=1e-14)
        assert sampler.second_moment == pytest.approx(second, rel=1e-14)

    @pytest.mark.parametrize("sampler, mean, second", SAMPLERS)
    def test_empirical_moments(self, sampler, mean, second):
        z = sampler.sample(np.random.default_rng(0), 200000)
        assert abs(z.mean() - mean) <= 5 * z.std() / math.sqrt(z.size) + 1e-12
        assert abs((z**2).mean() - second) <= 5 * (z**2).std() / math.sqrt(z.size) + 1e-12

    @pytest.mark.parametrize(
        "d",
        [{"kind": "degenerate", "z0": 2.0}, {"kind": "uniform", "a": 0, "b": 1}, {"kind": "gaussian"}, {"kind": "two_point", "z1": 1, "p1": 0.5, "z2": -1}],
    )
    def test_from_dict(self, d):
        assert mark_sampler_from_dict(d).kind == d["kind"]

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            mark_sampler_from_dict({"kind": "cauchy"})

    @pytest.mark.parametrize("intensity", [-1.0, math.inf, math.nan])
    def test_bad_intensity(self, intensity):
        with pytest.raises(DomainError):
            MarkSpaceSpec(intensity)

    def test_weights(self):
        spec = MarkSpaceSpec(2.0, Gaussian(0.5, 1.0))
        assert spec.first_moment_weight == pytest.approx(1.0)
        assert spec.second_moment_weight == pytest.approx(2.5)


class TestTrain:
    def test_zero_intensity_is_empty(self):
        assert len(sample_jump_train(MarkSpaceSpec(0.0), 5.0, seed=1)) == 0

    def test_times_sorted_in_horizon(self):
        for i in range(50):
            tr = sample_jump_train(MarkSpaceSpec(20.0, Gaussian()), 2.0, seed=3, path_index=i)
            assert np.all(np.diff(tr.times) > 0)
            assert np.all((tr.times > 0) & (tr.times <= 2.0))

    def test_deterministic_per_path(self):
        spec = MarkSpaceSpec(3.0, Uniform(0, 1))
        a, b = sample_jump_train(spec, 1.0, 7, 4), sample_jump_train(spec, 1.0, 7, 4)
        assert np.array_equal(a.times, b.times) and np.array_equal(a.marks, b.marks)

    def test_count_moments(self):
        spec = MarkSpaceSpec(2.0)
        counts = np.array([len(sample_jump_train(spec, 1.5, 11, i)) for i in range(40000)])
        se_mean = math.sqrt(3.0 / counts.size)
        assert abs(counts.mean() - 3.0) <= 5 * se_mean
        # var of the sample variance of a Poisson(3) count: (mu4 - sigma^4)/n with mu4 = 3 + 3*9
        se_var = math.sqrt((30.0 - 9.0) / counts.size)
        assert abs(counts.var(ddof=1) - 3.0) <= 5 * se_var

    def test_invalid_train(self):
        with pytest.raises(DomainError):
            JumpTrain([0.5, 0.2], [1.0, 1.0])
        with pytest.raises(DomainError):
            JumpTrain([0.5], [1.0, 2.0])

    def test_merge_is_poisson_superposition(self):
        a_spec, b_spec = MarkSpaceSpec(1.0), MarkSpaceSpec(2.0, Degenerate(-1.0))
        counts, times = [], []
        for i in range(5000):
            m = merge_trains(sample_jump_train(a_spec, 1.0, 1, i), sample_jump_train(b_spec, 1.0, 2, i))
            assert np.all(np.diff(m.times) > 0)
            counts.append(len(m))
            times.extend(m.times)
        counts = np.asarray(counts)
        assert abs(counts.mean() - 3.0) <= 5 * math.sqrt(3.0 / counts.size)
        assert stats.kstest(times, "uniform").pvalue > 1e-3


class TestCompensatedSum:
    def test_empty_train(self):
        grid = TimeGrid.on_interval(1.0, 8)
        tr = JumpTrain([], [])
        val = compensated_sum(tr, np.ones_like, 1.0, lambda s: np.zeros_like(s), grid)
        assert val == 0.0

    def test_compensator_only(self):
        grid = TimeGrid.on_interval(2.0, 8)
        val = compensated_sum(JumpTrain([], []), np.ones_like, 1.0, lambda s: np.full_like(s, 1.5), grid)
        assert val == pytest.approx(-3.0, rel=1e-14)

    def test_martingale_and_isometry(self):
        spec = MarkSpaceSpec(3.0, TwoPoint(1.0, 0.5, -0.5))
        grid = TimeGrid.on_interval(1.0, 32)
        rate = spec.first_moment_weight
        sums = np.array([
            compensated_sum(tr, np.ones_like, tr.marks, lambda s: np.full_like(s, rate), grid)
            for tr in (sample_jump_train(spec, 1.0, 5, i) for i in range(30000))
        ])
        se = sums.std(ddof=1) / math.sqrt(sums.size)
        assert abs(sums.mean()) <= 5 * se
        sq = sums**2
        assert abs(sq.mean() - spec.second_moment_weight) <= 5 * sq.std(ddof=1) / math.sqrt(sq.size)
