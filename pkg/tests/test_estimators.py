# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

import math

import numpy as np
import pytest

from growthsim.estimators import (
    CoexistenceProxy,
    HittingTime,
    coexistence_proxy,
    count_effective_in_region,
    effective_outburst_bound,
    estimate_mu,
    hampered_profile,
    hitting_time_T_tilde,
    hitting_times,
    never_effective,
    proxy_frequencies,
    radial_extent,
    shape_deviation,
    strongly_infected,
    summarize_mu,
    unit_directions,
)
from growthsim.geometry import Ball, StripeConstraint
from growthsim.process import InfectionType, ProcessConfig, classify, run_until
from growthsim.stochastics import RadiusDistribution

UNIT = RadiusDistribution.deterministic(1)


def _one_type(**kwargs):
    kwargs.setdefault("horizon_time", 50.0)
    return ProcessConfig(d=2, F=UNIT, **kwargs)


def _two_type(**kwargs):
    kwargs.setdefault("lambda_2", 1.0)
    return ProcessConfig(d=2, F=UNIT, two_type=True, **kwargs)


def _ball_history(radius, time=1.0):
    h = _one_type().new_history()
    h.record(time, [0, 0], radius, InfectionType.SINGLE)
    return h


class TestHittingTime:
    def test_origin(self):
        assert hitting_time_T_tilde([0, 0], _one_type()) == HittingTime(0.0, False, 0)

    def test_covered_when_reported(self):
        cfg = _one_type(seed=1)
        h = cfg.new_history()
        (hit,) = hitting_times(cfg, [[3, 0]], history=h)
        assert not hit.censored
        assert h.covers_ball(Ball([3, 0], 1), hit.time)
        assert not h.covers_ball(Ball([3, 0], 1), np.nextafter(hit.time, 0))

    def test_censored(self):
        hit = hitting_time_T_tilde([10, 0], _one_type(horizon_time=0.5))
        assert hit.censored
        assert hit.time <= 0.5

    def test_censored_by_max_events(self):
        hit = hitting_time_T_tilde([10, 0], _one_type(max_events=3))
        assert hit.censored
        assert hit.events == 3

    def test_finer_resolution_is_later(self):
        # R / resolution is an integer for both, so the coarse net is a subset
        coarse_cfg = _one_type(seed=2, covering_resolution=0.1)
        fine_cfg = _one_type(seed=2, covering_resolution=0.05)
        coarse = hitting_time_T_tilde([3, 0], coarse_cfg)
        fine = hitting_time_T_tilde([3, 0], fine_cfg)
        assert fine.time >= coarse.time

    def test_shared_trajectory(self):
        cfg = _one_type(seed=3)
        both = hitting_times(cfg, [[1.5, 0], [3, 0]])
        alone = [hitting_time_T_tilde(x, cfg) for x in ([1.5, 0], [3, 0])]
        assert [h.time for h in both] == [h.time for h in alone]

    def test_stochastically_monotone_in_distance(self):
        cfg = _one_type()
        near, far = zip(
            *(
                hitting_times(cfg.replace(stream_id=r), [[2, 0], [0, 4]])
                for r in range(40)
            )
        )
        assert not any(h.censored for h in near + far)

        q = [0.25, 0.5, 0.75]
        near_q = np.quantile([h.time for h in near], q)
        far_q = np.quantile([h.time for h in far], q)
        assert np.all(near_q <= far_q)


class TestSummarizeMu:
    def test_censoring_flag(self):
        samples = [[HittingTime(float(2 * i + 10), False, 5)] for i in range(9)]
        samples.append([HittingTime(50.0, True, 5)])

        est = summarize_mu(samples, [5.0], rate=2.0)
        assert est.point == pytest.approx(np.mean([(2 * i + 10) / 5 for i in range(9)]))
        assert est.diagnostics["censoring_rate"] == pytest.approx(0.1)
        assert est.diagnostics["invalid"]
        assert est.diagnostics["rate_scaled"] == pytest.approx(2 * est.point)
        assert set(est.diagnostics["profile"]) == {5.0}

    def test_all_censored(self):
        with pytest.raises(ValueError):
            summarize_mu([[HittingTime(1.0, True, 0)]], [3.0])


class TestEstimateMu:
    def test_positive(self):
        est = estimate_mu(_one_type(), [2.0, 4.0], 6)
        assert est.point > 0
        assert est.replicas == 6
        assert set(est.diagnostics["profile"]) == {2.0, 4.0}
        assert est.diagnostics["censoring_rate"] == 0
        assert est.diagnostics["stripe"] is None

    def test_empty(self):
        with pytest.raises(ValueError):
            estimate_mu(_one_type(), [], 3)

    def test_hampered_profile(self):
        profile = hampered_profile(_one_type(), [3.0], 3, [2.0])
        assert profile[2.0].diagnostics["stripe"] == 2.0

    @pytest.mark.slow
    def test_excludes_zero(self):
        est = estimate_mu(_one_type(), [5.0, 10.0], 30)
        assert est.ci_low > 0

    @pytest.mark.slow
    def test_time_scaling(self):
        unit = estimate_mu(_one_type(), [6.0], 40)
        fast = estimate_mu(_one_type(lambda_1=2.0), [6.0], 40)
        se = math.hypot(unit.standard_error, 2 * fast.standard_error)
        assert abs(fast.diagnostics["rate_scaled"] - unit.point) <= 3 * se

    @pytest.mark.slow
    def test_converges_with_distance(self, size):
        est = estimate_mu(_one_type(horizon_time=200.0), [10.0, 20.0], size(20, 200))
        profile = est.diagnostics["profile"]
        near, far = profile[10.0], profile[20.0]
        width = max(near[2] - near[1], far[2] - far[1])
        assert abs(near[0] - far[0]) <= 2 * width

    @pytest.mark.slow
    def test_hampered_is_slower(self, size):
        replicas = size(30, 200)
        stripes = [2.0, 5.0, 10.0]
        mu = estimate_mu(_one_type(), [8.0], replicas)
        profile = hampered_profile(_one_type(), [8.0], replicas, stripes)

        for b in stripes:
            assert profile[b].ci_high >= mu.ci_low

        # nonincreasing in b, up to overlapping intervals
        for narrow, wide in zip(stripes, stripes[1:]):
            assert profile[narrow].ci_high >= profile[wide].ci_low

        widths = [e.ci_high - e.ci_low for e in (mu, *profile.values())]
        assert abs(profile[10.0].point - mu.point) <= 2 * max(widths)


class TestShape:
    def test_radial_extent_of_ball(self):
        h = _ball_history(5.0)
        for u in unit_directions(2, 8):
            assert radial_extent(h, u, 2.0) == pytest.approx(5.0, abs=h.resolution / 10)
        extent = radial_extent(h, np.array([1.0, 0.0]), 0.5)
        assert extent == pytest.approx(1.0, abs=h.resolution / 10)

    def test_single_ball_deviation(self):
        h = _ball_history(5.0)
        # r/t = 2.5 against a speed of 2
        assert shape_deviation(h, 2.0, 0.5, 12) == pytest.approx(0.25, abs=1e-3)

    def test_perfect_ball(self):
        h = _ball_history(4.0)
        assert shape_deviation(h, 2.0, 0.5, 16) == pytest.approx(0.0, abs=1e-3)

    def test_time_guard(self):
        with pytest.raises(ValueError):
            shape_deviation(_ball_history(2.0), 0.1, 0.5, 4)

    def test_mu_guard(self):
        with pytest.raises(ValueError):
            shape_deviation(_ball_history(2.0), 2.0, 0.0, 4)

    @pytest.mark.parametrize("d, count", [(2, 7), (3, 50), (5, 10)])
    def test_unit_directions(self, d, count):
        u = unit_directions(d, count)
        assert u.shape == (count, d)
        assert np.allclose(np.linalg.norm(u, axis=1), 1)

    def test_unit_directions_line(self):
        assert unit_directions(1, 4).tolist() == [[1.0], [-1.0]]

    @pytest.mark.slow
    def test_scaled_set_approaches_ball(self, size):
        n_list = size([10.0, 20.0], [30.0])
        mu = estimate_mu(_one_type(horizon_time=200.0), n_list, size(20, 200)).point
        within = 0
        for r in range(20):
            h = run_until(_one_type(horizon_time=40.0, stream_id=1000 + r))
            within += shape_deviation(h, 40.0, mu, 32) <= 0.15
        assert within >= 18


class TestStrongInfection:
    def test_initial_type_2(self):
        h = _two_type().new_history()
        assert strongly_infected(h, [0, 0], 0, InfectionType.TYPE_2, 1.0)

    def test_wrong_type(self):
        h = _two_type().new_history()
        assert not strongly_infected(h, [0, 0], 0, InfectionType.TYPE_1, 1.0)

    def test_implies_classification(self):
        h = run_until(_two_type(horizon_time=2.0, seed=4))
        rng = np.random.default_rng(0)
        for x in rng.uniform(-4, 4, (40, 2)):
            for itype in (InfectionType.TYPE_1, InfectionType.TYPE_2):
                if strongly_infected(h, x, 2.0, itype, 1.0):
                    assert classify(h, x, 2.0) == itype


class TestEffectiveCount:
    def test_time_zero(self):
        h = run_until(_two_type(horizon_time=2.0, seed=5))
        assert count_effective_in_region(h, Ball([0, 0], 1), 0.0) == 0

    def test_disjoint_region(self):
        h = run_until(_two_type(horizon_time=2.0, seed=5))
        assert count_effective_in_region(h, Ball([100, 100], 1), 2.0) == 0

    def test_monotone_and_additive(self):
        h = run_until(_two_type(horizon_time=3.0, seed=6))
        left, right = Ball([-2, 0], 1.5), Ball([2, 0], 1.5)

        counts = [count_effective_in_region(h, left, t) for t in np.linspace(0, 3, 13)]
        assert all(a <= b for a, b in zip(counts, counts[1:]))

        both = sum(
            1
            for o in h.outbursts
            if o.effective
            and any(
                np.linalg.norm(o.center - b.center) <= b.radius for b in (left, right)
            )
        )
        assert (
            count_effective_in_region(h, left, 3.0)
            + count_effective_in_region(h, right, 3.0)
            == both
        )

    def test_per_type(self):
        h = run_until(_two_type(horizon_time=2.0, seed=7))
        region = Ball([0, 0], 5)
        total = count_effective_in_region(h, region, 2.0)
        per_type = sum(
            count_effective_in_region(h, region, 2.0, itype)
            for itype in (InfectionType.TYPE_1, InfectionType.TYPE_2)
        )
        assert total == per_type

    def test_bound(self):
        bound = effective_outburst_bound(Ball([0, 0], 1), 0.5, 1.0, UNIT)
        assert bound == pytest.approx(2 * math.pi)

    def test_bound_needs_positive_rates(self):
        with pytest.raises(ValueError):
            effective_outburst_bound(Ball([0, 0], 1), 0.5, 0.0, UNIT)

    def test_never_effective(self):
        h = _two_type().new_history()
        assert never_effective(h, InfectionType.TYPE_1, 10.0)
        h.record(1.0, [0, 3], 1.0, InfectionType.TYPE_1)
        assert not never_effective(h, InfectionType.TYPE_1, 10.0)
        assert never_effective(h, InfectionType.TYPE_1, 0.5)

    @pytest.mark.slow
    def test_expected_count_below_bound(self, size):
        F = RadiusDistribution.exponential(1)
        cfg = ProcessConfig(d=2, F=F, two_type=True, lambda_2=1.0, horizon_time=8.0)
        one = ProcessConfig(d=2, F=F, horizon_time=100.0)
        mu = estimate_mu(one, [6.0], size(30, 200)).point

        region = Ball([0, 0], 1)
        counts = [
            count_effective_in_region(run_until(cfg.replace(stream_id=r)), region, 8.0)
            for r in range(size(50, 200))
        ]
        se = np.std(counts, ddof=1) / math.sqrt(len(counts))
        assert np.mean(counts) <= effective_outburst_bound(region, mu, 1.0, F) + 2 * se


class TestCoexistence:
    def test_silent_type_2(self):
        h = run_until(_two_type(lambda_2=0.0, horizon_time=3.0, seed=8))
        proxy = coexistence_proxy(h, 3.0, 1.0)
        assert not proxy.type2_alive
        assert not proxy.both_alive

    def test_window_must_be_shorter(self):
        h = _two_type().new_history()
        with pytest.raises(ValueError):
            coexistence_proxy(h, 2.0, 2.0)

    def test_needs_two_types(self):
        with pytest.raises(ValueError):
            coexistence_proxy(_one_type().new_history(), 2.0, 1.0)

    def test_frequencies(self):
        proxies = [
            CoexistenceProxy(5.0, 1.0, True, True),
            CoexistenceProxy(5.0, 1.0, True, False),
            CoexistenceProxy(5.0, 1.0, False, False),
            CoexistenceProxy(5.0, 1.0, False, True),
        ]
        freq = proxy_frequencies(proxies)
        assert freq["type1_alive"].point == 0.5
        assert freq["type2_alive"].point == 0.5
        assert freq["both_alive"].point == 0.25

    @pytest.mark.slow
    @pytest.mark.parametrize("lambda_2", [1.0, 0.5])
    def test_both_types_survive(self, lambda_2):
        cfg = _two_type(lambda_2=lambda_2, horizon_time=6.0)
        proxies = [
            coexistence_proxy(run_until(cfg.replace(stream_id=r)), 6.0, 1.5)
            for r in range(200)
        ]
        freq = proxy_frequencies(proxies)
        assert freq["type1_alive"].ci_low > 0
        assert freq["type2_alive"].ci_low > 0

        if lambda_2 == 1.0:
            assert freq["both_alive"].ci_low > 0

    def test_stripe_history(self):
        cfg = _one_type(stripe=StripeConstraint.of_width(2.0), horizon_time=1.0)
        h = run_until(cfg)
        assert radial_extent(h, np.array([0.0, 1.0]), 1.0) <= 2.0
