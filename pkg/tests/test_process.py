# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

import io
import math

import numpy as np
import pytest
from scipy import stats

from growthsim.geometry import Ball, StripeConstraint
from growthsim.process import (
    ExplosionError,
    GrowthProcess,
    InfectionHistory,
    InfectionType,
    ProcessConfig,
    classify,
    norm_star,
    norm_sup,
    read_event_log,
    run_until,
    write_event_log,
)
from growthsim.stochastics import RadiusDistribution

UNIT = RadiusDistribution.deterministic(1)


def _one_type(**kwargs):
    return ProcessConfig(d=2, F=UNIT, **kwargs)


def _two_type(**kwargs):
    kwargs.setdefault("lambda_2", 1.0)
    return ProcessConfig(d=2, F=UNIT, two_type=True, **kwargs)


def _naive_event_count(horizon: float, seed: int) -> int:
    # box thinning over the bounding box of a unit-radius one-type process
    rng = np.random.default_rng(seed)
    centers = np.zeros((1, 2))
    t = 0.0

    while True:
        lower, upper = centers.min(axis=0) - 1, centers.max(axis=0) + 1
        t += rng.exponential(1 / np.prod(upper - lower))
        if t > horizon:
            return len(centers) - 1
        x = lower + (upper - lower) * rng.random(2)
        if np.min(np.linalg.norm(centers - x, axis=1)) <= 1:
            centers = np.vstack([centers, x])


class TestProcessConfig:
    def test_defaults(self):
        cfg = _two_type()
        assert cfg.gamma == 1
        assert cfg.covering_resolution == pytest.approx(1 / 50)
        assert np.allclose(cfg.initial_1[0].center, [-2, 0])
        assert np.allclose(cfg.initial_2[0].center, [0, 0])

    def test_both_rates_zero(self):
        with pytest.raises(ValueError):
            _two_type(lambda_1=0.0, lambda_2=0.0)

    def test_zero_lambda_2_allowed(self):
        assert _two_type(lambda_2=0.0).rates == {InfectionType.TYPE_1: 1.0}

    def test_pareto_needs_override(self):
        F = RadiusDistribution.pareto(1, 2.5)
        with pytest.raises(ValueError, match="moment condition"):
            ProcessConfig(d=2, F=F)
        assert ProcessConfig(d=2, F=F, allow_inadmissible=True).F is F

    def test_origin_must_be_infected(self):
        with pytest.raises(ValueError):
            _one_type(initial_1=(Ball([5, 0], 1),))

    def test_overlapping_initial_sets(self):
        with pytest.raises(ValueError):
            _two_type(initial_1=(Ball([-1, 0], 1),))

    def test_replace_recomputes_defaults(self):
        cfg = _one_type().replace(F=RadiusDistribution.deterministic(2))
        assert cfg.covering_resolution == pytest.approx(2 / 50)
        assert cfg.initial_1[0].radius == 2


class TestClassify:
    def test_default_origin_is_type_2(self):
        h = _two_type().new_history()
        assert classify(h, [0, 0], 0) == InfectionType.TYPE_2
        assert classify(h, [-2, 0], 0) == InfectionType.TYPE_1

    def test_far_point(self):
        h = _two_type().new_history()
        assert classify(h, [10, 10], 5) == InfectionType.UNINFECTED

    def test_first_cover_wins(self):
        h = _two_type().new_history()
        h.record(1.0, [0, 3], 1.5, InfectionType.TYPE_1)
        h.record(2.0, [0, 3.5], 1.5, InfectionType.TYPE_2)
        assert h.classify([0, 3.5], 3) == InfectionType.TYPE_1
        assert h.classify([0, 3.5], 0.5) == InfectionType.UNINFECTED
        assert h.classify([0, 4.8], 3) == InfectionType.TYPE_2

    def test_classify_many_agrees(self):
        h = run_until(_two_type(horizon_time=2.0, seed=3))
        points = np.random.default_rng(0).uniform(-6, 6, (500, 2))
        expected = [h.classify(p, 1.5) for p in points]
        assert h.classify_many(points, 1.5).tolist() == [int(e) for e in expected]

    def test_infection_is_permanent(self):
        h = run_until(_two_type(horizon_time=2.0, seed=4))
        points = np.random.default_rng(1).uniform(-6, 6, (500, 2))
        before = h.classify_many(points, 1.0)
        after = h.classify_many(points, 2.0)
        infected = before != InfectionType.UNINFECTED
        assert np.array_equal(before[infected], after[infected])

    def test_stripe_immunity(self):
        cfg = _one_type(stripe=StripeConstraint.of_width(0.5), horizon_time=3.0)
        h = run_until(cfg)
        assert h.classify([0, 0.9]) == InfectionType.UNINFECTED
        assert all(abs(o.center[1]) <= 0.5 for o in h.outbursts)


class TestStep:
    def test_first_interarrival(self):
        cfg = ProcessConfig(d=2, F=UNIT, lambda_1=2.0)
        times = [
            GrowthProcess(cfg.replace(stream_id=r)).step().time for r in range(10_000)
        ]
        assert stats.kstest(times, "expon", args=(0, 1 / (2 * math.pi))).pvalue > 0.01

    def test_zero_rate_type_never_fires(self):
        h = run_until(_two_type(lambda_2=0.0, horizon_time=2.0))
        assert len(h) > 0
        assert all(o.itype == InfectionType.TYPE_1 for o in h.outbursts)

    def test_effectiveness(self):
        h = _one_type().new_history()
        assert not h.record(1.0, [0, 0], 0.5, InfectionType.SINGLE).effective
        assert h.record(2.0, [0, 0], 2.0, InfectionType.SINGLE).effective

    def test_times_strictly_increase(self):
        h = _one_type().new_history()
        h.record(1.0, [0, 0], 1.0, InfectionType.SINGLE)
        with pytest.raises(ValueError):
            h.record(1.0, [0, 0], 1.0, InfectionType.SINGLE)

    def test_explosion_guard(self):
        with pytest.raises(ExplosionError):
            run_until(_one_type(horizon_time=100.0, max_events=5))

    def test_explosion_guard_allows_exact_budget(self):
        cfg = _one_type(horizon_time=3.0, seed=3)
        n = len(run_until(cfg))
        assert n >= 2
        exact = run_until(cfg.replace(max_events=n))
        assert len(exact) == n
        with pytest.raises(ExplosionError):
            run_until(cfg.replace(max_events=n - 1))

    def test_prune_covered_keeps_log(self):
        cfg = _one_type(horizon_time=2.0, seed=5)
        full = run_until(cfg)
        pruned = run_until(cfg.replace(prune_covered=True))
        assert len(full.radii) == 1 + len(full)
        assert len(pruned.radii) == 1 + sum(o.effective for o in pruned.outbursts)


class TestRunUntil:
    def test_zero_horizon(self):
        h = run_until(_one_type(horizon_time=0.0))
        assert len(h) == 0

    def test_reproducible(self):
        a = run_until(_two_type(horizon_time=2.0, seed=11))
        b = run_until(_two_type(horizon_time=2.0, seed=11))
        assert [o.to_json() for o in a.outbursts] == [o.to_json() for o in b.outbursts]

    def test_event_times_within_horizon(self):
        h = run_until(_one_type(horizon_time=2.5, seed=12))
        times = [o.time for o in h.outbursts]
        assert all(0 < t <= 2.5 for t in times)
        assert times == sorted(times)

    @pytest.mark.slow
    def test_event_count_matches_naive_simulator(self):
        horizon, replicas = 2.5, 40
        cfg = _one_type(horizon_time=horizon)
        ours = [len(run_until(cfg.replace(stream_id=r))) for r in range(replicas)]
        naive = [_naive_event_count(horizon, r) for r in range(replicas)]

        se = math.sqrt(
            np.var(ours, ddof=1) / replicas + np.var(naive, ddof=1) / replicas
        )
        assert abs(np.mean(ours) - np.mean(naive)) <= 3 * se

    @pytest.mark.slow
    def test_two_type_with_equal_rates_matches_one_type(self):
        horizon, replicas = 2.0, 40
        two = _two_type(horizon_time=horizon)
        one = _one_type(horizon_time=horizon, initial_1=two.initial_1 + two.initial_2)

        counts = []
        for cfg in (one, two):
            counts.append(
                [len(run_until(cfg.replace(stream_id=r))) for r in range(replicas)]
            )

        se = math.sqrt(sum(np.var(c, ddof=1) / replicas for c in counts))
        assert abs(np.mean(counts[0]) - np.mean(counts[1])) <= 3 * se


class TestNorms:
    def test_norm_sup_initials(self):
        h = _two_type().new_history()
        assert norm_sup(h, 0) == pytest.approx(3)

    def test_norm_sup_single_ball(self):
        h = _one_type().new_history()
        assert norm_sup(h, 0, InfectionType.SINGLE) == pytest.approx(1)

    def test_norm_sup_quiet_type(self):
        h = _two_type().new_history()
        h.record(1.0, [-3.5, 0], 1.0, InfectionType.TYPE_1)
        assert norm_sup(h, 2, InfectionType.TYPE_2) == pytest.approx(1)
        assert norm_sup(h, 2, InfectionType.TYPE_1) == pytest.approx(4.5)

    def test_norm_sup_all_is_exact(self):
        h = run_until(_one_type(horizon_time=2.0, seed=7))
        expected = max(np.linalg.norm(c) + r for c, r in zip(h.centers, h.radii))
        assert norm_sup(h) == pytest.approx(expected)

    def test_norm_star_initials(self):
        h = _two_type().new_history()
        assert abs(norm_star(h, 0) - 1) <= 2 * h.resolution

    def test_norm_star_after_large_outburst(self):
        h = _one_type().new_history()
        h.record(1.0, [0, 0], 3.0, InfectionType.SINGLE)
        assert abs(norm_star(h, 1) - 3) <= h.resolution
        assert abs(norm_star(h, 0.5) - 1) <= 2 * h.resolution

    def test_norm_star_uninfected_origin(self):
        h = InfectionHistory(2, [Ball([5, 0], 1)], two_type=False)
        assert norm_star(h) == 0


class TestEventLog:
    def test_round_trip(self):
        cfg = _two_type(horizon_time=2.0, seed=9)
        h = run_until(cfg)
        buf = io.StringIO()
        write_event_log(h, buf, cfg.to_dict())

        lines = buf.getvalue().splitlines()
        assert len(lines) == len(h) + 1

        buf.seek(0)
        replay, config = read_event_log(buf)
        assert config["seed"] == 9
        expected = [o.to_json() for o in h.outbursts]
        assert [o.to_json() for o in replay.outbursts] == expected

        points = np.random.default_rng(2).uniform(-6, 6, (300, 2))
        assert np.array_equal(replay.classify_many(points), h.classify_many(points))

    def test_missing_header(self):
        with pytest.raises(ValueError):
            read_event_log(io.StringIO('{"seq": 0}\n'))
