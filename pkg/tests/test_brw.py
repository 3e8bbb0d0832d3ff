# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

import math

import numpy as np
import pytest
from scipy import stats

from growthsim.brw import (
    BrwPopulation,
    LayeredBrw,
    alpha,
    brw_step,
    estimate_zeta,
    laplace_m,
    leftmost,
    rightmost,
    zeta_sample,
)
from growthsim.geometry import contains
from growthsim.stochastics import PoissonField, RadiusDistribution, RandomStream

HALF = RadiusDistribution.deterministic(0.5)
UNIT = RadiusDistribution.deterministic(1)


def _grown(F=HALF, d=1, t=3.0, seed=0, **kwargs):
    pop = BrwPopulation(F, d, RandomStream(seed), **kwargs)
    pop.advance(t)
    return pop


class TestBrwPopulation:
    def test_first_birth(self):
        times = [
            BrwPopulation(UNIT, 2, RandomStream(0, r)).next_birth_time
            for r in range(10_000)
        ]
        assert stats.kstest(times, "expon", args=(0, 1 / 4)).pvalue > 0.01

    def test_zero_time(self):
        pop = _grown(t=0.0)
        assert len(pop) == 1
        assert pop.individual(0).half_side == 0.5
        assert pop.individual(0).parent is None

    def test_ancestor_birth_count(self):
        t, replicas = 3.0, 2000
        counts = []
        for r in range(replicas):
            pop = _grown(t=t, seed=r)
            counts.append(sum(1 for i in pop.individuals if i.parent == 0))

        # (2γ)^d t with γ = 1/2, d = 1
        assert abs(np.mean(counts) - t) <= 3 * math.sqrt(t / replicas)

    def test_children_inside_parent(self):
        pop = _grown(RadiusDistribution.uniform(0.2, 0.8), d=2, t=2.0, seed=1)
        assert len(pop) > 1
        for child in pop.individuals[1:]:
            parent = pop.individual(child.parent)
            assert contains(parent.cube, child.center)
            assert child.birth_time > parent.birth_time

    def test_birth_times_nondecreasing(self):
        pop = _grown(t=4.0, seed=2)
        assert np.all(np.diff(pop.birth_times) >= 0)

    def test_brw_step(self):
        pop = BrwPopulation(HALF, 1, RandomStream(3))
        child = brw_step(pop)
        assert len(pop) == 2
        assert child.index == 1 and child.parent == 0
        assert pop.clock == child.birth_time

    def test_random_ancestor(self):
        F = RadiusDistribution.uniform(0.5, 1.5)
        sides = {
            BrwPopulation(F, 2, RandomStream(s), "random").individual(0).half_side
            for s in range(5)
        }
        assert len(sides) > 1
        assert all(0.5 <= s <= 1.5 for s in sides)

    def test_invalid_ancestor(self):
        with pytest.raises(ValueError):
            BrwPopulation(HALF, 1, RandomStream(0), "fixed")

    def test_cap(self):
        pop = BrwPopulation(UNIT, 2, RandomStream(4), population_cap=50)
        assert not pop.advance(10.0)
        assert pop.capped
        assert len(pop) == 50

    def test_own_streams_are_distinct(self):
        pop = _grown(t=2.0, seed=5)
        keys = {i.stream_key for i in pop.individuals}
        assert len(keys) == len(pop)

    def test_relabeling_keeps_law(self):
        t, replicas = 3.0, 300
        plain = [rightmost(_grown(t=t, seed=r), t) for r in range(replicas)]
        relabeled = [
            rightmost(_grown(t=t, seed=r, relabel=lambda i: 7 * i + 3), t)
            for r in range(replicas)
        ]
        assert plain != relabeled

        se = math.sqrt((np.var(plain, ddof=1) + np.var(relabeled, ddof=1)) / replicas)
        assert abs(np.mean(plain) - np.mean(relabeled)) <= 3 * se


class TestExtent:
    def test_ancestor_only(self):
        pop = BrwPopulation(UNIT, 3, RandomStream(0))
        for axis in range(3):
            assert rightmost(pop, 0.0, axis) == 1
            assert leftmost(pop, 0.0, axis) == -1

    def test_nondecreasing(self):
        pop = _grown(d=2, t=3.0, seed=6)
        values = [rightmost(pop, t) for t in np.linspace(0, 3, 31)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_axes_exchangeable(self):
        t, replicas = 1.5, 300
        pops = [_grown(HALF, 2, t, r) for r in range(replicas)]
        x = [rightmost(p, t, 0) for p in pops]
        y = [rightmost(p, t, 1) for p in pops]

        se = math.sqrt((np.var(x, ddof=1) + np.var(y, ddof=1)) / replicas)
        assert abs(np.mean(x) - np.mean(y)) <= 3 * se

    def test_invalid_axis(self):
        with pytest.raises(ValueError):
            rightmost(_grown(t=0.0), 0.0, axis=1)


class TestLayeredBrw:
    def _layered(self, seed, d=1):
        rng = RandomStream(seed)
        field = PoissonField(d, 1.0, HALF, rng.child(0), cell_size=1.0)
        return LayeredBrw(field, rng.child(1))

    def test_population_matches_heap_construction(self):
        t, replicas = 2.0, 200
        heap = [len(_grown(t=t, seed=r)) for r in range(replicas)]

        layered = []
        for r in range(replicas):
            brw = self._layered(r)
            assert brw.run_until(t)
            layered.append(brw.count(t))

        se = math.sqrt((np.var(heap, ddof=1) + np.var(layered, ddof=1)) / replicas)
        assert abs(np.mean(heap) - np.mean(layered)) <= 3 * se

    def test_children_inside_parent(self):
        brw = self._layered(1, d=2)
        brw.run_until(2.0)
        for child in brw.individuals[1:]:
            assert contains(brw.individual(child.parent).cube, child.center)
            assert child.ident is not None

    def test_cap(self):
        brw = self._layered(2)
        assert not brw.run_until(20.0, population_cap=10)


class TestLaplace:
    def test_deterministic_one_dimension(self):
        phi, phihat = 0.8, 1.3
        expected = (1 - math.exp(-phi)) / (phi * phihat)
        assert laplace_m(phi, phihat, HALF, 1) == pytest.approx(expected, abs=1e-12)

    def test_limit_at_zero(self):
        for d in (1, 2, 3):
            limit = laplace_m(0.0, 2.0, HALF, d)
            assert limit == pytest.approx(1 / 2)
            assert laplace_m(1e-7, 2.0, HALF, d) == pytest.approx(limit, rel=1e-6)

    def test_exponential_against_monte_carlo(self):
        phi, phihat, d = 0.5, 1.5, 2
        F = RadiusDistribution.exponential(2)
        r = F.sample(np.random.default_rng(0), 1_000_000)
        values = (2 * r) ** (d - 1) * (1 - np.exp(-2 * phi * r)) / (phi * phihat)

        se = values.std(ddof=1) / math.sqrt(values.size)
        assert abs(laplace_m(phi, phihat, F, d) - values.mean()) <= 3 * se

    def test_pareto_negative_phi_diverges(self):
        assert laplace_m(-0.1, 1.0, RadiusDistribution.pareto(1, 2.5), 2) == math.inf

    def test_exponential_diverges_past_rate(self):
        F = RadiusDistribution.exponential(1)
        assert laplace_m(-0.4, 1.0, F, 2) < math.inf
        assert laplace_m(-0.6, 1.0, F, 2) == math.inf

    def test_decreasing_in_phihat(self):
        F = RadiusDistribution.uniform(0.2, 1.0)
        for phi in (-0.5, 0.3, 2.0):
            values = [laplace_m(phi, p, F, 2) for p in np.linspace(0.1, 5, 25)]
            assert all(a > b for a, b in zip(values, values[1:]))

    def test_phihat_must_be_positive(self):
        with pytest.raises(ValueError):
            laplace_m(1.0, 0.0, HALF, 1)


class TestAlpha:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_explicit_form(self, d):
        phi, r = 0.7, 1.0
        expected = (2 * r) ** (d - 1) * (1 - math.exp(-2 * phi * r)) / phi
        assert alpha(phi, UNIT, d) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize(
        "F",
        [RadiusDistribution.exponential(2), RadiusDistribution.uniform(0.5, 1.5)],
    )
    @pytest.mark.parametrize("phi", [-0.3, 0.4, 1.5])
    def test_residual(self, F, phi):
        root = alpha(phi, F, 2)
        assert abs(laplace_m(phi, root, F, 2) - 1) <= 1e-8

    def test_pareto_negative_phi(self):
        assert alpha(-0.5, RadiusDistribution.pareto(1, 3), 2) == math.inf


class TestZeta:
    def test_sample(self):
        full, half, capped = zeta_sample(HALF, 1, 3.0, RandomStream(0))
        assert 0 < full < math.inf
        assert 0 < half < math.inf
        assert not capped

    def test_capped_sample(self):
        *_, capped = zeta_sample(UNIT, 2, 10.0, RandomStream(1), population_cap=30)
        assert capped

    def test_estimate(self):
        est = estimate_zeta(HALF, 1, 3.0, 20, RandomStream(2))
        assert est.replicas == 20
        assert 0 < est.point < math.inf
        assert est.diagnostics["capped"] == 0
        assert est.diagnostics["half_horizon"] > 0

    def test_invalid_horizon(self):
        with pytest.raises(ValueError):
            zeta_sample(HALF, 1, 0.0, RandomStream(0))

    @pytest.mark.slow
    def test_stable_across_horizons(self):
        short = estimate_zeta(HALF, 1, 4.0, 30, RandomStream(3))
        long = estimate_zeta(HALF, 1, 8.0, 30, RandomStream(4))
        assert abs(short.point - long.point) <= 2 * max(short.width, long.width)

    @pytest.mark.slow
    def test_monotone_in_radius(self):
        estimates = [
            estimate_zeta(
                RadiusDistribution.deterministic(r),
                1,
                2.0,
                30,
                RandomStream(5),
                population_cap=50_000,
            )
            for r in (0.5, 1.0, 2.0)
        ]
        for a, b in zip(estimates, estimates[1:]):
            assert b.ci_high >= a.ci_low
