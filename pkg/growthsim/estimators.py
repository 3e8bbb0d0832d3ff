# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
Statistics over growth histories: hitting times and time constants, shape
deviation, strong infection, effective-outburst counts and finite-horizon
coexistence proxies.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from growthsim.geometry import Ball, StripeConstraint, as_point, ball_net
from growthsim.process import (
    EventSource,
    ExplosionError,
    GrowthProcess,
    InfectionHistory,
    InfectionType,
    ProcessConfig,
    norm_sup,
)
from growthsim.stochastics import RadiusDistribution
from growthsim.tools.stats import EstimateResult, frequency, summarize

logger = logging.getLogger(__name__)

CENSORING_LIMIT = 0.05
"""Censoring rate above which an estimate is flagged invalid."""

MIN_SHAPE_TIME = 1.0
"""Smallest time accepted by :func:`shape_deviation`."""

__all__ = [
    "CENSORING_LIMIT",
    "MIN_SHAPE_TIME",
    "CoexistenceProxy",
    "EstimateResult",
    "HittingTime",
    "coexistence_proxy",
    "count_effective_in_region",
    "effective_outburst_bound",
    "estimate_mu",
    "hampered_profile",
    "hitting_time_T_tilde",
    "hitting_times",
    "never_effective",
    "proxy_frequencies",
    "radial_extent",
    "shape_deviation",
    "strongly_infected",
    "summarize_mu",
    "unit_directions",
]


@dataclass(frozen=True)
class HittingTime:
    """The time the γ-ball around a point became fully infected."""

    time: float
    """The hitting time, or the time the run stopped when censored."""
    censored: bool
    events: int
    """Outbursts simulated up to that time."""


def hitting_times(
    cfg: ProcessConfig,
    points: Sequence[Sequence[float]],
    sources: Optional[Mapping[InfectionType, EventSource]] = None,
    history: Optional[InfectionHistory] = None,
) -> List[HittingTime]:
    """
    T̃(x) for several points along one trajectory.

    The process runs until every ``B(x, γ)`` is covered. ``horizon_time`` and
    ``max_events`` of *cfg* act as censoring limits. Pass a fresh *history*
    to keep the trajectory.
    """
    process = GrowthProcess(cfg, sources, history)
    h = process.history
    targets = [Ball(as_point(x, cfg.d), cfg.gamma) for x in points]
    result: Dict[int, HittingTime] = {}

    for i, target in enumerate(targets):
        if h.covers_ball(target):
            result[i] = HittingTime(0.0, False, 0)

    while len(result) < len(targets):
        try:
            outburst = process.step(cfg.horizon_time)
        except ExplosionError:
            logger.debug("hitting time censored at max_events=%d", cfg.max_events)
            outburst = None

        if outburst is None:
            for i in range(len(targets)):
                result.setdefault(i, HittingTime(process.clock, True, len(h)))
            break

        for i, target in enumerate(targets):
            if i in result:
                continue

            gap = np.linalg.norm(outburst.center - target.center)

            if gap <= outburst.radius + target.radius and h.covers_ball(target):
                result[i] = HittingTime(outburst.time, False, len(h))

    return [result[i] for i in range(len(targets))]


def hitting_time_T_tilde(
    x: Sequence[float],
    cfg: ProcessConfig,
    sources: Optional[Mapping[InfectionType, EventSource]] = None,
) -> HittingTime:
    """
    T̃(x): the first event time at which ``B(x, γ)`` is covered, for a
    one-type process from ``B(0, γ)`` (hampered when *cfg* has a stripe).
    """
    return hitting_times(cfg, [x], sources)[0]


def _axis_points(d: int, n_list: Iterable[float]) -> List[np.ndarray]:
    e1 = np.eye(d)[0]
    return [n * e1 for n in n_list]


def mu_sample(
    cfg: ProcessConfig,
    n_list: Sequence[float],
    history: Optional[InfectionHistory] = None,
) -> List[HittingTime]:
    """One replica of the hitting profile ``T̃(n e₁)`` for every n."""
    return hitting_times(cfg, _axis_points(cfg.d, n_list), history=history)


def summarize_mu(
    samples: Sequence[Sequence[HittingTime]],
    n_list: Sequence[float],
    rate: float = 1.0,
    batch_size: Optional[int] = None,
    stripe: Optional[float] = None,
) -> EstimateResult:
    """
    Aggregates hitting profiles into μ̂ = mean of ``T̃(n)/n`` at the largest n.

    Censored replicas are excluded. Diagnostics: ``profile`` (n to point and
    CI), ``censoring_rate``, ``invalid`` (censoring above 5 %),
    ``rate_scaled`` (λ μ̂, comparable with unit-rate runs) and ``stripe``.

    Raises:
        ValueError: if every replica is censored at the largest n.
    """
    n_list = list(n_list)
    last = len(n_list) - 1
    profile = {}

    for j, n in enumerate(n_list):
        values = [s[j].time / n for s in samples if not s[j].censored]
        if values and n > 0:
            est = summarize(values)
            profile[n] = (est.point, est.ci_low, est.ci_high)

    kept = [s[last].time / n_list[last] for s in samples if not s[last].censored]
    censoring = 1 - len(kept) / len(samples)

    if not kept:
        raise ValueError("every replica was censored; increase horizon or max_events")

    invalid = censoring > CENSORING_LIMIT

    if invalid:
        logger.warning(
            "censoring rate %.1f%% exceeds %.0f%%",
            100 * censoring,
            100 * CENSORING_LIMIT,
        )

    est = summarize(kept, batch_size)
    est.diagnostics.update(
        profile=profile,
        censoring_rate=censoring,
        invalid=invalid,
        rate_scaled=rate * est.point,
        stripe=stripe,
    )

    return est


def estimate_mu(
    cfg: ProcessConfig,
    n_list: Sequence[float],
    replicas: int,
    batch_size: Optional[int] = None,
) -> EstimateResult:
    """
    The time constant μ (or μ_b when *cfg* has a stripe) from ``T̃(n)/n`` at
    the largest n, over replicas with stream ids ``0 … replicas - 1``.

    Raises:
        ValueError: on an empty distance list or zero replicas.
    """
    if not n_list or replicas < 1:
        raise ValueError("need at least one distance and one replica")

    if not cfg.F.mgf_exists:
        logger.warning(
            "radius law %s violates the moment condition; μ may be 0", cfg.F
        )

    samples = [mu_sample(cfg.replace(stream_id=r), n_list) for r in range(replicas)]

    return summarize_mu(
        samples,
        n_list,
        cfg.lambda_1,
        batch_size,
        cfg.stripe.b if cfg.stripe.active else None,
    )


def hampered_profile(
    cfg: ProcessConfig, n_list: Sequence[float], replicas: int, stripes: Sequence[float]
) -> Dict[float, EstimateResult]:
    """μ̂_b for every stripe half-width b."""
    return {
        b: estimate_mu(
            cfg.replace(stripe=StripeConstraint.of_width(b)), n_list, replicas
        )
        for b in stripes
    }


def radial_extent(
    h: InfectionHistory, u: np.ndarray, t: float, resolution: Optional[float] = None
) -> float:
    """
    ``sup{s : s u infected at time t}`` along the unit vector *u*.

    A coarse scan from the outermost possible radius inwards with step
    *resolution* finds the last infected sample, which is then refined by
    bisection to ``resolution / 10``.
    """
    resolution = h.resolution if resolution is None else resolution
    n = h.shape_count(t)
    hi = float(np.max(np.linalg.norm(h.centers[:n], axis=1) + h.radii[:n]))
    steps = np.arange(hi, -resolution, -resolution)
    steps[-1] = max(steps[-1], 0.0)
    labels = h.classify_many(steps[:, None] * u, t)
    infected = np.flatnonzero(labels != InfectionType.UNINFECTED)

    if infected.size == 0:
        return 0.0

    k = infected[0]

    if k == 0:
        return float(steps[0])

    lo, hi = float(steps[k]), float(steps[k - 1])

    while hi - lo > resolution / 10:
        mid = (lo + hi) / 2
        if h.classify(mid * u, t) != InfectionType.UNINFECTED:
            lo = mid
        else:
            hi = mid

    return lo


def unit_directions(d: int, count: int) -> np.ndarray:
    """
    *count* unit vectors spread over the sphere: evenly spaced angles in
    the plane, a Fibonacci lattice in 3-space, fixed Gaussian draws beyond.
    """
    if count < 1:
        raise ValueError(f"need at least one direction, got {count}")

    if d == 1:
        return np.array([[1.0], [-1.0]])[: max(1, min(count, 2))]

    if d == 2:
        angles = 2 * math.pi * np.arange(count) / count
        return np.column_stack([np.cos(angles), np.sin(angles)])

    if d == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = math.pi * (1 + math.sqrt(5)) * i
        rho = np.sqrt(1 - z * z)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])

    v = np.random.default_rng(d).standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def shape_deviation(
    h: InfectionHistory,
    t: float,
    mu_hat: float,
    directions: int,
    rate: float = 1.0,
    min_time: float = MIN_SHAPE_TIME,
) -> float:
    """
    ``max_u |r(u)/t - λ/μ̂| / (λ/μ̂)`` over spread unit directions u, where
    r(u) is the radial extent of the infected set at time *t*.

    Raises:
        ValueError: if ``t < min_time`` or ``mu_hat <= 0``.
    """
    if t < min_time:
        raise ValueError(f"t must be at least {min_time}, got {t}")

    if not mu_hat > 0:
        raise ValueError(f"mu_hat must be positive, got {mu_hat}")

    speed = rate / mu_hat
    extents = [radial_extent(h, u, t) for u in unit_directions(h.d, directions)]

    return max(abs(r / t - speed) / speed for r in extents)


def strongly_infected(
    h: InfectionHistory,
    x: Sequence[float],
    t: float,
    itype: InfectionType,
    gamma: float,
) -> bool:
    """Whether every net point of ``B(x, γ)`` has type *itype* at time *t*."""
    target = Ball(as_point(x, h.d), gamma)

    for block in ball_net(target, h.resolution):
        if np.any(h.classify_many(block, t) != itype):
            return False

    return True


def count_effective_in_region(
    h: InfectionHistory,
    region: Ball,
    t: float,
    itype: Optional[InfectionType] = None,
) -> int:
    """
    N_Λ: effective outbursts up to *t* centered in *region*, of *itype* only
    if given.
    """
    return sum(
        1
        for o in h.outbursts
        if o.time <= t
        and o.effective
        and (itype is None or o.itype == itype)
        and np.linalg.norm(o.center - region.center) <= region.radius
    )


def effective_outburst_bound(
    region: Ball, mu_hat: float, rate: float, F: RadiusDistribution
) -> float:
    """The expected-count bound ``4 |Λ| / (λ μ̂⁻¹) · E[R]``."""
    if not (mu_hat > 0 and rate > 0):
        raise ValueError("mu_hat and rate must be positive")

    return 4 * region.volume * mu_hat / rate * F.mean_gamma


def never_effective(h: InfectionHistory, itype: InfectionType, t: float) -> bool:
    """Whether type *itype* made no effective outburst up to *t*."""
    return not any(
        o.effective and o.itype == itype and o.time <= t for o in h.outbursts
    )


@dataclass(frozen=True)
class CoexistenceProxy:
    """
    Finite-horizon surrogate for "type i reaches arbitrarily far".

    A type is alive iff it made an effective outburst in
    ``(horizon - window, horizon]`` and its ``norm_sup`` at the horizon is more
    than twice its value at half the horizon.
    """

    horizon: float
    window: float
    type1_alive: bool
    type2_alive: bool
    rule: str = "effective outburst in window and norm_sup doubled since horizon/2"

    @property
    def both_alive(self) -> bool:
        return self.type1_alive and self.type2_alive


def coexistence_proxy(
    h: InfectionHistory, horizon: float, window: float
) -> CoexistenceProxy:
    """
    Evaluates the :class:`CoexistenceProxy` rule on a two-type history.

    Raises:
        ValueError: unless ``horizon > window > 0``.
    """
    if not horizon > window > 0:
        raise ValueError(f"need horizon > window > 0, got {horizon}, {window}")

    if not h.two_type:
        raise ValueError("coexistence needs a two-type history")

    def alive(itype: InfectionType) -> bool:
        recent = any(
            o.effective and o.itype == itype and horizon - window < o.time <= horizon
            for o in h.outbursts
        )
        if not recent:
            return False

        return norm_sup(h, horizon, itype) > 2 * norm_sup(h, horizon / 2, itype)

    return CoexistenceProxy(
        horizon, window, alive(InfectionType.TYPE_1), alive(InfectionType.TYPE_2)
    )


def proxy_frequencies(proxies: Sequence[CoexistenceProxy]) -> Dict[str, EstimateResult]:
    """Alive frequencies of type 1, type 2 and both."""
    return {
        "type1_alive": frequency(p.type1_alive for p in proxies),
        "type2_alive": frequency(p.type2_alive for p in proxies),
        "both_alive": frequency(p.both_alive for p in proxies),
    }
