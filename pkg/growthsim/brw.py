# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
The branching random walk (BRW) growth process that dominates one-type
growth, and the Laplace transform machinery behind its speed.

Every individual is a cube. It gives birth according to its own unit-rate
space-time Poisson process restricted to its cube, i.e. at rate
``(2R)**d`` with children located uniformly in the cube. Children get an
i.i.d. half-side from the radius law F. Nobody dies.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import integrate, optimize

from growthsim.geometry import EPS, Cube, Point
from growthsim.stochastics import (
    PoissonField,
    RadiusDistribution,
    RadiusFamily,
    RandomStream,
    StreamLabel,
)
from growthsim.tools.stats import EstimateResult, summarize

logger = logging.getLogger(__name__)

POPULATION_CAP = 1_000_000
"""Default largest population simulated before a run is truncated."""

ANCESTOR_MODES = ("deterministic", "random")


@dataclass(frozen=True, eq=False)
class Individual:
    """One BRW individual (a cube)."""

    index: int
    birth_time: float
    center: Point
    half_side: float
    parent: Optional[int]
    stream_key: Optional[Tuple[int, int, Tuple[int, ...]]] = None
    ident: Optional[tuple] = None
    """Identity of the field point that created it (layered construction only)."""

    @property
    def cube(self) -> Cube:
        return Cube(self.center, self.half_side)

    @property
    def own_stream(self) -> Optional[RandomStream]:
        """The individual's private random stream, if it has one."""
        if self.stream_key is None:
            return None

        return RandomStream(*self.stream_key)


class _CubeLog:
    # append-only arrays of cubes in birth order

    def __init__(self, d: int):
        if d < 1:
            raise ValueError(f"dimension must be >= 1, got {d}")

        self.d = d
        self.clock = 0.0
        self._centers = np.empty((64, d))
        self._half = np.empty(64)
        self._births = np.empty(64)
        self._parents: List[Optional[int]] = []
        self._idents: List[Optional[tuple]] = []
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def centers(self) -> np.ndarray:
        return self._centers[: self._n]

    @property
    def half_sides(self) -> np.ndarray:
        return self._half[: self._n]

    @property
    def birth_times(self) -> np.ndarray:
        return self._births[: self._n]

    @property
    def idents(self) -> List[Optional[tuple]]:
        return self._idents

    def _append(
        self,
        time: float,
        center: np.ndarray,
        half_side: float,
        parent: Optional[int],
        ident: Optional[tuple] = None,
    ) -> int:
        if self._n == len(self._half):
            self._centers = np.concatenate(
                [self._centers, np.empty_like(self._centers)]
            )
            self._half = np.concatenate([self._half, np.empty_like(self._half)])
            self._births = np.concatenate([self._births, np.empty_like(self._births)])

        i = self._n
        self._centers[i] = center
        self._half[i] = half_side
        self._births[i] = time
        self._parents.append(parent)
        self._idents.append(ident)
        self._n += 1

        return i

    def _stream_key(self, index: int) -> Optional[Tuple[int, int, Tuple[int, ...]]]:
        return None

    def individual(self, index: int) -> Individual:
        if not 0 <= index < self._n:
            raise IndexError(index)

        return Individual(
            index,
            float(self._births[index]),
            self._centers[index].copy(),
            float(self._half[index]),
            self._parents[index],
            self._stream_key(index),
            self._idents[index],
        )

    @property
    def individuals(self) -> List[Individual]:
        return [self.individual(i) for i in range(self._n)]

    def count(self, t: float = math.inf) -> int:
        """Number of individuals born by time *t*."""
        return int(np.searchsorted(self.birth_times, t, side="right"))

    def multiplicity(self, x: Point, t: float = math.inf) -> int:
        """Number of cubes born by *t* that contain *x*."""
        n = self.count(t)
        gap = np.max(np.abs(self._centers[:n] - x), axis=1)
        return int(np.count_nonzero(gap <= self._half[:n] * (1 + EPS)))

    def covers(self, points: np.ndarray, t: float = math.inf) -> np.ndarray:
        """Mask of the points inside the covered region S̄_t."""
        points = np.atleast_2d(points)
        n = self.count(t)
        out = np.zeros(points.shape[0], dtype=bool)

        for start in range(0, points.shape[0], 1024):
            block = points[start : start + 1024]
            gap = np.max(np.abs(block[:, None, :] - self._centers[None, :n]), axis=2)
            inside = gap <= self._half[:n] * (1 + EPS)
            out[start : start + 1024] = np.any(inside, axis=1)

        return out

    def to_records(self) -> List[Dict[str, object]]:
        """Event-log records, one per individual, in birth order."""
        return [
            {
                "seq": i,
                "time": float(self._births[i]),
                "type": "brw",
                "center": [float(v) for v in self._centers[i]],
                "radius": float(self._half[i]),
                "parent": self._parents[i],
            }
            for i in range(self._n)
        ]


class BrwPopulation(_CubeLog):
    """
    A BRW started from one ancestor cube centered at the origin.

    Individual ``i`` owns the stream ``rng.child(BRW, label(i))``; its k-th
    birth uses the substream ``.child(k)`` for the waiting time, the child's
    location and the child's half-side. Each individual's birth process never
    changes, so pending births are kept in a heap instead of being redrawn.

    Args:
        F: Radius law of the children.
        d: Dimension.
        rng: Root stream of the population.
        ancestor: ``"deterministic"`` (half-side γ) or ``"random"``
            (half-side drawn from F).
        population_cap: Largest population simulated.
        relabel: Maps individual indices to stream labels (identity by default).
    """

    def __init__(
        self,
        F: RadiusDistribution,
        d: int,
        rng: RandomStream,
        ancestor: str = "deterministic",
        population_cap: int = POPULATION_CAP,
        relabel: Optional[Callable[[int], int]] = None,
    ):
        super().__init__(d)

        if ancestor not in ANCESTOR_MODES:
            raise ValueError(
                f"ancestor mode must be one of {ANCESTOR_MODES}, got {ancestor!r}"
            )

        if population_cap < 1:
            raise ValueError(f"population_cap must be >= 1, got {population_cap}")

        self.F = F
        self.rng = rng
        self.population_cap = population_cap
        self.capped = False
        self._relabel = relabel or (lambda i: i)
        self._heap: List[tuple] = []
        self._birth_counts: List[int] = []

        if ancestor == "deterministic":
            half = F.mean_gamma
        else:
            half = F.sample(rng.child(StreamLabel.BRW))

        self._add(0.0, np.zeros(d), half, None)

    def _stream_key(self, index):
        path = self.rng.path + (StreamLabel.BRW, self._relabel(index))
        return (self.rng.seed, self.rng.stream_id, path)

    def _schedule(self, index: int, after: float) -> None:
        k = self._birth_counts[index]
        key = self._stream_key(index)
        gen = RandomStream(key[0], key[1], key[2] + (k,)).generator
        half = self._half[index]
        gap = gen.exponential(1 / (2 * half) ** self.d)
        location = self._centers[index] + half * (2 * gen.random(self.d) - 1)
        radius = self.F.sample(gen)
        heapq.heappush(self._heap, (after + gap, index, k, location, radius))

    def _add(self, time, center, half_side, parent) -> int:
        i = self._append(time, center, half_side, parent)
        self._birth_counts.append(0)
        self._schedule(i, time)
        return i

    @property
    def next_birth_time(self) -> float:
        return self._heap[0][0]

    def step(self) -> Optional[Individual]:
        """
        Performs the next birth, or flags the population as capped and
        returns ``None`` when the cap is reached.
        """
        if self._n >= self.population_cap:
            if not self.capped:
                logger.warning(
                    "BRW population cap %d reached at t=%g",
                    self.population_cap,
                    self.clock,
                )
            self.capped = True
            return None

        time, parent, k, location, radius = heapq.heappop(self._heap)
        self._birth_counts[parent] = k + 1
        self._schedule(parent, time)
        child = self._add(time, location, radius, parent)
        self.clock = time

        return self.individual(child)

    def advance(self, t: float) -> bool:
        """
        Performs every birth up to time *t*.

        Returns:
            ``False`` if the population cap truncated the run.
        """
        while self.next_birth_time <= t:
            if self.step() is None:
                return False

        self.clock = t
        return True


def brw_step(pop: BrwPopulation) -> Optional[Individual]:
    """Appends the next-born individual; see :meth:`BrwPopulation.step`."""
    return pop.step()


class LayeredBrw(_CubeLog):
    """
    A BRW built from a stack of shared unit-rate Poisson fields
    ``N0, N1, …``. A point of field ``Nl`` at x is a birth iff more than
    ``l`` cubes contain x. This superposes one unit-rate process per
    covering cube, which is the BRW birth law, and lets ``N0`` drive a
    one-type process at the same time.

    The child's parent is taken to be the ``(l + 1)``-th cube containing x.

    Args:
        layer0: The field ``N0``; higher layers copy its rate, law and cells.
        rng: Root stream of the higher layers.
        half_side: Ancestor half-side (default γ of the field's law).
    """

    def __init__(
        self, layer0: PoissonField, rng: RandomStream, half_side: Optional[float] = None
    ):
        super().__init__(layer0.d)
        self.F = layer0.F
        self.rng = rng
        self._layers = [layer0]
        # upper bound of the cube multiplicity per field cell
        self._cell_counts: Dict[tuple, int] = {}
        self._indexed = 0
        self._append(0.0, np.zeros(self.d), half_side or self.F.mean_gamma, None)

    @property
    def layer_count(self) -> int:
        return len(self._layers)

    def layer(self, level: int) -> PoissonField:
        while len(self._layers) <= level:
            base = self._layers[0]
            self._layers.append(
                PoissonField(
                    self.d,
                    base.rate,
                    base.F,
                    self.rng.child(StreamLabel.FIELD, len(self._layers)),
                    base.cell_size,
                    base.time_block,
                    name=f"N{len(self._layers)}",
                )
            )

        return self._layers[level]

    def _index_cells(self) -> None:
        base = self._layers[0]

        for i in range(self._indexed, self._n):
            lower = self._centers[i] - self._half[i]
            upper = self._centers[i] + self._half[i]
            for cell in base.cells_for_box(lower, upper):
                self._cell_counts[cell] = self._cell_counts.get(cell, 0) + 1

        self._indexed = self._n

    def step(self, until: float) -> Optional[Individual]:
        """
        Performs the next birth before *until*, if any. A level whose region
        turns out empty is scanned up to *until*, so the limit is mandatory.
        """
        self._index_cells()
        depth = max(self._cell_counts.values())
        best = None

        for level in range(depth):
            cells = [c for c, count in self._cell_counts.items() if count > level]
            limit = until if best is None else best[0].time
            point = self.layer(level).next_point(
                cells,
                lambda x, level=level: self.multiplicity(x) > level,
                self.clock,
                limit,
            )
            if point is not None and (best is None or point.time < best[0].time):
                best = point, level

        if best is None:
            return None

        point, level = best
        n = self._n
        gap = np.max(np.abs(self._centers[:n] - point.location), axis=1)
        parent = int(np.flatnonzero(gap <= self._half[:n] * (1 + EPS))[level])
        child = self._append(
            point.time, point.location, point.radius, parent, point.ident
        )
        self.clock = point.time

        return self.individual(child)

    def run_until(self, horizon: float, population_cap: int = POPULATION_CAP) -> bool:
        """
        Performs every birth up to *horizon*.

        Returns:
            ``False`` if the population cap truncated the run.
        """
        while self._n < population_cap:
            if self.step(horizon) is None:
                self.clock = horizon
                return True

        logger.warning("layered BRW population cap %d reached", population_cap)
        return False


def _check_axis(log: _CubeLog, axis: int) -> None:
    if not 0 <= axis < log.d:
        raise ValueError(f"axis must be in [0, {log.d}), got {axis}")


def rightmost(pop: _CubeLog, t: float, axis: int = 0) -> float:
    """H_t: the rightmost extent of the covered region on one axis."""
    _check_axis(pop, axis)
    n = pop.count(t)
    return float(np.max(pop.centers[:n, axis] + pop.half_sides[:n]))


def leftmost(pop: _CubeLog, t: float, axis: int = 0) -> float:
    """
    The leftmost extent of the covered region on one axis. By symmetry its
    negation has the law of :func:`rightmost`.
    """
    _check_axis(pop, axis)
    n = pop.count(t)
    return float(np.min(pop.centers[:n, axis] - pop.half_sides[:n]))


def _kernel(phi: float, d: int) -> Callable[[float], float]:
    # (2r)^(d-1) (1 - exp(-2 φ r)) / φ, continuous at φ = 0
    if phi == 0:
        return lambda r: (2 * r) ** d

    return lambda r: (2 * r) ** (d - 1) * -math.expm1(-2 * phi * r) / phi


def _diverges(phi: float, F: RadiusDistribution, d: int) -> bool:
    if F.family is RadiusFamily.EXPONENTIAL:
        return phi < 0 and 2 * -phi >= F.params[0]

    if F.family is RadiusFamily.PARETO:
        return phi < 0 or not F.moment_finite(d - 1)

    return False


def laplace_m(phi: float, phihat: float, F: RadiusDistribution, d: int) -> float:
    """
    ``m(φ, φ̂) = ∫ (φ φ̂)^-1 (2r)^(d-1) (1 - exp(-2 φ r)) dF(r)``.

    Closed form for a deterministic radius, adaptive quadrature (absolute
    tolerance 1e-9) otherwise. ``φ = 0`` gives the limit ``∫ (2r)^d dF / φ̂``.

    Returns:
        The value, or ``math.inf`` when the integral diverges.

    Raises:
        ValueError: if *phihat* is not positive.
    """
    if not phihat > 0:
        raise ValueError(f"phihat must be positive, got {phihat}")

    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")

    if _diverges(phi, F, d):
        return math.inf

    kernel = _kernel(phi, d)

    if F.family is RadiusFamily.DETERMINISTIC:
        return kernel(F.params[0]) / phihat

    lo, hi = F.support

    value, _ = integrate.quad(
        lambda r: kernel(r) * F.pdf(r), lo, hi, epsabs=1e-9, epsrel=1e-11, limit=200
    )

    return value / phihat


def _bracket(f: Callable[[float], float]) -> Tuple[float, float]:
    lo, hi = 1.0, 1.0

    while f(lo) < 0:
        lo /= 2

    while f(hi) > 0:
        hi *= 2

    return lo, hi


def alpha(phi: float, F: RadiusDistribution, d: int) -> float:
    """
    ``α(φ) = inf{φ̂ : m(φ, φ̂) <= 1}``, the root of ``m(φ, ·) = 1``.

    Returns:
        The root to 1e-9, or ``math.inf`` when ``m(φ, ·)`` diverges.
    """
    if math.isinf(laplace_m(phi, 1.0, F, d)):
        return math.inf

    def residual(phihat: float) -> float:
        return laplace_m(phi, phihat, F, d) - 1

    root = optimize.brentq(residual, *_bracket(residual), xtol=1e-12, rtol=1e-14)

    explicit = laplace_m(phi, 1.0, F, d)

    if abs(root - explicit) > 1e-9 * max(1.0, explicit):
        logger.warning("alpha(%g): root %r disagrees with %r", phi, root, explicit)

    return float(root)


def zeta_sample(
    F: RadiusDistribution,
    d: int,
    horizon: float,
    rng: RandomStream,
    ancestor: str = "deterministic",
    population_cap: int = POPULATION_CAP,
) -> Tuple[float, float, bool]:
    """
    One replica of the speed estimate.

    Returns:
        ``H_T / T``, ``H_{T/2} / (T/2)`` and whether the cap truncated the run
        (the values then refer to the population reached).
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")

    pop = BrwPopulation(F, d, rng, ancestor, population_cap)
    complete = pop.advance(horizon / 2) and pop.advance(horizon)

    return (
        rightmost(pop, horizon) / horizon,
        rightmost(pop, horizon / 2) / (horizon / 2),
        not complete,
    )


def estimate_zeta(
    F: RadiusDistribution,
    d: int,
    horizon: float,
    replicas: int,
    rng: RandomStream,
    ancestor: str = "deterministic",
    population_cap: int = POPULATION_CAP,
) -> EstimateResult:
    """
    Mean and CI of ``H_T / T`` over replicas ``rng.child(r)``.

    Diagnostics: ``half_horizon`` (the estimate at ``T/2``) and ``capped``
    (number of truncated replicas).
    """
    if replicas < 1:
        raise ValueError(f"replicas must be >= 1, got {replicas}")

    if not F.mgf_exists:
        logger.warning("radius law %s has no exponential moment; ζ may be infinite", F)

    samples = [
        zeta_sample(F, d, horizon, rng.child(r), ancestor, population_cap)
        for r in range(replicas)
    ]

    return summarize_zeta(samples)


def summarize_zeta(samples: List[Tuple[float, float, bool]]) -> EstimateResult:
    """Aggregates :func:`zeta_sample` results."""
    half = summarize(s[1] for s in samples)
    capped = sum(1 for s in samples if s[2])

    return summarize(
        (s[0] for s in samples),
        half_horizon=half.point,
        half_horizon_ci=(half.ci_low, half.ci_high),
        capped=capped,
    )
