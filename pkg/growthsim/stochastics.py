# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
Random streams, outburst radius laws and space-time Poisson event generation.

All randomness is derived from a single integer seed. A :class:`RandomStream`
is identified by ``(seed, stream_id, path)``; ``stream_id`` is the replica
index and ``path`` a tuple of labels (process label, individual index, …)
appended with :meth:`RandomStream.child`. Identical identifiers always yield
identical draw sequences.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import (
    Callable,
    Dict,
    Iterable,
    Iterator,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np

from growthsim.geometry import Ball, BallUnion, Point, _as_union

logger = logging.getLogger(__name__)

RegionTest = Callable[[Point], bool]
"""Predicate deciding whether a candidate location belongs to the target region."""

MAX_REJECTIONS = 10**9
"""Consecutive rejected candidates after which event generation gives up."""

_UINT64 = (1 << 64) - 1


class GuardError(RuntimeError):
    """
    Base class for guard trips: conditions that cannot happen for a valid
    configuration and a correct implementation.
    """


class RejectionGuardError(GuardError):
    """Raised when thinning rejects too many consecutive candidates."""


class StreamLabel(enum.IntEnum):
    """Labels used to derive named substreams with :meth:`RandomStream.child`."""

    TYPE_1 = 1
    TYPE_2 = 2
    SINGLE = 3
    BRW = 4
    AUDIT = 5
    FIELD = 6
    BOUNDARY = 7


def _zigzag(k: int) -> int:
    # maps Z onto N so that signed cell indices can be used as seed words
    return 2 * k if k >= 0 else -2 * k - 1


def _marked(marks: np.ndarray, mark_range: Tuple[float, float]) -> np.ndarray:
    low, high = mark_range
    return (marks > low) & (marks <= high)


class RandomStream:
    """
    A reproducible random stream.

    Args:
        seed: The experiment seed (0 <= seed < 2**64).
        stream_id: The replica or substream number (0 <= stream_id < 2**64).
        path: Further labels identifying a substream.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Sequence[int] = ()):
        for name, value in (("seed", seed), ("stream_id", stream_id)):
            if not 0 <= int(value) <= _UINT64:
                raise ValueError(
                    f"{name} must be a 64-bit unsigned integer, got {value}"
                )

        path = tuple(int(p) for p in path)

        if any(p < 0 for p in path):
            raise ValueError(f"stream path labels must be non-negative, got {path}")

        self._seed = int(seed)
        self._stream_id = int(stream_id)
        self._path = path

        sequence = np.random.SeedSequence(
            entropy=self._seed, spawn_key=(self._stream_id, *path)
        )
        self.generator = np.random.Generator(np.random.PCG64(sequence))
        """The underlying NumPy generator."""

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def stream_id(self) -> int:
        return self._stream_id

    @property
    def path(self) -> Tuple[int, ...]:
        return self._path

    def child(self, *labels: int) -> RandomStream:
        """
        Derives an independent substream. The parent stream is not advanced.
        """
        return RandomStream(self._seed, self._stream_id, self._path + labels)

    def random(self, size: Optional[int] = None):
        return self.generator.random(size)

    def exponential(self, rate: float) -> float:
        """One Exponential(*rate*) draw."""
        return float(self.generator.exponential(1 / rate))

    def __repr__(self) -> str:
        return f"RandomStream({self._seed}, {self._stream_id}, {self._path})"


class RadiusFamily(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"
    PARETO = "pareto"


@dataclass(frozen=True)
class RadiusDistribution:
    """
    The outburst radius law F.

    Use the class methods to construct instances. ``params`` holds
    ``(r,)``, ``(a, b)``, ``(rate,)`` or ``(scale, shape)`` respectively.
    """

    family: RadiusFamily
    params: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "family", RadiusFamily(self.family))
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)

        expected = {
            RadiusFamily.DETERMINISTIC: 1,
            RadiusFamily.UNIFORM: 2,
            RadiusFamily.EXPONENTIAL: 1,
            RadiusFamily.PARETO: 2,
        }[self.family]

        if len(params) != expected:
            raise ValueError(
                f"{self.family.value} takes {expected} parameter(s), got {len(params)}"
            )

        if not all(math.isfinite(p) for p in params):
            raise ValueError(f"radius parameters must be finite, got {params}")

        if self.family is RadiusFamily.UNIFORM:
            a, b = params
            if not 0 <= a < b:
                raise ValueError(f"uniform radius needs 0 <= a < b, got a={a}, b={b}")
        elif not all(p > 0 for p in params):
            raise ValueError(f"radius parameters must be positive, got {params}")

        if self.family is RadiusFamily.PARETO and params[1] <= 1:
            raise ValueError(
                f"pareto shape must exceed 1 for a finite mean radius, got {params[1]}"
            )

    @classmethod
    def deterministic(cls, r: float) -> RadiusDistribution:
        return cls(RadiusFamily.DETERMINISTIC, (r,))

    @classmethod
    def uniform(cls, a: float, b: float) -> RadiusDistribution:
        return cls(RadiusFamily.UNIFORM, (a, b))

    @classmethod
    def exponential(cls, rate: float) -> RadiusDistribution:
        return cls(RadiusFamily.EXPONENTIAL, (rate,))

    @classmethod
    def pareto(cls, scale: float, shape: float) -> RadiusDistribution:
        return cls(RadiusFamily.PARETO, (scale, shape))

    @property
    def mean_gamma(self) -> float:
        """The mean outburst radius γ."""
        p = self.params

        if self.family is RadiusFamily.DETERMINISTIC:
            return p[0]
        if self.family is RadiusFamily.UNIFORM:
            return (p[0] + p[1]) / 2
        if self.family is RadiusFamily.EXPONENTIAL:
            return 1 / p[0]
        return p[1] * p[0] / (p[1] - 1)

    @property
    def mgf_exists(self) -> bool:
        """
        Whether ``∫ exp(-φ r) dF(r) < ∞`` for some φ < 0. Only the
        polynomial Pareto tail fails.
        """
        return self.family is not RadiusFamily.PARETO

    @property
    def support(self) -> Tuple[float, float]:
        p = self.params

        if self.family is RadiusFamily.DETERMINISTIC:
            return p[0], p[0]
        if self.family is RadiusFamily.UNIFORM:
            return p[0], p[1]
        if self.family is RadiusFamily.EXPONENTIAL:
            return 0.0, math.inf
        return p[0], math.inf

    def moment_finite(self, order: float) -> bool:
        """Whether ``E[R**order]`` is finite."""
        if self.family is RadiusFamily.PARETO:
            return order < self.params[1]
        return True

    def pdf(self, r: float) -> float:
        """Density of F (not defined for the deterministic family)."""
        p = self.params

        if self.family is RadiusFamily.UNIFORM:
            return 1 / (p[1] - p[0]) if p[0] <= r <= p[1] else 0.0
        if self.family is RadiusFamily.EXPONENTIAL:
            return p[0] * math.exp(-p[0] * r) if r >= 0 else 0.0
        if self.family is RadiusFamily.PARETO:
            scale, shape = p
            return shape * scale**shape / r ** (shape + 1) if r >= scale else 0.0

        raise ValueError("the deterministic radius law has no density")

    def sample(
        self,
        rng: Union[RandomStream, np.random.Generator],
        size: Optional[int] = None,
    ) -> Union[float, np.ndarray]:
        """Draws from F; every draw is strictly positive."""
        gen = getattr(rng, "generator", rng)
        n = 1 if size is None else size
        p = self.params

        if self.family is RadiusFamily.DETERMINISTIC:
            r = np.full(n, p[0])
        elif self.family is RadiusFamily.UNIFORM:
            # (a, b] so that a = 0 never produces a zero radius
            r = p[1] - (p[1] - p[0]) * gen.random(n)
        elif self.family is RadiusFamily.EXPONENTIAL:
            r = gen.exponential(1 / p[0], n)
        else:
            r = p[0] * (1 + gen.pareto(p[1], n))

        r = np.maximum(r, np.finfo(float).tiny)

        return float(r[0]) if size is None else r

    def to_dict(self) -> Dict[str, object]:
        return {"family": self.family.value, "params": list(self.params)}

    def __str__(self) -> str:
        return f"{self.family.value}({', '.join(f'{p:g}' for p in self.params)})"


def sample_radius(F: RadiusDistribution, rng: RandomStream) -> float:
    """One draw from the radius law."""
    return F.sample(rng)


def mgf_admissible(F: RadiusDistribution) -> bool:
    """
    Analytic truth of the moment condition ``∫ exp(-φ r) dF(r) < ∞`` for
    some φ < 0.
    """
    return F.mgf_exists


@dataclass(frozen=True, eq=False)
class SpaceTimePoint:
    """
    A point of a space-time Poisson process with its attached radius and
    uniform mark.
    """

    location: Point
    time: float
    radius: float
    uniform_mark: float
    ident: Optional[tuple] = None
    """Stable identity of a :class:`PoissonField` point, ``None`` otherwise."""


def next_thinned_event(
    region_test: RegionTest,
    proposal_balls: Union[BallUnion, Iterable[Ball]],
    rate: float,
    clock: float,
    F: RadiusDistribution,
    rng: RandomStream,
    until: Optional[float] = None,
    max_rejections: int = MAX_REJECTIONS,
) -> Optional[SpaceTimePoint]:
    """
    First point after *clock* of a rate-*rate* space-time Poisson process
    restricted to the region where *region_test* holds.

    Candidates come from the superposition of rate-*rate* processes on every
    proposal ball (total intensity ``rate * sum of volumes``). A candidate at
    x with multiplicity m(x) is kept with probability 1/m(x), which leaves a
    rate-*rate* process on the union, and then kept iff ``region_test(x)``.
    The proposal union must contain the region.

    Args:
        region_test: Membership test of the target region.
        proposal_balls: Balls whose union covers the target region.
        rate: Space-time intensity.
        clock: Current time; the returned point is strictly later.
        F: Radius law attached to the accepted point.
        rng: Random stream (advanced).
        until: Give up and return ``None`` once candidates pass this time.
        max_rejections: Guard on consecutive rejections.

    Returns:
        The accepted point, or ``None`` if *until* was passed.

    Raises:
        RejectionGuardError: if *max_rejections* candidates in a row fail.
    """
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")

    union = _as_union(proposal_balls)
    total = rate * union.volume_sum
    gen = rng.generator
    t = clock
    rejections = 0

    while True:
        t += gen.exponential(1 / total)

        if until is not None and t > until:
            return None

        x = union.propose(gen)
        m = int(union.multiplicity(x)[0])

        if gen.random() * m <= 1.0 and region_test(x):
            return SpaceTimePoint(x, float(t), F.sample(gen), float(gen.random()))

        rejections += 1

        if rejections >= max_rejections:
            raise RejectionGuardError(
                f"{rejections} consecutive rejections after t={clock}; "
                "the target region has (almost) zero measure inside the proposals"
            )


@dataclass(frozen=True)
class FieldBlock:
    """Points of one spatial cell during one time block, sorted by time."""

    times: np.ndarray
    locations: np.ndarray
    radii: np.ndarray
    marks: np.ndarray


class PoissonField:
    """
    A realized space-time Poisson process on R^d x [0, ∞) with attached radii
    and uniform marks, materialized lazily cell by cell.

    Points of spatial cell ``k`` in time block ``j`` are drawn from the
    counter-keyed substream ``rng.child(k..., j)``. The realization therefore
    does not depend on the order of queries, which lets several coupled
    processes scan the very same points.

    Scans drop the cached blocks that lie wholly before their start time, so
    memory follows the active time window rather than the whole run.

    Args:
        d: Dimension.
        rate: Intensity per unit volume and time.
        F: Radius law.
        rng: Root stream of the field.
        cell_size: Side length of the spatial cells.
        time_block: Length of the time blocks (default: one expected point
            per cell and block).
        name: Label prefixed to the identity of every point.
    """

    def __init__(
        self,
        d: int,
        rate: float,
        F: RadiusDistribution,
        rng: RandomStream,
        cell_size: float,
        time_block: Optional[float] = None,
        name: str = "N",
    ):
        if d < 1:
            raise ValueError(f"dimension must be >= 1, got {d}")

        if not rate > 0:
            raise ValueError(f"rate must be positive, got {rate}")

        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")

        self.d = d
        self.rate = float(rate)
        self.F = F
        self.cell_size = float(cell_size)
        self.time_block = float(time_block or 1 / (rate * cell_size**d))
        self.name = name
        self._rng = rng
        self._blocks: Dict[tuple, FieldBlock] = {}
        # no cached block lies before this time block
        self._floor = 0

    def __repr__(self) -> str:
        return (
            f"PoissonField({self.name!r}, d={self.d}, rate={self.rate}, "
            f"rng={self._rng!r})"
        )

    @property
    def label(self) -> str:
        """Human readable identity of the underlying stream."""
        rng = self._rng
        return f"seed={rng.seed}/stream={rng.stream_id}/path={rng.path}"

    def cells_for_box(self, lower: np.ndarray, upper: np.ndarray) -> Iterator[tuple]:
        """Indices of the cells meeting the box ``[lower, upper]``."""
        lo = np.floor(np.asarray(lower) / self.cell_size).astype(int)
        hi = np.floor(np.asarray(upper) / self.cell_size).astype(int)
        axes = [range(a, b + 1) for a, b in zip(lo, hi)]

        grid = np.stack(
            np.meshgrid(*[np.array(a) for a in axes], indexing="ij"), axis=-1
        ).reshape(-1, self.d)

        for row in grid:
            yield tuple(int(v) for v in row)

    def block(self, cell: tuple, j: int) -> FieldBlock:
        """The (cached) points of *cell* during time block *j*."""
        key = (*cell, j)
        block = self._blocks.get(key)

        if block is None:
            block = self._blocks[key] = self._draw(cell, j)
            self._floor = min(self._floor, j)

        return block

    def _draw(self, cell: tuple, j: int) -> FieldBlock:
        gen = self._rng.child(*(_zigzag(k) for k in cell), j).generator
        n = gen.poisson(self.rate * self.cell_size**self.d * self.time_block)
        times = self.time_block * (j + gen.random(n))
        locations = (np.asarray(cell, dtype=float) + gen.random((n, self.d))) * (
            self.cell_size
        )
        radii = self.F.sample(gen, n)
        marks = gen.random(n)

        order = np.argsort(times, kind="stable")

        return FieldBlock(times[order], locations[order], radii[order], marks[order])

    def _peek(self, cell: tuple, j: int) -> FieldBlock:
        # redraws evicted blocks without caching them again
        block = self._blocks.get((*cell, j))
        return self._draw(cell, j) if block is None else block

    def evict(self, before: float) -> int:
        """
        Drops cached blocks that end at or before time *before*. They are
        redrawn identically if queried again.

        Returns:
            The number of evicted blocks.
        """
        j = int(math.floor(before / self.time_block))

        if j <= self._floor:
            return 0

        stale = [key for key in self._blocks if key[-1] < j]
        self._floor = j

        for key in stale:
            del self._blocks[key]

        return len(stale)

    def cached_blocks(self) -> int:
        """Number of blocks currently held in memory."""
        return len(self._blocks)

    def mark(self, ident: tuple) -> float:
        """Mark of the point with identity *ident*."""
        name, cell, j, i = ident

        if name != self.name:
            raise KeyError(f"{ident} is not a point of {self.name}")

        return float(self._peek(cell, j).marks[i])

    def thinned(
        self,
        cells: Iterable[tuple],
        until: float,
        mark_range: Tuple[float, float] = (-1.0, 1.0),
    ) -> Set[tuple]:
        """
        Identities of the points in *cells* up to time *until* whose mark
        lies in ``(low, high]``.
        """
        out = set()
        last = int(math.floor(until / self.time_block))

        for cell in cells:
            for j in range(last + 1):
                block = self._peek(cell, j)
                keep = (block.times <= until) & _marked(block.marks, mark_range)
                out.update((self.name, cell, j, int(i)) for i in np.flatnonzero(keep))

        return out

    def next_point(
        self,
        cells: Iterable[tuple],
        region_test: RegionTest,
        clock: float,
        until: Optional[float] = None,
        mark_range: Tuple[float, float] = (-1.0, 1.0),
        max_rejections: int = MAX_REJECTIONS,
    ) -> Optional[SpaceTimePoint]:
        """
        Earliest point after *clock* located in *cells*, with mark in the
        half-open range ``(low, high]``, whose location passes *region_test*.

        The cells must cover the region. Returns ``None`` once the scan passes
        *until*.

        Raises:
            RejectionGuardError: if *max_rejections* candidates in a row fail.
        """
        cells = list(cells)

        if not cells:
            return None

        j = int(math.floor(clock / self.time_block))
        self.evict(clock)
        rejections = 0

        while True:
            if until is not None and j * self.time_block > until:
                return None

            candidates = []

            for cell in cells:
                block = self.block(cell, j)
                keep = (block.times > clock) & _marked(block.marks, mark_range)
                for i in np.flatnonzero(keep):
                    candidates.append((float(block.times[i]), cell, int(i), block))

            candidates.sort(key=lambda c: c[0])

            for t, cell, i, block in candidates:
                if until is not None and t > until:
                    return None

                if region_test(block.locations[i]):
                    return SpaceTimePoint(
                        block.locations[i].copy(),
                        t,
                        float(block.radii[i]),
                        float(block.marks[i]),
                        (self.name, cell, j, i),
                    )

                rejections += 1

                if rejections >= max_rejections:
                    raise RejectionGuardError(
                        f"{rejections} consecutive rejections in {self!r} "
                        f"after t={clock}"
                    )

            j += 1
