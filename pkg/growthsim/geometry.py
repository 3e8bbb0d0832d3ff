# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
Geometric predicates on points, balls, cubes and unions of balls in R^d.

Points are plain one-dimensional :class:`numpy.ndarray` objects. Containment
is always closed (boundary points belong to the shape).
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass
from typing import (
    TYPE_CHECKING,
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Tuple,
    Union,
)

import numpy as np
from scipy import special
from scipy.spatial.distance import cdist

from growthsim.tools.stats import EstimateResult, from_standard_error

if TYPE_CHECKING:  # pragma: no cover
    from growthsim.stochastics import RandomStream

logger = logging.getLogger(__name__)

Point = np.ndarray
"""A point in R^d, a one-dimensional float array of length d."""

PointFilter = Callable[[np.ndarray], np.ndarray]
"""Vectorized predicate mapping an ``(m, d)`` array to an ``(m,)`` bool mask."""

RandomLike = Union["RandomStream", np.random.Generator]

EPS = 1e-12
"""Relative slack of every closed-set membership test."""

# upper bound on the size of one distance matrix block
BLOCK_ENTRIES = 1 << 22

# nets with more candidate grid points than this are streamed in slabs
_NET_CACHE_LIMIT = 300_000

# balls or query boxes spanning more index cells than this bypass the index
_GRID_MAX_CELLS = 1024


def as_point(coords: Iterable[float], d: Optional[int] = None) -> Point:
    """
    Validates and converts coordinates to a point.

    Args:
        coords: The coordinates (a scalar is accepted when ``d == 1``).
        d: The expected dimension, if known.

    Returns:
        A new float array.

    Raises:
        ValueError: if the dimension is wrong or a coordinate is not finite.
    """
    x = np.array(coords, dtype=float)

    if x.ndim == 0:
        x = x.reshape(1)

    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"a point must be a non-empty vector, got shape {x.shape}")

    if d is not None and x.size != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {x.size}")

    if not np.all(np.isfinite(x)):
        raise ValueError(f"point has non-finite coordinates: {x}")

    return x


def ball_volume(d: int, radius: float) -> float:
    """Lebesgue volume of a d-dimensional ball."""
    return math.pi ** (d / 2) * radius**d / float(special.gamma(d / 2 + 1))


def _generator(rng: RandomLike) -> np.random.Generator:
    return getattr(rng, "generator", rng)


def _positive(name: str, value: float) -> float:
    value = float(value)

    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be positive and finite, got {value}")

    return value


@dataclass(frozen=True, eq=False)
class Ball:
    """Closed Euclidean ball B(center, radius)."""

    center: Point
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        object.__setattr__(self, "radius", _positive("radius", self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def volume(self) -> float:
        return ball_volume(self.dim, self.radius)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box as ``(lower, upper)``."""
        return self.center - self.radius, self.center + self.radius

    def __repr__(self) -> str:
        return f"Ball({self.center.tolist()}, {self.radius!r})"


@dataclass(frozen=True, eq=False)
class Cube:
    """Closed axis-aligned cube with side length ``2 * half_side``."""

    center: Point
    half_side: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        object.__setattr__(self, "half_side", _positive("half_side", self.half_side))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def volume(self) -> float:
        return (2 * self.half_side) ** self.dim

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.center - self.half_side, self.center + self.half_side

    def __repr__(self) -> str:
        return f"Cube({self.center.tolist()}, {self.half_side!r})"


@dataclass(frozen=True)
class StripeConstraint:
    """
    The stripe {x : |x_i| <= b for all i >= 2}. Points outside an active
    stripe are immune to infection; the first coordinate is never constrained.
    """

    b: float = math.inf
    active: bool = False

    def __post_init__(self):
        if self.active:
            _positive("stripe half-width b", self.b)

    @classmethod
    def of_width(cls, b: Optional[float]) -> "StripeConstraint":
        """Active stripe of half-width *b*, or the inactive constraint for ``None``."""
        return cls() if b is None else cls(float(b), True)

    def mask(self, points: np.ndarray) -> np.ndarray:
        """Vectorized :func:`in_stripe` over an ``(m, d)`` array."""
        points = np.atleast_2d(points)

        if not self.active or points.shape[1] < 2:
            return np.ones(points.shape[0], dtype=bool)

        return np.all(np.abs(points[:, 1:]) <= self.b, axis=1)


Shape = Union[Ball, Cube]


def contains(shape: Shape, x: Point) -> bool:
    """
    Closed membership of *x* in a ball (Euclidean) or cube (sup-metric).

    Raises:
        ValueError: on dimension mismatch.
    """
    x = as_point(x, shape.dim)

    if isinstance(shape, Ball):
        return bool(np.linalg.norm(x - shape.center) <= shape.radius * (1 + EPS))

    if isinstance(shape, Cube):
        return bool(np.max(np.abs(x - shape.center)) <= shape.half_side * (1 + EPS))

    raise TypeError(f"unsupported shape: {type(shape).__name__}")


def in_stripe(x: Point, c: StripeConstraint) -> bool:
    """Whether *x* lies in the stripe (always true when *c* is inactive)."""
    return bool(c.mask(as_point(x))[0])


def inside_any(
    points: np.ndarray, centers: np.ndarray, radii: np.ndarray
) -> np.ndarray:
    """
    Mask of the points that lie in at least one of the balls.
    """
    points = np.atleast_2d(points)
    out = np.zeros(points.shape[0], dtype=bool)

    if len(radii) == 0 or points.shape[0] == 0:
        return out

    limit = radii * (1 + EPS)
    step = max(1, BLOCK_ENTRIES // len(radii))

    for start in range(0, points.shape[0], step):
        block = cdist(points[start : start + step], centers)
        out[start : start + step] = np.any(block <= limit, axis=1)

    return out


def count_inside(
    points: np.ndarray, centers: np.ndarray, radii: np.ndarray
) -> np.ndarray:
    """
    Number of balls containing each point.
    """
    points = np.atleast_2d(points)
    out = np.zeros(points.shape[0], dtype=np.int64)

    if len(radii) == 0 or points.shape[0] == 0:
        return out

    limit = radii * (1 + EPS)
    step = max(1, BLOCK_ENTRIES // len(radii))

    for start in range(0, points.shape[0], step):
        block = cdist(points[start : start + step], centers)
        out[start : start + step] = np.count_nonzero(block <= limit, axis=1)

    return out


def sample_in_ball(
    center: np.ndarray, radius: float, rng: RandomLike, size: Optional[int] = None
) -> np.ndarray:
    """
    Uniform sample(s) in a ball: isotropic direction, radius ``r * U**(1/d)``.
    """
    gen = _generator(rng)
    d = center.size
    n = 1 if size is None else size

    direction = gen.standard_normal((n, d))
    norms = np.linalg.norm(direction, axis=1)
    # a zero vector has probability zero, but guard the division anyway
    norms[norms == 0] = 1.0
    scale = radius * gen.random(n) ** (1 / d)
    points = center + direction * (scale / norms)[:, None]

    return points[0] if size is None else points


class _UniformGrid:
    # maps integer cell keys to the indices of the balls whose bounding box
    # meets the cell; very large balls are kept aside and always reported

    def __init__(self, d: int, cell_size: float):
        self.d = d
        self.cell_size = cell_size
        self._cells: Dict[tuple, List[int]] = {}
        self._oversize: List[int] = []

    def _keys(self, lower: np.ndarray, upper: np.ndarray) -> Optional[Iterator[tuple]]:
        lo = np.floor(lower / self.cell_size).astype(np.int64).tolist()
        hi = np.floor(upper / self.cell_size).astype(np.int64).tolist()

        if math.prod(b - a + 1 for a, b in zip(lo, hi)) > _GRID_MAX_CELLS:
            return None

        return itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi)))

    def insert(self, index: int, lower: np.ndarray, upper: np.ndarray) -> None:
        keys = self._keys(lower, upper)

        if keys is None:
            self._oversize.append(index)
            return

        for key in keys:
            self._cells.setdefault(key, []).append(index)

    def query(self, lower: np.ndarray, upper: np.ndarray) -> Optional[np.ndarray]:
        keys = self._keys(lower, upper)

        if keys is None:
            return None

        found = list(self._oversize)

        for key in keys:
            found.extend(self._cells.get(key, ()))

        return np.unique(np.array(found, dtype=np.int64))


class BallUnion:
    """
    A growing finite union of balls with the bookkeeping needed for exact
    uniform sampling: per-ball volume weights and multiplicity counts.

    Balls are only ever appended, so indices are stable and follow insertion
    order. A uniform grid over the balls speeds up single point queries; it
    never changes a result.

    Args:
        d: Dimension.
        balls: Initial balls.
        cell_size: Index cell side (default: the diameter of the first ball).
    """

    def __init__(
        self, d: int, balls: Iterable[Ball] = (), cell_size: Optional[float] = None
    ):
        if d < 1:
            raise ValueError(f"dimension must be >= 1, got {d}")

        self._d = d
        self._centers = np.empty((16, d))
        self._radii = np.empty(16)
        self._cum_weight = np.empty(16)
        self._n = 0
        self._cell_size = (
            None if cell_size is None else _positive("cell_size", cell_size)
        )
        self._grid: Optional[_UniformGrid] = None

        for ball in balls:
            self.add(ball)

    def __len__(self) -> int:
        return self._n

    @property
    def dim(self) -> int:
        return self._d

    @property
    def centers(self) -> np.ndarray:
        return self._centers[: self._n]

    @property
    def radii(self) -> np.ndarray:
        return self._radii[: self._n]

    @property
    def volume_sum(self) -> float:
        """Sum of the ball volumes, counting overlaps with multiplicity."""
        if self._n == 0:
            return 0.0

        return float(self._cum_weight[self._n - 1]) * ball_volume(self._d, 1.0)

    def add(self, ball: Ball) -> None:
        if ball.dim != self._d:
            raise ValueError(f"dimension mismatch: expected {self._d}, got {ball.dim}")

        if self._n == len(self._radii):
            self._centers = np.concatenate(
                [self._centers, np.empty_like(self._centers)]
            )
            self._radii = np.concatenate([self._radii, np.empty_like(self._radii)])
            self._cum_weight = np.concatenate(
                [self._cum_weight, np.empty_like(self._cum_weight)]
            )

        if self._grid is None:
            self._grid = _UniformGrid(self._d, self._cell_size or 2 * ball.radius)

        previous = self._cum_weight[self._n - 1] if self._n else 0.0
        self._centers[self._n] = ball.center
        self._radii[self._n] = ball.radius
        self._cum_weight[self._n] = previous + ball.radius**self._d

        # inflated so that boundary points within the EPS slack are indexed
        reach = ball.radius * (1 + 2 * EPS)
        self._grid.insert(self._n, ball.center - reach, ball.center + reach)
        self._n += 1

    def balls(self) -> Iterator[Ball]:
        for c, r in zip(self.centers, self.radii):
            yield Ball(c, r)

    def ball(self, index: int) -> Ball:
        if not 0 <= index < self._n:
            raise IndexError(index)

        return Ball(self._centers[index], self._radii[index])

    def candidates(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        """
        Ascending indices of the balls that may meet the box ``[lower, upper]``
        (a superset of the exact answer).
        """
        if self._n == 0:
            return np.empty(0, dtype=np.int64)

        found = self._grid.query(np.asarray(lower), np.asarray(upper))

        return np.arange(self._n) if found is None else found

    def near(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        """Ascending indices of the balls that intersect the box ``[lower, upper]``."""
        lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        idx = self.candidates(lower, upper)
        c = self._centers[idx]
        gap = np.maximum(lower - c, 0) + np.maximum(c - upper, 0)

        return idx[np.linalg.norm(gap, axis=1) <= self._radii[idx] * (1 + EPS)]

    def containing(self, x: Point) -> np.ndarray:
        """Ascending indices of the balls containing *x*."""
        x = np.asarray(x, dtype=float)
        idx = self.candidates(x, x)
        dist = np.linalg.norm(self._centers[idx] - x, axis=1)

        return idx[dist <= self._radii[idx] * (1 + EPS)]

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Bounding box of the whole union."""
        if self._n == 0:
            raise ValueError("empty union has no bounds")

        return (
            np.min(self.centers - self.radii[:, None], axis=0),
            np.max(self.centers + self.radii[:, None], axis=0),
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)

        if points.shape[0] == 1 and self._n:
            return np.array([self.containing(points[0]).size > 0])

        return inside_any(points, self.centers, self.radii)

    def multiplicity(self, points: np.ndarray) -> np.ndarray:
        """Number of balls containing each point."""
        points = np.atleast_2d(points)

        if points.shape[0] == 1 and self._n:
            return np.array([self.containing(points[0]).size], dtype=np.int64)

        return count_inside(points, self.centers, self.radii)

    def propose(self, rng: RandomLike, size: Optional[int] = None) -> np.ndarray:
        """
        Picks balls with probability proportional to their volume and samples
        uniformly inside each. The result has density proportional to the
        multiplicity of the union at each point.
        """
        if self._n == 0:
            raise ValueError("cannot sample from an empty union")

        gen = _generator(rng)
        n = 1 if size is None else size
        u = gen.random(n) * self._cum_weight[self._n - 1]
        index = np.minimum(
            np.searchsorted(self._cum_weight[: self._n], u, side="right"), self._n - 1
        )

        direction = gen.standard_normal((n, self._d))
        norms = np.linalg.norm(direction, axis=1)
        norms[norms == 0] = 1.0
        scale = self._radii[index] * gen.random(n) ** (1 / self._d)
        points = self._centers[index] + direction * (scale / norms)[:, None]

        return points[0] if size is None else points

    def sample(self, rng: RandomLike, size: Optional[int] = None) -> np.ndarray:
        """
        Exact uniform sample(s) on the union via multiplicity-corrected
        rejection: a proposal at x is kept with probability 1/m(x).
        """
        gen = _generator(rng)
        n = 1 if size is None else size
        out = np.empty((n, self._d))
        filled = 0

        while filled < n:
            want = n - filled
            proposals = self.propose(gen, want)
            keep = gen.random(want) * self.multiplicity(proposals) <= 1.0
            accepted = proposals[keep]
            out[filled : filled + len(accepted)] = accepted
            filled += len(accepted)

        return out[0] if size is None else out


def _as_union(balls: Union[BallUnion, Iterable[Ball]]) -> BallUnion:
    if isinstance(balls, BallUnion):
        if len(balls) == 0:
            raise ValueError("ball list must not be empty")
        return balls

    balls = list(balls)

    if not balls:
        raise ValueError("ball list must not be empty")

    return BallUnion(balls[0].dim, balls)


def union_volume(
    balls: Union[BallUnion, Iterable[Ball]], sample_count: int, rng: RandomLike
) -> EstimateResult:
    """
    Monte Carlo volume of a union of balls by hit counting in the bounding box.

    Args:
        balls: The union (non-empty).
        sample_count: Number of uniform points in the bounding box.
        rng: Random stream.

    Returns:
        Unbiased estimate with its standard error under
        ``diagnostics["standard_error"]``.

    Raises:
        ValueError: on an empty list or a non-positive sample count.
    """
    union = _as_union(balls)

    if sample_count < 1:
        raise ValueError(f"sample_count must be >= 1, got {sample_count}")

    gen = _generator(rng)
    lower, upper = union.bounds()
    box = float(np.prod(upper - lower))
    hits = 0

    for start in range(0, sample_count, 1 << 16):
        n = min(1 << 16, sample_count - start)
        points = lower + (upper - lower) * gen.random((n, union.dim))
        hits += int(np.count_nonzero(union.contains(points)))

    p = hits / sample_count
    se = box * math.sqrt(p * (1 - p) / sample_count)

    return from_standard_error(
        box * p, se, sample_count, standard_error=se, box_volume=box
    )


def sample_uniform_in_union(
    balls: Union[BallUnion, Iterable[Ball]], rng: RandomLike
) -> Point:
    """
    Exact uniform point on a union of balls.

    Raises:
        ValueError: on an empty list.
    """
    return _as_union(balls).sample(rng)


@functools.lru_cache(maxsize=32)
def _net_offsets(d: int, k: int) -> np.ndarray:
    # integer vectors j with |j| <= k, farthest first so that uncovered
    # boundary points are usually found early
    axis = np.arange(-k, k + 1)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    norm2 = np.sum(grid * grid, axis=1)
    keep = norm2 <= k * k
    grid, norm2 = grid[keep], norm2[keep]
    grid = grid[np.argsort(-norm2, kind="stable")]
    grid.setflags(write=False)
    return grid


def _net_slabs(d: int, k: int) -> Iterator[np.ndarray]:
    # outermost slabs first
    order = sorted(range(-k, k + 1), key=lambda j: (-abs(j), j))

    for j0 in order:
        rest = k * k - j0 * j0

        if d == 1:
            yield np.array([[j0]])
            continue

        m = math.isqrt(rest)
        small = (2 * m + 1) ** (d - 1) <= _NET_CACHE_LIMIT
        sub = _net_offsets(d - 1, m) if small else None

        if sub is None:
            axis = np.arange(-m, m + 1)
            sub = np.stack(
                np.meshgrid(*([axis] * (d - 1)), indexing="ij"), axis=-1
            ).reshape(-1, d - 1)

        sub = sub[np.sum(sub * sub, axis=1) <= rest]
        yield np.column_stack([np.full(len(sub), j0), sub])


def ball_net(target: Ball, resolution: float) -> Iterator[np.ndarray]:
    """
    Deterministic ε-net of a ball, yielded in blocks.

    The net is the grid ``center + h * Z^d`` restricted to the ball, with
    ``h = radius / ceil(radius / resolution) <= resolution``, so it always
    contains the center and the 2d axis-extreme boundary points.
    """
    resolution = _positive("resolution", resolution)
    k = max(1, math.ceil(target.radius / resolution))
    h = target.radius / k

    if (2 * k + 1) ** target.dim <= _NET_CACHE_LIMIT:
        yield target.center + h * _net_offsets(target.dim, k)
        return

    for slab in _net_slabs(target.dim, k):
        yield target.center + h * slab


def net_covered(
    target: Ball,
    centers: np.ndarray,
    radii: np.ndarray,
    resolution: float,
    point_filter: Optional[PointFilter] = None,
) -> bool:
    """
    ε-net covering test against balls given as arrays.

    Net points rejected by *point_filter* are ignored (they need no cover).
    One-sided: an uncovered sliver narrower than *resolution* may be missed;
    a truly covered target is always reported covered.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, target.dim)
    radii = np.asarray(radii, dtype=float)

    if len(radii):
        dist = np.linalg.norm(centers - target.center, axis=1)

        if np.any(dist + target.radius <= radii * (1 + EPS)):
            return True

        near = dist <= radii + target.radius
        centers, radii = centers[near], radii[near]

    for block in ball_net(target, resolution):
        if point_filter is not None:
            block = block[point_filter(block)]

        if len(block) and not np.all(inside_any(block, centers, radii)):
            return False

    return True


def is_ball_covered(
    target: Ball,
    covers: Union[BallUnion, Iterable[Ball]],
    resolution: float,
    point_filter: Optional[PointFilter] = None,
) -> bool:
    """
    Whether every point of an ε-net of *target* lies in some cover ball.

    Args:
        target: The ball to test.
        covers: Candidate covering balls (may be empty).
        resolution: Maximum grid spacing of the net.
        point_filter: Optional mask restricting which net points must be covered.

    Returns:
        ``True`` if covered up to the net resolution.
    """
    if isinstance(covers, BallUnion):
        idx = covers.near(*target.bounds())
        return net_covered(
            target, covers.centers[idx], covers.radii[idx], resolution, point_filter
        )

    covers = list(covers)
    centers = np.array([b.center for b in covers]).reshape(-1, target.dim)
    radii = np.array([b.radius for b in covers], dtype=float)

    return net_covered(target, centers, radii, resolution, point_filter)
