# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
The one-type and two-type continuum growth engines.

The infected region is never represented geometrically. An
:class:`InfectionHistory` keeps the chronological log of every shape (initial
balls at time 0, then outburst balls) and a point's type is the type of the
first shape containing it. Later outbursts never re-infect, so this
first-cover rule is exact.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import (
    IO,
    Any,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import numpy as np
from scipy.spatial.distance import cdist

from growthsim.geometry import (
    BLOCK_ENTRIES,
    EPS,
    Ball,
    BallUnion,
    Point,
    RandomLike,
    StripeConstraint,
    as_point,
    net_covered,
)
from growthsim.stochastics import (
    GuardError,
    PoissonField,
    RadiusDistribution,
    RandomStream,
    SpaceTimePoint,
    StreamLabel,
    next_thinned_event,
)
from growthsim.tools import chunk

logger = logging.getLogger(__name__)


class ExplosionError(GuardError):
    """
    Raised when another event is due after ``max_events`` outbursts. With a
    radius law of finite d-th moment event times tend to infinity almost
    surely, so this signals a configuration problem or a bug.
    """


class InfectionType(enum.IntEnum):
    UNINFECTED = 0
    TYPE_1 = 1
    TYPE_2 = 2
    SINGLE = 3

    @property
    def label(self) -> str:
        return {0: "uninfected", 1: "1", 2: "2", 3: "single"}[self.value]

    @classmethod
    def from_label(cls, label: str) -> InfectionType:
        for member in cls:
            if member.label == label:
                return member

        raise ValueError(f"unknown infection type: {label!r}")


@dataclass(frozen=True, eq=False)
class Outburst:
    """One growth event."""

    time: float
    center: Point
    radius: float
    itype: InfectionType
    effective: bool
    """Whether the ball gained territory over the strictly earlier history."""
    seq: int
    ident: Optional[tuple] = None
    """Identity of the driving :class:`PoissonField` point, if any."""

    @property
    def ball(self) -> Ball:
        return Ball(self.center, self.radius)

    def to_json(self) -> Dict[str, Any]:
        return {
            "seq": self.seq,
            "time": self.time,
            "type": self.itype.label,
            "center": [float(v) for v in self.center],
            "radius": self.radius,
            "effective": self.effective,
        }


def _grow(array: np.ndarray) -> np.ndarray:
    return np.concatenate([array, np.empty_like(array)])


class InfectionHistory:
    """
    Chronological record of a growth process: the initial sets and every
    outburst.

    Args:
        d: Dimension.
        initial_1: Initial balls of type 1, or of the single type when
            *two_type* is false.
        initial_2: Initial balls of type 2 (two-type only).
        stripe: Optional hampering stripe.
        resolution: Net spacing of every covering test.
        two_type: Whether two competing types are present.
        prune_covered: Leave non-effective outbursts out of the shape index.
            They are logged as usual. Classification then differs from the
            exact rule only inside slivers narrower than *resolution*.

    Raises:
        ValueError: if the initial sets are empty, overlap, or have the
            wrong dimension.
    """

    def __init__(
        self,
        d: int,
        initial_1: Sequence[Ball],
        initial_2: Sequence[Ball] = (),
        stripe: StripeConstraint = StripeConstraint(),
        resolution: float = 0.02,
        two_type: bool = True,
        prune_covered: bool = False,
    ):
        self.d = d
        self.initial_1 = list(initial_1)
        self.initial_2 = list(initial_2)
        self.stripe = stripe
        self.resolution = float(resolution)
        self.two_type = two_type
        self.prune_covered = prune_covered
        self.outbursts: List[Outburst] = []

        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {resolution}")

        if not self.initial_1 or (two_type and not self.initial_2):
            raise ValueError("every type needs a non-empty initial set")

        if not two_type and self.initial_2:
            raise ValueError("a one-type history has a single initial set")

        for ball in self.initial_1 + self.initial_2:
            if ball.dim != d:
                raise ValueError(f"initial ball {ball} is not {d}-dimensional")

        # closed balls may touch, interiors must not overlap
        for a in self.initial_1:
            for b in self.initial_2:
                gap = np.linalg.norm(a.center - b.center) - a.radius - b.radius
                if gap < -EPS * max(a.radius, b.radius):
                    raise ValueError(f"initial sets overlap: {a} and {b}")

        self._shapes = BallUnion(d)
        self._types = np.empty(16, dtype=np.int8)
        self._times = np.empty(16)
        self._by_type: Dict[InfectionType, BallUnion] = {}

        first = InfectionType.TYPE_1 if two_type else InfectionType.SINGLE

        for ball in self.initial_1:
            self._add_shape(ball, first, 0.0)

        for ball in self.initial_2:
            self._add_shape(ball, InfectionType.TYPE_2, 0.0)

    def __len__(self) -> int:
        return len(self.outbursts)

    def __repr__(self) -> str:
        return (
            f"InfectionHistory(d={self.d}, two_type={self.two_type}, "
            f"outbursts={len(self.outbursts)})"
        )

    @property
    def types(self) -> Tuple[InfectionType, ...]:
        """The infection types present in this history."""
        if self.two_type:
            return InfectionType.TYPE_1, InfectionType.TYPE_2
        return (InfectionType.SINGLE,)

    @property
    def last_time(self) -> float:
        return self.outbursts[-1].time if self.outbursts else 0.0

    @property
    def centers(self) -> np.ndarray:
        """Centers of the indexed shapes, in chronological order."""
        return self._shapes.centers

    @property
    def radii(self) -> np.ndarray:
        return self._shapes.radii

    @property
    def shape_types(self) -> np.ndarray:
        return self._types[: len(self._shapes)]

    @property
    def shape_times(self) -> np.ndarray:
        return self._times[: len(self._shapes)]

    def shape_count(self, t: float = math.inf) -> int:
        """Number of indexed shapes present at time *t*."""
        return int(np.searchsorted(self.shape_times, t, side="right"))

    def shapes(
        self, t: float = math.inf, itype: Optional[InfectionType] = None
    ) -> Iterator[Tuple[Ball, InfectionType, float]]:
        for i in range(self.shape_count(t)):
            kind = InfectionType(int(self._types[i]))
            if itype is None or kind == itype:
                yield self._shapes.ball(i), kind, float(self._times[i])

    def proposal_union(self, itype: InfectionType) -> BallUnion:
        """All shapes of one type: a superset of the region of that type."""
        return self._by_type[itype]

    def _add_shape(self, ball: Ball, itype: InfectionType, time: float) -> None:
        n = len(self._shapes)

        if n == len(self._types):
            self._types = _grow(self._types)
            self._times = _grow(self._times)

        self._shapes.add(ball)
        self._types[n] = itype
        self._times[n] = time

        union = self._by_type.get(itype)
        if union is None:
            union = self._by_type[itype] = BallUnion(self.d)
        union.add(ball)

    def classify(self, x: Point, t: float = math.inf) -> InfectionType:
        """
        Type of *x* at time *t* by the first-cover rule.

        Points outside an active stripe are immune.
        """
        x = as_point(x, self.d)

        if not self.stripe.mask(x)[0]:
            return InfectionType.UNINFECTED

        idx = self._shapes.containing(x)
        idx = idx[self._times[idx] <= t]

        if idx.size == 0:
            return InfectionType.UNINFECTED

        return InfectionType(int(self._types[idx[0]]))

    def classify_many(self, points: np.ndarray, t: float = math.inf) -> np.ndarray:
        """
        Vectorized :meth:`classify`. Returns the integer type codes.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(points.shape[0], dtype=np.int8)

        if points.shape[0] == 0:
            return out

        idx = self._shapes.near(points.min(axis=0), points.max(axis=0))
        idx = idx[idx < self.shape_count(t)]

        if idx.size == 0:
            return out

        centers = self._shapes.centers[idx]
        limit = self._shapes.radii[idx] * (1 + EPS)
        types = self._types[idx]
        step = max(1, BLOCK_ENTRIES // idx.size)

        for start in range(0, points.shape[0], step):
            inside = cdist(points[start : start + step], centers) <= limit
            hit = inside.any(axis=1)
            first = inside.argmax(axis=1)
            out[start : start + step] = np.where(hit, types[first], 0)

        out[~self.stripe.mask(points)] = InfectionType.UNINFECTED

        return out

    def covers_ball(self, target: Ball, t: float = math.inf) -> bool:
        """
        Whether the shapes present at time *t* cover *target* up to the net
        resolution. Parts of the target outside an active stripe are ignored.
        """
        idx = self._shapes.near(*target.bounds())
        idx = idx[idx < self.shape_count(t)]
        point_filter = self.stripe.mask if self.stripe.active else None

        return net_covered(
            target,
            self._shapes.centers[idx],
            self._shapes.radii[idx],
            self.resolution,
            point_filter,
        )

    def record(
        self,
        time: float,
        center: Point,
        radius: float,
        itype: InfectionType,
        ident: Optional[tuple] = None,
        effective: Optional[bool] = None,
    ) -> Outburst:
        """
        Appends an outburst, evaluating its effectiveness against the history
        before it unless *effective* is given (log replay).

        Raises:
            ValueError: if *time* does not exceed the previous event time or
                the type is not present.
        """
        if itype not in self.types:
            raise ValueError(f"{itype!r} is not a type of this history")

        if not time > self.last_time:
            raise ValueError(
                f"event times must increase strictly: {time} after {self.last_time}"
            )

        ball = Ball(center, radius)

        if effective is None:
            effective = not self.covers_ball(ball)

        outburst = Outburst(
            float(time),
            ball.center,
            ball.radius,
            itype,
            effective,
            len(self.outbursts),
            ident,
        )
        self.outbursts.append(outburst)

        if effective or not self.prune_covered:
            self._add_shape(ball, itype, outburst.time)

        return outburst

    def event_count(
        self, t: float = math.inf, itype: Optional[InfectionType] = None
    ) -> int:
        return sum(
            1
            for o in self.outbursts
            if o.time <= t and (itype is None or o.itype == itype)
        )

    def header(self) -> Dict[str, Any]:
        """Everything needed to rebuild an empty history of the same layout."""

        def balls(items):
            return [[[float(v) for v in b.center], b.radius] for b in items]

        return {
            "d": self.d,
            "two_type": self.two_type,
            "initial_1": balls(self.initial_1),
            "initial_2": balls(self.initial_2),
            "stripe_b": self.stripe.b if self.stripe.active else None,
            "resolution": self.resolution,
            "prune_covered": self.prune_covered,
        }

    @classmethod
    def from_header(cls, header: Mapping[str, Any]) -> InfectionHistory:
        def balls(items):
            return [Ball(c, r) for c, r in items]

        return cls(
            header["d"],
            balls(header["initial_1"]),
            balls(header["initial_2"]),
            StripeConstraint.of_width(header["stripe_b"]),
            header["resolution"],
            header["two_type"],
            header["prune_covered"],
        )


def write_event_log(
    history: InfectionHistory, file: IO[str], config: Optional[Mapping[str, Any]] = None
) -> None:
    """
    Writes the JSONL event log: one header line, then one outburst per line.

    Args:
        history: The history to export.
        file: Text file opened for writing.
        config: Configuration echo stored in the header (should include the seed).
    """
    header = {"header": {"history": history.header(), "config": dict(config or {})}}
    file.write(json.dumps(header, sort_keys=True) + "\n")

    for outburst in history.outbursts:
        file.write(json.dumps(outburst.to_json(), sort_keys=True) + "\n")


def read_event_log(file: IO[str]) -> Tuple[InfectionHistory, Dict[str, Any]]:
    """
    Rebuilds a history from a JSONL event log.

    Returns:
        The history and the configuration echo of the header.

    Raises:
        ValueError: if the first line is not a header.
    """
    lines = iter(file)

    try:
        header = json.loads(next(lines))["header"]
    except (StopIteration, KeyError, TypeError) as ex:
        raise ValueError("event log does not start with a header line") from ex

    history = InfectionHistory.from_header(header["history"])

    for line in lines:
        if not line.strip():
            continue

        record = json.loads(line)
        history.record(
            record["time"],
            record["center"],
            record["radius"],
            InfectionType.from_label(record["type"]),
            effective=record["effective"],
        )

    return history, header.get("config", {})


@dataclass(frozen=True)
class ProcessConfig:
    """
    Parameters of a growth process.

    The one-type process runs at rate ``lambda_1``; ``lambda_2`` is only used
    in two-type mode. Unset initial sets default to ``B(0, γ)`` (one-type) or
    ``Γ₁ = B(-2γ e₁, γ)``, ``Γ₂ = B(0, γ)`` (two-type), where γ is the mean
    outburst radius. The covering resolution defaults to γ/50.
    """

    d: int
    F: RadiusDistribution
    lambda_1: float = 1.0
    lambda_2: float = 0.0
    horizon_time: float = 10.0
    max_events: int = 1_000_000
    seed: int = 0
    stream_id: int = 0
    stripe: StripeConstraint = StripeConstraint()
    covering_resolution: Optional[float] = None
    two_type: bool = False
    initial_1: Optional[Tuple[Ball, ...]] = None
    initial_2: Optional[Tuple[Ball, ...]] = None
    allow_inadmissible: bool = False
    prune_covered: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")

        for name in ("lambda_1", "lambda_2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")

        if self.two_type and self.lambda_1 == 0 and self.lambda_2 == 0:
            raise ValueError("lambda_1 and lambda_2 must not both be zero")

        if not self.two_type and self.lambda_1 == 0:
            raise ValueError("the one-type rate must be positive")

        if not (math.isfinite(self.horizon_time) and self.horizon_time >= 0):
            raise ValueError(
                f"horizon must be finite and >= 0, got {self.horizon_time}"
            )

        if self.max_events < 1:
            raise ValueError(f"max_events must be >= 1, got {self.max_events}")

        if not self.F.mgf_exists and not self.allow_inadmissible:
            raise ValueError(
                f"radius law {self.F} violates the moment condition "
                "∫exp(-φr)dF(r) < ∞ for some φ < 0; "
                "set allow_inadmissible to use it"
            )

        gamma = self.gamma

        if self.covering_resolution is None:
            object.__setattr__(self, "covering_resolution", gamma / 50)
        elif not self.covering_resolution > 0:
            raise ValueError(
                f"covering_resolution must be positive, got {self.covering_resolution}"
            )

        origin = np.zeros(self.d)
        e1 = np.eye(self.d)[0]

        if self.initial_1 is None:
            default = (
                Ball(-2 * gamma * e1, gamma) if self.two_type else Ball(origin, gamma)
            )
            object.__setattr__(self, "initial_1", (default,))

        if self.initial_2 is None:
            object.__setattr__(
                self, "initial_2", (Ball(origin, gamma),) if self.two_type else ()
            )

        object.__setattr__(self, "initial_1", tuple(self.initial_1))
        object.__setattr__(self, "initial_2", tuple(self.initial_2))

        if not any(
            np.linalg.norm(b.center) <= b.radius
            for b in self.initial_1 + self.initial_2
        ):
            raise ValueError("the initial sets must contain the origin")

        # validates disjointness and dimensions
        self.new_history()

    @property
    def gamma(self) -> float:
        """Mean outburst radius γ."""
        return self.F.mean_gamma

    @property
    def rates(self) -> Dict[InfectionType, float]:
        """Intensity of every type with a positive rate."""
        if not self.two_type:
            return {InfectionType.SINGLE: self.lambda_1}

        rates = {
            InfectionType.TYPE_1: self.lambda_1,
            InfectionType.TYPE_2: self.lambda_2,
        }

        return {k: v for k, v in rates.items() if v > 0}

    def replace(self, **changes: Any) -> ProcessConfig:
        """A copy with some fields changed (defaults are recomputed)."""
        if "F" in changes and "covering_resolution" not in changes:
            changes["covering_resolution"] = None
        if "F" in changes or "two_type" in changes or "d" in changes:
            changes.setdefault("initial_1", None)
            changes.setdefault("initial_2", None)
        return dataclasses.replace(self, **changes)

    def new_history(self) -> InfectionHistory:
        return InfectionHistory(
            self.d,
            self.initial_1,
            self.initial_2,
            self.stripe,
            self.covering_resolution,
            self.two_type,
            self.prune_covered,
        )

    def to_dict(self) -> Dict[str, Any]:
        """Configuration echo for log headers."""
        return {
            "d": self.d,
            "radius": self.F.to_dict(),
            "lambda_1": self.lambda_1,
            "lambda_2": self.lambda_2,
            "horizon_time": self.horizon_time,
            "max_events": self.max_events,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "stripe_b": self.stripe.b if self.stripe.active else None,
            "covering_resolution": self.covering_resolution,
            "two_type": self.two_type,
            "prune_covered": self.prune_covered,
        }


class EventSource(ABC):
    """
    Supplies candidate outbursts of one infection type.

    Implementations must return the first point after *clock* of a space-time
    Poisson process restricted to the current region of *itype*, and must
    not depend on candidates they returned before (losing candidates are
    simply asked for again).
    """

    label: str
    """Name of the randomness consumed, as reported in coupled traces."""

    @abstractmethod
    def next_event(
        self,
        history: InfectionHistory,
        itype: InfectionType,
        clock: float,
        until: Optional[float] = None,
    ) -> Optional[SpaceTimePoint]:
        ...


def _region_test(history: InfectionHistory, itype: InfectionType):
    def test(x: Point) -> bool:
        return history.classify(x) == itype

    return test


class ThinningSource(EventSource):
    """
    Exponential clock plus uniform sampling on the proposal union of the
    type, accepted by region membership.
    """

    def __init__(self, rate: float, F: RadiusDistribution, rng: RandomStream):
        self.rate = rate
        self.F = F
        self.rng = rng
        self.label = f"thinning(rate={rate:g}, stream={rng.stream_id}, path={rng.path})"

    def next_event(self, history, itype, clock, until=None):
        return next_thinned_event(
            _region_test(history, itype),
            history.proposal_union(itype),
            self.rate,
            clock,
            self.F,
            self.rng,
            until,
        )


class FieldSource(EventSource):
    """
    Scans a shared :class:`PoissonField`, keeping points whose mark lies in
    ``(low, high]``. The effective rate is ``field.rate * (high - low)``.

    One instance serves a single history and type; the set of field cells
    covering the proposal union is maintained incrementally.
    """

    def __init__(
        self, field: PoissonField, mark_range: Tuple[float, float] = (0.0, 1.0)
    ):
        low, high = mark_range

        if not 0.0 <= low <= high <= 1.0:
            raise ValueError(
                f"mark range must satisfy 0 <= low <= high <= 1, got {mark_range}"
            )

        self.field = field
        self.mark_range = (low, high)
        self.label = f"{field.name}[{low:g},{high:g}]"
        self._cells: Dict[tuple, None] = {}
        self._indexed = 0

    @property
    def rate(self) -> float:
        return self.field.rate * (self.mark_range[1] - self.mark_range[0])

    def next_event(self, history, itype, clock, until=None):
        if self.rate == 0:
            return None

        union = history.proposal_union(itype)

        for i in range(self._indexed, len(union)):
            for cell in self.field.cells_for_box(*union.ball(i).bounds()):
                self._cells[cell] = None

        self._indexed = len(union)

        return self.field.next_point(
            self._cells, _region_test(history, itype), clock, until, self._scan_range
        )

    @property
    def _scan_range(self) -> Tuple[float, float]:
        # marks are never exactly 0, so (0, high] keeps every mark up to high
        low, high = self.mark_range
        return (low if low > 0 else -1.0, high)

    @property
    def cells(self) -> List[tuple]:
        """Field cells covering the proposal union indexed so far."""
        return list(self._cells)

    def thinned(self, cells: Iterable[tuple], until: float) -> Set[tuple]:
        """
        Identities of the field points in *cells* up to *until* that this
        source accepts by mark, whatever their location.
        """
        if self.rate == 0:
            return set()

        return self.field.thinned(cells, until, self._scan_range)


class SuperposedSource(EventSource):
    """The earliest candidate of several independent sources."""

    def __init__(self, sources: Sequence[EventSource]):
        if not sources:
            raise ValueError("need at least one source")

        self.sources = list(sources)
        self.label = " + ".join(s.label for s in self.sources)

    def next_event(self, history, itype, clock, until=None):
        best = None

        for source in self.sources:
            point = source.next_event(history, itype, clock, until)
            if point is not None and (best is None or point.time < best.time):
                best = point

        return best


def default_sources(cfg: ProcessConfig) -> Dict[InfectionType, EventSource]:
    """
    Independent thinning sources for every type with a positive rate, on the
    substreams ``(seed, stream_id, label)``.
    """
    root = RandomStream(cfg.seed, cfg.stream_id)
    labels = {
        InfectionType.SINGLE: StreamLabel.SINGLE,
        InfectionType.TYPE_1: StreamLabel.TYPE_1,
        InfectionType.TYPE_2: StreamLabel.TYPE_2,
    }

    return {
        itype: ThinningSource(rate, cfg.F, root.child(labels[itype]))
        for itype, rate in cfg.rates.items()
    }


class GrowthProcess:
    """
    Event-driven simulation of a growth process.

    Every step draws one candidate per type from its source, keeps the
    earliest and discards the others. They are drawn afresh after the state
    change, which is exact by the memoryless property.

    Args:
        cfg: The configuration.
        sources: Event source per infection type (default: independent
            thinning sources derived from the seed).
        history: History to continue (default: a fresh one from *cfg*).
    """

    def __init__(
        self,
        cfg: ProcessConfig,
        sources: Optional[Mapping[InfectionType, EventSource]] = None,
        history: Optional[InfectionHistory] = None,
    ):
        self.cfg = cfg
        self.history = cfg.new_history() if history is None else history
        self.sources = dict(default_sources(cfg) if sources is None else sources)
        self.clock = self.history.last_time

        for itype in self.sources:
            if itype not in self.history.types:
                raise ValueError(f"source given for absent type {itype!r}")

    def step(self, until: Optional[float] = None) -> Optional[Outburst]:
        """
        Performs the next outburst.

        Args:
            until: Do not look for events later than this time.

        Returns:
            The new outburst, or ``None`` when there is none before *until*.

        Raises:
            ExplosionError: if there is a next event but the history already
                holds ``max_events`` outbursts.
            RuntimeError: on exactly tied candidate times.
        """
        candidates = []

        for itype, source in self.sources.items():
            point = source.next_event(self.history, itype, self.clock, until)
            if point is not None:
                candidates.append((point.time, itype, point))

        if not candidates:
            return None

        if len(self.history) >= self.cfg.max_events:
            raise ExplosionError(
                f"{self.cfg.max_events} outbursts by t={self.clock:g}; event times "
                "should tend to infinity for a radius law with finite d-th moment"
            )

        candidates.sort(key=lambda c: c[0])

        if len(candidates) > 1 and candidates[0][0] == candidates[1][0]:
            raise RuntimeError(
                f"tied candidate times at t={candidates[0][0]!r}; random stream fault"
            )

        time, itype, point = candidates[0]
        outburst = self.history.record(
            time, point.location, point.radius, itype, ident=point.ident
        )
        self.clock = time

        logger.debug("outburst %d: t=%g type=%s", outburst.seq, time, itype.label)

        return outburst

    def run_until(self, horizon: Optional[float] = None) -> InfectionHistory:
        """
        Steps until the next event would come after *horizon* (default: the
        configured horizon).

        Raises:
            ExplosionError: when an event beyond ``max_events`` is due first.
        """
        horizon = self.cfg.horizon_time if horizon is None else horizon

        while self.step(horizon) is not None:
            pass

        return self.history


def run_until(
    cfg: ProcessConfig,
    sources: Optional[Mapping[InfectionType, EventSource]] = None,
    history: Optional[InfectionHistory] = None,
) -> InfectionHistory:
    """Runs a process from *cfg* up to its horizon and returns the history."""
    return GrowthProcess(cfg, sources, history).run_until()


def classify(h: InfectionHistory, x: Point, t: float = math.inf) -> InfectionType:
    """Type of *x* at time *t*; see :meth:`InfectionHistory.classify`."""
    return h.classify(x, t)


def _boundary_candidates(
    centers: np.ndarray, radii: np.ndarray, per_shape: int, gen: np.random.Generator
) -> np.ndarray:
    # outward extreme point, both first-axis extremes, then random directions
    m, d = centers.shape
    norms = np.linalg.norm(centers, axis=1)
    e1 = np.eye(d)[0]
    outward = np.where(
        norms[:, None] > 0, centers / np.where(norms > 0, norms, 1)[:, None], e1
    )
    parts = [
        centers + radii[:, None] * outward,
        centers + radii[:, None] * e1,
        centers - radii[:, None] * e1,
    ]

    if per_shape > 0:
        directions = gen.standard_normal((m, per_shape, d))
        norms = np.linalg.norm(directions, axis=2, keepdims=True)
        directions /= np.maximum(norms, 1e-300)
        points = centers[:, None, :] + radii[:, None, None] * directions
        parts.append(points.reshape(-1, d))

    return np.concatenate(parts)


def norm_sup(
    h: InfectionHistory,
    t: float = math.inf,
    itype: Optional[InfectionType] = None,
    boundary_points: int = 8,
    rng: Optional[RandomLike] = None,
) -> float:
    """
    ``sup{|x| : x infected at time t}``, for one type or for all (``None``).

    For the whole infected set without a stripe this is exact: the largest
    ``|center| + radius`` over the shapes. Otherwise it is a lower bound: the
    largest norm among boundary candidates (outward and first-axis extremes
    plus *boundary_points* random points per shape) that classify as wanted.
    """
    n = h.shape_count(t)

    if n == 0:
        return 0.0

    centers, radii = h.centers[:n], h.radii[:n]
    reach = np.linalg.norm(centers, axis=1) + radii

    if itype is None and not h.stripe.active:
        return float(reach.max())

    if itype is None:
        selected = np.arange(n)
    else:
        selected = np.flatnonzero(h.shape_types[:n] == itype)

    if selected.size == 0:
        return 0.0

    selected = selected[np.argsort(-reach[selected], kind="stable")]
    gen = getattr(rng, "generator", rng)

    if gen is None:
        gen = RandomStream(0, 0, (StreamLabel.BOUNDARY,)).generator

    best = 0.0

    for block in chunk(selected, 256):
        if reach[block[0]] <= best:
            break

        points = _boundary_candidates(
            centers[block], radii[block], boundary_points, gen
        )
        labels = h.classify_many(points, t)
        ok = labels != 0 if itype is None else labels == itype

        if np.any(ok):
            best = max(best, float(np.linalg.norm(points[ok], axis=1).max()))

    return best


def norm_star(h: InfectionHistory, t: float = math.inf) -> float:
    """
    Distance from the origin to the uninfected set: the largest s (within the
    history's resolution) such that ``B(0, s)`` is covered at time *t*.
    Returns 0 when the origin itself is uninfected.
    """
    origin = np.zeros(h.d)

    if h.classify(origin, t) == InfectionType.UNINFECTED:
        return 0.0

    hi = h.stripe.b if h.stripe.active else norm_sup(h, t)
    lo = 0.0

    if not h.stripe.active and h.covers_ball(Ball(origin, hi), t):
        return hi

    while hi - lo > h.resolution:
        mid = (lo + hi) / 2

        if h.covers_ball(Ball(origin, mid), t):
            lo = mid
        else:
            hi = mid

    return lo
