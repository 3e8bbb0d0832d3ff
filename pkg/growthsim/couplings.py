# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
Coupled constructions with pathwise certificates.

Every coupling drives its member processes from shared
:class:`~growthsim.stochastics.PoissonField` realizations and then checks,
at every event time of any member, that

* the set of field points accepted by the dominated member is a subset of
  those accepted by the dominating member, and
* uniformly sampled audit points infected in the dominated member are
  infected in the dominating one.

Both checks are exact; a single failure means an implementation bug.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Any, Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from growthsim.brw import POPULATION_CAP, LayeredBrw
from growthsim.geometry import BallUnion
from growthsim.process import (
    EventSource,
    FieldSource,
    InfectionHistory,
    InfectionType,
    ProcessConfig,
    SuperposedSource,
    norm_sup,
    run_until,
)
from growthsim.stochastics import PoissonField, RandomStream, StreamLabel
from growthsim.tools.stats import EstimateResult, summarize

logger = logging.getLogger(__name__)

AUDIT_POINTS = 1000
"""Default number of audit points sampled per event time."""

CERTIFICATE_COLUMNS = ("event_seq", "time", "check_name", "pass")


@dataclass(frozen=True)
class CertificateRecord:
    event_seq: int
    """Position of the checked event time in the merged timeline (0 = start)."""
    time: float
    check_name: str
    passed: bool


class CertificateError(AssertionError):
    """Raised when a pathwise coupling certificate fails."""

    def __init__(self, failures: Sequence[CertificateRecord]):
        self.failures = list(failures)
        first = self.failures[0]
        super().__init__(
            f"{len(self.failures)} certificate check(s) failed; first: "
            f"{first.check_name} at t={first.time:g} (event {first.event_seq})"
        )


@dataclass
class CoupledTrace:
    """
    The outcome of one coupled run.

    Attributes:
        name: The coupling.
        histories: Member label to history (or BRW population).
        shared_streams: Member label to the names of the streams it consumed.
        certificate_log: Every check performed.
        diagnostics: Reported, never asserted, statistics.
    """

    name: str
    histories: Dict[str, Any]
    shared_streams: Dict[str, List[str]]
    certificate_log: List[CertificateRecord] = field(default_factory=list)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.certificate_log)

    def failures(self) -> List[CertificateRecord]:
        return [r for r in self.certificate_log if not r.passed]

    def log(self, event_seq: int, time: float, check_name: str, passed: bool) -> None:
        self.certificate_log.append(
            CertificateRecord(
                event_seq, float(time), f"{self.name}:{check_name}", bool(passed)
            )
        )

    def check(self, strict: bool = True) -> CoupledTrace:
        """
        Raises:
            CertificateError: if *strict* and some check failed.
        """
        failures = self.failures()

        if failures:
            logger.error("%s: %d certificate failure(s)", self.name, len(failures))
            if strict:
                raise CertificateError(failures)

        return self


def write_certificates(records: Iterable[CertificateRecord], file: IO[str]) -> None:
    """Writes the certificate CSV ``event_seq,time,check_name,pass``."""
    writer = csv.writer(file, lineterminator="\n")
    writer.writerow(CERTIFICATE_COLUMNS)

    for r in records:
        passed = "true" if r.passed else "false"
        writer.writerow([r.event_seq, repr(r.time), r.check_name, passed])


def _fields(cfg: ProcessConfig, rng: RandomStream, *names: str) -> List[PoissonField]:
    cell = 2 * cfg.gamma
    return [
        PoissonField(
            cfg.d, 1.0, cfg.F, rng.child(StreamLabel.FIELD, i), cell, name=name
        )
        for i, name in enumerate(names)
    ]


def _one_type(cfg: ProcessConfig, rate: float, initial) -> ProcessConfig:
    # a zero rate is expressed by giving the member no source at all
    return cfg.replace(
        two_type=False,
        lambda_1=rate if rate > 0 else 1.0,
        lambda_2=0.0,
        initial_1=tuple(initial),
        initial_2=(),
    )


def _check_coupling_config(cfg: ProcessConfig) -> float:
    if not cfg.two_type:
        raise ValueError("the coupling needs a two-type configuration")

    if cfg.lambda_1 != 1:
        raise ValueError(f"the coupling needs lambda_1 = 1, got {cfg.lambda_1}")

    if not 0 <= cfg.lambda_2 <= 1:
        raise ValueError(f"the coupling needs 0 <= lambda_2 <= 1, got {cfg.lambda_2}")

    if cfg.stripe.active:
        raise ValueError("couplings run without a stripe")

    return cfg.lambda_2


def _labels(sources: Mapping[InfectionType, EventSource]) -> Dict[str, List[str]]:
    return {itype.label: [s.label] for itype, s in sources.items()}


def _events(
    h: InfectionHistory, itype: InfectionType = None
) -> List[Tuple[float, tuple]]:
    return [
        (o.time, o.ident) for o in h.outbursts if itype is None or o.itype == itype
    ]


def _event_times(*histories: InfectionHistory) -> List[float]:
    return sorted({0.0} | {o.time for h in histories for o in h.outbursts})


def _union(shapes) -> BallUnion:
    balls = [ball for ball, _, _ in shapes]
    return BallUnion(balls[0].dim, balls)


def _certify(
    trace: CoupledTrace,
    times: Sequence[float],
    small: Sequence[Tuple[float, tuple]],
    large: Sequence[Tuple[float, tuple]],
    audit_region: Callable[[float], BallUnion],
    in_small: Callable[[np.ndarray, float], np.ndarray],
    in_large: Callable[[np.ndarray, float], np.ndarray],
    gen: np.random.Generator,
    audit_points: int,
) -> None:
    for k, t in enumerate(times):
        accepted_small = {ident for s, ident in small if s <= t}
        accepted_large = {ident for s, ident in large if s <= t}
        trace.log(k, t, "events", accepted_small <= accepted_large)

        if audit_points:
            points = audit_region(t).sample(gen, audit_points)
            points = points[in_small(points, t)]
            trace.log(k, t, "audit", bool(np.all(in_large(points, t))))


def couple_two_type_vs_one_type(
    cfg: ProcessConfig, audit_points: int = AUDIT_POINTS, strict: bool = True
) -> CoupledTrace:
    """
    Type 2 of a ``(1, λ)`` two-type process inside a rate-λ one-type process
    started from Γ₂.

    One field ``N`` thinned to marks ``<= λ`` drives both the one-type
    outbursts and the type-2 outbursts; an independent field ``N1`` drives
    type 1. ``λ = lambda_2`` of *cfg*.

    Raises:
        CertificateError: on a failed check when *strict*.
    """
    lam = _check_coupling_config(cfg)
    rng = RandomStream(cfg.seed, cfg.stream_id)
    shared, strong = _fields(cfg, rng, "N", "N1")

    two_sources: Dict[InfectionType, EventSource] = {
        InfectionType.TYPE_1: FieldSource(strong)
    }
    one_sources: Dict[InfectionType, EventSource] = {}

    if lam > 0:
        two_sources[InfectionType.TYPE_2] = FieldSource(shared, (0.0, lam))
        one_sources[InfectionType.SINGLE] = FieldSource(shared, (0.0, lam))

    two = run_until(cfg, two_sources)
    one = run_until(_one_type(cfg, lam, cfg.initial_2), one_sources)

    trace = CoupledTrace(
        "type-2 within one-type",
        {"two-type": two, "one-type": one},
        {"two-type": _labels(two_sources), "one-type": _labels(one_sources)},
    )

    _certify(
        trace,
        _event_times(two, one),
        _events(two, InfectionType.TYPE_2),
        _events(one),
        lambda t: _union(two.shapes(t, InfectionType.TYPE_2)),
        lambda p, t: two.classify_many(p, t) == InfectionType.TYPE_2,
        lambda p, t: one.classify_many(p, t) != InfectionType.UNINFECTED,
        rng.child(StreamLabel.AUDIT).generator,
        audit_points,
    )

    return trace.check(strict)


def couple_one_type_vs_two_type_union(
    cfg: ProcessConfig, audit_points: int = AUDIT_POINTS, strict: bool = True
) -> CoupledTrace:
    """
    A rate-λ one-type process started from Γ₁ ∪ Γ₂ inside the infected set of
    a ``(1, λ)`` two-type process.

    Independent fields ``N1`` (rate 1 - λ) and ``N2`` (rate λ): ``N1 ∪ N2``
    drives type 1, ``N2`` drives type 2 and the one-type process.

    Raises:
        CertificateError: on a failed check when *strict*.
    """
    lam = _check_coupling_config(cfg)
    rng = RandomStream(cfg.seed, cfg.stream_id)
    cell = 2 * cfg.gamma
    sources: List[EventSource] = []
    two_sources: Dict[InfectionType, EventSource] = {}
    one_sources: Dict[InfectionType, EventSource] = {}

    if lam < 1:
        n1 = PoissonField(
            cfg.d, 1 - lam, cfg.F, rng.child(StreamLabel.FIELD, 1), cell, name="N1"
        )
        sources.append(FieldSource(n1))

    if lam > 0:
        n2 = PoissonField(
            cfg.d, lam, cfg.F, rng.child(StreamLabel.FIELD, 2), cell, name="N2"
        )
        sources.append(FieldSource(n2))
        two_sources[InfectionType.TYPE_2] = FieldSource(n2)
        one_sources[InfectionType.SINGLE] = FieldSource(n2)

    two_sources[InfectionType.TYPE_1] = SuperposedSource(sources)

    two = run_until(cfg, two_sources)
    one = run_until(_one_type(cfg, lam, cfg.initial_1 + cfg.initial_2), one_sources)

    trace = CoupledTrace(
        "one-type within two-type union",
        {"two-type": two, "one-type": one},
        {"two-type": _labels(two_sources), "one-type": _labels(one_sources)},
    )

    _certify(
        trace,
        _event_times(two, one),
        _events(one),
        _events(two),
        lambda t: _union(one.shapes(t)),
        lambda p, t: one.classify_many(p, t) != InfectionType.UNINFECTED,
        lambda p, t: two.classify_many(p, t) != InfectionType.UNINFECTED,
        rng.child(StreamLabel.AUDIT).generator,
        audit_points,
    )

    return trace.check(strict)


def couple_one_type_vs_brw(
    cfg: ProcessConfig,
    audit_points: int = AUDIT_POINTS,
    strict: bool = True,
    population_cap: int = POPULATION_CAP,
) -> CoupledTrace:
    """
    A unit-rate one-type process from ``B(0, γ)`` inside the BRW started from
    the cube of half-side γ.

    The one-type process scans field ``N0``; the BRW scans ``N0 … N(m-1)``
    where m cubes overlap. Besides the event and audit checks, every event
    time checks that the one-type outburst center was covered just before
    and that the BRW has at least as many births.

    Raises:
        CertificateError: on a failed check when *strict*.
    """
    if cfg.two_type or cfg.lambda_1 != 1:
        raise ValueError("the BRW coupling needs a unit-rate one-type configuration")

    rng = RandomStream(cfg.seed, cfg.stream_id)
    (n0,) = _fields(cfg, rng, "N0")
    one_cfg = _one_type(cfg, 1.0, cfg.initial_1)
    sources = {InfectionType.SINGLE: FieldSource(n0)}

    brw = LayeredBrw(n0, rng.child(StreamLabel.BRW))
    horizon = cfg.horizon_time

    if not brw.run_until(horizon, population_cap):
        horizon = brw.clock
        logger.warning("BRW capped; certificates only cover t <= %g", horizon)

    one = run_until(one_cfg.replace(horizon_time=horizon), sources)

    trace = CoupledTrace(
        "one-type within BRW",
        {"one-type": one, "brw": brw},
        {"one-type": [n0.name], "brw": [f"N0..N{brw.layer_count - 1}"]},
    )

    births = [
        (t, ident)
        for t, ident in zip(brw.birth_times, brw.idents)
        if ident is not None
    ]
    times = _event_times(one)

    _certify(
        trace,
        times,
        _events(one),
        births,
        lambda t: _union(one.shapes(t)),
        lambda p, t: one.classify_many(p, t) != InfectionType.UNINFECTED,
        lambda p, t: brw.covers(p, t),
        rng.child(StreamLabel.AUDIT).generator,
        audit_points,
    )

    for k, o in enumerate(one.outbursts, start=1):
        before = np.nextafter(o.time, -math.inf)
        trace.log(k, o.time, "center", bool(brw.covers(o.center, before)[0]))
        grown = brw.count(o.time) - 1 >= one.event_count(o.time)
        trace.log(k, o.time, "population", grown)

    trace.diagnostics["brw_population"] = len(brw)
    trace.diagnostics["one_type_events"] = len(one)

    return trace.check(strict)


def couple_lambda_family(
    cfg: ProcessConfig,
    lambdas: Sequence[float],
    audit_points: int = AUDIT_POINTS,
    strict: bool = True,
) -> CoupledTrace:
    """
    Two-type processes ``(1, λ)`` for several λ driven by the same unit-rate
    fields ``N1`` (type 1) and ``N2`` (type 2, thinned to marks ``<= λ``).

    Certified: the thinned candidate sets of ``N2`` are nested across λ and
    every type-2 outburst carries a mark ``<= λ``. Reported in
    ``diagnostics``: ``norm_type1`` (``‖S_T^1(λ)‖`` per λ),
    ``inclusion_violations`` (audit points of ``S_T^1(λ')`` outside
    ``S_T^1(λ)`` for consecutive ``λ < λ'``, monitored only) and
    ``thinned_type2`` (size of each thinned candidate set).

    Raises:
        ValueError: if *lambdas* is empty, unsorted or outside [0, 1].
        CertificateError: on a failed check when *strict*.
    """
    lambdas = [float(v) for v in lambdas]

    if not lambdas:
        raise ValueError("need at least one lambda")

    if lambdas != sorted(lambdas) or not 0 <= lambdas[0] <= lambdas[-1] <= 1:
        raise ValueError(f"lambdas must be sorted within [0, 1], got {lambdas}")

    if not cfg.two_type or cfg.stripe.active:
        raise ValueError(
            "the lambda family needs a two-type configuration without stripe"
        )

    rng = RandomStream(cfg.seed, cfg.stream_id)
    n1, n2 = _fields(cfg, rng, "N1", "N2")
    histories: Dict[str, InfectionHistory] = {}
    streams: Dict[str, List[str]] = {}
    type_2: Dict[float, FieldSource] = {}

    for lam in lambdas:
        sources: Dict[InfectionType, EventSource] = {
            InfectionType.TYPE_1: FieldSource(n1)
        }
        type_2[lam] = FieldSource(n2, (0.0, lam))
        if lam > 0:
            sources[InfectionType.TYPE_2] = type_2[lam]

        label = f"lambda={lam:g}"
        histories[label] = run_until(cfg.replace(lambda_1=1.0, lambda_2=lam), sources)
        streams[label] = [s.label for s in sources.values()]

    trace = CoupledTrace("lambda family", dict(histories), streams)
    horizon = cfg.horizon_time

    # every member's type-2 thinning, taken over the cells any member visited
    cells = {c: None for source in type_2.values() for c in source.cells}
    thinned = {lam: type_2[lam].thinned(cells, horizon) for lam in lambdas}

    for lam, h in zip(lambdas, histories.values()):
        for o in h.outbursts:
            if o.itype == InfectionType.TYPE_2:
                ok = n2.mark(o.ident) <= lam and o.ident in thinned[lam]
                trace.log(o.seq + 1, o.time, f"lambda={lam:g}:mark", ok)

    for lo, hi in zip(lambdas, lambdas[1:]):
        trace.log(0, horizon, f"nesting {lo:g}<={hi:g}", thinned[lo] <= thinned[hi])

    trace.diagnostics["thinned_type2"] = {lam: len(thinned[lam]) for lam in lambdas}

    gen = rng.child(StreamLabel.AUDIT).generator
    members = list(histories.values())
    violations = {}

    for (lo, small), (hi, large) in zip(
        zip(lambdas, members), zip(lambdas[1:], members[1:])
    ):
        if audit_points:
            union = _union(large.shapes(horizon, InfectionType.TYPE_1))
            points = union.sample(gen, audit_points)
            inside = large.classify_many(points, horizon) == InfectionType.TYPE_1
            points = points[inside]
            outside = small.classify_many(points, horizon) != InfectionType.TYPE_1
            violations[f"{lo:g}<={hi:g}"] = int(np.count_nonzero(outside))

    trace.diagnostics["norm_type1"] = {
        lam: norm_sup(h, horizon, InfectionType.TYPE_1)
        for lam, h in zip(lambdas, members)
    }
    trace.diagnostics["inclusion_violations"] = violations

    return trace.check(strict)


def lambda_family_norms(
    cfg: ProcessConfig, lambdas: Sequence[float], replicas: int
) -> Dict[float, EstimateResult]:
    """
    Mean ``‖S_T^1(λ)‖`` per λ over coupled replicas (stream ids
    ``0 … replicas - 1``), every replica sharing its fields across λ.
    """
    samples: Dict[float, List[float]] = {float(v): [] for v in lambdas}

    for r in range(replicas):
        trace = couple_lambda_family(cfg.replace(stream_id=r), lambdas, audit_points=0)
        for lam, value in trace.diagnostics["norm_type1"].items():
            samples[lam].append(value)

    return {lam: summarize(values) for lam, values in samples.items()}

