# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
Runs an experiment across replicas and writes its artifacts.

Every replica ``r`` uses stream id ``r`` of the experiment seed, so results do not
depend on how replicas are scheduled.
"""

import asyncio
import csv
import dataclasses
import io
import logging
import math
import os
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from tqdm.auto import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from growthsim.brw import alpha, laplace_m, summarize_zeta, zeta_sample
from growthsim.couplings import (
    CertificateRecord,
    couple_lambda_family,
    couple_one_type_vs_brw,
    couple_one_type_vs_two_type_union,
    couple_two_type_vs_one_type,
    write_certificates,
)
from growthsim.estimators import (
    coexistence_proxy,
    count_effective_in_region,
    effective_outburst_bound,
    mu_sample,
    proxy_frequencies,
    shape_deviation,
    summarize_mu,
)
from growthsim.experiment import ExperimentSpec
from growthsim.geometry import StripeConstraint
from growthsim.process import (
    GrowthProcess,
    InfectionHistory,
    InfectionType,
    ProcessConfig,
    norm_star,
    norm_sup,
    write_event_log,
)
from growthsim.stochastics import GuardError, RandomStream, StreamLabel
from growthsim.tools.stats import EstimateResult, frequency, summarize

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CERTIFICATE = 2
EXIT_GUARD = 3
EXIT_IO = 4

RESULT_COLUMNS = (
    "statistic",
    "point",
    "ci_low",
    "ci_high",
    "replicas",
    "config_hash",
    "seed",
)

Row = Tuple[str, EstimateResult]


@dataclass
class ReplicaOutcome:
    """What one replica hands back to the orchestrator."""

    replica: int
    values: Dict[Any, Any] = field(default_factory=dict)
    certificates: List[CertificateRecord] = field(default_factory=list)
    events: Optional[str] = None
    """JSONL event log, replica 0 only."""
    guard: Optional[str] = None
    """Message of a guard trip, if any."""


def _event_log(h: InfectionHistory, cfg: ProcessConfig, spec: ExperimentSpec) -> str:
    buf = io.StringIO()
    config = {"kind": spec.kind, "config_hash": spec.config_hash, **cfg.to_dict()}
    write_event_log(h, buf, config)
    return buf.getvalue()


def _exact(value: float) -> EstimateResult:
    return EstimateResult(value, value, value, 1)


def _scaled(est: EstimateResult, factor: float) -> EstimateResult:
    return EstimateResult(
        factor * est.point, factor * est.ci_low, factor * est.ci_high, est.replicas
    )


# replica workers, run in the executor


def _simulate(spec: ExperimentSpec, r: int, context: Dict[str, Any]) -> ReplicaOutcome:
    out = ReplicaOutcome(r)
    cfg = spec.process_config(stream_id=r)
    process = GrowthProcess(cfg)

    try:
        process.run_until()
        t = cfg.horizon_time
    except GuardError as e:
        out.guard = str(e)
        t = process.clock

    h = process.history
    out.values["events"] = len(h)
    out.values["norm_sup"] = norm_sup(h, t)

    if cfg.two_type:
        for itype in (InfectionType.TYPE_1, InfectionType.TYPE_2):
            out.values[f"norm_sup_type{itype.label}"] = norm_sup(h, t, itype)
            out.values[f"events_type{itype.label}"] = h.event_count(t, itype)
    else:
        out.values["norm_star"] = norm_star(h, t)

    if r == 0:
        out.events = _event_log(h, cfg, spec)

    return out


def _stripes(spec: ExperimentSpec) -> Sequence[Optional[float]]:
    return spec["estimate.stripes"] or (spec["stripe.b"],)


def _estimate_mu(
    spec: ExperimentSpec, r: int, context: Dict[str, Any]
) -> ReplicaOutcome:
    out = ReplicaOutcome(r)
    n_list = spec["estimate.n"]

    for i, b in enumerate(_stripes(spec)):
        cfg = spec.process_config(stream_id=r, stripe=StripeConstraint.of_width(b))
        history = cfg.new_history() if r == 0 and i == 0 else None
        out.values[b] = mu_sample(cfg, n_list, history)

        if history is not None:
            out.events = _event_log(history, cfg, spec)

    return out


def _shape_check(
    spec: ExperimentSpec, r: int, context: Dict[str, Any]
) -> ReplicaOutcome:
    out = ReplicaOutcome(r)
    t = spec["shape.time"]
    # disjoint from the streams used to estimate μ
    cfg = spec.process_config(stream_id=spec.replicas + r, horizon_time=t)
    process = GrowthProcess(cfg)

    try:
        process.run_until()
    except GuardError as e:
        out.guard = str(e)
        return out

    out.values["deviation"] = shape_deviation(
        process.history, t, context["mu"], spec["shape.directions"], cfg.lambda_1
    )

    if r == 0:
        out.events = _event_log(process.history, cfg, spec)

    return out


def _coexist(spec: ExperimentSpec, r: int, context: Dict[str, Any]) -> ReplicaOutcome:
    out = ReplicaOutcome(r)
    pairs = [False]

    if spec["initial_alt.1"] is not None or spec["initial_alt.2"] is not None:
        pairs.append(True)

    for alternate in pairs:
        cfg = spec.process_config(alternate, stream_id=r)
        process = GrowthProcess(cfg)

        try:
            process.run_until()
        except GuardError as e:
            out.guard = str(e)
            return out

        out.values[alternate] = coexistence_proxy(
            process.history, cfg.horizon_time, spec.coexist_window
        )

        if r == 0 and not alternate:
            out.events = _event_log(process.history, cfg, spec)

    return out


def _effective_count(
    spec: ExperimentSpec, r: int, context: Dict[str, Any]
) -> ReplicaOutcome:
    out = ReplicaOutcome(r)
    cfg = spec.process_config(stream_id=r)
    process = GrowthProcess(cfg)

    try:
        process.run_until()
    except GuardError as e:
        out.guard = str(e)
        return out

    region = spec.region()

    for itype in (InfectionType.TYPE_1, InfectionType.TYPE_2):
        out.values[itype] = count_effective_in_region(
            process.history, region, cfg.horizon_time, itype
        )

    if r == 0:
        out.events = _event_log(process.history, cfg, spec)

    return out


def _couple_check(
    spec: ExperimentSpec, r: int, context: Dict[str, Any]
) -> ReplicaOutcome:
    out = ReplicaOutcome(r)
    audit = spec["couple.audit_points"]
    cfg = spec.coupling_config().replace(stream_id=r)
    brw_cfg = cfg.replace(
        two_type=False, lambda_1=1.0, lambda_2=0.0, horizon_time=spec["brw.horizon"]
    )

    try:
        traces = [
            couple_two_type_vs_one_type(cfg, audit, strict=False),
            couple_one_type_vs_two_type_union(cfg, audit, strict=False),
            couple_one_type_vs_brw(
                brw_cfg, audit, strict=False, population_cap=spec["brw.population_cap"]
            ),
            couple_lambda_family(cfg, spec["couple.lambdas"], audit, strict=False),
        ]
    except GuardError as e:
        out.guard = str(e)
        return out

    for trace in traces:
        out.values[trace.name] = trace.passed
        out.certificates.extend(
            dataclasses.replace(c, check_name=f"replica {r}/{c.check_name}")
            for c in trace.certificate_log
        )

    out.values["norm_type1"] = traces[-1].diagnostics["norm_type1"]

    if r == 0:
        out.events = _event_log(traces[0].histories["two-type"], cfg, spec)

    return out


def _brw_speed(spec: ExperimentSpec, r: int, context: Dict[str, Any]) -> ReplicaOutcome:
    out = ReplicaOutcome(r)
    rng = RandomStream(spec.seed, StreamLabel.BRW).child(r)
    out.values["zeta"] = zeta_sample(
        spec.radius_distribution(),
        spec["d"],
        spec["brw.horizon"],
        rng,
        spec["brw.ancestor"],
        spec["brw.population_cap"],
    )
    return out


# aggregation, run in the orchestrator


def _aggregate_simulate(
    spec: ExperimentSpec, outcomes: List[ReplicaOutcome]
) -> List[Row]:
    keys = outcomes[0].values.keys() if outcomes else ()
    return [(key, summarize(o.values[key] for o in outcomes)) for key in keys]


def _mu_rows(spec: ExperimentSpec, outcomes: List[ReplicaOutcome]) -> List[Row]:
    rows = []
    n_list = spec["estimate.n"]
    rate = spec["lambda_1"]

    for b in _stripes(spec):
        name = "mu" if b is None else f"mu_b[b={b:g}]"
        samples = [o.values[b] for o in outcomes]
        est = summarize_mu(samples, n_list, rate, stripe=b)
        rows.append((name, est))
        rows.append((f"{name}.rate_scaled", _scaled(est, rate)))
        censoring = _exact(est.diagnostics["censoring_rate"])
        rows.append((f"{name}.censoring_rate", censoring))

        for j, n in enumerate(n_list):
            kept = [s[j].time / n for s in samples if not s[j].censored]
            if kept and n > 0:
                rows.append((f"{name}.profile[n={n:g}]", summarize(kept)))

    return rows


def _aggregate_shape(spec: ExperimentSpec, outcomes: List[ReplicaOutcome]) -> List[Row]:
    deviations = [o.values["deviation"] for o in outcomes]
    tolerance = spec["shape.tolerance"]
    return [
        ("shape_deviation", summarize(deviations)),
        ("shape_within_tolerance", frequency(d <= tolerance for d in deviations)),
    ]


def _aggregate_coexist(
    spec: ExperimentSpec, outcomes: List[ReplicaOutcome]
) -> List[Row]:
    rows = []

    for alternate in (False, True):
        proxies = [o.values[alternate] for o in outcomes if alternate in o.values]
        if not proxies:
            continue
        prefix = "alt." if alternate else ""
        for name, est in proxy_frequencies(proxies).items():
            rows.append((prefix + name, est))

    return rows


def _aggregate_effective(
    spec: ExperimentSpec, outcomes: List[ReplicaOutcome]
) -> List[Row]:
    rows = []
    cfg = spec.process_config()
    region = spec.region()
    mu = spec["shape.mu"]

    for itype, rate in cfg.rates.items():
        counts = [o.values[itype] for o in outcomes]
        rows.append((f"effective_count_type{itype.label}", summarize(counts)))
        never = frequency(c == 0 for c in counts)
        rows.append((f"no_effective_type{itype.label}", never))

        if mu is not None:
            bound = effective_outburst_bound(region, mu, rate, cfg.F)
            rows.append((f"effective_bound_type{itype.label}", _exact(bound)))

    return rows


def _aggregate_couple(
    spec: ExperimentSpec, outcomes: List[ReplicaOutcome]
) -> List[Row]:
    rows = []
    names = [k for k in outcomes[0].values if k != "norm_type1"] if outcomes else []

    for name in names:
        passed = frequency(o.values[name] for o in outcomes)
        rows.append((f"certificate[{name}]", passed))

    for lam in spec["couple.lambdas"]:
        norms = [o.values["norm_type1"][lam] for o in outcomes]
        rows.append((f"norm_type1[lambda={lam:g}]", summarize(norms)))

    return rows


def _aggregate_brw(spec: ExperimentSpec, outcomes: List[ReplicaOutcome]) -> List[Row]:
    est = summarize_zeta([o.values["zeta"] for o in outcomes])
    low, high = est.diagnostics["half_horizon_ci"]
    half = EstimateResult(est.diagnostics["half_horizon"], low, high, est.replicas)
    rows = [("zeta", est), ("zeta_half_horizon", half)]

    if est.diagnostics["capped"]:
        logger.warning(
            "%d replica(s) hit the population cap", est.diagnostics["capped"]
        )

    F, d = spec.radius_distribution(), spec["d"]

    for phi in spec["brw.phi"] or ():
        a = alpha(phi, F, d)
        rows.append((f"alpha[phi={phi:g}]", _exact(a)))
        if math.isfinite(a):
            rows.append((f"m_at_alpha[phi={phi:g}]", _exact(laplace_m(phi, a, F, d))))

    return rows


Worker = Callable[[ExperimentSpec, int, Dict[str, Any]], ReplicaOutcome]
Aggregator = Callable[[ExperimentSpec, List[ReplicaOutcome]], List[Row]]

KIND_HANDLERS: Dict[str, Tuple[Worker, Aggregator]] = {
    "simulate": (_simulate, _aggregate_simulate),
    "estimate-mu": (_estimate_mu, _mu_rows),
    "shape-check": (_shape_check, _aggregate_shape),
    "coexist": (_coexist, _aggregate_coexist),
    "effective-count": (_effective_count, _aggregate_effective),
    "couple-check": (_couple_check, _aggregate_couple),
    "brw-speed": (_brw_speed, _aggregate_brw),
}


async def _replicate(
    spec: ExperimentSpec,
    worker: Worker,
    executor: Executor,
    context: Dict[str, Any],
    desc: str,
) -> List[ReplicaOutcome]:
    loop = asyncio.get_running_loop()
    futures = [
        loop.run_in_executor(executor, worker, spec, r, context)
        for r in range(spec.replicas)
    ]
    outcomes = []

    with logging_redirect_tqdm(), tqdm(
        total=len(futures), unit="replica", desc=desc, disable=None
    ) as pbar:
        for future in asyncio.as_completed(futures):
            outcomes.append(await future)
            pbar.update(1)

    return sorted(outcomes, key=lambda o: o.replica)


def write_results(rows: Sequence[Row], spec: ExperimentSpec, file) -> None:
    """Writes ``results.csv``."""
    writer = csv.writer(file, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)

    for name, est in rows:
        writer.writerow(
            [
                name,
                repr(float(est.point)),
                repr(float(est.ci_low)),
                repr(float(est.ci_high)),
                est.replicas,
                spec.config_hash,
                spec.seed,
            ]
        )


def write_manifest(spec: ExperimentSpec, wall_time: float, file) -> None:
    """Writes ``manifest.txt``: the canonical spec plus commented run facts."""
    file.write(spec.render())
    file.write(f"# config_hash = {spec.config_hash}\n")
    file.write(f"# wall_time = {wall_time:.3f} s\n")


async def run_experiment(
    spec: ExperimentSpec, parallelism: int = 1, out_dir: Optional[str] = None
) -> int:
    """
    Runs *spec* and writes ``events.jsonl``, ``results.csv``,
    ``certificates.csv`` (couple-check only) and ``manifest.txt``.

    Args:
        spec: The validated experiment.
        parallelism: Replicas run at once; more than one uses worker processes.
        out_dir: Output directory (default ``output.dir`` of the spec).

    Returns:
        The exit status: 0 on success, 2 if a coupling certificate failed,
        3 on a guard trip, 4 if the artifacts could not be written.
    """
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")

    out_dir = out_dir or spec["output.dir"]
    worker, aggregate = KIND_HANDLERS[spec.kind]
    started = time.monotonic()
    context: Dict[str, Any] = {}

    executor = (
        ProcessPoolExecutor(parallelism) if parallelism > 1 else ThreadPoolExecutor(1)
    )

    with executor:
        if spec.kind == "shape-check":
            mu = spec["shape.mu"]
            if mu is None:
                mu_runs = await _replicate(spec, _estimate_mu, executor, context, "mu")
                try:
                    b = _stripes(spec)[0]
                    samples = [o.values[b] for o in mu_runs]
                    mu = summarize_mu(samples, spec["estimate.n"]).point
                except ValueError as e:
                    logger.error("%s", e)
                    return EXIT_GUARD
            context["mu"] = mu

        outcomes = await _replicate(spec, worker, executor, context, spec.kind)

    guards = [o for o in outcomes if o.guard is not None]

    for o in guards:
        logger.error("replica %d: %s", o.replica, o.guard)

    status = EXIT_GUARD if guards else EXIT_OK
    completed = [o for o in outcomes if o.guard is None]

    try:
        rows = aggregate(spec, completed) if completed else []
    except (ValueError, GuardError) as e:
        logger.error("%s", e)
        rows, status = [], EXIT_GUARD

    if "mu" in context:
        rows.insert(0, ("mu_hat", _exact(context["mu"])))

    certificates = [c for o in outcomes for c in o.certificates]

    if any(not c.passed for c in certificates):
        logger.error(
            "%d certificate check(s) failed",
            sum(1 for c in certificates if not c.passed),
        )
        status = EXIT_CERTIFICATE

    try:
        os.makedirs(out_dir, exist_ok=True)

        events = next((o.events for o in outcomes if o.events is not None), None)
        if events is not None:
            with open(os.path.join(out_dir, "events.jsonl"), "w", newline="\n") as f:
                f.write(events)

        with open(os.path.join(out_dir, "results.csv"), "w", newline="") as f:
            write_results(rows, spec, f)

        if spec.kind == "couple-check":
            with open(os.path.join(out_dir, "certificates.csv"), "w", newline="") as f:
                write_certificates(certificates, f)

        with open(os.path.join(out_dir, "manifest.txt"), "w", newline="\n") as f:
            write_manifest(spec, time.monotonic() - started, f)
    except OSError as e:
        logger.error("could not write artifacts to %s: %s", out_dir, e)
        return EXIT_IO

    return status
