# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
Experiment configuration files.

An experiment is described by a flat text document with one ``key = value``
per line and ``#`` comments, for example::

    kind = estimate-mu
    d = 2
    lambda = 1
    radius.family = deterministic
    radius.value = 1
    horizon = 200
    estimate.n = 10, 20, 30
    replicas = 200
    seed = 7

Ball lists (``initial.1`` and friends) are written ``x1,x2:r; x1,x2:r``.
"""

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from growthsim.brw import ANCESTOR_MODES, POPULATION_CAP
from growthsim.couplings import AUDIT_POINTS
from growthsim.geometry import Ball, StripeConstraint
from growthsim.process import ProcessConfig
from growthsim.stochastics import RadiusDistribution, RadiusFamily

KINDS = (
    "simulate",
    "estimate-mu",
    "shape-check",
    "coexist",
    "couple-check",
    "brw-speed",
    "effective-count",
)

MODES = ("one-type", "two-type")

BallList = Tuple[Tuple[Tuple[float, ...], float], ...]


class SpecError(ValueError):
    """
    Raised when an experiment file is invalid.

    Every problem found is listed in :attr:`errors`, not just the first.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid experiment spec:\n  " + "\n  ".join(self.errors))


def _int(minimum: int) -> Callable[[str], int]:
    def parse(text: str) -> int:
        value = int(text)
        if value < minimum:
            raise ValueError(f"must be >= {minimum}, got {value}")
        return value

    return parse


def _float(minimum: float = 0.0, strict: bool = False) -> Callable[[str], float]:
    def parse(text: str) -> float:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(f"must be finite, got {text}")
        if value < minimum or (strict and value == minimum):
            op = ">" if strict else ">="
            raise ValueError(f"must be {op} {minimum:g}, got {value:g}")
        return value

    return parse


def _floats(minimum: Optional[float] = None) -> Callable[[str], Tuple[float, ...]]:
    def parse(text: str) -> Tuple[float, ...]:
        values = tuple(float(v) for v in text.split(",") if v.strip())
        if not values:
            raise ValueError("expected a comma separated list of numbers")
        if minimum is not None and min(values) < minimum:
            raise ValueError(f"every value must be >= {minimum:g}")
        return values

    return parse


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _choice(options: Sequence[str]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


def _balls(text: str) -> BallList:
    balls = []

    for item in text.split(";"):
        if not item.strip():
            continue
        center, sep, radius = item.partition(":")
        if not sep:
            raise ValueError(f"ball {item.strip()!r} is not written as x1,x2,...:r")
        r = float(radius)
        if not r > 0:
            raise ValueError(f"ball radius must be > 0, got {r:g}")
        balls.append((tuple(float(c) for c in center.split(",")), r))

    if not balls:
        raise ValueError("expected at least one ball")

    return tuple(balls)


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(
            ",".join(repr(c) for c in ctr) + ":" + repr(r) for ctr, r in value
        )
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], Any]
    default: Any = None
    doc: str = ""


KEYS: Dict[str, _Key] = {
    "kind": _Key(_choice(KINDS), doc="experiment to run"),
    "d": _Key(_int(1), doc="dimension (required)"),
    "mode": _Key(_choice(MODES), "one-type"),
    "lambda_1": _Key(_float(), 1.0, "type-1 (or one-type) rate; alias lambda"),
    "lambda_2": _Key(_float(), None, "type-2 rate, two-type only (default 1)"),
    "radius.family": _Key(_choice([f.value for f in RadiusFamily]), doc="(required)"),
    "radius.value": _Key(_float(strict=True), doc="deterministic radius"),
    "radius.low": _Key(_float(), doc="uniform lower bound"),
    "radius.high": _Key(_float(strict=True), doc="uniform upper bound"),
    "radius.rate": _Key(_float(strict=True), doc="exponential rate"),
    "radius.scale": _Key(_float(strict=True), doc="pareto scale"),
    "radius.shape": _Key(_float(strict=True), doc="pareto shape"),
    "allow_inadmissible": _Key(_bool, False),
    "horizon": _Key(_float(), doc="time horizon (required)"),
    "max_events": _Key(_int(1), 1_000_000),
    "seed": _Key(_int(0), 0),
    "replicas": _Key(_int(1), 1),
    "stripe.b": _Key(_float(strict=True), doc="stripe half-width"),
    "covering_resolution": _Key(
        _float(strict=True), doc="ε-net spacing (default γ/50)"
    ),
    "prune_covered": _Key(
        _bool, False, "leave covered outbursts out of the shape index"
    ),
    "initial.1": _Key(_balls),
    "initial.2": _Key(_balls),
    "initial_alt.1": _Key(_balls),
    "initial_alt.2": _Key(_balls),
    "estimate.n": _Key(_floats(0.0), (10.0, 20.0)),
    "estimate.stripes": _Key(_floats(0.0)),
    "shape.time": _Key(_float(strict=True)),
    "shape.mu": _Key(
        _float(strict=True), doc="skip the μ estimate and use this value"
    ),
    "shape.directions": _Key(_int(1), 64),
    "shape.tolerance": _Key(_float(strict=True), 0.15),
    "coexist.window": _Key(_float(strict=True), doc="default horizon/4"),
    "region.center": _Key(_floats()),
    "region.radius": _Key(_float(strict=True), doc="default γ"),
    "couple.lambda": _Key(_float(), 0.5),
    "couple.lambdas": _Key(_floats(0.0), (0.25, 0.5, 0.75, 1.0)),
    "couple.audit_points": _Key(_int(1), AUDIT_POINTS),
    "brw.horizon": _Key(_float(strict=True), 2.0),
    "brw.ancestor": _Key(_choice(ANCESTOR_MODES), "deterministic"),
    "brw.population_cap": _Key(_int(1), POPULATION_CAP),
    "brw.phi": _Key(_floats()),
    "output.dir": _Key(str, "out"),
}
"""Every recognized key with its parser and default."""

ALIASES = {"lambda": "lambda_1"}

_RADIUS_PARAMS = {
    RadiusFamily.DETERMINISTIC: ("radius.value",),
    RadiusFamily.UNIFORM: ("radius.low", "radius.high"),
    RadiusFamily.EXPONENTIAL: ("radius.rate",),
    RadiusFamily.PARETO: ("radius.scale", "radius.shape"),
}

_UNHASHED = ("output.dir",)


@dataclass(frozen=True)
class ExperimentSpec:
    """
    A validated experiment description.

    Only keys that differ from their defaults are stored, so two files that
    spell out defaults differently compare equal and share a ``config_hash``.
    """

    kind: str
    values: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        key = ALIASES.get(key, key)
        return self.values.get(key, KEYS[key].default)

    @property
    def seed(self) -> int:
        return self["seed"]

    @property
    def replicas(self) -> int:
        return self["replicas"]

    @property
    def two_type(self) -> bool:
        return self["mode"] == "two-type"

    def render(self, hashed_only: bool = False) -> str:
        """
        The canonical sorted ``key = value`` form.

        Parsing the rendered text gives back an equal spec.
        """
        lines = [f"kind = {self.kind}"]

        for key in sorted(self.values):
            if hashed_only and key in _UNHASHED:
                continue
            lines.append(f"{key} = {_render(self.values[key])}")

        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical form."""
        return hashlib.sha256(self.render(hashed_only=True).encode()).hexdigest()[:16]

    def with_values(self, changes: Mapping[str, Any]) -> "ExperimentSpec":
        """
        Copy with some keys replaced, for command line overrides.

        Raises:
            SpecError: if the result is invalid.
        """
        values = {**self.values, **changes}
        lines = [
            f"{key} = {_render(value)}"
            for key, value in values.items()
            if value is not None
        ]
        return parse_spec("\n".join(lines), self.kind)

    def radius_distribution(self) -> RadiusDistribution:
        family = RadiusFamily(self["radius.family"])
        params = tuple(self[key] for key in _RADIUS_PARAMS[family])
        return RadiusDistribution(family, params)

    def _initial(self, key: str) -> Optional[Tuple[Ball, ...]]:
        balls = self[key]
        if balls is None:
            return None
        return tuple(Ball(center, r) for center, r in balls)

    def process_config(self, alternate: bool = False, **changes: Any) -> ProcessConfig:
        """
        The :class:`ProcessConfig` of this experiment.

        Args:
            alternate: Use ``initial_alt.1`` / ``initial_alt.2`` as start sets.
            changes: Overrides applied to the config.
        """
        prefix = "initial_alt" if alternate else "initial"
        lambda_2 = self["lambda_2"]

        cfg = ProcessConfig(
            d=self["d"],
            F=self.radius_distribution(),
            lambda_1=self["lambda_1"],
            lambda_2=(1.0 if lambda_2 is None else lambda_2) if self.two_type else 0.0,
            horizon_time=self["horizon"],
            max_events=self["max_events"],
            seed=self.seed,
            stripe=StripeConstraint.of_width(self["stripe.b"]),
            covering_resolution=self["covering_resolution"],
            two_type=self.two_type,
            initial_1=self._initial(f"{prefix}.1"),
            initial_2=self._initial(f"{prefix}.2"),
            allow_inadmissible=self["allow_inadmissible"],
            prune_covered=self["prune_covered"],
        )

        return cfg.replace(**changes) if changes else cfg

    def coupling_config(self) -> ProcessConfig:
        """
        Two-type config with ``λ₁ = 1`` and ``λ₂ = couple.lambda``, without a
        stripe.
        """
        return self.process_config(
            two_type=True,
            lambda_1=1.0,
            lambda_2=self["couple.lambda"],
            stripe=StripeConstraint(),
            initial_1=self._initial("initial.1") if self.two_type else None,
            initial_2=self._initial("initial.2") if self.two_type else None,
        )

    def region(self) -> Ball:
        cfg = self.process_config()
        center = self["region.center"] or (0.0,) * cfg.d
        radius = self["region.radius"] or cfg.gamma
        return Ball(center, radius)

    @property
    def coexist_window(self) -> float:
        window = self["coexist.window"]
        return self["horizon"] / 4 if window is None else window


def _read_lines(text: str, errors: List[str]) -> Dict[str, Tuple[int, str]]:
    seen: Dict[str, List[int]] = {}
    raw: Dict[str, Tuple[int, str]] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()

        if not line:
            continue

        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()

        if not sep or not key:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue

        key = ALIASES.get(key, key)
        seen.setdefault(key, []).append(lineno)
        raw[key] = (lineno, value)

    for key, lines in seen.items():
        if len(lines) > 1:
            numbers = ", ".join(map(str, lines))
            errors.append(f"duplicate key {key!r} on lines {numbers}")

    return raw


def _check_kind(spec: ExperimentSpec, errors: List[str]) -> None:
    kind = spec.kind

    if kind in ("estimate-mu", "shape-check") and spec.two_type:
        errors.append(f"kind {kind} needs mode = one-type")

    if kind in ("coexist", "effective-count") and not spec.two_type:
        errors.append(f"kind {kind} needs mode = two-type")

    if kind == "shape-check" and spec["shape.time"] is None:
        errors.append("kind shape-check needs shape.time")

    if kind == "shape-check" and spec["estimate.stripes"] is not None:
        errors.append("kind shape-check takes a single stripe.b, not estimate.stripes")

    if kind == "coexist" and not spec.coexist_window < spec["horizon"]:
        errors.append("coexist.window must be smaller than horizon")

    if kind == "couple-check":
        lambdas = (spec["couple.lambda"], *spec["couple.lambdas"])
        if any(lam > 1 for lam in lambdas):
            errors.append("couple.lambda and couple.lambdas must lie in [0, 1]")
        if list(spec["couple.lambdas"]) != sorted(spec["couple.lambdas"]):
            errors.append("couple.lambdas must be sorted ascending")
        if spec["stripe.b"] is not None:
            errors.append("kind couple-check does not support stripe.b")

    if kind == "estimate-mu" and spec["estimate.stripes"] is not None:
        if spec["stripe.b"] is not None:
            errors.append("give either stripe.b or estimate.stripes, not both")

    if not spec.two_type:
        for key in ("lambda_2", "initial.2", "initial_alt.2"):
            if key in spec.values:
                errors.append(f"{key} only applies to mode = two-type")

    for prefix in ("initial", "initial_alt"):
        for key in (f"{prefix}.1", f"{prefix}.2"):
            for center, _ in spec[key] or ():
                if len(center) != spec["d"]:
                    errors.append(
                        f"{key}: center {center} is not {spec['d']}-dimensional"
                    )
                    break

    center = spec["region.center"]
    if center is not None and len(center) != spec["d"]:
        errors.append(f"region.center is not {spec['d']}-dimensional")


def _check_radius(values: Mapping[str, Any], errors: List[str]) -> None:
    family = RadiusFamily(values["radius.family"])
    needed = _RADIUS_PARAMS[family]

    for key in needed:
        if key not in values:
            errors.append(f"radius.family = {family.value} needs {key}")

    for other, keys in _RADIUS_PARAMS.items():
        if other is family:
            continue
        for key in keys:
            if key in values and key not in needed:
                errors.append(f"{key} does not apply to radius.family = {family.value}")

    if family is RadiusFamily.PARETO and not values.get("allow_inadmissible", False):
        errors.append(
            "radius.family = pareto violates the exponential moment condition "
            "E[exp(cR)] < inf; set allow_inadmissible = true to run it anyway"
        )


def parse_spec(text: str, kind: Optional[str] = None) -> ExperimentSpec:
    """
    Parses and validates an experiment file.

    Args:
        text: The file contents.
        kind: Experiment kind given on the command line. Must agree with a
            ``kind`` key in the file if both are present.

    Returns:
        The validated spec.

    Raises:
        SpecError: listing every problem found.
    """
    errors: List[str] = []
    raw = _read_lines(text, errors)
    values: Dict[str, Any] = {}

    for key, (lineno, value) in raw.items():
        if key not in KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue

        try:
            values[key] = KEYS[key].parse(value)
        except ValueError as e:
            errors.append(f"line {lineno}: {key}: {e}")

    file_kind = values.pop("kind", None)

    if kind is not None and file_kind is not None and kind != file_kind:
        errors.append(f"kind {file_kind!r} in the file disagrees with {kind!r}")

    kind = kind or file_kind

    if kind is None:
        errors.append("missing required key 'kind'")
    elif kind not in KINDS:
        errors.append(f"unknown kind {kind!r}")

    for key in ("d", "radius.family", "horizon"):
        if key not in raw:
            errors.append(f"missing required key {key!r}")

    if "radius.family" in values:
        _check_radius(values, errors)

    if errors:
        raise SpecError(errors)

    # drop explicit defaults so the canonical form is unique
    stored = {k: v for k, v in values.items() if v != KEYS[k].default}
    spec = ExperimentSpec(kind, stored)

    _check_kind(spec, errors)

    if not errors:
        try:
            cfg = spec.process_config()
            if spec.kind == "couple-check":
                spec.coupling_config()
            if spec["initial_alt.1"] is not None or spec["initial_alt.2"] is not None:
                spec.process_config(alternate=True)
        except (ValueError, TypeError) as e:
            errors.append(str(e))
        else:
            if spec.two_type and cfg.lambda_1 == 0 and cfg.lambda_2 == 0:
                errors.append("both rates are zero")

    if errors:
        raise SpecError(errors)

    return spec


def describe_keys() -> str:
    """One line per recognized key, for ``--help``."""
    lines = []
    for key, spec in KEYS.items():
        default = "" if spec.default is None else f" (default {_render(spec.default)})"
        doc = f": {spec.doc}" if spec.doc else ""
        lines.append(f"  {key}{doc}{default}")
    return "\n".join(lines)
