# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""
Confidence-interval helpers shared by every estimator.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional

import numpy as np
from scipy import stats

from growthsim.tools import chunk

CONFIDENCE = 0.95
"""Coverage of every reported confidence interval."""

_Z = float(stats.norm.ppf(0.5 + CONFIDENCE / 2))


@dataclass(frozen=True)
class EstimateResult:
    """
    A point estimate with a normal-approximation confidence interval.

    Used for μ, μ_b, ζ, shape deviations, effective-outburst counts and Monte
    Carlo volumes alike.
    """

    point: float
    ci_low: float
    ci_high: float
    replicas: int
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")

        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError(
                f"point {self.point} not inside [{self.ci_low}, {self.ci_high}]"
            )

    @property
    def standard_error(self) -> float:
        """Standard error implied by the interval half-width."""
        return (self.ci_high - self.ci_low) / (2 * _Z)

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def overlaps(self, other: "EstimateResult") -> bool:
        """Whether the two confidence intervals intersect."""
        return self.ci_low <= other.ci_high and other.ci_low <= self.ci_high

    def excludes(self, value: float) -> bool:
        return not self.ci_low <= value <= self.ci_high


def from_standard_error(
    point: float, se: float, replicas: int, **diagnostics: Any
) -> EstimateResult:
    """
    Builds a result from a point estimate and its standard error.
    """
    half = _Z * se
    return EstimateResult(point, point - half, point + half, replicas, diagnostics)


def summarize(
    samples: Iterable[float], batch_size: Optional[int] = None, **diagnostics: Any
) -> EstimateResult:
    """
    Sample mean with a normal 95 % confidence interval.

    Args:
        samples: Per-replica values.
        batch_size:
            When given, consecutive samples are grouped into batches of this
            size and the interval is built from the batch means.
        diagnostics: Extra entries copied into the result.

    Returns:
        The estimate. A single sample yields a zero-width interval.

    Raises:
        ValueError: if there are no samples.
    """
    values = np.asarray(list(samples), dtype=float)

    if values.size == 0:
        raise ValueError("cannot summarize an empty sample")

    point = float(values.mean())

    if batch_size is not None and batch_size > 1:
        means = np.array([np.mean(b) for b in chunk(values, batch_size)])
    else:
        means = values

    se = float(means.std(ddof=1) / math.sqrt(means.size)) if means.size > 1 else 0.0

    return from_standard_error(point, se, int(values.size), **diagnostics)


def frequency(flags: Iterable[bool], **diagnostics: Any) -> EstimateResult:
    """
    Bernoulli frequency with a normal-approximation interval.
    """
    values = np.asarray(list(flags), dtype=bool)

    if values.size == 0:
        raise ValueError("cannot summarize an empty sample")

    p = float(values.mean())
    se = math.sqrt(p * (1 - p) / values.size)

    return from_standard_error(p, se, int(values.size), **diagnostics)
