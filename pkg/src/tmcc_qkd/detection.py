"""Distribution checks on observed photon counts.

Both parties know the session's mean photon number, so each can compare the
frequency table of its own counts with the expected pmf. A Pearson
chi-square test is used, with tail bins merged until every expected count is
at least five.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .photon_statistics import DomainError, PhotonDistribution, mean_photons, poisson_pmf, tmcc_pmf

__all__ = [
    "MIN_OBSERVATIONS",
    "MIN_EXPECTED",
    "DEFAULT_SIGNIFICANCE",
    "InsufficientDataError",
    "Bin",
    "DetectionReport",
    "StateIdentification",
    "chi2_sf",
    "merge_bins",
    "fit_test",
    "identify_state",
]

MIN_OBSERVATIONS = 50
MIN_EXPECTED = 5.0
DEFAULT_SIGNIFICANCE = 0.01


class InsufficientDataError(ValueError):
    """Too few observations, or fewer than two bins survive merging."""


@dataclass(frozen=True)
class Bin:
    """Counts ``low..high`` inclusive; ``high`` is None for an open upper tail."""

    low: int
    high: int | None
    observed: int
    expected: float

    def label(self) -> str:
        if self.high is None:
            return f"{self.low}+"
        return str(self.low) if self.low == self.high else f"{self.low}-{self.high}"


@dataclass(frozen=True)
class DetectionReport:
    statistic: float
    degrees_of_freedom: int
    p_value: float
    significance: float
    passed: bool
    bins: tuple[Bin, ...]

    @property
    def sample_size(self) -> int:
        return sum(b.observed for b in self.bins)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "degrees_of_freedom": self.degrees_of_freedom,
            "p_value": self.p_value,
            "significance": self.significance,
            "passed": self.passed,
            "bins": [
                {"range": b.label(), "observed": b.observed, "expected": b.expected}
                for b in self.bins
            ],
        }


def chi2_sf(x: float, dof: int) -> float:
    """Chi-square survival function via the regularized upper incomplete gamma."""
    if dof < 1:
        raise DomainError("degrees of freedom must be positive")
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * x))


def merge_bins(observed: np.ndarray, expected: np.ndarray) -> list[Bin]:
    """Greedy left-to-right merge so every bin expects at least ``MIN_EXPECTED``.

    ``observed`` and ``expected`` are indexed by photon number; the last
    index stands for itself and everything above it. A short remainder at the
    top is folded into the preceding bin.
    """
    bins: list[Bin] = []
    low, obs, exp = 0, 0, 0.0
    last = expected.size - 1
    for n in range(expected.size):
        obs += int(observed[n])
        exp += float(expected[n])
        if exp >= MIN_EXPECTED and n < last:
            bins.append(Bin(low, n, obs, exp))
            low, obs, exp = n + 1, 0, 0.0
    if bins and exp < MIN_EXPECTED:
        prev = bins.pop()
        bins.append(Bin(prev.low, None, prev.observed + obs, prev.expected + exp))
    else:
        bins.append(Bin(low, None, obs, exp))
    return bins


def fit_test(
    observed_counts: Sequence[int],
    expected: PhotonDistribution,
    significance: float = DEFAULT_SIGNIFICANCE,
) -> DetectionReport:
    """Pearson chi-square goodness-of-fit of photon counts against ``expected``."""
    counts = np.asarray(observed_counts, dtype=np.int64)
    if not 0.0 < significance <= 0.5:
        raise DomainError(f"significance must lie in (0, 0.5], got {significance!r}")
    if counts.size < MIN_OBSERVATIONS:
        raise InsufficientDataError(
            f"need at least {MIN_OBSERVATIONS} observations, got {counts.size}"
        )
    if counts.min() < 0:
        raise DomainError("photon counts must be nonnegative")

    size = counts.size
    top = max(expected.n_max, int(counts.max()))
    freq = np.bincount(counts, minlength=top + 1)
    exp = np.zeros(top + 1)
    exp[: expected.n_max + 1] = size * expected.probabilities

    bins = merge_bins(freq, exp)
    if len(bins) < 2:
        raise InsufficientDataError("fewer than two bins with adequate expected counts")
    statistic = math.fsum((b.observed - b.expected) ** 2 / b.expected for b in bins)
    dof = len(bins) - 1
    p_value = chi2_sf(statistic, dof)
    return DetectionReport(
        statistic=statistic,
        degrees_of_freedom=dof,
        p_value=p_value,
        significance=significance,
        passed=p_value >= significance,
        bins=tuple(bins),
    )


@dataclass(frozen=True)
class StateIdentification:
    tmcc: DetectionReport
    poisson: DetectionReport
    sample_mean: float
    sample_variance: float

    @property
    def sub_poissonian(self) -> bool:
        return self.sample_variance < self.sample_mean


def identify_state(
    observed_counts: Sequence[int],
    lambda_hypothesis,
    significance: float = DEFAULT_SIGNIFICANCE,
) -> StateIdentification:
    """Test counts against the TMCC pmf and against a Poisson pmf of the same mean."""
    counts = np.asarray(observed_counts, dtype=np.int64)
    tmcc = fit_test(counts, tmcc_pmf(lambda_hypothesis), significance)
    poisson = fit_test(counts, poisson_pmf(mean_photons(lambda_hypothesis)), significance)
    return StateIdentification(
        tmcc=tmcc,
        poisson=poisson,
        sample_mean=float(counts.mean()),
        sample_variance=float(counts.var(ddof=1)),
    )
