"""Eavesdropper models acting on Bob's share of the twin beam.

Two count-level attacks are modelled, each applied per bit and without memory:

* beam splitting: Eve taps a fraction ``1 - transmittance`` of Bob's beam.
  Bob's count is binomially thinned and Eve keeps the remainder.
* state cloning: Eve counts Bob's photons, ``m``, and re-emits a fresh beam
  whose mean photon number is ``m``, either Poisson (an ordinary laser) or
  TMCC-distributed with the amplitude that gives mean ``m``.

The attack sits after the twin draw and before Bob's detector noise.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

from .channel import CountPair
from .photon_statistics import (
    DomainError,
    PhotonDistribution,
    mean_photons,
    poisson_pmf,
    sample_count,
    sample_counts,
    tmcc_pmf,
)

__all__ = [
    "AttackKind",
    "ResendLaw",
    "AttackModel",
    "apply_beam_split",
    "apply_clone",
    "lambda_for_mean",
]


class AttackKind(str, enum.Enum):
    NONE = "none"
    BEAM_SPLIT = "beam_split"
    CLONE = "clone"


class ResendLaw(str, enum.Enum):
    POISSON = "poisson"
    TMCC_MEAN_MATCHED = "tmcc_mean_matched"


def lambda_for_mean(target: float) -> float:
    """Amplitude ``lam >= 0`` whose TMCC mean photon number equals ``target``."""
    if not math.isfinite(target) or target < 0:
        raise ArithmeticError(f"cannot match a TMCC mean of {target!r}")
    if target == 0:
        return 0.0
    # mean(lam) ~ lam - 1/4 for large lam and mean(lam) < lam throughout
    upper = target + 1.0
    return optimize.brentq(lambda x: mean_photons(x) - target, 0.0, upper, xtol=1e-14, rtol=1e-14)


@lru_cache(maxsize=512)
def _resend_distribution(law: ResendLaw, mean: int) -> PhotonDistribution:
    if law is ResendLaw.POISSON:
        return poisson_pmf(mean)
    return tmcc_pmf(lambda_for_mean(float(mean)))


@lru_cache(maxsize=4096)
def _binomial_cdf(trials: int, transmittance: float) -> np.ndarray:
    cdf = stats.binom.cdf(np.arange(trials + 1), trials, transmittance)
    cdf[-1] = 1.0
    return cdf


def _thin(counts: np.ndarray, transmittance: float, u: np.ndarray) -> np.ndarray:
    out = np.empty_like(counts)
    for k in np.unique(counts):
        mask = counts == k
        out[mask] = np.searchsorted(_binomial_cdf(int(k), transmittance), u[mask], side="right")
    return out


def _resend(counts: np.ndarray, law: ResendLaw, u: np.ndarray) -> np.ndarray:
    out = np.empty_like(counts)
    for m in np.unique(counts):
        mask = counts == m
        out[mask] = sample_counts(_resend_distribution(law, int(m)), u[mask])
    return out


@dataclass(frozen=True)
class AttackModel:
    """Eavesdropper configuration.

    Build with :meth:`none`, :meth:`beam_split` or :meth:`clone` rather than
    the constructor.
    """

    kind: AttackKind = AttackKind.NONE
    transmittance: float | None = None
    resend_law: ResendLaw | None = None

    def __post_init__(self):
        kind = AttackKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is AttackKind.BEAM_SPLIT:
            t = self.transmittance
            if t is None or not 0.0 < float(t) < 1.0:
                raise DomainError(f"beam-split transmittance must lie in (0, 1), got {t!r}")
            object.__setattr__(self, "transmittance", float(t))
        elif kind is AttackKind.CLONE:
            object.__setattr__(self, "resend_law", ResendLaw(self.resend_law or ResendLaw.POISSON))

    @classmethod
    def none(cls) -> "AttackModel":
        return cls()

    @classmethod
    def beam_split(cls, transmittance: float) -> "AttackModel":
        return cls(AttackKind.BEAM_SPLIT, transmittance=transmittance)

    @classmethod
    def clone(cls, resend_law: ResendLaw | str = ResendLaw.POISSON) -> "AttackModel":
        return cls(AttackKind.CLONE, resend_law=ResendLaw(resend_law))

    @classmethod
    def parse(cls, text: str) -> "AttackModel":
        """Parse ``none``, ``beam_split:<t>``, ``clone`` or ``clone:<law>``."""
        name, _, arg = text.strip().partition(":")
        name = name.replace("-", "_").lower()
        if name == "none" and not arg:
            return cls.none()
        if name == "beam_split":
            try:
                return cls.beam_split(float(arg))
            except ValueError:
                raise DomainError(f"beam_split needs a transmittance, got {text!r}") from None
        if name == "clone":
            return cls.clone(arg or ResendLaw.POISSON)
        raise DomainError(f"unknown attack {text!r}")

    def label(self) -> str:
        if self.kind is AttackKind.BEAM_SPLIT:
            return f"beam_split:{self.transmittance:g}"
        if self.kind is AttackKind.CLONE:
            return f"clone:{self.resend_law.value}"
        return "none"

    @property
    def active(self) -> bool:
        return self.kind is not AttackKind.NONE

    def apply_counts(self, base: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bob's pre-noise counts and Eve's diverted counts for a batch of bits."""
        base = np.asarray(base, dtype=np.int64)
        u = np.asarray(u, dtype=float)
        if self.kind is AttackKind.BEAM_SPLIT:
            bob = _thin(base, self.transmittance, u)
            return bob, base - bob
        if self.kind is AttackKind.CLONE:
            return _resend(base, self.resend_law, u), np.zeros_like(base)
        return base, np.zeros_like(base)


def apply_beam_split(pair: CountPair, transmittance: float, randomness: float) -> tuple[CountPair, int]:
    """Binomially thin Bob's share of a pre-noise pair.

    Returns the attacked pair and the number of photons Eve diverted.
    Alice's count is untouched.
    """
    if not 0.0 < transmittance < 1.0:
        raise DomainError(f"transmittance must lie in (0, 1), got {transmittance!r}")
    cdf = _binomial_cdf(pair.base_count, float(transmittance))
    kept = int(np.searchsorted(cdf, randomness, side="right"))
    return replace(pair, bob_count=kept + pair.bob_noise), pair.base_count - kept


def apply_clone(pair: CountPair, resend_law: ResendLaw | str, randomness: float) -> CountPair:
    """Measure Bob's share and re-emit a fresh count with the observed mean."""
    dist = _resend_distribution(ResendLaw(resend_law), pair.base_count)
    return replace(pair, bob_count=sample_count(dist, randomness) + pair.bob_noise)
