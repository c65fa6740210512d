"""Photon-number statistics of the two-mode coherently correlated (TMCC) state.

Each mode of a TMCC beam with amplitude ``lam`` carries ``n`` photons with
probability

    P_n = |lam|^(2n) / (n!^2 I0(2|lam|))

The closed forms used throughout the package are

    <N>   = |lam| I1(2|lam|) / I0(2|lam|)
    <N^2> = |lam|^2
    var   = |lam|^2 (1 - (I1(2|lam|) / I0(2|lam|))^2)

Only the magnitude of ``lam`` enters any of these quantities, so complex
amplitudes are accepted and reduced to ``abs(lam)`` on entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from numbers import Number

import numpy as np

__all__ = [
    "TAIL_TOLERANCE",
    "MIN_N_MAX",
    "DomainError",
    "TruncationError",
    "PhotonDistribution",
    "FockAmplitudes",
    "magnitude",
    "bessel_i",
    "tmcc_pmf",
    "poisson_pmf",
    "mean_photons",
    "mean_square_photons",
    "variance",
    "build_fock_amplitudes",
    "apply_pair_annihilation",
    "sample_count",
    "sample_counts",
]

TAIL_TOLERANCE = 1e-12
MIN_N_MAX = 20

_SERIES_RTOL = 1e-16
_MAX_SERIES_TERMS = 10_000


class DomainError(ValueError):
    """Raised for arguments outside a function's mathematical domain."""


class TruncationError(ValueError):
    """Raised when a requested truncation drops more than the allowed tail."""


def magnitude(lam) -> float:
    """Return ``|lam|`` after checking that ``lam`` is a finite number."""
    if not isinstance(lam, Number):
        raise DomainError(f"amplitude must be a number, got {type(lam).__name__}")
    value = abs(complex(lam))
    if not math.isfinite(value):
        raise DomainError(f"amplitude must be finite, got {lam!r}")
    return float(value)


def bessel_i(order: int, argument: float) -> float:
    """Modified Bessel function of the first kind, orders 0 and 1.

    Sums the power series ``sum_m (x/2)^(2m+order) / (m! (m+order)!)`` until
    the next term drops below ``1e-16`` of the running sum. Adequate for the
    arguments in play here (``x`` up to a few tens).
    """
    if order not in (0, 1):
        raise DomainError(f"only orders 0 and 1 are supported, got {order}")
    x = float(argument)
    if not math.isfinite(x) or x < 0:
        raise DomainError(f"argument must be finite and nonnegative, got {argument!r}")
    if x == 0.0:
        return 1.0 if order == 0 else 0.0

    quarter_sq = 0.25 * x * x
    term = 1.0 if order == 0 else 0.5 * x
    total = term
    for m in range(1, _MAX_SERIES_TERMS):
        term *= quarter_sq / (m * (m + order))
        total += term
        if term <= _SERIES_RTOL * total:
            return total
    raise ArithmeticError(f"Bessel series did not converge for x={x}")


def _bessel_ratio(x: float) -> float:
    """I1(x) / I0(x)."""
    return bessel_i(1, x) / bessel_i(0, x)


@dataclass(frozen=True)
class PhotonDistribution:
    """A normalized photon-number pmf on ``n = 0..n_max``.

    ``mean``, ``variance`` and ``cdf`` are derived from ``probabilities`` on
    construction. The last cdf entry is pinned to exactly 1 so inverse-cdf
    sampling with variates in ``[0, 1)`` always lands inside the support.
    """

    probabilities: np.ndarray
    mean: float = field(init=False)
    variance: float = field(init=False)
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a non-empty 1-d sequence")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        total = math.fsum(p)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        n = np.arange(p.size)
        mean = math.fsum(n * p)
        var = max(math.fsum((n - mean) ** 2 * p), 0.0)
        cdf = np.minimum(np.cumsum(p), 1.0)
        cdf[-1] = 1.0
        p.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)
        object.__setattr__(self, "cdf", cdf)

    @property
    def n_max(self) -> int:
        return self.probabilities.size - 1

    def pmf(self, n: int) -> float:
        """Probability of ``n`` photons; zero outside the stored support."""
        if 0 <= n <= self.n_max:
            return float(self.probabilities[n])
        return 0.0

    def with_noise(self, epsilon: float) -> "PhotonDistribution":
        """Distribution of ``count + Bernoulli(epsilon)``."""
        if not 0.0 <= epsilon <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {epsilon!r}")
        if epsilon == 0.0:
            return self
        p = np.zeros(self.probabilities.size + 1)
        p[:-1] += (1.0 - epsilon) * self.probabilities
        p[1:] += epsilon * self.probabilities
        return PhotonDistribution(p / math.fsum(p))


def _truncate(log_weights: np.ndarray, min_n_max: int) -> np.ndarray:
    """Normalized pmf from unnormalized log-weights, cut where the tail is negligible."""
    w = np.exp(log_weights - log_weights.max())
    total = math.fsum(w)
    # Tail weighted by (1 + n^2) so that the second moment of the kept part is
    # as accurate as its normalization; this also bounds the plain tail mass.
    n = np.arange(w.size)
    weighted = (1.0 + n * n) * w
    tail_after = np.concatenate([np.cumsum(weighted[::-1])[::-1][1:], [0.0]])
    n_cut = int(np.argmax(tail_after < TAIL_TOLERANCE * total))
    n_max = max(min_n_max, n_cut)
    if n_max >= w.size:
        w = np.concatenate([w, np.zeros(n_max + 1 - w.size)])
    kept = w[: n_max + 1]
    return kept / math.fsum(kept)


def _series_length(centre: float) -> int:
    # Generous enough that the discarded remainder is far below TAIL_TOLERANCE.
    return int(2 * centre + 20 * math.sqrt(centre + 1.0) + 60)


def _tmcc_log_weights(x: float, length: int) -> np.ndarray:
    n = np.arange(length)
    if x == 0.0:
        out = np.full(length, -np.inf)
        out[0] = 0.0
        return out
    log_fact = np.array([math.lgamma(k + 1.0) for k in range(length)])
    return 2.0 * n * math.log(x) - 2.0 * log_fact


def tmcc_pmf(lam, min_n_max: int = MIN_N_MAX) -> PhotonDistribution:
    """Photon-number distribution of one TMCC mode.

    Truncated at the smallest ``n_max >= min_n_max`` beyond which the
    remaining tail of the series, weighted by ``1 + n^2``, is below ``1e-12``
    of its total, then renormalized. The discarded probability is therefore
    below ``1e-12`` and the truncated moments stay accurate to about the same
    level.
    """
    x = magnitude(lam)
    log_w = _tmcc_log_weights(x, _series_length(x))
    return PhotonDistribution(_truncate(log_w, min_n_max))


def poisson_pmf(mean: float, min_n_max: int = MIN_N_MAX) -> PhotonDistribution:
    """Poisson (coherent-beam) photon-number distribution, same truncation policy."""
    mu = float(mean)
    if not math.isfinite(mu) or mu < 0:
        raise DomainError(f"mean must be finite and nonnegative, got {mean!r}")
    length = _series_length(mu)
    n = np.arange(length)
    if mu == 0.0:
        log_w = np.full(length, -np.inf)
        log_w[0] = 0.0
    else:
        log_fact = np.array([math.lgamma(k + 1.0) for k in range(length)])
        log_w = n * math.log(mu) - log_fact
    return PhotonDistribution(_truncate(log_w, min_n_max))


def mean_photons(lam) -> float:
    """Mean photon number per mode, ``|lam| I1(2|lam|) / I0(2|lam|)``."""
    x = magnitude(lam)
    if x == 0.0:
        return 0.0
    return x * _bessel_ratio(2.0 * x)


def mean_square_photons(lam) -> float:
    """Second moment ``<N^2> = |lam|^2``."""
    x = magnitude(lam)
    return x * x


def variance(lam) -> float:
    """Photon-number variance ``|lam|^2 (1 - (I1/I0)^2)`` at argument ``2|lam|``."""
    x = magnitude(lam)
    if x == 0.0:
        return 0.0
    r = _bessel_ratio(2.0 * x)
    return x * x * (1.0 - r * r)


@dataclass(frozen=True)
class FockAmplitudes:
    """Real amplitudes ``c_n`` of the pair states ``|n, n>`` for ``n = 0..n_max``.

    States produced by :func:`build_fock_amplitudes` are normalized;
    :func:`apply_pair_annihilation` returns an unnormalized one.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def n_max(self) -> int:
        return self.coefficients.size - 1

    @property
    def norm_squared(self) -> float:
        return math.fsum(self.coefficients**2)


def build_fock_amplitudes(lam, n_max: int) -> FockAmplitudes:
    """Truncated pair-state expansion ``c_n = lam^n / (n! sqrt(I0(2|lam|)))``.

    Raises :class:`TruncationError` if the probability discarded beyond
    ``n_max`` is not below ``1e-12``.
    """
    x = magnitude(lam)
    if n_max < 0:
        raise TruncationError("n_max must be nonnegative")
    i0 = bessel_i(0, 2.0 * x)
    length = max(n_max + 1, _series_length(x))
    log_w = _tmcc_log_weights(x, length)
    probs = np.exp(log_w - math.log(i0))
    tail = math.fsum(probs[n_max + 1:])
    if tail >= TAIL_TOLERANCE:
        raise TruncationError(
            f"n_max={n_max} discards probability {tail:.3g} for |lam|={x}; "
            f"need a larger bound"
        )
    c = np.sqrt(probs[: n_max + 1])
    return FockAmplitudes(c / math.sqrt(math.fsum(c**2)))


def apply_pair_annihilation(state: FockAmplitudes) -> FockAmplitudes:
    """Apply ``a1 a2`` to a pair-state expansion.

    ``a1 a2 |n, n> = n |n-1, n-1>``, so the output amplitude at ``n`` is
    ``(n + 1) c_{n+1}``. The top index has no source and is set to zero.
    """
    c = state.coefficients
    out = np.zeros_like(c)
    out[:-1] = np.arange(1, c.size) * c[1:]
    return FockAmplitudes(out)


def sample_count(dist: PhotonDistribution, randomness: float) -> int:
    """Inverse-cdf draw: the smallest ``n`` with ``cdf[n] > randomness``."""
    return int(np.searchsorted(dist.cdf, randomness, side="right"))


def sample_counts(dist: PhotonDistribution, uniforms: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sample_count`."""
    return np.searchsorted(dist.cdf, np.asarray(uniforms), side="right").astype(np.int64)
