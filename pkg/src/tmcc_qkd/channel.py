"""Correlated twin-count channel with per-mode single-photon noise.

Every bit interval draws one base count from the TMCC pmf and hands the same
value to Alice and Bob. Each mode then independently picks up at most one
noise photon with probability ``epsilon``.

Randomness is counter-based: bit ``i`` of a stream keyed by ``seed`` reads
the four 64-bit words of Philox block ``i``. Lane 0 feeds the base count,
lanes 1 and 2 the Alice and Bob noise, lane 3 any attack acting on Bob's
share. A bit can therefore be regenerated without replaying the stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .photon_statistics import (
    DomainError,
    PhotonDistribution,
    magnitude,
    sample_counts,
    tmcc_pmf,
)

__all__ = [
    "LANE_BASE",
    "LANE_ALICE_NOISE",
    "LANE_BOB_NOISE",
    "LANE_ATTACK",
    "UndefinedCorrelationError",
    "uniforms",
    "NoiseModel",
    "TmccSource",
    "CountPair",
    "CountBatch",
    "draw_pair",
    "draw_batch",
    "empirical_correlation",
    "correlation_from_counts",
]

LANE_BASE = 0
LANE_ALICE_NOISE = 1
LANE_BOB_NOISE = 2
LANE_ATTACK = 3

_SEED_MASK = (1 << 64) - 1
_U53 = 2.0**-53


class UndefinedCorrelationError(ArithmeticError):
    """Pearson correlation requested for a margin with zero sample variance.

    The sample covariance is still available as ``g_ab``.
    """

    def __init__(self, g_ab: float):
        super().__init__("correlation undefined: a margin has zero sample variance")
        self.g_ab = g_ab


def uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniform variates in ``[0, 1)`` for bits ``start .. start+count-1``.

    Returns an array of shape ``(count, 4)``, one row per bit, one column per
    lane. Row ``i`` depends only on ``(seed, start + i)``.
    """
    if count < 0 or start < 0:
        raise ValueError("start and count must be nonnegative")
    gen = np.random.Philox(key=int(seed) & _SEED_MASK, counter=int(start))
    raw = gen.random_raw(4 * count).reshape(count, 4)
    return (raw >> np.uint64(11)).astype(np.float64) * _U53


@dataclass(frozen=True)
class NoiseModel:
    """Independent per-mode chance ``epsilon`` of exactly one extra photon."""

    epsilon: float = 0.0

    def __post_init__(self):
        eps = float(self.epsilon)
        if not 0.0 <= eps <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)


@dataclass
class TmccSource:
    """Seeded TMCC twin-beam source.

    A stateful stream: ``draw_counter`` is the index of the next bit. Keep a
    source confined to one owner at a time.
    """

    lam: float
    rng_seed: int
    draw_counter: int = 0
    distribution: PhotonDistribution = field(init=False, repr=False)

    def __post_init__(self):
        self.lam = magnitude(self.lam)
        self.rng_seed = int(self.rng_seed) & _SEED_MASK
        if self.draw_counter < 0:
            raise ValueError("draw_counter must be nonnegative")
        self.distribution = tmcc_pmf(self.lam)

    def take(self, count: int) -> tuple[int, np.ndarray]:
        """Reserve ``count`` bit intervals; return their first index and variates."""
        start = self.draw_counter
        u = uniforms(self.rng_seed, start, count)
        self.draw_counter += count
        return start, u


@dataclass(frozen=True)
class CountPair:
    """Photon counts registered by Alice and Bob in one bit interval.

    ``alice_count = base_count + alice_noise`` always. ``bob_count`` equals
    ``base_count + bob_noise`` unless an eavesdropper rewrote Bob's share.
    """

    alice_count: int
    bob_count: int
    base_count: int
    alice_noise: int = 0
    bob_noise: int = 0


@dataclass(frozen=True)
class CountBatch:
    """Column-wise record of consecutive bit intervals.

    ``bob_base`` is Bob's pre-noise count: ``base`` itself when no attack is
    active. ``eve`` holds counts diverted by a beam-splitting attack.
    """

    start: int
    base: np.ndarray
    bob_base: np.ndarray
    alice_noise: np.ndarray
    bob_noise: np.ndarray
    eve: np.ndarray

    @property
    def alice(self) -> np.ndarray:
        return self.base + self.alice_noise

    @property
    def bob(self) -> np.ndarray:
        return self.bob_base + self.bob_noise

    def __len__(self) -> int:
        return self.base.size

    def pair(self, i: int) -> CountPair:
        return CountPair(
            alice_count=int(self.alice[i]),
            bob_count=int(self.bob[i]),
            base_count=int(self.base[i]),
            alice_noise=int(self.alice_noise[i]),
            bob_noise=int(self.bob_noise[i]),
        )

    def pairs(self) -> list[CountPair]:
        return [self.pair(i) for i in range(len(self))]


def draw_batch(source: TmccSource, noise: NoiseModel, count: int, attack=None) -> CountBatch:
    """Draw ``count`` consecutive bit intervals from ``source``.

    ``attack`` (an :class:`~tmcc_qkd.attacks.AttackModel`) acts on Bob's share
    after the twin draw and before Bob's noise photon.
    """
    start, u = source.take(count)
    base = sample_counts(source.distribution, u[:, LANE_BASE])
    eps = noise.epsilon
    alice_noise = (u[:, LANE_ALICE_NOISE] < eps).astype(np.int64)
    bob_noise = (u[:, LANE_BOB_NOISE] < eps).astype(np.int64)
    if attack is None:
        bob_base, eve = base, np.zeros_like(base)
    else:
        bob_base, eve = attack.apply_counts(base, u[:, LANE_ATTACK])
    return CountBatch(start, base, bob_base, alice_noise, bob_noise, eve)


def draw_pair(source: TmccSource, noise: NoiseModel, attack=None) -> CountPair:
    """Draw the next bit interval as a single :class:`CountPair`."""
    return draw_batch(source, noise, 1, attack).pair(0)


def correlation_from_counts(a, b) -> tuple[float, float]:
    """Sample covariance (n-1 convention) and Pearson correlation of two count series.

    Integer inputs are reduced with exact integer arithmetic, so identical
    series give a correlation of exactly 1.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("count series must be 1-d and of equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    if np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer):
        a = a.astype(np.int64)
        b = b.astype(np.int64)
        sa, sb = int(a.sum()), int(b.sum())
        s_ab = n * int(np.dot(a, b)) - sa * sb
        s_aa = n * int(np.dot(a, a)) - sa * sa
        s_bb = n * int(np.dot(b, b)) - sb * sb
        g_ab = s_ab / (n * (n - 1))
        if s_aa == 0 or s_bb == 0:
            raise UndefinedCorrelationError(g_ab)
        prod = s_aa * s_bb
        root = math.isqrt(prod)
        rho = s_ab / root if root * root == prod else s_ab / math.sqrt(prod)
        return g_ab, max(-1.0, min(1.0, rho))

    a = a.astype(float)
    b = b.astype(float)
    da, db = a - a.mean(), b - b.mean()
    g_ab = float(np.dot(da, db)) / (n - 1)
    var_a, var_b = float(np.dot(da, da)), float(np.dot(db, db))
    if var_a == 0 or var_b == 0:
        raise UndefinedCorrelationError(g_ab)
    rho = float(np.dot(da, db)) / math.sqrt(var_a * var_b)
    return g_ab, max(-1.0, min(1.0, rho))


def empirical_correlation(pairs: Sequence[CountPair] | CountBatch) -> tuple[float, float]:
    """``(g_ab, rho_ab)`` estimated from Alice's and Bob's counts."""
    if isinstance(pairs, CountBatch):
        return correlation_from_counts(pairs.alice, pairs.bob)
    a = np.array([p.alice_count for p in pairs], dtype=np.int64)
    b = np.array([p.bob_count for p in pairs], dtype=np.int64)
    return correlation_from_counts(a, b)
