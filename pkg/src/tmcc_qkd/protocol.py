"""Threshold key generation, half-code XOR verification and error analysis.

A session runs as follows. Both parties count photons in each bit interval
and read the bit as 0 when the count is at most ``floor(<N>)`` and 1
otherwise. Before revealing anything each party compares its own count
histogram with the expected one (:mod:`tmcc_qkd.detection`). Bob then splits
his code in half, XORs the halves and publishes the result. Alice XORs the
message with her first half and compares it with her second half.

The two parties are separate state machines talking only through an
:class:`~tmcc_qkd.transport.Endpoint`. The twin-beam record itself is
simulated from the shared seed, which stands in for the physical beam.
"""
from __future__ import annotations

import hashlib
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attacks import AttackModel
from .channel import CountBatch, CountPair, NoiseModel, TmccSource, draw_batch
from .detection import DEFAULT_SIGNIFICANCE, DetectionReport, InsufficientDataError, fit_test
from .photon_statistics import DomainError, PhotonDistribution, magnitude, mean_photons, tmcc_pmf
from .transport import (
    Endpoint,
    MessageKind,
    ProtocolViolation,
    TransportError,
    abort_payload,
    hello_payload,
    loopback_pair,
    pack_bits,
    parse_abort,
    parse_hello,
    parse_verdict,
    unpack_bits,
    verdict_payload,
)

log = logging.getLogger(__name__)

__all__ = [
    "ACCEPTED",
    "REASON_VERIFICATION",
    "REASON_EAVESDROPPING",
    "REASON_INSUFFICIENT_DATA",
    "REASON_TRANSPORT",
    "REASON_PROTOCOL",
    "SessionConfig",
    "BitRecord",
    "VerificationOutcome",
    "PartyResult",
    "SessionTranscript",
    "decision_threshold",
    "decide_bit",
    "decide_bits",
    "xor_half_codes",
    "verify_keys",
    "expected_count_distribution",
    "simulate_channel",
    "run_alice",
    "run_bob",
    "run_session",
    "build_transcript",
    "prob_zero",
    "error_factor",
    "error_probability",
    "mismatch_rate",
    "mismatch_explained",
    "conditional_error_rate",
    "error_table_row",
]

ACCEPTED = "accepted"
REASON_VERIFICATION = "verification"
REASON_EAVESDROPPING = "eavesdropping-suspected"
REASON_INSUFFICIENT_DATA = "insufficient-data"
REASON_TRANSPORT = "transport"
REASON_PROTOCOL = "protocol"

DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class SessionConfig:
    lam: float
    epsilon: float = 0.0
    key_bits: int = 1024
    seed: int = 0
    detection_significance: float = DEFAULT_SIGNIFICANCE
    attack: AttackModel = field(default_factory=AttackModel.none)

    def __post_init__(self):
        object.__setattr__(self, "lam", magnitude(self.lam))
        NoiseModel(self.epsilon)
        if int(self.key_bits) != self.key_bits or self.key_bits < 2 or self.key_bits % 2:
            raise DomainError(f"key_bits must be an even integer >= 2, got {self.key_bits!r}")
        if not 0.0 < self.detection_significance <= 0.5:
            raise DomainError("detection_significance must lie in (0, 0.5]")
        if not 0 <= self.seed < 1 << 64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def session_id(self) -> bytes:
        """16 bytes derived from the whole configuration.

        Two ends started with different parameters get different ids and the
        first frame exchanged is rejected.
        """
        text = (
            f"tmcc-qkd|{self.lam!r}|{self.epsilon!r}|{self.key_bits}|{self.seed}"
            f"|{self.detection_significance!r}|{self.attack.label()}"
        )
        return hashlib.sha256(text.encode()).digest()[:16]


@dataclass(frozen=True)
class BitRecord:
    index: int
    counts: CountPair
    alice_bit: int
    bob_bit: int
    threshold: int


@dataclass(frozen=True)
class VerificationOutcome:
    matched: bool
    differing_count: int
    differing_positions: tuple[int, ...] = ()


@dataclass(frozen=True)
class PartyResult:
    role: str
    outcome: str
    verification: VerificationOutcome | None
    detection: DetectionReport | None
    detail: str = ""

    @property
    def accepted(self) -> bool:
        return self.outcome == ACCEPTED


def decision_threshold(lam) -> int:
    """Integer part of the mean photon number."""
    return int(math.floor(mean_photons(lam)))


def decide_bit(count: int, threshold: int) -> int:
    return 0 if count <= threshold else 1


def decide_bits(counts, threshold: int) -> np.ndarray:
    return (np.asarray(counts) > threshold).astype(np.uint8)


def xor_half_codes(key: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a code at its midpoint and XOR the halves."""
    bits = np.asarray(key, dtype=np.uint8)
    if bits.ndim != 1 or bits.size < 2 or bits.size % 2:
        raise ValueError(f"key length must be even and >= 2, got {bits.size}")
    half = bits.size // 2
    first, second = bits[:half], bits[half:]
    return first, second, first ^ second


def verify_keys(alice_key: Sequence[int], bob_xor_message: Sequence[int]) -> VerificationOutcome:
    """Alice's check of Bob's published half-code XOR against her own halves."""
    first, second, _ = xor_half_codes(alice_key)
    message = np.asarray(bob_xor_message, dtype=np.uint8)
    if message.shape != first.shape:
        raise ProtocolViolation(
            f"XOR message has {message.size} bits, expected {first.size}"
        )
    positions = np.flatnonzero((first ^ message) != second)
    return VerificationOutcome(
        matched=positions.size == 0,
        differing_count=int(positions.size),
        differing_positions=tuple(int(p) for p in positions),
    )


def expected_count_distribution(config: SessionConfig) -> PhotonDistribution:
    """What each party should see: the TMCC pmf plus its own noise photon."""
    return tmcc_pmf(config.lam).with_noise(config.epsilon)


def simulate_channel(config: SessionConfig) -> CountBatch:
    source = TmccSource(config.lam, config.seed)
    attack = config.attack if config.attack.active else None
    return draw_batch(source, NoiseModel(config.epsilon), config.key_bits, attack)


def _own_detection(counts, config: SessionConfig) -> tuple[DetectionReport | None, str | None]:
    """Run the party's histogram check; return the report and an abort reason, if any."""
    try:
        report = fit_test(counts, expected_count_distribution(config), config.detection_significance)
    except InsufficientDataError:
        return None, REASON_INSUFFICIENT_DATA
    return report, None if report.passed else REASON_EAVESDROPPING


def _expect(msg, *kinds: MessageKind):
    if msg.kind not in kinds:
        raise ProtocolViolation(f"unexpected {msg.kind.name} message")
    return msg


def _guarded(role: str, endpoint: Endpoint, body) -> PartyResult:
    try:
        return body()
    except TransportError as exc:
        log.warning("%s: transport failure: %s", role, exc)
        return PartyResult(role, REASON_TRANSPORT, None, None, str(exc))
    except ProtocolViolation as exc:
        log.warning("%s: protocol violation: %s", role, exc)
        try:
            endpoint.post(MessageKind.ABORT, abort_payload(REASON_PROTOCOL))
        except (TransportError, ProtocolViolation):
            pass
        return PartyResult(role, REASON_PROTOCOL, None, None, str(exc))


def run_bob(endpoint: Endpoint, config: SessionConfig, counts, timeout: float | None = DEFAULT_TIMEOUT) -> PartyResult:
    """Bob's side: greet, check his histogram, publish the half-code XOR, await the verdict."""
    threshold = decision_threshold(config.lam)
    report, reason = _own_detection(counts, config)

    def body():
        endpoint.post(MessageKind.HELLO, hello_payload(config.key_bits))
        msg = _expect(endpoint.receive(timeout), MessageKind.HELLO, MessageKind.ABORT)
        if msg.kind is MessageKind.ABORT:
            return PartyResult("bob", parse_abort(msg.payload), None, report, "peer aborted")
        if parse_hello(msg.payload) != config.key_bits:
            raise ProtocolViolation("peer announced a different code length")
        if reason is not None:
            endpoint.post(MessageKind.ABORT, abort_payload(reason))
            return PartyResult("bob", reason, None, report, "own detection")
        _, _, xor = xor_half_codes(decide_bits(counts, threshold))
        endpoint.post(MessageKind.XOR_HALFCODE, pack_bits(xor))
        msg = _expect(endpoint.receive(timeout), MessageKind.VERDICT, MessageKind.ABORT)
        if msg.kind is MessageKind.ABORT:
            return PartyResult("bob", parse_abort(msg.payload), None, report, "peer aborted")
        matched, differing = parse_verdict(msg.payload)
        outcome = ACCEPTED if matched else REASON_VERIFICATION
        return PartyResult("bob", outcome, VerificationOutcome(matched, differing), report)

    return _guarded("bob", endpoint, body)


def run_alice(endpoint: Endpoint, config: SessionConfig, counts, timeout: float | None = DEFAULT_TIMEOUT) -> PartyResult:
    """Alice's side: answer the greeting, check her histogram, verify Bob's XOR, send the verdict."""
    threshold = decision_threshold(config.lam)
    report, reason = _own_detection(counts, config)

    def body():
        msg = _expect(endpoint.receive(timeout), MessageKind.HELLO, MessageKind.ABORT)
        if msg.kind is MessageKind.ABORT:
            return PartyResult("alice", parse_abort(msg.payload), None, report, "peer aborted")
        if parse_hello(msg.payload) != config.key_bits:
            raise ProtocolViolation("peer announced a different code length")
        endpoint.post(MessageKind.HELLO, hello_payload(config.key_bits))
        msg = _expect(endpoint.receive(timeout), MessageKind.XOR_HALFCODE, MessageKind.ABORT)
        if msg.kind is MessageKind.ABORT:
            return PartyResult("alice", parse_abort(msg.payload), None, report, "peer aborted")
        if reason is not None:
            endpoint.post(MessageKind.ABORT, abort_payload(reason))
            return PartyResult("alice", reason, None, report, "own detection")
        outcome = verify_keys(decide_bits(counts, threshold), unpack_bits(msg.payload))
        endpoint.post(MessageKind.VERDICT, verdict_payload(outcome.matched, outcome.differing_count))
        return PartyResult("alice", ACCEPTED if outcome.matched else REASON_VERIFICATION, outcome, report)

    return _guarded("alice", endpoint, body)


@dataclass(frozen=True)
class SessionTranscript:
    """Full record of one key-distribution attempt."""

    config: SessionConfig
    threshold: int
    batch: CountBatch
    alice_key: np.ndarray
    bob_key: np.ndarray
    verification: VerificationOutcome | None
    alice_detection: DetectionReport | None
    bob_detection: DetectionReport | None
    outcome: str

    @property
    def accepted(self) -> bool:
        return self.outcome == ACCEPTED

    @property
    def keys_identical(self) -> bool:
        return bool(np.array_equal(self.alice_key, self.bob_key))

    @property
    def records(self) -> list[BitRecord]:
        return [
            BitRecord(
                index=self.batch.start + i,
                counts=self.batch.pair(i),
                alice_bit=int(self.alice_key[i]),
                bob_bit=int(self.bob_key[i]),
                threshold=self.threshold,
            )
            for i in range(len(self.batch))
        ]

    def rows(self) -> list[dict]:
        """Per-bit rows in the serialized column order."""
        b = self.batch
        alice, bob = b.alice, b.bob
        return [
            {
                "index": b.start + i,
                "base_count": int(b.base[i]),
                "alice_count": int(alice[i]),
                "bob_count": int(bob[i]),
                "alice_bit": int(self.alice_key[i]),
                "bob_bit": int(self.bob_key[i]),
            }
            for i in range(len(b))
        ]

    def summary(self) -> dict:
        cfg = self.config
        out = {
            "session_id": cfg.session_id.hex(),
            "lambda": cfg.lam,
            "epsilon": cfg.epsilon,
            "key_bits": cfg.key_bits,
            "seed": cfg.seed,
            "attack": cfg.attack.label(),
            "significance": cfg.detection_significance,
            "threshold": self.threshold,
            "outcome": self.outcome,
            "verification": (
                "not_performed" if self.verification is None
                else "match" if self.verification.matched else "mismatch"
            ),
            "differing_count": None if self.verification is None else self.verification.differing_count,
            "keys_identical": self.keys_identical,
            "bit_mismatches": int(np.count_nonzero(self.alice_key != self.bob_key)),
        }
        for role, report in (("alice", self.alice_detection), ("bob", self.bob_detection)):
            out[f"{role}_detection_statistic"] = None if report is None else report.statistic
            out[f"{role}_detection_dof"] = None if report is None else report.degrees_of_freedom
            out[f"{role}_detection_p_value"] = None if report is None else report.p_value
            out[f"{role}_detection_passed"] = None if report is None else report.passed
        return out


def build_transcript(config: SessionConfig, batch: CountBatch, result: PartyResult) -> SessionTranscript:
    """Assemble a transcript from the simulated beam record and one party's view.

    Only what both parties learn over the channel is kept from ``result``, so
    Alice's and Bob's transcripts of the same session coincide.
    """
    threshold = decision_threshold(config.lam)
    alice_report, _ = _own_detection(batch.alice, config)
    bob_report, _ = _own_detection(batch.bob, config)
    verification = None
    if result.verification is not None:
        verification = VerificationOutcome(result.verification.matched, result.verification.differing_count)
    return SessionTranscript(
        config=config,
        threshold=threshold,
        batch=batch,
        alice_key=decide_bits(batch.alice, threshold),
        bob_key=decide_bits(batch.bob, threshold),
        verification=verification,
        alice_detection=alice_report,
        bob_detection=bob_report,
        outcome=result.outcome,
    )


def run_session(config: SessionConfig, timeout: float | None = DEFAULT_TIMEOUT) -> SessionTranscript:
    """Run both parties in-process over the loopback transport."""
    batch = simulate_channel(config)
    alice_end, bob_end = loopback_pair(config.session_id)
    results: dict[str, PartyResult] = {}

    def bob_thread():
        try:
            results["bob"] = run_bob(bob_end, config, batch.bob, timeout)
        finally:
            bob_end.close()

    worker = threading.Thread(target=bob_thread, name="bob", daemon=True)
    worker.start()
    try:
        results["alice"] = run_alice(alice_end, config, batch.alice, timeout)
    finally:
        alice_end.close()
    worker.join()
    if results["alice"].outcome != results["bob"].outcome:
        log.warning("parties disagree on the outcome: %s vs %s",
                    results["alice"].outcome, results["bob"].outcome)
    return build_transcript(config, batch, results["alice"])


# --- error analysis -------------------------------------------------------


def prob_zero(lam) -> float:
    """Probability that a noiseless count decodes as 0."""
    dist = tmcc_pmf(lam)
    return math.fsum(dist.probabilities[: decision_threshold(lam) + 1])


def error_factor(lam) -> float:
    """Probability that a count decoded as 0 sits exactly at the threshold."""
    dist = tmcc_pmf(lam)
    return dist.pmf(decision_threshold(lam)) / prob_zero(lam)


def error_probability(lam, epsilon: float) -> float:
    """First-order rate of Bob reading 1 when Alice reads 0: ``epsilon * error_factor``."""
    NoiseModel(epsilon)
    return epsilon * error_factor(lam)


def mismatch_rate(lam, epsilon: float) -> float:
    """Exact unconditional per-bit disagreement rate ``2 eps (1 - eps) P_threshold``."""
    NoiseModel(epsilon)
    return 2.0 * epsilon * (1.0 - epsilon) * tmcc_pmf(lam).pmf(decision_threshold(lam))


def mismatch_explained(batch: CountBatch, threshold: int) -> np.ndarray:
    """Per bit: base count at the threshold and exactly one party got a noise photon."""
    return (batch.base == threshold) & ((batch.alice_noise + batch.bob_noise) == 1)


def conditional_error_rate(alice_bits, bob_bits) -> tuple[float, int]:
    """Empirical P(Bob = 1 | Alice = 0) and the number of Alice-0 bits it rests on."""
    alice_bits = np.asarray(alice_bits)
    bob_bits = np.asarray(bob_bits)
    zeros = alice_bits == 0
    n0 = int(np.count_nonzero(zeros))
    if n0 == 0:
        return float("nan"), 0
    return int(np.count_nonzero(bob_bits[zeros] == 1)) / n0, n0


def error_table_row(lam, epsilon: float, bits: int, seed: int, start: int = 0) -> dict:
    """Analytic error quantities next to Monte-Carlo estimates over ``bits`` bits."""
    source = TmccSource(lam, seed, draw_counter=start)
    batch = draw_batch(source, NoiseModel(epsilon), bits)
    threshold = decision_threshold(lam)
    alice_bits = decide_bits(batch.alice, threshold)
    bob_bits = decide_bits(batch.bob, threshold)
    cond, _ = conditional_error_rate(alice_bits, bob_bits)
    return {
        "lambda": magnitude(lam),
        "epsilon": float(epsilon),
        "threshold": threshold,
        "prob_zero": prob_zero(lam),
        "error_factor": error_factor(lam),
        "p_err": error_probability(lam, epsilon),
        "mismatch_rate": mismatch_rate(lam, epsilon),
        "empirical_conditional_error": cond,
        "empirical_mismatch_rate": float(np.count_nonzero(alice_bits != bob_bits)) / bits,
    }
