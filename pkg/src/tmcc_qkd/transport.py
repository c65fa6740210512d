"""Public classical channel between Alice and Bob.

Frame layout (all integers big-endian)::

    length[4] | kind[1] | session_id[16] | sequence[8] | payload

``length`` counts every byte after itself. Bit sequences inside payloads are
a 4-byte bit count followed by the bits packed most-significant-bit first,
zero padded to a whole byte.

Payloads by kind:

    hello         key_bits[4]
    xor_halfcode  bit sequence
    verdict       status[1] (0 match, 1 mismatch) | differing_count[4]
    abort         UTF-8 reason

The channel is public and assumed authenticated: nothing is encrypted or
signed. Each endpoint numbers outgoing frames and rejects incoming frames
whose sequence number does not strictly increase.
"""
from __future__ import annotations

import enum
import queue
import socket
import struct
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "MessageKind",
    "PublicMessage",
    "TransportError",
    "ProtocolViolation",
    "encode_frame",
    "decode_frame",
    "pack_bits",
    "unpack_bits",
    "hello_payload",
    "parse_hello",
    "verdict_payload",
    "parse_verdict",
    "abort_payload",
    "parse_abort",
    "Endpoint",
    "LoopbackEndpoint",
    "loopback_pair",
    "TcpEndpoint",
    "tcp_listen",
    "tcp_connect",
]

_LENGTH = struct.Struct(">I")
_HEADER = struct.Struct(">B16sQ")
_U32 = struct.Struct(">I")
_VERDICT = struct.Struct(">BI")

MAX_FRAME = 1 << 24


class MessageKind(enum.IntEnum):
    HELLO = 1
    XOR_HALFCODE = 2
    VERDICT = 3
    ABORT = 4


class TransportError(ConnectionError):
    """The channel failed: connection lost, refused or timed out."""


class ProtocolViolation(ValueError):
    """A frame broke the wire format or the message-ordering rules."""


@dataclass(frozen=True)
class PublicMessage:
    kind: MessageKind
    session_id: bytes
    sequence_number: int
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "kind", MessageKind(self.kind))
        if len(self.session_id) != 16:
            raise ProtocolViolation("session_id must be 16 bytes")
        if not 0 <= self.sequence_number < 1 << 64:
            raise ProtocolViolation("sequence_number out of range")


def encode_frame(message: PublicMessage) -> bytes:
    body = _HEADER.pack(message.kind, message.session_id, message.sequence_number) + message.payload
    return _LENGTH.pack(len(body)) + body


def decode_frame(frame: bytes) -> PublicMessage:
    """Decode one complete frame, length prefix included."""
    if len(frame) < _LENGTH.size + _HEADER.size:
        raise ProtocolViolation("frame shorter than its header")
    (length,) = _LENGTH.unpack_from(frame)
    if length != len(frame) - _LENGTH.size:
        raise ProtocolViolation(f"length field {length} disagrees with frame size {len(frame)}")
    return _decode_body(frame[_LENGTH.size:])


def _decode_body(body: bytes) -> PublicMessage:
    if len(body) < _HEADER.size:
        raise ProtocolViolation("frame shorter than its header")
    kind, session_id, seq = _HEADER.unpack_from(body)
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise ProtocolViolation(f"unknown message kind {kind}") from None
    return PublicMessage(kind, session_id, seq, bytes(body[_HEADER.size:]))


def pack_bits(bits: Sequence[int]) -> bytes:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.size and arr.max() > 1:
        raise ValueError("bits must be 0 or 1")
    return _U32.pack(arr.size) + np.packbits(arr, bitorder="big").tobytes()


def unpack_bits(data: bytes) -> np.ndarray:
    if len(data) < _U32.size:
        raise ProtocolViolation("bit sequence missing its length prefix")
    (nbits,) = _U32.unpack_from(data)
    packed = data[_U32.size:]
    if len(packed) != (nbits + 7) // 8:
        raise ProtocolViolation(f"{len(packed)} payload bytes cannot hold exactly {nbits} bits")
    bits = np.unpackbits(np.frombuffer(packed, dtype=np.uint8), bitorder="big")
    if bits[nbits:].any():
        raise ProtocolViolation("nonzero padding bits")
    return bits[:nbits]


def hello_payload(key_bits: int) -> bytes:
    return _U32.pack(key_bits)


def parse_hello(payload: bytes) -> int:
    if len(payload) != _U32.size:
        raise ProtocolViolation("malformed hello payload")
    return _U32.unpack(payload)[0]


def verdict_payload(matched: bool, differing_count: int) -> bytes:
    return _VERDICT.pack(0 if matched else 1, differing_count)


def parse_verdict(payload: bytes) -> tuple[bool, int]:
    if len(payload) != _VERDICT.size:
        raise ProtocolViolation("malformed verdict payload")
    status, count = _VERDICT.unpack(payload)
    if status not in (0, 1):
        raise ProtocolViolation(f"unknown verdict status {status}")
    return status == 0, count


def abort_payload(reason: str) -> bytes:
    return reason.encode("utf-8")


def parse_abort(payload: bytes) -> str:
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolViolation("abort reason is not valid UTF-8") from None


class Endpoint:
    """One side of a session's public channel.

    Subclasses supply ``_write(frame)`` and ``_read(timeout) -> body``.
    """

    def __init__(self, session_id: bytes):
        if len(session_id) != 16:
            raise ValueError("session_id must be 16 bytes")
        self.session_id = session_id
        self._next_seq = 0
        self._last_sent = -1
        self._last_received = -1

    def message(self, kind: MessageKind, payload: bytes = b"") -> PublicMessage:
        """Build the next outgoing message with a fresh sequence number."""
        msg = PublicMessage(kind, self.session_id, self._next_seq, payload)
        self._next_seq += 1
        return msg

    def send(self, message: PublicMessage) -> None:
        if message.sequence_number <= self._last_sent:
            raise ProtocolViolation(
                f"sequence number {message.sequence_number} does not follow {self._last_sent}"
            )
        if message.session_id != self.session_id:
            raise ProtocolViolation("message belongs to another session")
        self._write(encode_frame(message))
        self._last_sent = message.sequence_number
        self._next_seq = max(self._next_seq, message.sequence_number + 1)

    def post(self, kind: MessageKind, payload: bytes = b"") -> PublicMessage:
        msg = self.message(kind, payload)
        self.send(msg)
        return msg

    def receive(self, timeout: float | None = None) -> PublicMessage:
        msg = _decode_body(self._read(timeout))
        if msg.session_id != self.session_id:
            raise ProtocolViolation("frame for a different session")
        if msg.sequence_number <= self._last_received:
            raise ProtocolViolation(
                f"sequence number {msg.sequence_number} does not follow {self._last_received}"
            )
        self._last_received = msg.sequence_number
        return msg

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _write(self, frame: bytes) -> None:
        raise NotImplementedError

    def _read(self, timeout: float | None) -> bytes:
        raise NotImplementedError


_CLOSED = object()


class LoopbackEndpoint(Endpoint):
    """In-process endpoint backed by a pair of queues. Frames still go through the codec."""

    def __init__(self, session_id: bytes, inbox: queue.Queue, outbox: queue.Queue):
        super().__init__(session_id)
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def _write(self, frame: bytes) -> None:
        if self._closed:
            raise TransportError("endpoint closed")
        self._outbox.put(frame)

    def _read(self, timeout: float | None) -> bytes:
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("timed out waiting for peer") from None
        if frame is _CLOSED:
            raise TransportError("peer closed the channel")
        (length,) = _LENGTH.unpack_from(frame)
        if length != len(frame) - _LENGTH.size:
            raise ProtocolViolation("corrupt loopback frame")
        return frame[_LENGTH.size:]

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSED)


def loopback_pair(session_id: bytes) -> tuple[LoopbackEndpoint, LoopbackEndpoint]:
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return LoopbackEndpoint(session_id, b_to_a, a_to_b), LoopbackEndpoint(session_id, a_to_b, b_to_a)


class TcpEndpoint(Endpoint):
    def __init__(self, session_id: bytes, sock: socket.socket):
        super().__init__(session_id)
        self.sock = sock

    def _write(self, frame: bytes) -> None:
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            try:
                chunk = self.sock.recv(n)
            except socket.timeout:
                raise TransportError("timed out waiting for peer") from None
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                raise TransportError("connection closed by peer")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def _read(self, timeout: float | None) -> bytes:
        self.sock.settimeout(timeout)
        (length,) = _LENGTH.unpack(self._recv_exact(_LENGTH.size))
        if length < _HEADER.size or length > MAX_FRAME:
            raise ProtocolViolation(f"implausible frame length {length}")
        return self._recv_exact(length)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def tcp_listen(session_id: bytes, host: str, port: int, timeout: float | None = 30.0,
               on_bound=None) -> TcpEndpoint:
    """Accept exactly one peer on ``host:port``.

    ``on_bound(port)`` is called once the socket is listening, which lets
    callers bind to port 0 and publish the chosen port.
    """
    with socket.create_server((host, port)) as server:
        server.settimeout(timeout)
        if on_bound is not None:
            on_bound(server.getsockname()[1])
        try:
            conn, _ = server.accept()
        except socket.timeout:
            raise TransportError(f"no peer connected to {host}:{port}") from None
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return TcpEndpoint(session_id, conn)


def tcp_connect(session_id: bytes, host: str, port: int, timeout: float = 30.0) -> TcpEndpoint:
    """Connect to a listening peer, retrying until ``timeout`` elapses."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=max(0.1, deadline - time.monotonic()))
            break
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise TransportError(f"could not connect to {host}:{port}: {exc}") from exc
            time.sleep(0.05)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return TcpEndpoint(session_id, sock)
