"""Binary frame codec for the coordinator/worker exchange.

Frame layout (little-endian)::

    magic     4 bytes   b"GLMD"
    version   u8        1
    msg_type  u8
    length    u32       payload byte count
    payload   bytes

Payloads by message type::

    0x01 HELLO               worker_id u32, n_k u64, p u32, family u8
    0x02 LOCAL_FIT           converged u8, iterations u32, beta f64[p], fisher f64[p*p]
    0x03 BROADCAST_BETA      beta f64[p]
    0x04 LOCAL_SCORE_FISHER  score f64[p], fisher f64[p*p]
    0x05 RESULT              method u8, beta f64[p]
    0x06 ABORT               code u16, utf-8 message

Reals are IEEE-754 binary64, matrices row-major.  ``p`` is never sent
explicitly after HELLO; decoders recover it from the payload length.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple, Union

import numpy as np

from glmd.errors import ProtocolError


MAGIC = b"GLMD"
VERSION = 1

HEADER = struct.Struct("<4sBBI")
_HELLO = struct.Struct("<IQIB")
_FIT_PREFIX = struct.Struct("<BI")
_RESULT_PREFIX = struct.Struct("<B")
_ABORT_PREFIX = struct.Struct("<H")

_F64 = np.dtype("<f8")


class MsgType(IntEnum):
    HELLO = 0x01
    LOCAL_FIT = 0x02
    BROADCAST_BETA = 0x03
    LOCAL_SCORE_FISHER = 0x04
    RESULT = 0x05
    ABORT = 0x06


@dataclass(frozen=True, eq=False)
class Hello:
    worker_id: int
    n_k: int
    p: int
    family: int


@dataclass(frozen=True, eq=False)
class LocalFit:
    converged: bool
    iterations: int
    beta: np.ndarray
    fisher: np.ndarray


@dataclass(frozen=True, eq=False)
class BroadcastBeta:
    beta: np.ndarray


@dataclass(frozen=True, eq=False)
class LocalScoreFisher:
    score: np.ndarray
    fisher: np.ndarray


@dataclass(frozen=True, eq=False)
class Result:
    method: int
    beta: np.ndarray


@dataclass(frozen=True, eq=False)
class Abort:
    code: int
    message: str


Message = Union[Hello, LocalFit, BroadcastBeta, LocalScoreFisher, Result, Abort]


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _reals(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype=_F64).tobytes()


def _square(fisher: np.ndarray, p: int) -> bytes:
    fisher = np.asarray(fisher)
    if fisher.shape != (p, p):
        raise ProtocolError(f"Fisher matrix has shape {fisher.shape}, expected {(p, p)}")
    return _reals(fisher)


def encode_payload(msg: Message) -> Tuple[MsgType, bytes]:
    if isinstance(msg, Hello):
        return MsgType.HELLO, _HELLO.pack(msg.worker_id, msg.n_k, msg.p, msg.family)
    if isinstance(msg, LocalFit):
        p = len(msg.beta)
        body = _FIT_PREFIX.pack(1 if msg.converged else 0, msg.iterations)
        return MsgType.LOCAL_FIT, body + _reals(msg.beta) + _square(msg.fisher, p)
    if isinstance(msg, BroadcastBeta):
        return MsgType.BROADCAST_BETA, _reals(msg.beta)
    if isinstance(msg, LocalScoreFisher):
        p = len(msg.score)
        return MsgType.LOCAL_SCORE_FISHER, _reals(msg.score) + _square(msg.fisher, p)
    if isinstance(msg, Result):
        return MsgType.RESULT, _RESULT_PREFIX.pack(msg.method) + _reals(msg.beta)
    if isinstance(msg, Abort):
        return MsgType.ABORT, _ABORT_PREFIX.pack(msg.code) + msg.message.encode("utf-8")
    raise TypeError(f"cannot encode {type(msg).__name__}")


def encode_message(msg: Message) -> bytes:
    """Return the full frame (header + payload) for *msg*."""

    kind, payload = encode_payload(msg)
    return HEADER.pack(MAGIC, VERSION, int(kind), len(payload)) + payload


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def decode_header(header: bytes) -> Tuple[MsgType, int]:
    """Validate a 10-byte header and return ``(msg_type, payload_length)``."""

    if len(header) < HEADER.size:
        raise ProtocolError(f"truncated header ({len(header)} of {HEADER.size} bytes)", offset=len(header))
    magic, version, kind, length = HEADER.unpack_from(header, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}", offset=4)
    try:
        return MsgType(kind), length
    except ValueError:
        raise ProtocolError(f"unknown message type 0x{kind:02x}", offset=5) from None


def _read_reals(payload: bytes, start: int, count: int) -> np.ndarray:
    return np.frombuffer(payload, dtype=_F64, count=count, offset=start).astype(float)


def _dimension_from_square_block(nbytes: int, offset: int) -> int:
    """Recover ``p`` from a byte count holding ``p + p*p`` reals."""

    if nbytes % 8:
        raise ProtocolError(f"payload of {nbytes} bytes is not a whole number of reals", offset=offset)
    reals = nbytes // 8
    p = (math.isqrt(1 + 4 * reals) - 1) // 2
    if p < 1 or p * (p + 1) != reals:
        raise ProtocolError(f"{reals} reals do not form a vector plus square matrix", offset=offset)
    return p


def _vector_length(nbytes: int, offset: int) -> int:
    if nbytes % 8 or nbytes == 0:
        raise ProtocolError(f"payload of {nbytes} bytes is not a non-empty real vector", offset=offset)
    return nbytes // 8


def decode_payload(kind: MsgType, payload: bytes) -> Message:
    base = HEADER.size
    size = len(payload)
    if kind is MsgType.HELLO:
        if size != _HELLO.size:
            raise ProtocolError(f"HELLO payload is {size} bytes, expected {_HELLO.size}", offset=base + min(size, _HELLO.size))
        worker_id, n_k, p, family = _HELLO.unpack(payload)
        return Hello(worker_id, n_k, p, family)
    if kind is MsgType.LOCAL_FIT:
        if size < _FIT_PREFIX.size:
            raise ProtocolError("LOCAL_FIT payload truncated", offset=base + size)
        converged, iterations = _FIT_PREFIX.unpack_from(payload, 0)
        if converged not in (0, 1):
            raise ProtocolError(f"converged flag {converged} is not 0/1", offset=base)
        p = _dimension_from_square_block(size - _FIT_PREFIX.size, base + _FIT_PREFIX.size)
        beta = _read_reals(payload, _FIT_PREFIX.size, p)
        fisher = _read_reals(payload, _FIT_PREFIX.size + 8 * p, p * p).reshape(p, p)
        return LocalFit(bool(converged), iterations, beta, fisher)
    if kind is MsgType.BROADCAST_BETA:
        p = _vector_length(size, base)
        return BroadcastBeta(_read_reals(payload, 0, p))
    if kind is MsgType.LOCAL_SCORE_FISHER:
        p = _dimension_from_square_block(size, base)
        return LocalScoreFisher(_read_reals(payload, 0, p), _read_reals(payload, 8 * p, p * p).reshape(p, p))
    if kind is MsgType.RESULT:
        if size < _RESULT_PREFIX.size:
            raise ProtocolError("RESULT payload truncated", offset=base + size)
        (method,) = _RESULT_PREFIX.unpack_from(payload, 0)
        p = _vector_length(size - _RESULT_PREFIX.size, base + _RESULT_PREFIX.size)
        return Result(method, _read_reals(payload, _RESULT_PREFIX.size, p))
    if kind is MsgType.ABORT:
        if size < _ABORT_PREFIX.size:
            raise ProtocolError("ABORT payload truncated", offset=base + size)
        (code,) = _ABORT_PREFIX.unpack_from(payload, 0)
        try:
            message = payload[_ABORT_PREFIX.size :].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("ABORT message is not valid UTF-8", offset=base + _ABORT_PREFIX.size + exc.start) from None
        return Abort(code, message)
    raise ProtocolError(f"unhandled message type {kind!r}", offset=5)


def decode_message(frame: bytes) -> Message:
    """Decode one complete frame; the payload length must match exactly."""

    kind, length = decode_header(frame)
    actual = len(frame) - HEADER.size
    if actual < length:
        raise ProtocolError(f"payload truncated ({actual} of {length} bytes)", offset=len(frame))
    if actual > length:
        raise ProtocolError(f"{actual - length} trailing bytes after payload", offset=HEADER.size + length)
    return decode_payload(kind, bytes(frame[HEADER.size :]))


def message_type(frame: bytes) -> MsgType:
    return decode_header(frame)[0]
