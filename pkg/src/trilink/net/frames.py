"""Bit-exact wire format.

Every frame is::

    length   u32 LE   payload byte count
    type     u8       MessageType
    session  16 B     session identifier (all zero for connection control)
    payload  length B

Payloads are packed little-endian 64-bit words, except HELLO and CONFIG:

    HELLO   magic b"TLNK" | version u16 LE | role u8 | flags u8      (8 bytes)
    CONFIG  sha256(body) (32 bytes) | body (UTF-8 JSON)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

HEADER = struct.Struct("<IB16s")
HEADER_SIZE = HEADER.size  # 21
MAX_PAYLOAD = (1 << 32) - 1
ZERO_SESSION = bytes(16)

HELLO_MAGIC = b"TLNK"
PROTOCOL_VERSION = 1
_HELLO = struct.Struct("<4sHBB")


class MessageType(IntEnum):
    HELLO = 1
    CONFIG = 2
    DB_SHARES = 3
    QUERY_SHARES = 4
    TRIPLE_BLOCK = 5
    BOOL_TRIPLE_BLOCK = 6
    OPEN = 7
    RESULT = 8
    ABORT = 9


class FrameError(ValueError):
    """Malformed, truncated or unknown frame."""


@dataclass(frozen=True)
class Frame:
    mtype: MessageType
    session_id: bytes
    payload: bytes = b""

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.payload)


def encode_frame(frame: Frame) -> bytes:
    if len(frame.session_id) != 16:
        raise FrameError("session id must be 16 bytes")
    if len(frame.payload) > MAX_PAYLOAD:
        raise FrameError("payload too large")
    return HEADER.pack(len(frame.payload), int(frame.mtype), frame.session_id) + frame.payload


def decode_header(data: bytes) -> tuple[int, MessageType, bytes]:
    if len(data) < HEADER_SIZE:
        raise FrameError(f"truncated header ({len(data)} bytes)")
    length, raw_type, sid = HEADER.unpack_from(data)
    try:
        mtype = MessageType(raw_type)
    except ValueError:
        raise FrameError(f"unknown message type {raw_type}") from None
    return length, mtype, sid


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame; trailing or missing bytes are errors."""
    length, mtype, sid = decode_header(data)
    body = data[HEADER_SIZE:]
    if len(body) != length:
        raise FrameError(f"length field says {length} payload bytes, got {len(body)}")
    return Frame(mtype, sid, bytes(body))


def pack_words(*parts) -> bytes:
    chunks = []
    for part in parts:
        arr = np.asarray(part)
        if arr.dtype.kind == "i":
            arr = arr.astype(np.int64)
        chunks.append(np.ascontiguousarray(arr.reshape(-1)).astype("<u8", copy=False).tobytes())
    return b"".join(chunks)


def unpack_words(payload: bytes) -> np.ndarray:
    if len(payload) % 8:
        raise FrameError(f"word payload of {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<u8").astype(np.uint64)


def encode_hello(role: int, flags: int = 0) -> bytes:
    return _HELLO.pack(HELLO_MAGIC, PROTOCOL_VERSION, role, flags)


def decode_hello(payload: bytes) -> tuple[int, int]:
    if len(payload) != _HELLO.size:
        raise FrameError("bad HELLO length")
    magic, version, role, flags = _HELLO.unpack(payload)
    if magic != HELLO_MAGIC:
        raise FrameError("bad HELLO magic")
    if version != PROTOCOL_VERSION:
        raise FrameError(f"protocol version mismatch: peer {version}, ours {PROTOCOL_VERSION}")
    return role, flags


def encode_config(body: dict) -> bytes:
    raw = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(raw).digest() + raw


def decode_config(payload: bytes) -> tuple[bytes, dict]:
    if len(payload) < 32:
        raise FrameError("CONFIG shorter than its digest")
    digest, raw = payload[:32], payload[32:]
    if hashlib.sha256(raw).digest() != digest:
        raise FrameError("CONFIG digest mismatch")
    try:
        return digest, json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"CONFIG body is not JSON: {exc}") from None
