"""Arithmetic in Z_2^64, 2-out-of-2 additive sharing and keyed randomness streams.

Vectors of ring elements are ``numpy.uint64`` arrays; numpy wraps on overflow,
which is exactly reduction modulo 2^64.  Scalars may be passed as Python ints
and are reduced on entry.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

RING_BITS = 64
MODULUS = 1 << RING_BITS
MASK = MODULUS - 1
DTYPE = np.uint64


class Party(IntEnum):
    P0 = 0
    P1 = 1


class Pair(IntEnum):
    """Unordered party pairs that hold a common randomness stream."""

    P0_P1 = 0
    P0_HELPER = 1
    P1_HELPER = 2
    OWNER = 3  # a data owner's private sharing randomness


class StreamExhausted(RuntimeError):
    pass


class StructuralError(ValueError):
    """Shares that cannot belong to the same logical value (shape, party)."""


def as_ring(values) -> np.ndarray:
    """Coerce ints / sequences / arrays to a uint64 array, reducing mod 2^64."""
    if isinstance(values, np.ndarray):
        if values.dtype == DTYPE:
            return values
        if values.dtype.kind in "iub":
            return values.astype(np.int64 if values.dtype.kind == "i" else DTYPE).astype(DTYPE)
        raise TypeError(f"cannot embed dtype {values.dtype} into Z_2^64")
    if isinstance(values, (int, np.integer)):
        return np.array(int(values) & MASK, dtype=DTYPE)
    return np.array([int(v) & MASK for v in values], dtype=DTYPE)


def to_signed(values) -> np.ndarray:
    """Two's-complement view of ring elements."""
    return as_ring(values).view(np.int64)


def elements_to_bytes(values) -> bytes:
    """Fixed little-endian 8-byte serialization."""
    return as_ring(values).astype("<u8", copy=False).tobytes()


def elements_from_bytes(data: bytes) -> np.ndarray:
    if len(data) % 8:
        raise StructuralError(f"{len(data)} bytes is not a whole number of ring elements")
    return np.frombuffer(data, dtype="<u8").astype(DTYPE)


class RandomStream:
    """AES-128 in counter mode, addressed in 64-bit elements.

    Two endpoints holding the same ``seed`` see the same element at the same
    ``counter``; every draw advances the counter so no position is used twice.
    """

    def __init__(self, seed: bytes, pair: Pair = Pair.OWNER, counter: int = 0, *, log=None):
        if len(seed) != 16:
            raise ValueError("stream seed must be 16 bytes")
        self.seed = bytes(seed)
        self.pair = Pair(pair)
        self._log = log
        self._seek(counter)

    @classmethod
    def fresh(cls, pair: Pair = Pair.OWNER) -> "RandomStream":
        return cls(os.urandom(16), pair)

    def _seek(self, counter: int) -> None:
        if not 0 <= counter < MODULUS:
            raise StreamExhausted("stream counter out of range")
        block, skip = divmod(counter, 2)
        nonce = block.to_bytes(16, "big")
        self._enc = Cipher(algorithms.AES(self.seed), modes.CTR(nonce)).encryptor()
        if skip:
            self._enc.update(bytes(8))
        self.counter = counter

    def draw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("negative draw")
        if self.counter + n > MODULUS:
            raise StreamExhausted(f"{self.pair.name} stream exhausted")
        start = self.counter
        out = np.frombuffer(self._enc.update(bytes(8 * n)), dtype="<u8").astype(DTYPE)
        self.counter += n
        if self._log is not None and n:
            self._log(self.pair, start, n)
        return out

    def draw_like(self, shape) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        size = int(np.prod(shape)) if shape else 1
        return self.draw(size).reshape(shape)


def derive_seed(master: bytes, pair: Pair, session_id: bytes) -> bytes:
    """Per-(pair, session) stream key; distinct sessions never share a key."""
    h = hashlib.blake2b(digest_size=16, key=master[:64], person=b"trilink-stream")
    h.update(bytes([int(pair)]))
    h.update(session_id)
    return h.digest()


def common_random_elements(stream: RandomStream, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return stream.draw(n)


@dataclass(frozen=True)
class Share:
    party: Party
    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", int(self.value) & MASK)


@dataclass(frozen=True)
class ShareVector:
    party: Party
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", as_ring(np.atleast_1d(self.values)))

    def __len__(self) -> int:
        return len(self.values)


def share_value(secret, stream: RandomStream):
    """Split ``secret`` (int or array) into (r, secret - r) using ``stream`` for r."""
    secret = as_ring(secret)
    r = stream.draw_like(secret.shape).reshape(secret.shape)
    return r, secret - r


def reconstruct(s0, s1):
    """Sum two shares.  Accepts raw values, :class:`Share` or :class:`ShareVector`."""
    if isinstance(s0, (Share, ShareVector)) or isinstance(s1, (Share, ShareVector)):
        if type(s0) is not type(s1):
            raise StructuralError("mixed share kinds")
        if s0.party == s1.party:
            raise StructuralError("both shares come from the same party")
        if isinstance(s0, Share):
            return (s0.value + s1.value) & MASK
        s0, s1 = s0.values, s1.values
    a, b = as_ring(s0), as_ring(s1)
    if a.shape != b.shape:
        raise StructuralError(f"share shapes differ: {a.shape} vs {b.shape}")
    out = a + b
    return int(out) if out.ndim == 0 else out


def local_linear(shares, coeffs, offset, party: Party):
    """Share of sum(c_i * a_i) + offset.  Only P0 adds the public offset."""
    shares = as_ring(np.atleast_1d(shares))
    coeffs = as_ring(np.atleast_1d(coeffs))
    if shares.shape[-1] != coeffs.shape[-1]:
        raise StructuralError("coefficient count differs from share count")
    acc = (shares * coeffs).sum(axis=-1, dtype=DTYPE)
    if Party(party) == Party.P0:
        acc = acc + as_ring(offset)
    return acc


PROXY_PAIRS = {
    0: (Pair.P0_P1, Pair.P0_HELPER),
    1: (Pair.P0_P1, Pair.P1_HELPER),
    2: (Pair.P0_HELPER, Pair.P1_HELPER),
}


@dataclass(frozen=True)
class SeedBook:
    """Long-term pairwise master seeds; session streams are derived from them.

    Each party should hold only the seeds of the pairs it belongs to.  Key
    agreement is out of scope: seeds come from configuration.
    """

    seeds: dict

    @classmethod
    def from_master(cls, master: bytes) -> "SeedBook":
        """Derive all three pair seeds from one secret (testing and demos)."""
        out = {}
        for pair in (Pair.P0_P1, Pair.P0_HELPER, Pair.P1_HELPER):
            h = hashlib.blake2b(digest_size=32, key=master[:64], person=b"trilink-pair")
            h.update(bytes([int(pair)]))
            out[pair] = h.digest()
        return cls(out)

    def restrict(self, role: int) -> "SeedBook":
        return SeedBook({p: self.seeds[p] for p in PROXY_PAIRS[int(role)]})

    def session_streams(self, role: int, session_id: bytes) -> dict:
        return {
            pair: RandomStream(derive_seed(self.seeds[pair], pair, session_id), pair)
            for pair in PROXY_PAIRS[int(role)]
        }
