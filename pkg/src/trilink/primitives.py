"""Helper-assisted secure primitives over 2-out-of-2 additive shares.

Every function here is *role-polymorphic*: P0, P1 and the helper call the same
function in the same order.  Proxies pass their share arrays; the helper
passes arrays of the right shape whose contents are ignored (it only needs
sizes to deal correlated randomness).  The return value on the helper is a
placeholder of the output shape.

Correlated randomness is seed-derived.  Everything P0 needs comes from the
P0-helper stream, so the helper sends nothing to P0; P1 receives only the
corrections it cannot derive (the ``c`` words of its triples and its share of
the opened bits).

Comparison and equality use a helper-aided arithmetic-to-boolean opening:
the proxies add a mask ``r`` known to both of them (P0-P1 stream), blind
their halves with a second pairwise mask, and send them to the helper; the
helper learns only ``m = z + r`` (uniform), XOR-shares the 64 bits of ``m``
back, and the proxies evaluate ``bit63(m - r)`` or ``m == r`` with a log-depth
AND circuit on bitsliced words.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net.frames import FrameError, MessageType, pack_words, unpack_words
from .net.transport import Role
from .ring import DTYPE, Pair, as_ring

LOW63 = np.uint64((1 << 63) - 1)
ONES = np.uint64((1 << 64) - 1)
ONE = np.uint64(1)
MAX_BOUND = 1 << 61

# rounds per primitive, as counted by the proxies' meters
MUL_ROUNDS = 1
CARRY_LEVELS = (1, 2, 4, 8, 16, 32)
ZERO_TREE = (32, 16, 8, 4, 2, 1)
COMPARE_ROUNDS = 1 + len(CARRY_LEVELS) + MUL_ROUNDS
EQUALS_ROUNDS = 1 + len(ZERO_TREE) + MUL_ROUNDS


class TripleReuse(RuntimeError):
    pass


class OperandOutOfBound(ArithmeticError):
    """Debug mode caught a comparison operand outside [0, B)."""


@dataclass(frozen=True)
class ComparisonBound:
    """Operands of :func:`compare_geq` must lie in ``[0, B)`` with ``B <= 2^61``."""

    B: int = MAX_BOUND

    def __post_init__(self):
        if not 0 < self.B <= MAX_BOUND:
            raise ValueError(f"comparison bound {self.B} exceeds 2^61")


class MPCContext:
    """One party's view of one session: links, streams and meter.

    ``peer`` is the other proxy (proxies only); ``helper`` the helper link
    (proxies only); ``proxies`` maps P0/P1 to links (helper only).
    """

    def __init__(self, role: Role, streams: dict, meter=None, *, peer=None, helper=None, proxies=None, debug=False):
        self.role = Role(role)
        self.streams = streams
        self.meter = meter
        self.peer = peer
        self.helper = helper
        self.proxies = proxies or {}
        self.debug = debug
        self.debug_log: list = []
        if debug and meter is not None:
            for s in streams.values():
                s._log = meter.on_draw

    @property
    def is_helper(self) -> bool:
        return self.role == Role.HELPER

    @property
    def is_p0(self) -> bool:
        return self.role == Role.P0

    def stream(self, pair: Pair):
        return self.streams[pair]

    def own_helper_stream(self):
        return self.streams[Pair.P0_HELPER if self.is_p0 else Pair.P1_HELPER]

    def round(self, kind: str) -> None:
        if self.meter is not None and not self.is_helper:
            self.meter.round(kind)

    def check_fresh(self) -> None:
        if self.debug and self.meter is not None and not self.meter.streams_fresh():
            raise TripleReuse("a correlated-randomness position was consumed twice")

    # -- messaging ------------------------------------------------------------

    def swap(self, *arrays: np.ndarray) -> list[np.ndarray]:
        """Send ``arrays`` to the other proxy and receive its matching arrays."""
        self.peer.send(MessageType.OPEN, pack_words(*arrays))
        words = unpack_words(self.peer.recv(MessageType.OPEN).payload)
        return _split_like(words, arrays)

    def recv_block(self, mtype: MessageType, n: int) -> np.ndarray:
        words = unpack_words(self.helper.recv(mtype).payload)
        if words.size != n:
            raise FrameError(f"{mtype.name} carries {words.size} words, expected {n}")
        return words


def _split_like(words: np.ndarray, arrays) -> list[np.ndarray]:
    total = sum(int(np.size(a)) for a in arrays)
    if words.size != total:
        raise FrameError(f"OPEN carries {words.size} words, expected {total}")
    out, pos = [], 0
    for a in arrays:
        k = int(np.size(a))
        out.append(words[pos : pos + k].reshape(np.shape(a)))
        pos += k
    return out


def _draw(stream, shape) -> np.ndarray:
    return stream.draw(int(np.prod(shape, dtype=np.int64))).reshape(shape)


# -- arithmetic multiplication --------------------------------------------------


def generate_triples(ctx: MPCContext, shape):
    """Helper side of a Beaver-triple batch; returns nothing to P0."""
    s0, s1 = ctx.stream(Pair.P0_HELPER), ctx.stream(Pair.P1_HELPER)
    a0, b0, c0 = _draw(s0, shape), _draw(s0, shape), _draw(s0, shape)
    a1, b1 = _draw(s1, shape), _draw(s1, shape)
    c1 = (a0 + a1) * (b0 + b1) - c0
    ctx.proxies[Role.P1].send(MessageType.TRIPLE_BLOCK, pack_words(c1))


def _proxy_triples(ctx: MPCContext, shape):
    s = ctx.own_helper_stream()
    a, b = _draw(s, shape), _draw(s, shape)
    if ctx.is_p0:
        c = _draw(s, shape)
    else:
        c = ctx.recv_block(MessageType.TRIPLE_BLOCK, int(np.prod(shape, dtype=np.int64))).reshape(shape)
    return a, b, c


def multiply(ctx: MPCContext, x, y) -> np.ndarray:
    """Element-wise product of shared arrays (one proxy-proxy round)."""
    x, y = as_ring(x), as_ring(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if ctx.is_helper:
        generate_triples(ctx, x.shape)
        return np.zeros(x.shape, dtype=DTYPE)
    a, b, c = _proxy_triples(ctx, x.shape)
    e_own, f_own = x - a, y - b
    e_peer, f_peer = ctx.swap(e_own, f_own)
    e, f = e_own + e_peer, f_own + f_peer
    z = c + e * b + f * a
    if ctx.is_p0:
        z = z + e * f
    ctx.round("mul")
    ctx.check_fresh()
    return z


def and_bits(ctx: MPCContext, x, y) -> np.ndarray:
    """AND of arithmetically shared 0/1 vectors; the product of bits is their AND."""
    return multiply(ctx, x, y)


def dot_rows(ctx: MPCContext, x, rows) -> np.ndarray:
    """Shares of ``<x[f], rows[j, f]>`` for every row ``j`` and block ``f``.

    ``x`` has shape (k, L) and ``rows`` shape (m, k, L); the output has shape
    (m, k).  A single inner-product triple per (j, f) is used: the mask of
    ``x`` is shared by all rows (``x`` is opened once), each row has its own
    mask, and the helper ships one correction word per inner product.
    """
    x, rows = as_ring(x), as_ring(rows)
    if x.ndim != 2 or rows.ndim != 3 or rows.shape[1:] != x.shape:
        raise ValueError(f"dot_rows shape mismatch: {x.shape} vs {rows.shape}")
    m, k, L = rows.shape
    if ctx.is_helper:
        s0, s1 = ctx.stream(Pair.P0_HELPER), ctx.stream(Pair.P1_HELPER)
        a0, b0, c0 = _draw(s0, (k, L)), _draw(s0, (m, k, L)), _draw(s0, (m, k))
        a1, b1 = _draw(s1, (k, L)), _draw(s1, (m, k, L))
        a, b = a0 + a1, b0 + b1
        c = np.empty((m, k), dtype=DTYPE)
        for f in range(k):
            c[:, f] = b[:, f, :] @ a[f]
        ctx.proxies[Role.P1].send(MessageType.TRIPLE_BLOCK, pack_words(c - c0))
        return np.zeros((m, k), dtype=DTYPE)
    s = ctx.own_helper_stream()
    a, b = _draw(s, (k, L)), _draw(s, (m, k, L))
    if ctx.is_p0:
        c = _draw(s, (m, k))
    else:
        c = ctx.recv_block(MessageType.TRIPLE_BLOCK, m * k).reshape(m, k)
    e_own, f_own = x - a, rows - b
    e_peer, f_peer = ctx.swap(e_own, f_own)
    e, f = e_own + e_peer, f_own + f_peer
    out = c.copy()
    for j in range(k):
        acc = b[:, j, :] @ e[j] + f[:, j, :] @ a[j]
        if ctx.is_p0:
            acc = acc + f[:, j, :] @ e[j]
        out[:, j] += acc
    ctx.round("dot")
    ctx.check_fresh()
    return out


# -- boolean (XOR-shared, bitsliced) ------------------------------------------------


def and_words(ctx: MPCContext, x, y) -> np.ndarray:
    """Bitwise AND of XOR-shared 64-bit words (one round)."""
    x, y = as_ring(x), as_ring(y)
    shape = x.shape
    if ctx.is_helper:
        s0, s1 = ctx.stream(Pair.P0_HELPER), ctx.stream(Pair.P1_HELPER)
        a0, b0, c0 = _draw(s0, shape), _draw(s0, shape), _draw(s0, shape)
        a1, b1 = _draw(s1, shape), _draw(s1, shape)
        c1 = ((a0 ^ a1) & (b0 ^ b1)) ^ c0
        ctx.proxies[Role.P1].send(MessageType.BOOL_TRIPLE_BLOCK, pack_words(c1))
        return np.zeros(shape, dtype=DTYPE)
    s = ctx.own_helper_stream()
    a, b = _draw(s, shape), _draw(s, shape)
    if ctx.is_p0:
        c = _draw(s, shape)
    else:
        c = ctx.recv_block(MessageType.BOOL_TRIPLE_BLOCK, int(np.prod(shape, dtype=np.int64))).reshape(shape)
    d_own, e_own = x ^ a, y ^ b
    d_peer, e_peer = ctx.swap(d_own, e_own)
    d, e = d_own ^ d_peer, e_own ^ e_peer
    z = c ^ (d & b) ^ (e & a)
    if ctx.is_p0:
        z = z ^ (d & e)
    ctx.round("and")
    ctx.check_fresh()
    return z


def helper_open(ctx: MPCContext, z) -> tuple[np.ndarray, np.ndarray]:
    """Mask ``z`` with a proxy-common ``r`` and have the helper bit-share ``z + r``.

    Returns ``(r, m_bits)`` on the proxies: ``r`` in the clear (known to both
    proxies only) and this proxy's XOR-share of ``m = z + r``.
    """
    z = as_ring(z)
    shape = z.shape
    if ctx.is_helper:
        h0 = unpack_words(ctx.proxies[Role.P0].recv(MessageType.OPEN).payload)
        h1 = unpack_words(ctx.proxies[Role.P1].recv(MessageType.OPEN).payload)
        n = int(np.prod(shape, dtype=np.int64))
        if h0.size != n or h1.size != n:
            raise FrameError("masked opening has the wrong length")
        m = h0 + h1
        mask0 = ctx.stream(Pair.P0_HELPER).draw(n)
        ctx.proxies[Role.P1].send(MessageType.OPEN, pack_words(m ^ mask0))
        return np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE)
    common = ctx.stream(Pair.P0_P1)
    r, s = _draw(common, shape), _draw(common, shape)
    blinded = z + r + s if ctx.is_p0 else z - s
    ctx.helper.send(MessageType.OPEN, pack_words(blinded))
    if ctx.is_p0:
        bits = _draw(ctx.stream(Pair.P0_HELPER), shape)
    else:
        bits = ctx.recv_block(MessageType.OPEN, int(np.prod(shape, dtype=np.int64))).reshape(shape)
    ctx.round("open")
    return r, bits


def bit_to_arithmetic(ctx: MPCContext, c) -> np.ndarray:
    """Arithmetic shares of c0 XOR c1 from XOR-shared bits, via c0 + c1 - 2 c0 c1."""
    c = as_ring(c) & ONE
    zero = np.zeros_like(c)
    x, y = (c, zero) if ctx.is_p0 else (zero, c)
    prod = multiply(ctx, x, y)
    return c - np.uint64(2) * prod


def _sign_bits(ctx: MPCContext, z) -> np.ndarray:
    """XOR-shares (in bit 0) of bit 63 of z, via m = z + r and z = m - r."""
    r, mb = helper_open(ctx, z)
    r_low = ~r & LOW63
    g = mb & r_low
    p = (mb ^ r_low) if ctx.is_p0 else mb.copy()
    p &= LOW63
    # carry-in 1 at bit 0: g0 and p0 are exclusive, so g0 | p0 == g0 ^ p0
    g ^= p & ONE
    p &= ~ONE
    for k in CARRY_LEVELS:
        sk = np.uint64(k)
        if k == CARRY_LEVELS[-1]:
            g ^= and_words(ctx, p, (g << sk) & LOW63)
        else:
            both = and_words(ctx, np.concatenate([p, p]), np.concatenate([(g << sk) & LOW63, (p << sk) & LOW63]))
            g ^= both[: p.size]
            p = both[p.size :]
    carry = (g >> np.uint64(62)) & ONE
    msb = (mb >> np.uint64(63)) ^ carry
    if ctx.is_p0:
        msb ^= ONE ^ (r >> np.uint64(63))
    return msb


def _flat(x) -> tuple[np.ndarray, tuple]:
    x = as_ring(x)
    return x.reshape(-1), x.shape


def secure_msb(ctx: MPCContext, z) -> np.ndarray:
    """Arithmetic shares of the two's-complement sign bit of ``z``."""
    z, shape = _flat(z)
    out = bit_to_arithmetic(ctx, _sign_bits(ctx, z))
    return out.reshape(shape)


def compare_geq(ctx: MPCContext, a, b, bound: ComparisonBound = ComparisonBound()) -> np.ndarray:
    """Shares of [a >= b] for operands certified to lie in [0, bound.B)."""
    a, shape = _flat(a)
    b, _ = _flat(b)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    opened = _debug_open(ctx, "compare", a, b)
    if opened is not None:
        for v in opened:
            if np.any(v >= np.uint64(bound.B)):
                raise OperandOutOfBound(f"comparison operand {int(v.max())} >= {bound.B}")
    lt = secure_msb(ctx, a - b)
    geq = (ONE - lt) if ctx.is_p0 else (np.uint64(0) - lt)
    return geq.reshape(shape)


def equals(ctx: MPCContext, a, b) -> np.ndarray:
    """Shares of [a == b]: zero-test of a - b with a log-depth AND tree."""
    a, shape = _flat(a)
    b, _ = _flat(b)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    r, mb = helper_open(ctx, a - b)
    # z == 0  <=>  m == r  <=>  every bit of ~(m ^ r) is set
    t = ~(mb ^ r) if ctx.is_p0 else mb.copy()
    for k in ZERO_TREE:
        t = and_words(ctx, t, t >> np.uint64(k))
    return bit_to_arithmetic(ctx, t & ONE).reshape(shape)


def multiplex(ctx: MPCContext, x, y, c) -> np.ndarray:
    """Shares of x if c == 1 else y, as y + c (x - y).

    ``c`` is broadcast over trailing axes of ``x`` / ``y`` when it has fewer
    dimensions.
    """
    x, y, c = as_ring(x), as_ring(y), as_ring(c)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    c = np.broadcast_to(c.reshape(c.shape + (1,) * (x.ndim - c.ndim)), x.shape)
    return y + multiply(ctx, np.ascontiguousarray(c), x - y)


def _debug_open(ctx: MPCContext, label: str, *arrays):
    """Debug only: proxies swap shares and log the plaintext.  Not secure."""
    if not ctx.debug or ctx.is_helper or ctx.peer is None:
        return None
    theirs = ctx.swap(*arrays)
    values = [np.asarray(a) + t for a, t in zip(arrays, theirs)]
    ctx.debug_log.append((label, values))
    return values


def public_constant(ctx: MPCContext, value, shape=()) -> np.ndarray:
    """Sharing of a public constant: P0 holds it, P1 holds zero."""
    v = np.broadcast_to(as_ring(value), shape).copy() if shape else as_ring(value)
    if ctx.is_p0:
        return v
    return np.zeros_like(v)
