"""Secure linkage session: similarities, max-score tournament, threshold decision.

All functions take an :class:`~trilink.primitives.MPCContext` and are run by
P0, P1 and the helper in lockstep.  Share layouts follow the linkage module,
which is the single source of truth for scales and the score formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import primitives as mpc
from .config import ALL_FIELDS, EXACT_FIELDS, TAU_SCALE, Disclosure, LinkageConfig
from .linkage import MAP_SIZE, SENTINEL, BigramMap, EncodedRecord, ScoreFraction
from .ring import DTYPE, Pair, RandomStream, as_ring, reconstruct, share_value

# per-record word layout
NAME = slice(0, MAP_SIZE)
CITY = slice(MAP_SIZE, 2 * MAP_SIZE)
MAPS = slice(0, 2 * MAP_SIZE)
CARDS = slice(2 * MAP_SIZE, 2 * MAP_SIZE + 2)
DELTAS = slice(CARDS.stop, CARDS.stop + len(ALL_FIELDS))
EXACT = slice(DELTAS.stop, DELTAS.stop + len(EXACT_FIELDS))
RECORD_WIDTH = EXACT.stop

RESULT_TAG = 0x54524C4B5F4F4B21  # constant the client must reconstruct
RESULT_WORDS = 5  # matched, index, n, d, tag

SIMILARITY_ROUNDS = 2 + mpc.EQUALS_ROUNDS + 2
TOURNAMENT_LEVEL_ROUNDS = 1 + mpc.COMPARE_ROUNDS + 1


class ShareMismatch(ValueError):
    """Result shares that do not reconstruct to a well-formed result."""


def record_words(rec: EncodedRecord) -> np.ndarray:
    out = np.zeros(RECORD_WIDTH, dtype=DTYPE)
    out[NAME] = rec.name_map.bits
    out[CITY] = rec.city_map.bits
    out[CARDS] = (rec.name_map.cardinality, rec.city_map.cardinality)
    out[DELTAS] = rec.deltas
    out[EXACT] = rec.exact
    return out


def words_to_record(words) -> EncodedRecord:
    w = as_ring(words)
    if w.shape != (RECORD_WIDTH,):
        raise ShareMismatch(f"record has {w.size} words, expected {RECORD_WIDTH}")
    name_bits, city_bits = w[NAME] == 1, w[CITY] == 1
    if not (np.all(w[MAPS] <= 1)):
        raise ShareMismatch("bigram flags are not bits")
    return EncodedRecord(
        BigramMap(name_bits, int(w[CARDS][0])),
        BigramMap(city_bits, int(w[CARDS][1])),
        tuple(int(v) for v in w[DELTAS]),
        tuple(int(v) for v in w[EXACT]),
    )


def outsource_records(records, stream: RandomStream | None = None):
    """Share a list of encoded records: (P0 words, P1 words), each (m, RECORD_WIDTH)."""
    stream = stream or RandomStream.fresh()
    plain = np.stack([record_words(r) for r in records]) if records else np.zeros((0, RECORD_WIDTH), DTYPE)
    return share_value(plain, stream)


def outsource_record(record: EncodedRecord, stream: RandomStream | None = None):
    s0, s1 = outsource_records([record], stream)
    return s0[0], s1[0]


# -- phases ------------------------------------------------------------------------


def comp_record_similarities(ctx: mpc.MPCContext, query, db, config: LinkageConfig):
    """Shares of (N_j, D_j) for the query against every database row."""
    query, db = as_ring(query), as_ring(db)
    m = db.shape[0]
    w = as_ring(config.weight_vector())

    # bigram intersections for both fuzzy fields, batched over the database
    common = mpc.dot_rows(ctx, query[MAPS].reshape(2, MAP_SIZE), db[:, MAPS].reshape(m, 2, MAP_SIZE))
    n_name, n_city = np.uint64(2) * common[:, 0], np.uint64(2) * common[:, 1]
    d_name = db[:, CARDS][:, 0] + query[CARDS][0]
    d_city = db[:, CARDS][:, 1] + query[CARDS][1]

    # effective completeness per field: delta(x) * delta(y)
    deltas = mpc.multiply(ctx, np.broadcast_to(query[DELTAS], (m, len(ALL_FIELDS))).copy(), db[:, DELTAS])
    weighted = deltas * w
    total_weight = weighted.sum(axis=1, dtype=DTYPE)

    # exact-field equalities plus the all-empty test, one batch
    lhs = np.concatenate([np.broadcast_to(query[EXACT], (m, len(EXACT_FIELDS))).reshape(-1), total_weight])
    rhs = np.concatenate([db[:, EXACT].reshape(-1), np.zeros(m, dtype=DTYPE)])
    eq = mpc.equals(ctx, lhs, rhs)
    same = eq[: m * len(EXACT_FIELDS)].reshape(m, len(EXACT_FIELDS))
    all_empty = eq[m * len(EXACT_FIELDS) :]

    k = len(EXACT_FIELDS)
    prod1 = mpc.multiply(
        ctx,
        np.concatenate([weighted[:, 0], weighted[:, 1], weighted[:, 2:].reshape(-1), d_name]),
        np.concatenate([n_name, n_city, same.reshape(-1), d_city]),
    )
    name_part, city_part = prod1[:m], prod1[m : 2 * m]
    exact_sum = prod1[2 * m : 2 * m + k * m].reshape(m, k).sum(axis=1, dtype=DTYPE)
    dd = prod1[2 * m + k * m :]

    prod2 = mpc.multiply(
        ctx,
        np.concatenate([name_part, city_part, exact_sum, total_weight]),
        np.concatenate([d_city, d_name, dd, dd]),
    )
    num = prod2[:m] + prod2[m : 2 * m] + prod2[2 * m : 3 * m]
    den = prod2[3 * m :] + all_empty
    return num, den


def compute_max_scores(ctx: mpc.MPCContext, num, den, index=None):
    """Binary tournament; the left (lower-index) entry wins ties."""
    num, den = as_ring(num), as_ring(den)
    m = num.shape[0]
    if index is None:
        index = mpc.public_constant(ctx, np.arange(m, dtype=DTYPE), (m,))
    vals = np.stack([num, den, as_ring(index)], axis=1)  # (m, 3)
    while vals.shape[0] > 1:
        pairs = vals.shape[0] // 2
        left, right = vals[0 : 2 * pairs : 2], vals[1 : 2 * pairs : 2]
        cross = mpc.multiply(
            ctx,
            np.concatenate([left[:, 0], right[:, 0]]),
            np.concatenate([right[:, 1], left[:, 1]]),
        )
        gamma = mpc.compare_geq(ctx, cross[:pairs], cross[pairs:])
        winners = mpc.multiplex(ctx, left, right, gamma)
        if vals.shape[0] % 2:
            winners = np.concatenate([winners, vals[-1:]])
        vals = winners
    return vals[0, 0], vals[0, 1], vals[0, 2]


def get_matches(ctx: mpc.MPCContext, num, den, index, config: LinkageConfig) -> np.ndarray:
    """Result shares [matched, index, n, d, tag] per the disclosure mode."""
    num, den, index = as_ring(num), as_ring(den), as_ring(index)
    lhs = num * np.uint64(TAU_SCALE)
    rhs = den * np.uint64(config.tau_fixed) + mpc.public_constant(ctx, 1)
    eps = mpc.compare_geq(ctx, lhs.reshape(1), rhs.reshape(1))
    sentinel = mpc.public_constant(ctx, SENTINEL)
    if config.disclosure == Disclosure.BIT:
        idx, n, d = sentinel, sentinel, sentinel
    elif config.disclosure == Disclosure.INDEX:
        idx = mpc.multiplex(ctx, index.reshape(1), sentinel.reshape(1), eps)[0]
        n, d = sentinel, sentinel
    else:
        picked = mpc.multiplex(
            ctx,
            np.stack([index, num, den]).reshape(1, 3),
            np.stack([sentinel, mpc.public_constant(ctx, 0), mpc.public_constant(ctx, 1)]).reshape(1, 3),
            eps,
        )[0]
        idx, n, d = picked
    out = np.array([eps[0], idx, n, d, mpc.public_constant(ctx, RESULT_TAG)], dtype=DTYPE)
    if not ctx.is_helper:
        # fresh re-randomisation so a result share carries nothing but the result
        rho = ctx.stream(Pair.P0_P1).draw(RESULT_WORDS)
        out = out + rho if ctx.is_p0 else out - rho
    return out


def link_query(ctx: mpc.MPCContext, query, db, config: LinkageConfig) -> np.ndarray:
    """One full session (all three phases) for this party; returns result shares."""
    meter = ctx.meter
    with _phase(meter, "similarity"):
        num, den = comp_record_similarities(ctx, query, db, config)
    with _phase(meter, "max"):
        n, d, idx = compute_max_scores(ctx, num, den)
    with _phase(meter, "match"):
        out = get_matches(ctx, n, d, idx, config)
    if meter is not None:
        meter.finish()
    return out


class _NullPhase:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _phase(meter, name):
    return meter.phase(name) if meter is not None else _NullPhase()


def helper_placeholders(m: int):
    """Shape-only inputs for the helper's run of :func:`link_query`."""
    return np.zeros(RECORD_WIDTH, dtype=DTYPE), np.zeros((m, RECORD_WIDTH), dtype=DTYPE)


def expected_rounds(m: int, disclosure: Disclosure = Disclosure.INDEX) -> int:
    """Proxy-proxy communication rounds of one session against ``m`` records."""
    levels = math.ceil(math.log2(m)) if m > 1 else 0
    final = mpc.COMPARE_ROUNDS + (0 if disclosure == Disclosure.BIT else 1)
    return SIMILARITY_ROUNDS + levels * TOURNAMENT_LEVEL_ROUNDS + final


# -- result ------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    index: int  # SENTINEL when not matched or not disclosed
    score: ScoreFraction | None = None

    @property
    def has_index(self) -> bool:
        return self.index != SENTINEL


def reveal_result(shares0, shares1, disclosure: Disclosure) -> MatchResult:
    words = reconstruct(as_ring(shares0)[:RESULT_WORDS], as_ring(shares1)[:RESULT_WORDS])
    matched, index, n, d, tag = (int(v) for v in words)
    if tag != RESULT_TAG:
        raise ShareMismatch("result shares do not reconstruct the session tag")
    if matched not in (0, 1):
        raise ShareMismatch(f"matched bit reconstructs to {matched}")
    if disclosure == Disclosure.BIT:
        return MatchResult(bool(matched), SENTINEL)
    if (index == SENTINEL) == bool(matched):
        raise ShareMismatch("index sentinel inconsistent with matched bit")
    score = None
    if disclosure == Disclosure.FULL and matched:
        score = ScoreFraction(n, d)
    return MatchResult(bool(matched), index, score)
