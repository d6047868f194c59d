"""Plaintext linkage maths: bigram encoding, Dice fractions, weighted scores.

This module is both the data owners' encoder and the exact reference for the
secure pipeline.  Scores are kept as (numerator, denominator) integer pairs
and ordered by cross-multiplication, so no rounding ever enters a decision.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .config import (
    ALL_FIELDS,
    DELTA_SCALE,
    EXACT_FIELDS,
    TAU_SCALE,
    LinkageConfig,
)

ALPHABET = "abcdefghijklmnopqrstuvwxyz-. *"
ALPHABET_SIZE = len(ALPHABET)
MAP_SIZE = ALPHABET_SIZE * ALPHABET_SIZE
MAX_CARDINALITY = 63
EXACT_LIMIT = 1 << 32
SENTINEL = (1 << 64) - 1

_INDEX = {c: i for i, c in enumerate(ALPHABET)}
_TRANSLIT = str.maketrans({"ä": "ae", "ö": "oe", "ü": "ue", "ß": "ss"})
_SPACES = re.compile(r"\s+")


class RecordRejected(ValueError):
    pass


def bigram_index(c1: str, c2: str) -> int:
    return ALPHABET_SIZE * _INDEX[c1] + _INDEX[c2]


EMPTY_BIGRAM = bigram_index("*", "*")


def normalize_text(raw: str) -> str:
    text = raw.lower().translate(_TRANSLIT)
    text = _SPACES.sub(" ", text).strip()
    return "".join(c if c in _INDEX else "*" for c in text)


@dataclass(frozen=True)
class BigramMap:
    bits: np.ndarray  # bool, length 900
    cardinality: int

    @property
    def indices(self) -> frozenset:
        return frozenset(np.flatnonzero(self.bits).tolist())


def build_bigram_map(text: str) -> BigramMap:
    bits = np.zeros(MAP_SIZE, dtype=bool)
    if len(text) < 2:
        bits[EMPTY_BIGRAM] = True
        return BigramMap(bits, 1)
    for c1, c2 in zip(text, text[1:]):
        bits[bigram_index(c1, c2)] = True
    card = int(bits.sum())
    if card > MAX_CARDINALITY:
        raise RecordRejected(f"{card} distinct bigrams in {text[:20]!r}... exceeds {MAX_CARDINALITY}")
    return BigramMap(bits, card)


@dataclass(frozen=True)
class RawRecord:
    """One input row; empty strings mean missing."""

    first_name: str = ""
    last_name: str = ""
    birth_name: str = ""
    city: str = ""
    postcode: str = ""
    birth_year: str = ""
    birth_month: str = ""
    birth_day: str = ""

    @classmethod
    def columns(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_row(self) -> list[str]:
        return [getattr(self, c) for c in self.columns()]


@dataclass(frozen=True)
class EncodedRecord:
    name_map: BigramMap
    city_map: BigramMap
    deltas: tuple  # per ALL_FIELDS, thirds scale
    exact: tuple  # per EXACT_FIELDS

    def delta(self, field_name: str) -> int:
        return self.deltas[ALL_FIELDS.index(field_name)]


def _parse_exact(name: str, raw: str) -> tuple[int, int]:
    raw = raw.strip()
    if not raw:
        return 0, 0
    if not raw.isdigit():
        raise RecordRejected(f"{name}={raw!r} is not a non-negative integer")
    value = int(raw)
    if value >= EXACT_LIMIT:
        raise RecordRejected(f"{name}={value} does not fit in 32 bits")
    return value, DELTA_SCALE


def encode_record(raw: RawRecord) -> EncodedRecord:
    parts = [normalize_text(p) for p in (raw.first_name, raw.last_name, raw.birth_name)]
    present = [p for p in parts if p]
    name_map = build_bigram_map(" ".join(present))
    city = normalize_text(raw.city)
    city_map = build_bigram_map(city)
    exact, exact_deltas = [], []
    for name in EXACT_FIELDS:
        v, d = _parse_exact(name, getattr(raw, name))
        exact.append(v)
        exact_deltas.append(d)
    deltas = (len(present), DELTA_SCALE if city else 0, *exact_deltas)
    return EncodedRecord(name_map, city_map, deltas, tuple(exact))


@dataclass(frozen=True, order=False)
class ScoreFraction:
    n: int
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("denominator must be >= 1")

    def value(self) -> Fraction:
        return Fraction(self.n, self.d)

    def geq(self, other: "ScoreFraction") -> bool:
        return self.n * other.d >= other.n * self.d

    def exceeds(self, tau_fixed: int) -> bool:
        return self.n * TAU_SCALE > tau_fixed * self.d


def dice_fraction(mx: BigramMap, my: BigramMap) -> ScoreFraction:
    common = int(np.count_nonzero(mx.bits & my.bits))
    return ScoreFraction(2 * common, mx.cardinality + my.cardinality)


def exact_similarity(x: int, y: int) -> int:
    return int(x == y)


def record_score_fraction(ex: EncodedRecord, ey: EncodedRecord, config: LinkageConfig) -> ScoreFraction:
    w = config.weight_vector()
    u = [dx * dy * wf for dx, dy, wf in zip(ex.deltas, ey.deltas, w)]
    name = dice_fraction(ex.name_map, ey.name_map)
    city = dice_fraction(ex.city_map, ey.city_map)
    exact_sum = sum(ue * exact_similarity(a, b) for ue, a, b in zip(u[2:], ex.exact, ey.exact))
    dd = name.d * city.d
    num = u[0] * name.n * city.d + u[1] * city.n * name.d + exact_sum * dd
    den = sum(u) * dd
    if den == 0:
        return ScoreFraction(0, 1)
    return ScoreFraction(num, den)


@dataclass(frozen=True)
class PlainMatch:
    index: int
    score: ScoreFraction
    matched: bool


def best_match_plain(query: EncodedRecord, db, config: LinkageConfig) -> PlainMatch:
    if not db:
        raise ValueError("empty database")
    best_i, best = 0, record_score_fraction(query, db[0], config)
    for i, rec in enumerate(db[1:], start=1):
        s = record_score_fraction(query, rec, config)
        if not best.geq(s):
            best_i, best = i, s
    return PlainMatch(best_i, best, best.exceeds(config.tau_fixed))


# -- batched form ---------------------------------------------------------------


@dataclass
class EncodedTable:
    """Column-wise stack of encoded records."""

    name_bits: np.ndarray  # (m, 900) bool
    city_bits: np.ndarray
    cards: np.ndarray  # (m, 2) int64
    deltas: np.ndarray  # (m, 6) int64
    exact: np.ndarray  # (m, 4) int64

    def __len__(self) -> int:
        return self.name_bits.shape[0]

    @classmethod
    def from_records(cls, records) -> "EncodedTable":
        records = list(records)
        return cls(
            np.array([r.name_map.bits for r in records], dtype=bool).reshape(-1, MAP_SIZE),
            np.array([r.city_map.bits for r in records], dtype=bool).reshape(-1, MAP_SIZE),
            np.array([(r.name_map.cardinality, r.city_map.cardinality) for r in records], dtype=np.int64).reshape(-1, 2),
            np.array([r.deltas for r in records], dtype=np.int64).reshape(-1, len(ALL_FIELDS)),
            np.array([r.exact for r in records], dtype=np.int64).reshape(-1, len(EXACT_FIELDS)),
        )

    def subset(self, idx) -> "EncodedTable":
        return EncodedTable(self.name_bits[idx], self.city_bits[idx], self.cards[idx], self.deltas[idx], self.exact[idx])


def score_matrix(queries: EncodedTable, db: EncodedTable, config: LinkageConfig):
    """(N, D) int64 arrays of shape (len(queries), len(db))."""
    w = np.array(config.weight_vector(), dtype=np.int64)
    common_n = (queries.name_bits.astype(np.float32) @ db.name_bits.T.astype(np.float32)).round().astype(np.int64)
    common_c = (queries.city_bits.astype(np.float32) @ db.city_bits.T.astype(np.float32)).round().astype(np.int64)
    n_name, n_city = 2 * common_n, 2 * common_c
    d_name = queries.cards[:, None, 0] + db.cards[None, :, 0]
    d_city = queries.cards[:, None, 1] + db.cards[None, :, 1]
    u = queries.deltas[:, None, :] * db.deltas[None, :, :] * w  # (q, m, 6)
    same = queries.exact[:, None, :] == db.exact[None, :, :]
    exact_sum = (u[:, :, 2:] * same).sum(axis=2)
    dd = d_name * d_city
    num = u[:, :, 0] * n_name * d_city + u[:, :, 1] * n_city * d_name + exact_sum * dd
    den = u.sum(axis=2) * dd
    empty = den == 0
    return np.where(empty, 0, num), np.where(empty, 1, den)


def best_matches(queries: EncodedTable, db: EncodedTable, config: LinkageConfig, chunk: int = 256):
    """Vectorised best_match_plain for many queries: (index, n, d, matched) arrays."""
    out_i, out_n, out_d = [], [], []
    for start in range(0, len(queries), chunk):
        num, den = score_matrix(queries.subset(slice(start, start + chunk)), db, config)
        best = np.zeros(num.shape[0], dtype=np.int64)
        bn, bd = num[:, 0].copy(), den[:, 0].copy()
        for j in range(1, num.shape[1]):
            better = num[:, j] * bd > bn * den[:, j]
            best[better] = j
            bn[better] = num[better, j]
            bd[better] = den[better, j]
        out_i.append(best)
        out_n.append(bn)
        out_d.append(bd)
    idx, n, d = np.concatenate(out_i), np.concatenate(out_n), np.concatenate(out_d)
    return idx, n, d, n * TAU_SCALE > config.tau_fixed * d


# -- bound certification -------------------------------------------------------------


def tournament_operands(scores) -> list[int]:
    """Every operand the secure tournament and threshold test will compare.

    Mirrors the secure pairing exactly: adjacent pairs per level, an odd
    survivor passes through, the left entry wins ties.
    """
    level = [(s.n, s.d) for s in scores]
    ops = []
    while len(level) > 1:
        nxt = []
        for k in range(0, len(level) - 1, 2):
            (nl, dl), (nr, dr) = level[k], level[k + 1]
            ops += [nl * dr, nr * dl, nl * dr - nr * dl]
            nxt.append(level[k] if nl * dr >= nr * dl else level[k + 1])
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return ops


def threshold_operands(score: ScoreFraction, tau_fixed: int) -> list[int]:
    lhs, rhs = score.n * TAU_SCALE, tau_fixed * score.d + 1
    return [lhs, rhs, lhs - rhs]
