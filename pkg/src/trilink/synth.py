"""Synthetic person records with typo-style corruption and known ground truth.

Set A holds ``n`` originals.  Set B holds ``overlap * n`` corrupted copies of
A's entities plus fresh entities, shuffled.  ``truth[j]`` is the A row of B
row ``j``'s counterpart, or None.

The frequency lists below are small made-up tables with a realistic skew;
they are not census data.
"""

from __future__ import annotations

import calendar
import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .linkage import RawRecord, RecordRejected, encode_record

TABLE_VERSION = 1

FIRST_NAMES = {
    "maria": 60, "anna": 45, "ursula": 30, "monika": 28, "petra": 26, "elisabeth": 24,
    "sabine": 24, "renate": 20, "helga": 18, "karin": 18, "brigitte": 17, "ingrid": 16,
    "erika": 16, "andrea": 15, "gisela": 14, "claudia": 14, "susanne": 13, "gabriele": 13,
    "christa": 12, "julia": 12, "sophie": 10, "lena": 10, "katharina": 9, "johanna": 8,
    "jürgen": 8, "käthe": 4, "michael": 55, "thomas": 50, "andreas": 45, "peter": 42,
    "wolfgang": 38, "klaus": 34, "stefan": 32, "christian": 30, "uwe": 26, "markus": 25,
    "frank": 25, "bernd": 22, "dieter": 22, "hans": 21, "jörg": 20, "günter": 19,
    "matthias": 18, "alexander": 17, "martin": 17, "ralf": 15, "sven": 14, "jan": 13,
    "tobias": 12, "florian": 11, "lukas": 10, "maximilian": 9, "philipp": 9, "felix": 8,
    "jonas": 8, "paul": 8, "friedrich": 6, "wilhelm": 6, "heinz": 6, "otto": 5,
}

LAST_NAMES = {
    "müller": 70, "schmidt": 60, "schneider": 45, "fischer": 42, "weber": 38, "meyer": 36,
    "wagner": 34, "becker": 32, "schulz": 30, "hoffmann": 29, "schäfer": 26, "koch": 25,
    "bauer": 24, "richter": 23, "klein": 22, "wolf": 21, "schröder": 20, "neumann": 19,
    "schwarz": 18, "zimmermann": 17, "braun": 16, "krüger": 15, "hofmann": 15, "hartmann": 14,
    "lange": 13, "schmitt": 13, "werner": 12, "schmitz": 12, "krause": 11, "meier": 11,
    "lehmann": 10, "schmid": 10, "schulze": 9, "maier": 9, "köhler": 9, "herrmann": 8,
    "könig": 8, "walter": 8, "mayer": 7, "huber": 7, "kaiser": 7, "fuchs": 6,
    "peters": 6, "lang": 6, "scholz": 6, "möller": 5, "weiß": 5, "jung": 5,
    "hahn": 5, "vogel": 4, "friedrich": 4, "keller": 4, "günther": 4, "frank": 4,
    "berger": 4, "winkler": 3, "roth": 3, "beck": 3, "lorenz": 3, "baumann": 3,
    "franke": 3, "albrecht": 3, "schuster": 2, "simon": 2, "ludwig": 2, "böhm": 2,
    "winter": 2, "kraus": 2, "martin": 2, "schumacher": 2, "krämer": 2, "vogt": 2,
    "stein": 2, "jäger": 2, "otto": 2, "sommer": 2, "groß": 2, "seidel": 2,
    "heinrich": 2, "brandt": 2, "haas": 2, "schreiber": 2, "graf": 2, "dietrich": 2,
    "ziegler": 2, "kuhn": 2, "pohl": 1, "engel": 1, "horn": 1, "busch": 1,
}

# city -> (weight, postcodes)
CITIES = {
    "berlin": (60, ("10115", "10245", "12043", "13353")),
    "hamburg": (35, ("20095", "22081", "22767")),
    "münchen": (30, ("80331", "80799", "81541")),
    "köln": (22, ("50667", "50823", "51103")),
    "frankfurt am main": (15, ("60311", "60486")),
    "stuttgart": (13, ("70173", "70469")),
    "düsseldorf": (12, ("40210", "40477")),
    "leipzig": (12, ("04103", "04229")),
    "dortmund": (11, ("44135", "44339")),
    "essen": (11, ("45127", "45326")),
    "bremen": (11, ("28195", "28205")),
    "dresden": (11, ("01067", "01307")),
    "hannover": (10, ("30159", "30451")),
    "nürnberg": (10, ("90402", "90459")),
    "duisburg": (9, ("47051",)),
    "bochum": (7, ("44787",)),
    "wuppertal": (7, ("42103",)),
    "bielefeld": (6, ("33602",)),
    "bonn": (6, ("53111", "53225")),
    "münster": (6, ("48143",)),
    "mannheim": (5, ("68159",)),
    "karlsruhe": (5, ("76133",)),
    "augsburg": (5, ("86150",)),
    "wiesbaden": (5, ("65183",)),
    "mönchengladbach": (5, ("41061",)),
    "gelsenkirchen": (5, ("45879",)),
    "aachen": (5, ("52062",)),
    "braunschweig": (4, ("38100",)),
    "kiel": (4, ("24103",)),
    "chemnitz": (4, ("09111",)),
    "halle": (4, ("06108",)),
    "magdeburg": (4, ("39104",)),
    "freiburg im breisgau": (4, ("79098",)),
    "krefeld": (4, ("47798",)),
    "mainz": (4, ("55116", "55122")),
    "lübeck": (4, ("23552",)),
    "erfurt": (4, ("99084",)),
    "rostock": (4, ("18055",)),
    "kassel": (3, ("34117",)),
    "potsdam": (3, ("14467",)),
    "saarbrücken": (3, ("66111",)),
    "regensburg": (3, ("93047",)),
    "würzburg": (2, ("97070",)),
    "göttingen": (2, ("37073",)),
    "bad kreuznach": (1, ("55543",)),
    "garmisch-partenkirchen": (1, ("82467",)),
}

_KEY_ROWS = ("1234567890", "qwertzuiop", "asdfghjkl", "yxcvbnm")


def _keyboard_neighbours() -> dict:
    """Left, right, above and below keys (same column index) on a QWERTZ layout."""
    out = {}
    for r, row in enumerate(_KEY_ROWS):
        for i, ch in enumerate(row):
            near = set()
            if i > 0:
                near.add(row[i - 1])
            if i + 1 < len(row):
                near.add(row[i + 1])
            for rr in (r - 1, r + 1):
                if 0 <= rr < len(_KEY_ROWS) and i < len(_KEY_ROWS[rr]):
                    near.add(_KEY_ROWS[rr][i])
            # letters stay letters, digits stay digits
            out[ch] = tuple(sorted(c for c in near if c.isdigit() == ch.isdigit()))
    return out


KEYBOARD_NEIGHBOURS = _keyboard_neighbours()

PHONETIC_SWAPS = (
    ("ph", "f"),
    ("th", "t"),
    ("dt", "t"),
    ("ck", "k"),
    ("tz", "z"),
    ("ai", "ei"),
    ("ey", "ei"),
    ("ay", "ei"),
    ("ie", "i"),
    ("sch", "sh"),
    ("chs", "x"),
    ("ks", "x"),
    ("v", "f"),
    ("w", "v"),
    ("c", "k"),
    ("y", "i"),
    ("mm", "m"),
    ("nn", "n"),
    ("ll", "l"),
    ("tt", "t"),
    ("ff", "f"),
)

TEXT_FIELDS = ("first_name", "last_name", "birth_name", "city")
NUMBER_FIELDS = ("postcode", "birth_year", "birth_month", "birth_day")
OPERATORS = ("insert", "delete", "substitute", "keyboard", "phonetic", "omit")

# attribute groups that may be shuffled; city/postcode is not one of them
# because swapping a place name into the numeric postcode makes the record
# unencodable rather than merely noisy
SHUFFLE_GROUPS = (("first_name", "last_name"), ("birth_day", "birth_month"))

LETTERS = "abcdefghijklmnopqrstuvwxyz"
DIGITS = "0123456789"


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    records: int = 1000
    overlap: float = 0.6
    corruption: float = 0.10
    max_errors: int = 2
    birth_name_omission: float = 0.60
    shuffle_rate: float = 0.10
    year_range: tuple = (1930, 2005)
    year_weights: tuple | None = None  # one weight per year in year_range, None = uniform
    maiden_name_rate: float = 0.35
    seed: int = 0

    def validate(self) -> "SyntheticDatasetSpec":
        for name in ("overlap", "corruption", "birth_name_omission", "shuffle_rate", "maiden_name_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InfeasibleSpec(f"{name} must lie in [0, 1], got {v}")
        if self.records < 1:
            raise InfeasibleSpec("record count must be positive")
        if self.max_errors < 0:
            raise InfeasibleSpec("max_errors must be >= 0")
        lo, hi = self.year_range
        if lo > hi:
            raise InfeasibleSpec(f"empty year range {self.year_range}")
        if self.year_weights is not None and len(self.year_weights) != hi - lo + 1:
            raise InfeasibleSpec("year_weights needs one weight per year")
        return self

    @property
    def shared(self) -> int:
        return round(self.overlap * self.records)


@dataclass
class SyntheticDataset:
    set_a: list  # RawRecord
    set_b: list
    truth: list  # per B row: A row or None
    errors: list  # per B row: number of corruption steps applied

    def write(self, out_dir, delimiter: str = ",") -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"a": out / "set_a.csv", "b": out / "set_b.csv", "truth": out / "truth.csv"}
        write_records(paths["a"], self.set_a, delimiter)
        write_records(paths["b"], self.set_b, delimiter)
        write_truth(paths["truth"], self.truth, delimiter)
        return paths


class _Sampler:
    def __init__(self, table: dict):
        self.values = list(table)
        w = np.array([v[0] if isinstance(v, tuple) else v for v in table.values()], dtype=float)
        self.p = w / w.sum()

    def __call__(self, rng: np.random.Generator) -> str:
        return self.values[rng.choice(len(self.values), p=self.p)]


_FIRST, _LAST, _CITY = _Sampler(FIRST_NAMES), _Sampler(LAST_NAMES), _Sampler(CITIES)


def _person(rng: np.random.Generator, spec: SyntheticDatasetSpec) -> RawRecord:
    first, last = _FIRST(rng), _LAST(rng)
    birth = _LAST(rng) if rng.random() < spec.maiden_name_rate else last
    if rng.random() < spec.birth_name_omission:
        birth = ""
    city = _CITY(rng)
    postcodes = CITIES[city][1]
    postcode = postcodes[rng.integers(len(postcodes))]
    lo, hi = spec.year_range
    if spec.year_weights is None:
        year = int(rng.integers(lo, hi + 1))
    else:
        w = np.asarray(spec.year_weights, dtype=float)
        year = lo + int(rng.choice(len(w), p=w / w.sum()))
    month = int(rng.integers(1, 13))
    day = int(rng.integers(1, calendar.monthrange(year, month)[1] + 1))
    return RawRecord(first, last, birth, city, postcode, str(year), str(month), str(day))


def _edit(value: str, op: str, rng: np.random.Generator, numeric: bool) -> str:
    alphabet = DIGITS if numeric else LETTERS
    n = len(value)
    if op == "omit" or n == 0:
        return ""
    pos = int(rng.integers(n))
    if op == "insert":
        at = int(rng.integers(n + 1))
        return value[:at] + alphabet[rng.integers(len(alphabet))] + value[at:]
    if op == "delete":
        return value[:pos] + value[pos + 1 :] if n > 1 else ""
    if op == "substitute":
        choices = [c for c in alphabet if c != value[pos]]
        return value[:pos] + choices[rng.integers(len(choices))] + value[pos + 1 :]
    if op == "keyboard":
        keyed = [i for i, c in enumerate(value) if KEYBOARD_NEIGHBOURS.get(c)]
        if not keyed:
            return _edit(value, "substitute", rng, numeric)
        pos = keyed[rng.integers(len(keyed))]
        near = KEYBOARD_NEIGHBOURS[value[pos]]
        return value[:pos] + near[rng.integers(len(near))] + value[pos + 1 :]
    if op == "phonetic":
        found = []
        for a, b in PHONETIC_SWAPS:
            for src, dst in ((a, b), (b, a)):
                start = value.find(src)
                while start >= 0:
                    found.append((start, src, dst))
                    start = value.find(src, start + 1)
        if not found:
            return _edit(value, "substitute", rng, numeric)
        start, src, dst = found[rng.integers(len(found))]
        return value[:start] + dst + value[start + len(src) :]
    raise ValueError(f"unknown operator {op!r}")


def _operators_for(field: str) -> tuple:
    if field in NUMBER_FIELDS:
        return ("insert", "delete", "substitute", "keyboard", "omit")
    return OPERATORS


def corrupt_record(record: RawRecord, rng: np.random.Generator, spec: SyntheticDatasetSpec) -> tuple[RawRecord, int]:
    """Apply at most ``spec.max_errors`` corruption steps; returns (record, steps)."""
    values = {f: getattr(record, f) for f in RawRecord.columns()}
    steps = 0
    order = [f for f in RawRecord.columns() if values[f]]
    rng.shuffle(order)
    for field in order:
        if steps >= spec.max_errors:
            break
        if rng.random() < spec.corruption:
            ops = _operators_for(field)
            values[field] = _edit(values[field], ops[rng.integers(len(ops))], rng, field in NUMBER_FIELDS)
            steps += 1
    if steps < spec.max_errors and rng.random() < spec.shuffle_rate:
        a, b = SHUFFLE_GROUPS[rng.integers(len(SHUFFLE_GROUPS))]
        if values[a] != values[b]:
            values[a], values[b] = values[b], values[a]
            steps += 1
    return RawRecord(**values), steps


def _encodable(record: RawRecord) -> bool:
    try:
        encode_record(record)
    except RecordRejected:
        return False
    return True


def _key(record: RawRecord) -> tuple:
    return tuple(record.as_row())


def synthesize(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, shared = spec.records, spec.shared

    set_a, seen = [], set()
    while len(set_a) < n:
        rec = _person(rng, spec)
        if _key(rec) not in seen:
            seen.add(_key(rec))
            set_a.append(rec)

    entities = rng.permutation(n)[:shared]
    rows, truth, errors = [], [], []
    for a_row in entities:
        original = set_a[a_row]
        for _ in range(100):
            dup, steps = corrupt_record(original, rng, spec)
            if spec.corruption > 0 and _key(dup) == _key(original):
                # duplicates must differ from their original when corruption is on
                dup, steps = _force_error(original, rng, spec)
            if _encodable(dup) and (_key(dup) == _key(original) or _key(dup) not in seen):
                break
        else:  # pragma: no cover - practically unreachable
            dup, steps = original, 0
        rows.append(dup)
        truth.append(int(a_row))
        errors.append(steps)

    while len(rows) < n:
        rec = _person(rng, spec)
        if _key(rec) not in seen:
            seen.add(_key(rec))
            rows.append(rec)
            truth.append(None)
            errors.append(0)

    order = rng.permutation(n)
    return SyntheticDataset(
        set_a,
        [rows[i] for i in order],
        [truth[i] for i in order],
        [errors[i] for i in order],
    )


def _force_error(record: RawRecord, rng: np.random.Generator, spec: SyntheticDatasetSpec) -> tuple[RawRecord, int]:
    present = [f for f in RawRecord.columns() if getattr(record, f)]
    field = present[rng.integers(len(present))]
    ops = _operators_for(field)
    value = _edit(getattr(record, field), ops[rng.integers(len(ops))], rng, field in NUMBER_FIELDS)
    return replace(record, **{field: value}), 1


# -- files -----------------------------------------------------------------------


def write_records(path, records, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(RawRecord.columns())
        for rec in records:
            w.writerow(rec.as_row())


def read_records(path, delimiter: str = ",") -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_records(fh.read(), delimiter, str(path))


def parse_records(text: str, delimiter: str = ",", source: str = "<text>") -> list:
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    missing = [c for c in RawRecord.columns() if c not in (reader.fieldnames or ())]
    if missing:
        raise ValueError(f"{source}: header lacks column(s) {', '.join(missing)}")
    return [RawRecord(**{c: (row[c] or "") for c in RawRecord.columns()}) for row in reader]


def write_truth(path, truth, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(("query_row", "db_row"))
        for j, a in enumerate(truth):
            w.writerow((j, "" if a is None else a))


def read_truth(path, delimiter: str = ",") -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        out = []
        for expected, row in enumerate(reader):
            if int(row["query_row"]) != expected:
                raise ValueError(f"{path}: truth rows must be numbered 0..n-1 in order")
            out.append(int(row["db_row"]) if row["db_row"] else None)
    return out
