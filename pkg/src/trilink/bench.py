"""Runtime and communication per database size, over a running party mesh."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from .config import LinkageConfig
from .linkage import encode_record
from .synth import SyntheticDatasetSpec, synthesize

MB = 1e6


@dataclass
class BenchRow:
    size: int
    preset: str
    queries: int
    failures: int
    mean_bytes: float
    mean_seconds: float
    min_seconds: float
    rounds: int
    errors: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "size": self.size,
            "preset": self.preset,
            "queries": self.queries,
            "failures": self.failures,
            "comm_mb": round(self.mean_bytes / MB, 4),
            "seconds": round(self.mean_seconds, 4),
            "min_seconds": round(self.min_seconds, 4),
            "rounds": self.rounds,
        }


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float


@dataclass
class BenchReport:
    rows: list

    def fit(self, attr: str = "mean_bytes") -> LinearFit:
        ok = [r for r in self.rows if r.failures < r.queries]
        if len(ok) < 2:
            raise ValueError("need at least two successful sizes for a fit")
        res = linregress([r.size for r in ok], [getattr(r, attr) for r in ok])
        return LinearFit(res.slope, res.intercept, res.rvalue**2)

    def row(self, size: int) -> BenchRow:
        return next(r for r in self.rows if r.size == size)

    def write(self, path, delimiter: str = ",") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.rows[0].as_dict()), delimiter=delimiter)
            w.writeheader()
            w.writerows(r.as_dict() for r in self.rows)

    def summary(self) -> str:
        lines = ["size  preset  seconds  comm_MB  rounds  failures"]
        for r in self.rows:
            lines.append(
                f"{r.size}  {r.preset}  {r.mean_seconds:.3f}  {r.mean_bytes / MB:.2f}  {r.rounds}  {r.failures}"
            )
        if len(self.rows) > 1:
            try:
                b, t = self.fit("mean_bytes"), self.fit("mean_seconds")
                lines.append(f"bytes: {b.slope / 1e3:.2f} kB per record, R^2 {b.r2:.4f}")
                lines.append(f"time:  {t.slope * 1e3:.3f} ms per record, R^2 {t.r2:.4f}")
            except ValueError:
                pass
        return "\n".join(lines)


def bench(client, sizes, preset: str = "off", queries: int = 1, config: LinkageConfig | None = None, seed: int = 0, progress=None) -> BenchReport:
    """Upload a synthetic database per size and time ``queries`` sessions each.

    ``client`` is a connected :class:`~trilink.party.LinkageClient`.  A failed
    session is counted and the run moves on.
    """
    config = config or LinkageConfig()
    sizes = sorted(int(s) for s in sizes)
    data = synthesize(SyntheticDatasetSpec(records=max(sizes), seed=seed))
    db = [encode_record(r) for r in data.set_a]
    probes = [encode_record(r) for r in data.set_b[: max(queries, 1)]]
    rows = []
    for size in sizes:
        db_id = 1_000_000 + size
        client.upload(db[:size], db_id=db_id)
        byte_counts, seconds, rounds, errors = [], [], 0, []
        for k in range(queries):
            t0 = time.perf_counter()
            try:
                out = client.query(probes[k % len(probes)], config, db_id=db_id)
            except Exception as exc:  # noqa: BLE001 - recorded, run continues
                errors.append(f"{type(exc).__name__}: {exc}")
                continue
            seconds.append(time.perf_counter() - t0)
            byte_counts.append(out.party_bytes)
            rounds = out.rounds
        row = BenchRow(
            size,
            preset,
            queries,
            len(errors),
            float(np.mean(byte_counts)) if byte_counts else float("nan"),
            float(np.mean(seconds)) if seconds else float("nan"),
            float(np.min(seconds)) if seconds else float("nan"),
            rounds,
            errors,
        )
        rows.append(row)
        if progress:
            progress(row)
    return BenchReport(rows)
