from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class SessionMeter:
    """Per-session accounting: rounds, bytes per directed link, phase wall-clock.

    Counters only grow.  ``frame_log`` keeps (src, dst, type, bytes) for every
    frame this party sent or received, so totals can be cross-checked.
    """

    owner: str = ""
    rounds: int = 0
    round_kinds: dict = field(default_factory=lambda: defaultdict(int))
    bytes_sent: dict = field(default_factory=lambda: defaultdict(int))
    bytes_recv: dict = field(default_factory=lambda: defaultdict(int))
    frames_sent: dict = field(default_factory=lambda: defaultdict(int))
    phases: dict = field(default_factory=dict)
    frame_log: list = field(default_factory=list)
    stream_draws: list = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)
    finished: float | None = None

    def round(self, kind: str) -> None:
        self.rounds += 1
        self.round_kinds[kind] += 1

    def on_send(self, peer: str, mtype: int, nbytes: int) -> None:
        self.bytes_sent[peer] += nbytes
        self.frames_sent[peer] += 1
        self.frame_log.append((self.owner, peer, int(mtype), nbytes))

    def on_recv(self, peer: str, mtype: int, nbytes: int) -> None:
        self.bytes_recv[peer] += nbytes
        self.frame_log.append((peer, self.owner, int(mtype), nbytes))

    def on_draw(self, pair, start: int, n: int) -> None:
        self.stream_draws.append((int(pair), start, n))

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0

    def finish(self) -> None:
        if self.finished is None:
            self.finished = time.perf_counter()

    @property
    def wall_clock(self) -> float:
        end = self.finished if self.finished is not None else time.perf_counter()
        return end - self.started

    def streams_fresh(self) -> bool:
        """True when no stream position was drawn twice in this session."""
        spans = defaultdict(list)
        for pair, start, n in self.stream_draws:
            spans[pair].append((start, start + n))
        for ranges in spans.values():
            ranges.sort()
            for (_, end), (nxt, _) in zip(ranges, ranges[1:]):
                if nxt < end:
                    return False
        return True

    def report(self) -> dict:
        return {
            "owner": self.owner,
            "rounds": self.rounds,
            "round_kinds": dict(self.round_kinds),
            "bytes_sent": dict(self.bytes_sent),
            "bytes_recv": dict(self.bytes_recv),
            "frames_sent": dict(self.frames_sent),
            "phases": dict(self.phases),
            "wall_clock": self.wall_clock,
        }


def meter_report(meters) -> dict:
    """Combine per-party meters of one session into link totals.

    Each directed link is counted once, from its sender's meter.
    """
    links = defaultdict(int)
    rounds = 0
    wall = 0.0
    for m in meters:
        for peer, n in m.bytes_sent.items():
            links[(m.owner, peer)] += n
        rounds = max(rounds, m.rounds)
        wall = max(wall, m.wall_clock)
    return {
        "links": dict(links),
        "total_bytes": sum(links.values()),
        "rounds": rounds,
        "wall_clock": wall,
    }
