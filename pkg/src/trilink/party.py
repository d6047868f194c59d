"""Party servers (P0, P1, helper) and the data-owner / query client.

Topology: every party listens; P1 dials P0, the helper dials P0 and P1.
Clients dial both proxies.  Per query session (id chosen by the client):

    client -> P0, P1 : CONFIG {kind: query, linkage, db} ; QUERY_SHARES
    P0 <-> P1        : CONFIG {kind: agree, ...}  (digests must match)
    P0 -> helper     : CONFIG {kind: helper, linkage, m}
    ... secure computation ...
    P0, P1 -> client : RESULT [5 result shares | session trailer]

Uploads use their own session id: owner -> proxy DB_SHARES, proxy -> owner
RESULT [db, start, total].  Records of one database are ordered by owner
tag, so both proxies agree on global indices whatever the arrival order.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .config import Disclosure, LinkageConfig
from .net.frames import MessageType, encode_config, pack_words, unpack_words
from .net.meter import SessionMeter
from .net.transport import (
    PARTY_ROLES,
    Listener,
    Role,
    SessionAborted,
    SessionLink,
    TransportError,
    dial,
)
from .primitives import MPCContext
from .protocol import RECORD_WIDTH, RESULT_WORDS, MatchResult, helper_placeholders, link_query, reveal_result
from .ring import DTYPE, RandomStream, SeedBook, as_ring, share_value

log = logging.getLogger(__name__)

TRAILER_FIELDS = (
    "m",
    "rounds",
    "sent_peer",
    "sent_helper",
    "recv_peer",
    "recv_helper",
    "similarity_ns",
    "max_ns",
    "match_ns",
    "wall_ns",
)


class Database:
    """Shares of one logical database, assembled from owner-tagged uploads."""

    def __init__(self):
        self._parts: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def put(self, owner: int, rows: np.ndarray) -> None:
        with self._lock:
            self._parts[owner] = rows

    def snapshot(self) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
        with self._lock:
            owners = sorted(self._parts)
            parts = [self._parts[o] for o in owners]
        ranges, start = [], 0
        for o, p in zip(owners, parts):
            ranges.append((o, start, p.shape[0]))
            start += p.shape[0]
        rows = np.concatenate(parts) if parts else np.zeros((0, RECORD_WIDTH), DTYPE)
        return rows, ranges

    def owner_range(self, owner: int) -> tuple[int, int]:
        _, ranges = self.snapshot()
        for o, start, count in ranges:
            if o == owner:
                return start, sum(c for _, _, c in ranges)
        raise KeyError(owner)


class PartyServer:
    def __init__(
        self,
        role: Role,
        listen: str,
        peers: dict,
        seeds: SeedBook,
        preset: str | None = None,
        debug: bool = False,
        ready_timeout: float = 60.0,
    ):
        if role not in PARTY_ROLES:
            raise ValueError(f"{role} is not a party role")
        self.role = role
        self.listen_addr = listen
        self.peer_addrs = peers
        self.seeds = seeds.restrict(role)
        self.preset = preset
        self.debug = debug
        self.ready_timeout = ready_timeout
        self.links: dict[Role, object] = {}
        self._links_cv = threading.Condition()
        self.databases: dict[int, Database] = {}
        self._db_lock = threading.Lock()
        self.listener: Listener | None = None
        self.sessions_done = 0
        self.sessions_failed = 0

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "PartyServer":
        self.listener = Listener(self.listen_addr, self.role, self._on_connection, self.preset)
        targets = {Role.P0: (), Role.P1: (Role.P0,), Role.HELPER: (Role.P0, Role.P1)}[self.role]
        for target in targets:
            conn = dial(self.peer_addrs[target], self.role, self.preset, retries=self.ready_timeout, start=False)
            if conn.peer != target:
                raise TransportError(f"{self.peer_addrs[target]} answered as {conn.peer.label}, expected {target.label}")
            self._register(conn)
        return self

    @property
    def address(self) -> str:
        return self.listener.address

    def wait_ready(self, timeout: float | None = None) -> bool:
        need = [r for r in PARTY_ROLES if r != self.role]
        with self._links_cv:
            return self._links_cv.wait_for(lambda: all(r in self.links for r in need), timeout or self.ready_timeout)

    def close(self) -> None:
        if self.listener:
            self.listener.close()
        for conn in list(self.links.values()):
            conn.close()

    def _register(self, conn) -> None:
        conn.on_frame = self._on_party_frame
        with self._links_cv:
            old = self.links.get(conn.peer)
            self.links[conn.peer] = conn
            self._links_cv.notify_all()
        if old is not None:
            old.close()
        conn.start()

    def _on_connection(self, conn) -> None:
        if conn.peer in PARTY_ROLES:
            self._register(conn)
        else:
            conn.on_frame = self._on_client_frame
            conn.start()

    # -- dispatch --------------------------------------------------------------

    def _spawn(self, target, *args) -> None:
        threading.Thread(target=target, args=args, daemon=True).start()

    def _on_party_frame(self, conn, frame) -> None:
        if self.role == Role.HELPER and conn.peer == Role.P0 and frame.mtype == MessageType.CONFIG:
            self._spawn(self._helper_session, frame.session_id)

    def _on_client_frame(self, conn, frame) -> None:
        if self.role == Role.HELPER:
            return
        if frame.mtype == MessageType.CONFIG:
            self._spawn(self._query_session, conn, frame.session_id)
        elif frame.mtype == MessageType.DB_SHARES:
            self._spawn(self._upload, conn, frame.session_id)

    def database(self, db_id: int) -> Database:
        with self._db_lock:
            return self.databases.setdefault(db_id, Database())

    # -- sessions --------------------------------------------------------------

    def _upload(self, conn, sid: bytes) -> None:
        link = SessionLink(conn, sid, None)
        try:
            words = unpack_words(link.recv(MessageType.DB_SHARES).payload)
            db_id, owner, count, width = (int(v) for v in words[:4])
            body = words[4:]
            if width != RECORD_WIDTH or body.size != count * width:
                raise ValueError(f"DB_SHARES layout mismatch: {count} x {width} vs {body.size} words")
            db = self.database(db_id)
            db.put(owner, body.reshape(count, width))
            start, total = db.owner_range(owner)
            link.send(MessageType.RESULT, pack_words([db_id, start, total]))
        except Exception as exc:  # noqa: BLE001 - reported to the owner
            log.warning("upload failed: %s", exc)
            _try_abort([link], exc)
        finally:
            conn.close_session(sid)

    def _query_session(self, client_conn, sid: bytes) -> None:
        meter = SessionMeter(owner=self.role.label)
        client = SessionLink(client_conn, sid, None)
        links = [client]
        try:
            if not self.wait_ready():
                raise TransportError("party mesh incomplete")
            other = Role.P1 if self.role == Role.P0 else Role.P0
            peer = SessionLink(self.links[other], sid, meter)
            helper = SessionLink(self.links[Role.HELPER], sid, meter)
            links += [peer, helper]

            _, body = client.recv_config()
            config = LinkageConfig.from_dict(body["linkage"])
            db_id = int(body.get("db", 0))
            q = unpack_words(client.recv(MessageType.QUERY_SHARES).payload)
            if q.size != RECORD_WIDTH + 2 or int(q[0]) != db_id or int(q[1]) != RECORD_WIDTH:
                raise ValueError("QUERY_SHARES layout mismatch")
            query = q[2:]
            rows, ranges = self.database(db_id).snapshot()
            m = rows.shape[0]
            if m == 0:
                raise ValueError(f"database {db_id} is empty")

            agree = encode_config(
                {"kind": "agree", "linkage": config.to_dict(), "m": m, "db": db_id, "owners": ranges}
            )
            peer.send(MessageType.CONFIG, agree)
            peer_digest, _ = peer.recv_config()
            if peer_digest != agree[:32]:
                raise ValueError("proxies disagree on config or database layout")
            if self.role == Role.P0:
                helper.send(MessageType.CONFIG, encode_config({"kind": "helper", "linkage": config.to_dict(), "m": m}))

            ctx = MPCContext(
                self.role,
                self.seeds.session_streams(self.role, sid),
                meter,
                peer=peer,
                helper=helper,
                debug=self.debug,
            )
            out = link_query(ctx, query, rows, config)
            trailer = _trailer(meter, m, other)
            owners = [len(ranges)] + [v for r in ranges for v in r]
            client.send(MessageType.RESULT, pack_words(out, trailer, owners))
            self.sessions_done += 1
        except Exception as exc:  # noqa: BLE001 - fail-stop, everyone is told
            self.sessions_failed += 1
            log.warning("session %s failed: %s", sid.hex()[:8], exc)
            _try_abort(links, exc)
        finally:
            for link in links:
                link.conn.close_session(sid)

    def _helper_session(self, sid: bytes) -> None:
        meter = SessionMeter(owner=self.role.label)
        links = []
        try:
            if not self.wait_ready():
                raise TransportError("party mesh incomplete")
            p0 = SessionLink(self.links[Role.P0], sid, meter)
            p1 = SessionLink(self.links[Role.P1], sid, meter)
            links = [p0, p1]
            _, body = p0.recv_config()
            config = LinkageConfig.from_dict(body["linkage"])
            m = int(body["m"])
            ctx = MPCContext(
                self.role,
                self.seeds.session_streams(self.role, sid),
                meter,
                proxies={Role.P0: p0, Role.P1: p1},
                debug=self.debug,
            )
            link_query(ctx, *helper_placeholders(m), config)
            self.sessions_done += 1
        except Exception as exc:  # noqa: BLE001
            self.sessions_failed += 1
            log.warning("helper session %s failed: %s", sid.hex()[:8], exc)
            _try_abort(links, exc)
        finally:
            for link in links:
                link.conn.close_session(sid)


def _trailer(meter: SessionMeter, m: int, other: Role) -> list[int]:
    ns = lambda s: int(s * 1e9)  # noqa: E731
    return [
        m,
        meter.rounds,
        meter.bytes_sent[other.label],
        meter.bytes_sent["helper"],
        meter.bytes_recv[other.label],
        meter.bytes_recv["helper"],
        ns(meter.phases.get("similarity", 0.0)),
        ns(meter.phases.get("max", 0.0)),
        ns(meter.phases.get("match", 0.0)),
        ns(meter.wall_clock),
    ]


def _try_abort(links, exc) -> None:
    reason = f"{type(exc).__name__}: {exc}".encode()[:1000]
    for link in links:
        try:
            link.send(MessageType.ABORT, reason)
        except Exception:  # noqa: BLE001 - peer may be gone already
            pass


# -- client ----------------------------------------------------------------------


@dataclass
class QueryOutcome:
    result: MatchResult
    m: int
    owners: list
    meters: dict = field(default_factory=dict)  # proxy label -> trailer dict
    client_seconds: float = 0.0

    @property
    def party_bytes(self) -> int:
        """Bytes on all party-to-party links during the session."""
        p0, p1 = self.meters["p0"], self.meters["p1"]
        return p0["sent_peer"] + p1["sent_peer"] + p0["sent_helper"] + p1["sent_helper"] + p0["recv_helper"] + p1["recv_helper"]

    @property
    def rounds(self) -> int:
        return self.meters["p0"]["rounds"]

    @property
    def wall_clock(self) -> float:
        return max(v["wall_ns"] for v in self.meters.values()) / 1e9

    def owner_of(self, index: int):
        for owner, start, count in self.owners:
            if start <= index < start + count:
                return owner, index - start
        return None


class LinkageClient:
    """Data-owner / query-client side: encodes nothing itself, only shares and talks."""

    def __init__(self, p0: str, p1: str, role: Role = Role.CLIENT, timeout: float = 600.0):
        self.conns = {Role.P0: dial(p0, role), Role.P1: dial(p1, role)}
        self.timeout = timeout

    def close(self) -> None:
        for c in self.conns.values():
            c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _links(self, sid: bytes) -> dict:
        return {r: SessionLink(c, sid, None, self.timeout) for r, c in self.conns.items()}

    def upload_shares(self, shares: dict, db_id: int = 0, owner: int = 0) -> tuple[int, int]:
        """Send pre-computed shares {P0: (m, W), P1: (m, W)}; returns (start, total)."""
        sid = os.urandom(16)
        links = self._links(sid)
        acks = []
        try:
            for role, link in links.items():
                rows = as_ring(shares[role])
                link.send(MessageType.DB_SHARES, pack_words([db_id, owner, rows.shape[0], RECORD_WIDTH], rows))
            for link in links.values():
                acks.append(unpack_words(link.recv(MessageType.RESULT).payload))
        finally:
            for link in links.values():
                link.conn.close_session(sid)
        if any(int(a[1]) != int(acks[0][1]) or int(a[2]) != int(acks[0][2]) for a in acks):
            raise SessionAborted("proxies acknowledged different database layouts")
        return int(acks[0][1]), int(acks[0][2])

    def upload(self, records, db_id: int = 0, owner: int = 0, stream: RandomStream | None = None):
        from .protocol import outsource_records

        s0, s1 = outsource_records(list(records), stream)
        return self.upload_shares({Role.P0: s0, Role.P1: s1}, db_id, owner)

    def query(self, record, config: LinkageConfig, db_id: int = 0, stream: RandomStream | None = None) -> QueryOutcome:
        from .protocol import record_words

        import time

        t0 = time.perf_counter()
        q0, q1 = share_value(record_words(record), stream or RandomStream.fresh())
        sid = os.urandom(16)
        links = self._links(sid)
        body = encode_config({"kind": "query", "linkage": config.to_dict(), "db": db_id})
        try:
            for role, share in ((Role.P0, q0), (Role.P1, q1)):
                links[role].send(MessageType.CONFIG, body)
                links[role].send(MessageType.QUERY_SHARES, pack_words([db_id, RECORD_WIDTH], share))
            replies = {role: unpack_words(links[role].recv(MessageType.RESULT).payload) for role in links}
        finally:
            for link in links.values():
                link.conn.close_session(sid)
        result = reveal_result(replies[Role.P0], replies[Role.P1], config.disclosure)
        meters = {}
        owners = []
        for role, words in replies.items():
            tail = words[RESULT_WORDS:]
            meters[role.label] = {k: int(v) for k, v in zip(TRAILER_FIELDS, tail)}
            rest = tail[len(TRAILER_FIELDS) :]
            n_owners = int(rest[0])
            owners = [tuple(int(x) for x in rest[1 + 3 * i : 4 + 3 * i]) for i in range(n_owners)]
        return QueryOutcome(result, meters["p0"]["m"], owners, meters, time.perf_counter() - t0)


def share_for_upload(records, stream: RandomStream | None = None):
    from .protocol import outsource_records

    s0, s1 = outsource_records(list(records), stream)
    return {Role.P0: s0, Role.P1: s1}


__all__ = [
    "Database",
    "Disclosure",
    "LinkageClient",
    "PartyServer",
    "QueryOutcome",
    "share_for_upload",
]
