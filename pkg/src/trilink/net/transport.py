"""Reliable framed channels between parties, with optional link shaping.

A :class:`Connection` carries frames for many sessions over one byte stream.
A reader thread demultiplexes incoming frames into per-session FIFO mailboxes;
sessions see a :class:`SessionLink`, which meters every frame.

Shaping (added one-way latency plus a serialisation delay at the configured
bandwidth) happens on the sending side in a dedicated thread, so ``send`` never
blocks the protocol and per-link FIFO order is preserved.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

from .frames import (
    HEADER_SIZE,
    ZERO_SESSION,
    Frame,
    FrameError,
    MessageType,
    decode_config,
    decode_header,
    decode_hello,
    encode_frame,
    encode_hello,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 300.0


class Role(IntEnum):
    P0 = 0
    P1 = 1
    HELPER = 2
    OWNER = 3
    CLIENT = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Role":
        return cls[text.upper()]


PARTY_ROLES = (Role.P0, Role.P1, Role.HELPER)


class TransportError(ConnectionError):
    pass


class SessionAborted(RuntimeError):
    """The peer (or this party) aborted the session."""


@dataclass(frozen=True)
class LinkShaper:
    latency_ms: float = 0.0
    bandwidth_bps: float | None = None

    def delay_for(self, nbytes: int) -> tuple[float, float]:
        """(serialisation seconds, propagation seconds) for one frame."""
        tx = nbytes * 8 / self.bandwidth_bps if self.bandwidth_bps else 0.0
        return tx, self.latency_ms / 1000.0


# P0 / P1 / helper sit east / west / central.
_EW = frozenset({Role.P0, Role.P1})


def _preset(ew, central):
    def pick(a: Role, b: Role) -> LinkShaper:
        return ew if frozenset({a, b}) == _EW else central

    return pick


NET_PRESETS = {
    "a": _preset(LinkShaper(63.0, 330e6), LinkShaper(32.0, 700e6)),
    "b": _preset(LinkShaper(63.0, 100e6), LinkShaper(32.0, 100e6)),
    "c": _preset(LinkShaper(0.1, 25e9), LinkShaper(0.1, 25e9)),
    "off": None,
}


def shaper_for(preset: str | None, a: Role, b: Role) -> LinkShaper | None:
    if preset is None:
        return None
    try:
        pick = NET_PRESETS[preset.lower()]
    except KeyError:
        raise ValueError(f"unknown network preset {preset!r}") from None
    if pick is None or a not in PARTY_ROLES or b not in PARTY_ROLES:
        return None
    return pick(a, b)


class _ShapedSender(threading.Thread):
    def __init__(self, write, shaper: LinkShaper, name: str):
        super().__init__(name=name, daemon=True)
        self._write = write
        self._shaper = shaper
        self._queue: deque = deque()
        self._cv = threading.Condition()
        self._busy_until = 0.0
        self._closed = False

    def submit(self, data: bytes) -> None:
        now = time.perf_counter()
        tx, prop = self._shaper.delay_for(len(data))
        with self._cv:
            start = max(now, self._busy_until)
            self._busy_until = start + tx
            self._queue.append((self._busy_until + prop, data))
            self._cv.notify()

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify()

    def run(self) -> None:
        while True:
            with self._cv:
                while not self._queue and not self._closed:
                    self._cv.wait()
                if not self._queue:
                    return
                due, data = self._queue[0]
            wait = due - time.perf_counter()
            if wait > 0:
                time.sleep(wait)
            with self._cv:
                self._queue.popleft()
            try:
                self._write(data)
            except OSError:
                return


class Connection:
    """One framed duplex byte stream to a peer.

    ``on_frame`` (optional) is called with the first frame of every session id
    this connection has not seen before, after the frame is queued.
    """

    def __init__(self, local: Role, peer: Role, shaper: LinkShaper | None = None):
        self.local = local
        self.peer = peer
        self.on_frame = None
        self._boxes: dict[bytes, queue.Queue] = {}
        self._closed_sessions: set[bytes] = set()
        self._lock = threading.Lock()
        self._wlock = threading.Lock()
        self._alive = True
        self._sender = None
        if shaper is not None and (shaper.latency_ms or shaper.bandwidth_bps):
            self._sender = _ShapedSender(self._write_locked, shaper, f"shaper-{local.label}-{peer.label}")
            self._sender.start()

    # byte-level hooks for subclasses
    def _write(self, data: bytes) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    def _write_locked(self, data: bytes) -> None:
        with self._wlock:
            self._write(data)

    def send_frame(self, frame: Frame) -> int:
        data = encode_frame(frame)
        if not self._alive:
            raise TransportError(f"connection to {self.peer.label} closed")
        if self._sender is not None:
            self._sender.submit(data)
        else:
            try:
                self._write_locked(data)
            except OSError as exc:
                raise TransportError(f"send to {self.peer.label} failed: {exc}") from exc
        return len(data)

    def mailbox(self, sid: bytes) -> queue.Queue:
        with self._lock:
            box = self._boxes.get(sid)
            if box is None:
                box = self._boxes[sid] = queue.Queue()
            return box

    def _dispatch(self, frame: Frame) -> None:
        with self._lock:
            if frame.session_id in self._closed_sessions:
                return
            fresh = frame.session_id not in self._boxes
            box = self._boxes.setdefault(frame.session_id, queue.Queue())
        box.put(frame)
        if fresh and self.on_frame is not None:
            self.on_frame(self, frame)

    def recv_frame(self, sid: bytes, timeout: float | None = DEFAULT_TIMEOUT) -> Frame:
        try:
            frame = self.mailbox(sid).get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"timed out waiting for {self.peer.label}") from None
        if frame is None:
            raise TransportError(f"connection to {self.peer.label} closed")
        return frame

    def close_session(self, sid: bytes) -> None:
        with self._lock:
            self._boxes.pop(sid, None)
            self._closed_sessions.add(sid)

    def _shutdown_boxes(self) -> None:
        self._alive = False
        with self._lock:
            boxes = list(self._boxes.values())
        for box in boxes:
            box.put(None)

    def close(self) -> None:
        if self._sender is not None:
            self._sender.close()
        self._shutdown_boxes()

    @property
    def alive(self) -> bool:
        return self._alive


class SocketConnection(Connection):
    def __init__(self, sock: socket.socket, local: Role, peer: Role, shaper: LinkShaper | None = None):
        super().__init__(local, peer, shaper)
        self.sock = sock
        self._reader = threading.Thread(target=self._read_loop, name=f"reader-{local.label}<-{peer.label}", daemon=True)

    def start(self) -> "SocketConnection":
        """Begin reading; call after ``on_frame`` is in place."""
        if not self._reader.is_alive() and self._reader.ident is None:
            self._reader.start()
        return self

    def _write(self, data: bytes) -> None:
        self.sock.sendall(data)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray(n)
        view = memoryview(buf)
        got = 0
        while got < n:
            k = self.sock.recv_into(view[got:], n - got)
            if k == 0:
                raise EOFError
            got += k
        return bytes(buf)

    def _read_loop(self) -> None:
        try:
            while True:
                header = self._read_exact(HEADER_SIZE)
                length, mtype, sid = decode_header(header)
                payload = self._read_exact(length) if length else b""
                self._dispatch(Frame(mtype, sid, payload))
        except (EOFError, OSError):
            pass
        except FrameError as exc:
            log.error("protocol error from %s: %s", self.peer.label, exc)
        finally:
            self._shutdown_boxes()

    def close(self) -> None:
        super().close()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class MemoryConnection(Connection):
    """In-process endpoint; frames still go through the byte codec."""

    def __init__(self, local: Role, peer: Role, shaper: LinkShaper | None = None):
        super().__init__(local, peer, shaper)
        self.other: MemoryConnection | None = None

    def _write(self, data: bytes) -> None:
        other = self.other
        if other is None or not other.alive:
            raise OSError("peer endpoint closed")
        length, mtype, sid = decode_header(data)
        other._dispatch(Frame(mtype, sid, data[HEADER_SIZE:]))


def memory_pair(a: Role, b: Role, shaper: LinkShaper | None = None) -> tuple[MemoryConnection, MemoryConnection]:
    ca, cb = MemoryConnection(a, b, shaper), MemoryConnection(b, a, shaper)
    ca.other, cb.other = cb, ca
    return ca, cb


class SessionLink:
    """A connection seen from inside one session; meters everything."""

    def __init__(self, conn: Connection, sid: bytes, meter, timeout: float | None = DEFAULT_TIMEOUT):
        self.conn = conn
        self.sid = sid
        self.meter = meter
        self.timeout = timeout
        self.peer = conn.peer
        self.capture: list | None = None  # (type, payload) of received frames, when set

    def send(self, mtype: MessageType, payload: bytes = b"") -> None:
        n = self.conn.send_frame(Frame(mtype, self.sid, payload))
        if self.meter is not None:
            self.meter.on_send(self.peer.label, mtype, n)

    def recv(self, *expected: MessageType) -> Frame:
        frame = self.conn.recv_frame(self.sid, self.timeout)
        if self.meter is not None:
            self.meter.on_recv(self.peer.label, frame.mtype, frame.size)
        if self.capture is not None:
            self.capture.append((frame.mtype, frame.payload))
        if frame.mtype == MessageType.ABORT and MessageType.ABORT not in expected:
            reason = frame.payload.decode(errors="replace") or "no reason given"
            raise SessionAborted(f"{self.peer.label} aborted: {reason}")
        if expected and frame.mtype not in expected:
            raise FrameError(
                f"expected {'/'.join(e.name for e in expected)} from {self.peer.label}, got {frame.mtype.name}"
            )
        return frame

    def recv_config(self) -> tuple[bytes, dict]:
        return decode_config(self.recv(MessageType.CONFIG).payload)


# -- mesh establishment -------------------------------------------------------


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {text!r}, expected host:port")
    return host, int(port)


def _hello_exchange(sock: socket.socket, local: Role, timeout: float) -> Role:
    sock.settimeout(timeout)
    sock.sendall(encode_frame(Frame(MessageType.HELLO, ZERO_SESSION, encode_hello(int(local)))))
    header = _recv_exact(sock, HEADER_SIZE)
    length, mtype, _ = decode_header(header)
    if mtype != MessageType.HELLO:
        raise FrameError(f"expected HELLO, got {mtype.name}")
    role, _ = decode_hello(_recv_exact(sock, length))
    sock.settimeout(None)
    try:
        return Role(role)
    except ValueError:
        raise FrameError(f"unknown role {role} in HELLO") from None


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("peer closed during handshake")
        buf += chunk
    return buf


def _tune(sock: socket.socket) -> None:
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    for opt in (socket.SO_SNDBUF, socket.SO_RCVBUF):
        try:
            sock.setsockopt(socket.SOL_SOCKET, opt, 4 << 20)
        except OSError:
            pass


def dial(addr: str, local: Role, preset: str | None = None, retries: float = 20.0, start: bool = True) -> SocketConnection:
    """Connect to ``addr`` and handshake; retries until the listener is up.

    With ``start=False`` the caller must call ``conn.start()`` itself.
    """
    host, port = parse_addr(addr)
    deadline = time.monotonic() + retries
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=5.0)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise TransportError(f"cannot reach {addr}") from None
            time.sleep(0.05)
    _tune(sock)
    peer = _hello_exchange(sock, local, 10.0)
    conn = SocketConnection(sock, local, peer, shaper_for(preset, local, peer))
    return conn.start() if start else conn


class Listener:
    """Accepts connections, handshakes and hands each to ``on_connection``.

    The callback receives an unstarted connection and must ``start()`` it.
    """

    def __init__(self, addr: str, local: Role, on_connection, preset: str | None = None):
        host, port = parse_addr(addr)
        self.local = local
        self.preset = preset
        self.on_connection = on_connection
        self.sock = socket.create_server((host, port), reuse_port=False)
        self.sock.listen(64)
        self.address = "%s:%d" % self.sock.getsockname()[:2]
        self._thread = threading.Thread(target=self._accept_loop, name=f"listen-{local.label}", daemon=True)
        self._thread.start()

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, _ = self.sock.accept()
            except OSError:
                return
            threading.Thread(target=self._handshake, args=(sock,), daemon=True).start()

    def _handshake(self, sock: socket.socket) -> None:
        try:
            _tune(sock)
            peer = _hello_exchange(sock, self.local, 10.0)
        except (OSError, FrameError, TransportError) as exc:
            log.warning("handshake failed: %s", exc)
            sock.close()
            return
        conn = SocketConnection(sock, self.local, peer, shaper_for(self.preset, self.local, peer))
        self.on_connection(conn)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
