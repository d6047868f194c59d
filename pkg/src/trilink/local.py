"""Run the three parties as threads over in-memory connections.

Frames still pass through the wire codec and are metered exactly as on TCP, so
this is the harness used by tests and by single-process demos.
"""

from __future__ import annotations

import os
import threading

from .net.frames import MessageType
from .net.meter import SessionMeter
from .net.transport import Role, SessionLink, memory_pair, shaper_for
from .primitives import MPCContext
from .ring import SeedBook


class LocalMesh:
    """Three long-lived in-memory links: P0-P1, P0-helper, P1-helper."""

    def __init__(self, preset: str | None = None):
        self.conns = {}
        for a, b in ((Role.P0, Role.P1), (Role.P0, Role.HELPER), (Role.P1, Role.HELPER)):
            ca, cb = memory_pair(a, b, shaper_for(preset, a, b))
            self.conns[(a, b)] = ca
            self.conns[(b, a)] = cb

    def contexts(
        self, seeds: SeedBook | None = None, session_id: bytes | None = None, debug: bool = False, capture: bool = False
    ):
        sid = session_id or os.urandom(16)
        seeds = seeds or SeedBook.from_master(os.urandom(32))
        ctxs = {}
        for role in (Role.P0, Role.P1, Role.HELPER):
            meter = SessionMeter(owner=role.label)
            links = {
                other: SessionLink(self.conns[(role, other)], sid, meter)
                for other in (Role.P0, Role.P1, Role.HELPER)
                if other != role
            }
            if capture:
                for link in links.values():
                    link.capture = []
            if role == Role.HELPER:
                ctx = MPCContext(role, seeds.session_streams(role, sid), meter, proxies=links, debug=debug)
            else:
                other = Role.P1 if role == Role.P0 else Role.P0
                ctx = MPCContext(
                    role,
                    seeds.session_streams(role, sid),
                    meter,
                    peer=links[other],
                    helper=links[Role.HELPER],
                    debug=debug,
                )
            ctxs[role] = ctx
        return ctxs

    def close(self) -> None:
        for c in self.conns.values():
            c.close()


def run_parties(fn, inputs: dict, *, mesh: LocalMesh | None = None, seeds=None, debug=False, capture=False):
    """Call ``fn(ctx, *inputs[role])`` on all three roles concurrently.

    Returns ``(results, contexts)``; the first exception raised by any role is
    re-raised in the caller.
    """
    own = mesh is None
    mesh = mesh or LocalMesh()
    ctxs = mesh.contexts(seeds, debug=debug, capture=capture)
    results, errors = {}, {}

    def work(role):
        try:
            results[role] = fn(ctxs[role], *inputs[role])
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[role] = exc
            for link in (ctxs[role].peer, ctxs[role].helper, *ctxs[role].proxies.values()):
                if link is not None:
                    try:
                        link.send(MessageType.ABORT, repr(exc).encode())
                    except Exception:  # noqa: BLE001 - best effort
                        pass

    threads = [threading.Thread(target=work, args=(r,), daemon=True) for r in (Role.P0, Role.P1, Role.HELPER)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if own:
        mesh.close()
    for role in (Role.P0, Role.P1, Role.HELPER):
        if role in errors:
            raise errors[role]
    return results, ctxs
