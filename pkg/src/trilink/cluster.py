"""Start the three parties as separate OS processes on loopback."""

from __future__ import annotations

import os
import socket
import subprocess
import sys
import tempfile
import threading
import time

from .net.transport import PARTY_ROLES, Role
from .party import LinkageClient


def free_ports(n: int) -> list[int]:
    socks = []
    try:
        for _ in range(n):
            s = socket.socket()
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


class LocalCluster:
    """P0, P1 and the helper as ``python -m trilink party`` subprocesses."""

    def __init__(self, preset: str = "off", master_seed: bytes | None = None, debug: bool = False, timeout: float = 60.0):
        self.preset = preset
        self.seed = master_seed or os.urandom(32)
        self.debug = debug
        self.timeout = timeout
        self.procs: dict[Role, subprocess.Popen] = {}
        self.logs: dict[Role, object] = {}
        self.addrs: dict[Role, str] = {}

    def start(self) -> "LocalCluster":
        ports = free_ports(3)
        self.addrs = {r: f"127.0.0.1:{p}" for r, p in zip(PARTY_ROLES, ports)}
        peers = ",".join(f"{r.label}={a}" for r, a in self.addrs.items())
        env = dict(os.environ, PYTHONUNBUFFERED="1")
        for role in PARTY_ROLES:
            cmd = [
                sys.executable, "-m", "trilink", "party",
                "--role", role.label,
                "--listen", self.addrs[role],
                "--peers", peers,
                "--seed", self.seed.hex(),
                "--net-preset", self.preset,
            ]  # fmt: skip
            if self.debug:
                cmd.append("--debug")
            self.logs[role] = tempfile.TemporaryFile(mode="w+")
            self.procs[role] = subprocess.Popen(
                cmd, stdout=subprocess.PIPE, stderr=self.logs[role], text=True, env=env
            )
        deadline = time.monotonic() + self.timeout
        for role, proc in self.procs.items():
            self._await_ready(role, proc, deadline)
        return self

    def _await_ready(self, role: Role, proc: subprocess.Popen, deadline: float) -> None:
        got = []

        def read():
            for line in proc.stdout:
                if line.startswith("ready"):
                    got.append(line)
                    break
            # keep draining so the child never blocks on a full pipe
            for _ in proc.stdout:
                pass

        threading.Thread(target=read, daemon=True).start()
        while not got:
            if proc.poll() is not None or time.monotonic() > deadline:
                output = self.log(role)
                self.stop()
                raise RuntimeError(f"{role.label} did not come up:\n{output}")
            time.sleep(0.02)

    def log(self, role: Role) -> str:
        fh = self.logs.get(role)
        if fh is None:
            return ""
        fh.seek(0)
        return fh.read()

    def client(self, role: Role = Role.CLIENT) -> LinkageClient:
        return LinkageClient(self.addrs[Role.P0], self.addrs[Role.P1], role)

    def stop(self) -> None:
        for proc in self.procs.values():
            if proc.poll() is None:
                proc.terminate()
        for proc in self.procs.values():
            try:
                proc.wait(5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        for fh in self.logs.values():
            fh.close()
        self.logs = {}

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
