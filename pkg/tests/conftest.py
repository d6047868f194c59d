import os

import numpy as np
import pytest

from trilink.local import LocalMesh, run_parties
from trilink.net.transport import Role
from trilink.ring import RandomStream, as_ring, reconstruct, share_value

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        lines.append(line)
        print(line)

    return record


@pytest.fixture(scope="session")
def mesh():
    m = LocalMesh()
    yield m
    m.close()


@pytest.fixture
def rng():
    return np.random.default_rng(int.from_bytes(os.urandom(4), "little"))


def share(x):
    return share_value(as_ring(x), RandomStream.fresh())


def run_secure(fn, *plain, mesh=None, debug=False, capture=False):
    """Share every plaintext argument, run ``fn`` on all roles, reconstruct.

    The helper receives zero arrays of matching shape.
    """
    inputs = {Role.P0: [], Role.P1: [], Role.HELPER: []}
    for p in plain:
        s0, s1 = share(p)
        inputs[Role.P0].append(s0)
        inputs[Role.P1].append(s1)
        inputs[Role.HELPER].append(np.zeros_like(s0))
    results, ctxs = run_parties(fn, {r: tuple(v) for r, v in inputs.items()}, mesh=mesh, debug=debug, capture=capture)
    return as_ring(reconstruct(results[Role.P0], results[Role.P1])), ctxs


def xor_share(x, rng):
    x = as_ring(x)
    s0 = rng.integers(0, 2**64, size=x.shape, dtype=np.uint64)
    return s0, x ^ s0
