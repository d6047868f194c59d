import os
import threading

import numpy as np
import pytest

from trilink.config import Disclosure, LinkageConfig
from trilink.linkage import SENTINEL, best_match_plain, encode_record
from trilink.net.frames import MessageType, encode_config, pack_words
from trilink.net.transport import Role, SessionAborted, SessionLink
from trilink.party import LinkageClient, PartyServer
from trilink.protocol import RECORD_WIDTH, outsource_record
from trilink.ring import SeedBook
from trilink.synth import SyntheticDatasetSpec, synthesize


@pytest.fixture(scope="module")
def servers():
    seeds = SeedBook.from_master(os.urandom(32))
    p0 = PartyServer(Role.P0, "127.0.0.1:0", {}, seeds).start()
    p1 = PartyServer(Role.P1, "127.0.0.1:0", {Role.P0: p0.address}, seeds).start()
    h = PartyServer(Role.HELPER, "127.0.0.1:0", {Role.P0: p0.address, Role.P1: p1.address}, seeds).start()
    for s in (p0, p1, h):
        assert s.wait_ready(10)
    yield p0, p1, h
    for s in (h, p1, p0):
        s.close()


@pytest.fixture(scope="module")
def records():
    d = synthesize(SyntheticDatasetSpec(records=60, seed=3))
    return [encode_record(r) for r in d.set_a], [encode_record(r) for r in d.set_b]


@pytest.fixture
def client(servers):
    c = LinkageClient(servers[0].address, servers[1].address)
    yield c
    c.close()


def test_seeds_are_restricted_per_role(servers):
    p0, p1, h = servers
    assert len(p0.seeds.seeds) == len(p1.seeds.seeds) == len(h.seeds.seeds) == 2


def test_upload_and_query_over_tcp(client, records):
    db, queries = records
    assert client.upload(db, db_id=7) == (0, len(db))
    for disclosure in Disclosure:
        cfg = LinkageConfig(disclosure=disclosure)
        for q in queries[:4]:
            out = client.query(q, cfg, db_id=7)
            want = best_match_plain(q, db, cfg)
            assert out.result.matched == want.matched
            if disclosure != Disclosure.BIT:
                assert out.result.index == (want.index if want.matched else SENTINEL)
            assert out.m == len(db)
            assert out.meters["p0"]["rounds"] == out.meters["p1"]["rounds"]


def test_owner_ranges_do_not_depend_on_arrival_order(client, records):
    db, queries = records
    client.upload(db[30:], db_id=8, owner=9)
    client.upload(db[:30], db_id=8, owner=2)
    out = client.query(queries[0], LinkageConfig(), db_id=8)
    assert out.owners == [(2, 0, 30), (9, 30, len(db) - 30)]
    assert out.owner_of(31) == (9, 1)
    # same records, owner order restored -> same answer as a single upload
    want = best_match_plain(queries[0], db, LinkageConfig())
    assert out.result.matched == want.matched


def test_reupload_replaces_owner_part(client, records):
    db, _ = records
    client.upload(db[:5], db_id=9, owner=1)
    assert client.upload(db[:3], db_id=9, owner=1) == (0, 3)


def test_concurrent_sessions_are_isolated(servers, records):
    db, queries = records
    with LinkageClient(servers[0].address, servers[1].address) as c:
        c.upload(db, db_id=10)
    cfg = LinkageConfig()
    errors = []

    def worker(k):
        try:
            with LinkageClient(servers[0].address, servers[1].address) as c:
                for q in queries[k::6][:3]:
                    got = c.query(q, cfg, db_id=10).result
                    want = best_match_plain(q, db, cfg)
                    if (got.matched, got.index) != (want.matched, want.index if want.matched else SENTINEL):
                        errors.append((k, got, want))
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []


def test_query_against_missing_database_aborts(client, records):
    with pytest.raises(SessionAborted, match="empty"):
        client.query(records[1][0], LinkageConfig(), db_id=424242)


def test_config_mismatch_between_proxies_aborts(servers, client, records):
    db, queries = records
    client.upload(db[:8], db_id=11)
    sid = os.urandom(16)
    q0, q1 = outsource_record(queries[0])
    links = {r: SessionLink(c, sid, None, 30) for r, c in client.conns.items()}
    for role, share, tau in ((Role.P0, q0, 0.7), (Role.P1, q1, 0.8)):
        cfg = LinkageConfig().with_threshold(tau)
        links[role].send(MessageType.CONFIG, encode_config({"kind": "query", "linkage": cfg.to_dict(), "db": 11}))
        links[role].send(MessageType.QUERY_SHARES, pack_words([11, RECORD_WIDTH], share))
    for link in links.values():
        with pytest.raises(SessionAborted, match="disagree"):
            link.recv(MessageType.RESULT)
    # servers stay healthy afterwards
    assert client.query(queries[0], LinkageConfig(), db_id=11).m == 8


def test_malformed_upload_is_rejected(client):
    sid = os.urandom(16)
    link = SessionLink(client.conns[Role.P0], sid, None, 10)
    link.send(MessageType.DB_SHARES, pack_words([1, 0, 2, RECORD_WIDTH], np.zeros(5, np.uint64)))
    with pytest.raises(SessionAborted, match="layout"):
        link.recv(MessageType.RESULT)
