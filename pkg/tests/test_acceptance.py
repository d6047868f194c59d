"""Exit criteria.  Each test records one PASS/FAIL line (see the terminal summary)."""

import time

import numpy as np
import pytest
from scipy.stats import chisquare

from trilink import primitives as mpc
from trilink.config import ALL_FIELDS, WEIGHT_BUDGET, Disclosure, LinkageConfig, validate_config
from trilink.evaluate import evaluate, QueryOutcome
from trilink.linkage import (
    SENTINEL,
    EncodedTable,
    RawRecord,
    best_match_plain,
    best_matches,
    encode_record,
    record_score_fraction,
    threshold_operands,
    tournament_operands,
)
from trilink.cluster import LocalCluster
from trilink.local import run_parties
from trilink.net.frames import unpack_words
from trilink.net.transport import NET_PRESETS, Role
from trilink.protocol import helper_placeholders, link_query, outsource_record, outsource_records
from trilink.ring import MASK, as_ring
from trilink.synth import SyntheticDatasetSpec, synthesize

from conftest import run_secure

pytestmark = pytest.mark.acceptance

REFERENCE_COMM_MB_1000 = 33.54


def random_config(rng) -> LinkageConfig:
    w = {f: int(rng.integers(1, 1200)) for f in ALL_FIELDS}
    if rng.random() < 0.2:
        # push one weight so the budget is met as tightly as integers allow
        f = ALL_FIELDS[rng.integers(len(ALL_FIELDS))]
        w[f] += (WEIGHT_BUDGET - 9 * sum(w.values())) // 9
    tau = int(rng.integers(int(0.3 * 65536), int(0.95 * 65536)))
    disclosure = list(Disclosure)[rng.integers(3)]
    return validate_config(LinkageConfig(w, tau, disclosure))


# -- 1 ---------------------------------------------------------------------------


def test_oracle_equivalence_three_processes(criterion):
    rng = np.random.default_rng(20240601)
    data = synthesize(SyntheticDatasetSpec(records=2000, seed=9))
    pool_a = [encode_record(r) for r in data.set_a]
    pool_b = [encode_record(r) for r in data.set_b]
    counterpart = {a: j for j, a in enumerate(data.truth) if a is not None}
    sessions, mismatches = 0, []
    t0 = time.perf_counter()
    with LocalCluster("off") as cluster, cluster.client() as client:
        for db_round in range(50):
            rows = list(rng.choice(len(pool_a), 64, replace=False))
            if db_round % 5 == 0:
                rows[int(rng.integers(64))] = rows[0]  # duplicate rows exercise the tie rule
            db = [pool_a[i] for i in rows]
            client.upload(db, db_id=db_round)
            for _ in range(20):
                pick = rng.random()
                if pick < 0.4:
                    q = db[int(rng.integers(64))]
                elif pick < 0.8 and any(r in counterpart for r in rows):
                    q = pool_b[counterpart[next(r for r in rng.permutation(rows) if r in counterpart)]]
                else:
                    q = pool_b[int(rng.integers(len(pool_b)))]
                cfg = random_config(rng)
                got = client.query(q, cfg, db_id=db_round).result
                want = best_match_plain(q, db, cfg)
                expect_index = want.index if want.matched and cfg.disclosure != Disclosure.BIT else SENTINEL
                if got.matched != want.matched or got.index != expect_index:
                    mismatches.append((db_round, cfg, got, want))
                sessions += 1
    elapsed = time.perf_counter() - t0
    ok = sessions == 1000 and not mismatches
    criterion(1, "oracle equivalence", ok, f"{sessions - len(mismatches)}/{sessions} sessions agree, {elapsed:.0f} s")
    assert ok, mismatches[:3]


# -- 2 ---------------------------------------------------------------------------


def test_primitive_suites(criterion, mesh):
    rng = np.random.default_rng(7)
    failures = {}
    t0 = time.perf_counter()

    wrap = as_ring([0, 1, 2, MASK, MASK - 1, 2**63, 2**63 - 1, 2**63 + 1, 2**32, 2**62])
    x = rng.integers(0, 2**64, 10**5, dtype=np.uint64)
    y = rng.integers(0, 2**64, 10**5, dtype=np.uint64)
    k = wrap.size
    x[: k * k] = np.repeat(wrap, k)
    y[: k * k] = np.tile(wrap, k)
    out, _ = run_secure(mpc.multiply, x, y, mesh=mesh)
    failures["multiply"] = int(np.count_nonzero(out != x * y))

    B = mpc.MAX_BOUND
    a = rng.integers(0, B, 10**5, dtype=np.uint64)
    b = rng.integers(0, B, 10**5, dtype=np.uint64)
    v = int(rng.integers(0, B))
    boundary = [(0, 0), (0, B - 1), (B - 1, 0), (v, v)]
    a = np.concatenate([a, as_ring([p for p, _ in boundary])])
    b = np.concatenate([b, as_ring([q for _, q in boundary])])
    out, _ = run_secure(mpc.compare_geq, a, b, mesh=mesh)
    failures["compare_geq"] = int(np.count_nonzero(out != (a >= b)))

    base = rng.integers(0, 2**64, 2 * 10**4, dtype=np.uint64)
    bit = np.uint64(1) << rng.integers(0, 64, base.size).astype(np.uint64)
    lhs = np.concatenate([base] * 5)
    rhs = np.concatenate([base, base + np.uint64(1), base - np.uint64(1), base ^ bit, base ^ np.uint64(1 << 63)])
    out, _ = run_secure(mpc.equals, lhs, rhs, mesh=mesh)
    failures["equals"] = int(np.count_nonzero(out != (lhs == rhs)))

    elapsed = time.perf_counter() - t0
    ok = not any(failures.values())
    criterion(2, "primitive suites", ok, f"failures {failures}, {elapsed:.0f} s")
    assert ok


# -- 3 ---------------------------------------------------------------------------


def test_linkage_quality_desk_scale(criterion):
    t0 = time.perf_counter()
    data = synthesize(SyntheticDatasetSpec(records=1000, seed=2024))
    db_records = [encode_record(r) for r in data.set_a]
    query_records = [encode_record(r) for r in data.set_b]
    config = LinkageConfig()
    idx, n, d, _ = best_matches(EncodedTable.from_records(query_records), EncodedTable.from_records(db_records), config)
    results = [QueryOutcome(int(i), int(a), int(b)) for i, a, b in zip(idx, n, d)]
    thresholds = [0.60, 0.65, 0.70, 0.75, 0.80, 0.85]
    report = evaluate(results, data.truth, thresholds)

    # the secure pipeline reaches the same best matches on a sample
    sample = np.random.default_rng(1).choice(len(query_records), 12, replace=False)
    full = LinkageConfig(disclosure=Disclosure.FULL, tau_fixed=1)
    d0, d1 = outsource_records(db_records)
    hq, hd = helper_placeholders(len(db_records))
    agree = 0
    for j in sample:
        q0, q1 = outsource_record(query_records[j])
        res, _ = run_parties(
            lambda ctx, q, db: link_query(ctx, q, db, full),
            {Role.P0: (q0, d0), Role.P1: (q1, d1), Role.HELPER: (hq, hd)},
        )
        words = res[Role.P0] + res[Role.P1]
        if int(words[0]) == 0:
            agree += results[j].n == 0
        else:
            agree += (int(words[1]), int(words[2]), int(words[3])) == (results[j].index, results[j].n, results[j].d)

    rate = report.best_total / report.queries
    ok = report.fp_monotone and report.fn_monotone and rate <= 0.02 and report.auc >= 0.99 and agree == len(sample)
    criterion(
        3,
        "linkage quality",
        ok,
        f"FP {report.fp} FN {report.fn}; best tau {report.best_threshold:.2f} error {rate:.2%}; "
        f"AUC {report.auc:.4f}; secure sample {agree}/{len(sample)}; {time.perf_counter() - t0:.0f} s",
    )
    assert ok


# -- 4 and 5 ---------------------------------------------------------------------


def test_scaling_and_communication(criterion):
    from trilink.bench import bench

    t0 = time.perf_counter()
    with LocalCluster("off") as cluster, cluster.client() as client:
        report = bench(client, [100, 250, 1000, 2500], queries=2)
    fit = report.fit("mean_bytes")
    mb = report.row(1000).mean_bytes / 1e6
    failures = sum(r.failures for r in report.rows)
    ok = failures == 0 and fit.r2 >= 0.98 and REFERENCE_COMM_MB_1000 / 4 <= mb <= REFERENCE_COMM_MB_1000 * 4
    sizes = ", ".join(f"{r.size}: {r.mean_bytes / 1e6:.2f} MB {r.mean_seconds:.2f} s" for r in report.rows)
    criterion(4, "scaling and communication", ok, f"{sizes}; R^2 {fit.r2:.4f}; {time.perf_counter() - t0:.0f} s")
    assert ok


def _session_seconds(preset: str, size: int):
    data = synthesize(SyntheticDatasetSpec(records=size, seed=5))
    db = [encode_record(r) for r in data.set_a]
    q = encode_record(data.set_b[0])
    with LocalCluster(preset) as cluster, cluster.client() as client:
        client.upload(db)
        client.query(q, LinkageConfig())  # warm-up
        t0 = time.perf_counter()
        out = client.query(q, LinkageConfig())
        return time.perf_counter() - t0, out.rounds


def test_network_shaped_sanity(criterion):
    t_b, rounds = _session_seconds("b", 1000)
    t_c, _ = _session_seconds("c", 1000)
    # every proxy round waits at least one east-west one-way latency
    budget = rounds * NET_PRESETS["b"](Role.P0, Role.P1).latency_ms / 1000
    ok = t_b - t_c >= budget
    criterion(5, "network-shaped sanity", ok, f"NET B {t_b:.2f} s vs NET C {t_c:.2f} s; shaped budget {budget:.2f} s over {rounds} rounds")
    assert ok


# -- 6 ---------------------------------------------------------------------------


def _max_card_text(rng, parts: int) -> str:
    """Text of ``parts`` words with exactly 63 distinct bigrams (64 characters)."""
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    while True:
        cuts = sorted(rng.choice(np.arange(2, 60), parts - 1, replace=False)) if parts > 1 else []
        chars = list(rng.choice(letters, 64))
        for c in cuts:
            chars[c] = " "
        text = "".join(chars)
        if " " in (text[0], text[-1]) or "  " in text:
            continue
        if len({text[i : i + 2] for i in range(63)}) == 63:
            return text


def test_overflow_certification(criterion, mesh):
    t0 = time.perf_counter()
    rng = np.random.default_rng(61)

    def adversarial() -> RawRecord:
        first, last, birth = _max_card_text(rng, 3).split(" ")
        return RawRecord(first, last, birth, _max_card_text(rng, 1), "4294967295", "4294967295", "4294967295", "4294967295")

    base = adversarial()
    db_raw = [base, adversarial(), base, adversarial()]
    db = [encode_record(r) for r in db_raw]
    query = encode_record(base)
    assert all(r.name_map.cardinality == 63 and r.city_map.cardinality == 63 for r in db)
    assert all(all(dl == 3 for dl in r.deltas) for r in db)

    top = WEIGHT_BUDGET // 9
    configs = [
        LinkageConfig({f: top - 5 if f == "combined_name" else 1 for f in ALL_FIELDS}, 1, Disclosure.FULL),
        LinkageConfig({f: top // 6 + (top % 6 if f == "city" else 0) for f in ALL_FIELDS}, 65535, Disclosure.FULL),
    ]
    worst, logged = 0, 0
    for cfg in configs:
        validate_config(cfg)
        assert 9 * sum(cfg.weights.values()) > WEIGHT_BUDGET - 9
        scores = [record_score_fraction(query, r, cfg) for r in db]
        best = best_match_plain(query, db, cfg)
        oracle_ops = tournament_operands(scores) + threshold_operands(best.score, cfg.tau_fixed)
        worst = max(worst, max(abs(v) for v in oracle_ops))

        q0, q1 = outsource_record(query)
        d0, d1 = outsource_records(db)
        hq, hd = helper_placeholders(len(db))
        _, ctxs = run_parties(
            lambda ctx, q, d: link_query(ctx, q, d, cfg),
            {Role.P0: (q0, d0), Role.P1: (q1, d1), Role.HELPER: (hq, hd)},
            mesh=mesh,
            debug=True,
        )
        for label, values in ctxs[Role.P0].debug_log:
            assert label == "compare"
            for v in values:
                worst = max(worst, int(v.max()))
                logged += v.size
    ok = worst < 2**61 and logged > 0
    criterion(6, "overflow certification", ok, f"largest operand {worst} = 2^{np.log2(worst):.2f} < 2^61 over {logged} secure operands, {time.perf_counter() - t0:.1f} s")
    assert ok


# -- 7 ---------------------------------------------------------------------------


def test_helper_blindness_surrogate(criterion, mesh):
    t0 = time.perf_counter()
    data = synthesize(SyntheticDatasetSpec(records=16, seed=8))
    db = [encode_record(r) for r in data.set_a]
    q = encode_record(data.set_b[0])
    q0, q1 = outsource_record(q)
    d0, d1 = outsource_records(db)
    hq, hd = helper_placeholders(len(db))
    cfg = LinkageConfig()
    low = []
    for _ in range(200):
        # identical inputs and shares; only the session seeds change
        _, ctxs = run_parties(
            lambda ctx, a, b: link_query(ctx, a, b, cfg),
            {Role.P0: (q0, d0), Role.P1: (q1, d1), Role.HELPER: (hq, hd)},
            mesh=mesh,
            capture=True,
        )
        for link in ctxs[Role.HELPER].proxies.values():
            for _, payload in link.capture:
                low.append((unpack_words(payload) & np.uint64(0xFF)).astype(np.int64))
    low = np.concatenate(low)
    counts = np.bincount(low, minlength=256)
    p = chisquare(counts).pvalue
    ok = p > 0.001
    criterion(7, "helper blindness", ok, f"{low.size} words, chi-square p = {p:.4f}, {time.perf_counter() - t0:.0f} s")
    assert ok
