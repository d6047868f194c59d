"""Command-line entry point: synth, party, upload, query, evaluate, bench."""

from __future__ import annotations

import argparse
import csv
import logging
import signal
import sys
import threading

from .config import ConfigError, Disclosure, LinkageConfig, tau_to_fixed, validate_config
from .linkage import SENTINEL, EncodedTable, RecordRejected, best_matches, encode_record
from .net.transport import Role, SessionAborted, TransportError
from .settings import Deployment, check_preset, parse_peers, parse_seeds

EXIT_USAGE = 2
EXIT_NETWORK = 3

log = logging.getLogger("trilink")


def _deployment(args) -> Deployment:
    dep = Deployment.load(args.config) if getattr(args, "config", None) else Deployment()
    if getattr(args, "peers", None):
        dep.parties.update(parse_peers(args.peers))
    if args.command == "party" and args.seed:
        dep.seeds = parse_seeds(args.seed)
    if getattr(args, "net_preset", None):
        dep.net_preset = check_preset(args.net_preset)
    linkage = dep.linkage
    if getattr(args, "disclosure", None):
        linkage = LinkageConfig(linkage.weights, linkage.tau_fixed, Disclosure.parse(args.disclosure))
    if getattr(args, "threshold", None) is not None:
        linkage = LinkageConfig(linkage.weights, tau_to_fixed(args.threshold), linkage.disclosure)
    dep.linkage = validate_config(linkage)
    return dep


def _encode_all(records, source: str) -> list:
    out = []
    for i, rec in enumerate(records):
        try:
            out.append(encode_record(rec))
        except RecordRejected as exc:
            raise RecordRejected(f"{source} row {i}: {exc}") from None
    return out


# -- commands ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import SyntheticDatasetSpec, synthesize

    spec = SyntheticDatasetSpec(
        records=args.records,
        overlap=args.overlap,
        corruption=args.corruption,
        max_errors=args.max_errors,
        birth_name_omission=args.omission,
        shuffle_rate=args.shuffle,
        seed=int(args.seed, 16),
    )
    data = synthesize(spec)
    paths = data.write(args.out, args.delimiter)
    shared = sum(t is not None for t in data.truth)
    print(f"wrote {len(data.set_a)} + {len(data.set_b)} records ({shared} shared) to {args.out}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def cmd_party(args) -> int:
    from .party import PartyServer

    dep = _deployment(args)
    role = Role.parse(args.role)
    if dep.seeds is None:
        raise ConfigError("party needs seeds (--seed or a 'seeds' entry in --config)")
    listen = args.listen or dep.parties.get(role)
    if not listen:
        raise ConfigError(f"no listen address for {role.label}")
    needed = {Role.P0: (), Role.P1: (Role.P0,), Role.HELPER: (Role.P0, Role.P1)}[role]
    dep.require(*needed)
    server = PartyServer(role, listen, dep.parties, dep.seeds, dep.net_preset, debug=args.debug).start()
    if not server.wait_ready():
        server.close()
        raise TransportError("party mesh did not form")
    print(f"ready {role.label} {server.address}", flush=True)

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    server.close()
    return 0


def _client(dep: Deployment):
    from .party import LinkageClient

    dep.require(Role.P0, Role.P1)
    return LinkageClient(dep.parties[Role.P0], dep.parties[Role.P1], Role.OWNER)


def cmd_upload(args) -> int:
    from .synth import read_records

    dep = _deployment(args)
    records = _encode_all(read_records(args.records, args.delimiter), args.records)
    with _client(dep) as client:
        start, total = client.upload(records, db_id=args.db, owner=args.owner)
    print(f"owner {args.owner}: {len(records)} records at rows {start}..{start + len(records) - 1}; database {args.db} now holds {total}")
    return 0


def _format_result(row: int, out, disclosure: Disclosure) -> str:
    r = out.result
    if disclosure == Disclosure.BIT:
        return f"query {row}: matched: {'yes' if r.matched else 'no'}"
    if not r.matched:
        return f"query {row}: matched: no"
    where = out.owner_of(r.index)
    text = f"query {row}: matched: yes, row {r.index}"
    if where:
        text += f" (owner {where[0]} row {where[1]})"
    if r.score is not None:
        text += f", score {r.score.n}/{r.score.d} = {r.score.n / r.score.d:.4f}"
    return text


def cmd_query(args) -> int:
    from .synth import read_records

    dep = _deployment(args)
    config = dep.linkage
    queries = _encode_all(read_records(args.records, args.delimiter), args.records)
    rows = []
    with _client(dep) as client:
        for i, q in enumerate(queries):
            out = client.query(q, config, db_id=args.db)
            print(_format_result(i, out, config.disclosure))
            r = out.result
            show_index = config.disclosure != Disclosure.BIT and r.matched
            rows.append(
                {
                    "query_row": i,
                    "matched": int(r.matched),
                    "index": r.index if show_index else "",
                    "score_n": r.score.n if r.score else "",
                    "score_d": r.score.d if r.score else "",
                    "seconds": round(out.client_seconds, 4),
                    "comm_bytes": out.party_bytes,
                    "rounds": out.rounds,
                }
            )
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["query_row"], delimiter=args.delimiter)
            w.writeheader()
            w.writerows(rows)
    return 0


def _read_results(path, delimiter):
    from .evaluate import QueryOutcome

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh, delimiter=delimiter):
            if row.get("score_n", "") == "" or row.get("index", "") == "":
                # no revealed score: count as a zero-score non-match
                out.append(QueryOutcome(int(SENTINEL), 0, 1))
            else:
                out.append(QueryOutcome(int(row["index"]), int(row["score_n"]), int(row["score_d"])))
    return out


def cmd_evaluate(args) -> int:
    from .evaluate import DEFAULT_THRESHOLDS, QueryOutcome, evaluate, parse_thresholds
    from .synth import read_records, read_truth

    dep = _deployment(args)
    truth = read_truth(args.truth, args.delimiter)
    if args.results:
        results = _read_results(args.results, args.delimiter)
    else:
        db = EncodedTable.from_records(_encode_all(read_records(args.db, args.delimiter), args.db))
        qs = EncodedTable.from_records(_encode_all(read_records(args.queries, args.delimiter), args.queries))
        idx, n, d, _ = best_matches(qs, db, dep.linkage)
        results = [QueryOutcome(int(i), int(a), int(b)) for i, a, b in zip(idx, n, d)]
    thresholds = parse_thresholds(args.thresholds) if args.thresholds else list(DEFAULT_THRESHOLDS)
    report = evaluate(results, truth, thresholds)
    print(report.summary())
    if args.out:
        report.write(args.out, args.delimiter)
    return 0


def cmd_bench(args) -> int:
    from .bench import bench
    from .cluster import LocalCluster

    dep = _deployment(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes or min(sizes) < 1:
        raise ConfigError("--sizes needs positive integers")
    preset = args.net_preset or "off"
    progress = lambda row: print(f"size {row.size}: {row.mean_seconds:.3f} s, {row.mean_bytes / 1e6:.2f} MB, {row.failures} failed", flush=True)  # noqa: E731
    if dep.parties.get(Role.P0) and dep.parties.get(Role.P1):
        with _client(dep) as client:
            report = bench(client, sizes, preset, args.queries, dep.linkage, int(args.seed, 16), progress)
    else:
        with LocalCluster(preset) as cluster, cluster.client() as client:
            report = bench(client, sizes, preset, args.queries, dep.linkage, int(args.seed, 16), progress)
    print(report.summary())
    if args.out:
        report.write(args.out, args.delimiter)
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trilink", description="Three-party secret-shared record linkage.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, peers=True):
        sp.add_argument("--config", help="deployment / linkage JSON file")
        if peers:
            sp.add_argument("--peers", help="role=host:port,... (overrides --config)")
        sp.add_argument("--delimiter", default=",", help="field delimiter of record files")

    def linkage(sp):
        sp.add_argument("--disclosure", choices=["bit", "index", "full", "bit-only", "index+score"])
        sp.add_argument("--threshold", type=float, help="match threshold tau in (0, 1)")

    s = sub.add_parser("synth", help="generate two corrupted record sets with ground truth")
    s.add_argument("--records", type=int, default=1000)
    s.add_argument("--overlap", type=float, default=0.6)
    s.add_argument("--corruption", type=float, default=0.10)
    s.add_argument("--max-errors", type=int, default=2)
    s.add_argument("--omission", type=float, default=0.60, help="birth-name omission rate")
    s.add_argument("--shuffle", type=float, default=0.10, help="attribute-group shuffle rate")
    s.add_argument("--seed", default="0", help="hex seed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--delimiter", default=",")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("party", help="run P0, P1 or the helper")
    common(s)
    s.add_argument("--role", required=True, choices=["p0", "p1", "helper"])
    s.add_argument("--listen", help="host:port to bind")
    s.add_argument("--seed", help="hex master seed shared by the deployment")
    s.add_argument("--net-preset", choices=["a", "b", "c", "off"])
    s.add_argument("--debug", action="store_true", help="reconstruct and check intermediate values")
    s.set_defaults(func=cmd_party)

    s = sub.add_parser("upload", help="encode, share and upload a record file")
    common(s)
    s.add_argument("--records", required=True)
    s.add_argument("--db", type=int, default=0, help="database id")
    s.add_argument("--owner", type=int, default=0, help="owner tag")
    s.set_defaults(func=cmd_upload)

    s = sub.add_parser("query", help="link every record of a file against a database")
    common(s)
    linkage(s)
    s.add_argument("--records", required=True)
    s.add_argument("--db", type=int, default=0)
    s.add_argument("--out", help="write per-query results here")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("evaluate", help="FP/FN per threshold and ROC AUC")
    common(s, peers=False)
    s.add_argument("--db", help="database record file (for plaintext scoring)")
    s.add_argument("--queries", help="query record file (for plaintext scoring)")
    s.add_argument("--truth", required=True)
    s.add_argument("--results", help="results file written by 'query' (full disclosure)")
    s.add_argument("--thresholds", help="comma list or start:stop:step")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench", help="runtime and communication per database size")
    common(s)
    s.add_argument("--sizes", default="100,250,1000,2500")
    s.add_argument("--net-preset", choices=["a", "b", "c", "off"])
    s.add_argument("--queries", type=int, default=1, help="sessions per size")
    s.add_argument("--seed", default="0", help="hex seed for the synthetic database")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "evaluate" and not args.results and not (args.db and args.queries):
        parser.error("evaluate needs --results or both --db and --queries")
    try:
        return args.func(args)
    except (ConfigError, RecordRejected, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, SessionAborted, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NETWORK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
