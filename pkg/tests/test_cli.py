import json
import subprocess
import sys

import pytest

from trilink.cli import EXIT_NETWORK, EXIT_USAGE, main
from trilink.cluster import LocalCluster, free_ports
from trilink.config import ALL_FIELDS
from trilink.net.transport import Role


def trilink(*args, check=True):
    proc = subprocess.run([sys.executable, "-m", "trilink", *args], capture_output=True, text=True, timeout=300)
    if check:
        assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--records", "40", "--seed", "1f", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def cluster():
    with LocalCluster("off") as c:
        yield c


def peers(cluster):
    return f"p0={cluster.addrs[Role.P0]},p1={cluster.addrs[Role.P1]}"


def test_synth_writes_three_files(dataset):
    assert {p.name for p in dataset.iterdir()} == {"set_a.csv", "set_b.csv", "truth.csv"}


def test_evaluate_plaintext(dataset, tmp_path, capsys):
    rc = main(
        ["evaluate", "--db", str(dataset / "set_a.csv"), "--queries", str(dataset / "set_b.csv"),
         "--truth", str(dataset / "truth.csv"), "--thresholds", "0.6:0.85:0.05", "--out", str(tmp_path / "r.csv")]
    )  # fmt: skip
    assert rc == 0
    assert "ROC AUC" in capsys.readouterr().out
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 7


def test_invalid_weight_budget_exits_with_validation_error(dataset, tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"linkage": {"weights": {f: 5000 for f in ALL_FIELDS}}}))
    rc = main(
        ["evaluate", "--config", str(cfg), "--db", str(dataset / "set_a.csv"),
         "--queries", str(dataset / "set_b.csv"), "--truth", str(dataset / "truth.csv")]
    )  # fmt: skip
    assert rc == EXIT_USAGE
    assert "budget" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["party", "--role", "p0", "--listen", "127.0.0.1:0", "--seed", "nothex"],
        ["party", "--role", "p1", "--listen", "127.0.0.1:0", "--seed", "00" * 32],
        ["synth", "--records", "10", "--overlap", "1.5", "--out", "x"],
        ["evaluate", "--truth", "missing.csv", "--results", "missing.csv"],
    ],
)
def test_validation_failures_exit_nonzero(argv):
    assert main(argv) == EXIT_USAGE


def test_unreachable_proxies_exit_with_network_error(dataset):
    a, b = free_ports(2)
    rc = main(["upload", "--peers", f"p0=127.0.0.1:{a},p1=127.0.0.1:{b}", "--records", str(dataset / "set_a.csv")])
    assert rc == EXIT_NETWORK


def test_upload_query_roundtrip(cluster, dataset, tmp_path):
    out = trilink("upload", "--peers", peers(cluster), "--records", str(dataset / "set_a.csv"), "--db", "3", "--owner", "5")
    assert "40 records at rows 0..39" in out.stdout
    res = tmp_path / "res.csv"
    out = trilink(
        "query", "--peers", peers(cluster), "--records", str(dataset / "set_b.csv"), "--db", "3",
        "--disclosure", "full", "--threshold", "0.6", "--out", str(res),
    )  # fmt: skip
    assert "owner 5 row" in out.stdout
    ev = trilink("evaluate", "--truth", str(dataset / "truth.csv"), "--results", str(res), "--thresholds", "0.6,0.7,0.8")
    assert "ROC AUC" in ev.stdout


def test_bit_only_prints_only_the_matched_flag(cluster, dataset):
    trilink("upload", "--peers", peers(cluster), "--records", str(dataset / "set_a.csv"), "--db", "4")
    out = trilink("query", "--peers", peers(cluster), "--records", str(dataset / "set_b.csv"), "--db", "4", "--disclosure", "bit-only")
    lines = out.stdout.strip().splitlines()
    assert len(lines) == 40
    assert all(line.split(": ", 1)[1] in {"matched: yes", "matched: no"} for line in lines)


def test_config_file_drives_client(cluster, dataset, tmp_path):
    cfg = tmp_path / "deploy.json"
    cfg.write_text(
        json.dumps(
            {
                "parties": {"p0": cluster.addrs[Role.P0], "p1": cluster.addrs[Role.P1], "helper": cluster.addrs[Role.HELPER]},
                "seeds": {"master": "11" * 32},
                "linkage": {"threshold": 0.7, "disclosure": "index"},
            }
        )
    )
    trilink("upload", "--config", str(cfg), "--records", str(dataset / "set_a.csv"), "--db", "6")
    out = trilink("query", "--config", str(cfg), "--records", str(dataset / "set_b.csv"), "--db", "6")
    assert "score" not in out.stdout and "row" in out.stdout


def test_bench_command_small(tmp_path):
    out = trilink("bench", "--sizes", "4,8,16", "--queries", "1", "--out", str(tmp_path / "b.csv"))
    assert "kB per record" in out.stdout
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 4
