import csv
import json
from pathlib import Path

import pytest

from faasplane.cli import main

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def scenario(tmp_path, **sim):
    doc = {"seed": "cli", "sim": {"num_data_centers": 2, "gateways_per_dc": 1, "total_calls": 200, "runs": 2, **sim}}
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(doc))
    return p


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario(tmp_path)), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert names == {"config.json", "metrics.csv", "trace_run0.csv", "trace_run1.csv",
                     "beacons_run0.json", "beacons_run1.json"}
    assert "average_queue_time=" in capsys.readouterr().out


def test_run_missing_scenario(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(tmp_path / "nope.json"), "--out", str(out)]) == 2
    assert not out.exists()


def test_run_bad_override_names_key(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario(tmp_path)), "--out", str(out), "--override", "sim.nope=3"]) == 2
    assert "sim.nope" in capsys.readouterr().err
    assert not out.exists()


def test_override_changes_only_policy(tmp_path):
    s = scenario(tmp_path)
    main(["run", "--scenario", str(s), "--out", str(tmp_path / "a")])
    main(["run", "--scenario", str(s), "--out", str(tmp_path / "b"), "--override", "policy=none"])
    a = json.loads((tmp_path / "a" / "config.json").read_text())
    b = json.loads((tmp_path / "b" / "config.json").read_text())
    assert a["sim"].pop("policy") == "default" and b["sim"].pop("policy") == "none"
    assert a == b


@pytest.fixture
def artifacts(tmp_path):
    s = scenario(tmp_path)
    out = tmp_path / "out"
    main(["run", "--scenario", str(s), "--out", str(out)])
    return s, out


def verify(s, trace, beacons):
    return main(["verify", "--trace", str(trace), "--beacons", str(beacons), "--scenario", str(s)])


def test_verify_honest(artifacts, capsys):
    s, out = artifacts
    assert verify(s, out / "trace_run1.csv", out / "beacons_run1.json") == 0
    assert capsys.readouterr().out.startswith("OK")


def test_verify_edited_cell(artifacts, capsys):
    s, out = artifacts
    path = out / "trace_run0.csv"
    rows = list(csv.reader(path.open()))
    col = rows[0].index("chosen_gateway")
    rows[42][col] = "dc9/gw9"
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert verify(s, path, out / "beacons_run0.json") == 1
    assert f"call_id {rows[42][0]}" in capsys.readouterr().out


def test_verify_truncated_beacons(artifacts, capsys):
    s, out = artifacts
    doc = json.loads((out / "beacons_run0.json").read_text())
    doc["blocks"] = doc["blocks"][:3]
    (out / "short.json").write_text(json.dumps(doc))
    assert verify(s, out / "trace_run0.csv", out / "short.json") != 0
    assert "missing beacon height" in capsys.readouterr().out


@pytest.mark.parametrize("which", ["trace", "beacons"])
def test_verify_malformed(artifacts, which):
    s, out = artifacts
    bad = out / "bad"
    bad.write_text("not a valid file {")
    trace = bad if which == "trace" else out / "trace_run0.csv"
    beacons = bad if which == "beacons" else out / "beacons_run0.json"
    assert verify(s, trace, beacons) == 2


def test_verify_mismatched_run(artifacts):
    s, out = artifacts
    assert verify(s, out / "trace_run0.csv", out / "beacons_run1.json") == 1


def test_report(artifacts, capsys):
    _, out = artifacts
    capsys.readouterr()
    assert main(["report", "--metrics", str(out / "*.csv")]) == 0
    first = capsys.readouterr().out
    assert "default / random arrivals" in first and "2 data centers" in first
    main(["report", "--metrics", str(out / "metrics.csv")])
    assert capsys.readouterr().out == first


def test_report_csv_one_cell(artifacts, capsys):
    _, out = artifacts
    capsys.readouterr()
    main(["report", "--metrics", str(out / "metrics.csv"), "--format", "csv"])
    lines = capsys.readouterr().out.strip().split("\n")
    cells = [c for line in lines[1:] for c in line.split(",")[1:] if c]
    assert len(cells) == 1


def test_report_no_files(tmp_path):
    assert main(["report", "--metrics", str(tmp_path / "*.csv")]) == 2


def test_gossip(tmp_path, capsys):
    deliveries = tmp_path / "d.csv"
    code = main(["gossip", "--topology", str(SCENARIOS / "gossip_topology.json"),
                 "--events", str(SCENARIOS / "gossip_events.json"), "--out", str(deliveries)])
    assert code == 0
    text = capsys.readouterr().out
    assert "delivered=" in text
    rows = list(csv.reader(deliveries.open()))
    assert rows[0] == ["tick", "msg_id", "from", "to", "topic"]
    assert "p5" not in {r[3] for r in rows[1:]}


def test_gossip_bad_input(tmp_path):
    bad = tmp_path / "t.json"
    bad.write_text('{"peers": {"a": {"neighbors": {"b": 1}}}}')
    assert main(["gossip", "--topology", str(bad), "--events", str(SCENARIOS / "gossip_events.json")]) == 2


def test_demo_billing(capsys):
    assert main(["demo-billing", "--scenario", str(SCENARIOS / "billing.json"),
                 "--override", "sim.total_calls=600"]) == 0
    out = capsys.readouterr().out
    assert "receipts=" in out and "gateway dc0/gw0 balance=" in out


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2
