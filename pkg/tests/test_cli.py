import json
import subprocess
import sys

import pytest

from consensus_sos.cli import bundled_example, run
from consensus_sos.sos import GramCertificate


def test_verify_bundled_example(tmp_path):
    out = tmp_path / "cert.json"
    assert run(["verify", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["feasible"] is True
    assert payload["certificate"]["lambda_min_psi"] > 0
    for c in payload["certificate"]["certificates"].values():
        assert GramCertificate.from_json(c).is_valid()
    meta = json.loads((tmp_path / "cert.json.meta.json").read_text())
    assert meta["exit_code"] == 0


def test_verify_is_byte_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["verify", "--out", str(a)]) == 0
    assert run(["verify", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synth_quadratic_is_infeasible_and_reported(tmp_path):
    out = tmp_path / "synth.json"
    assert run(["synth", "--order", "2", "--deg-v", "2", "--out", str(out)]) == 2
    payload = json.loads(out.read_text())
    assert payload["feasible"] is False
    assert payload["status"] == "Infeasible"
    assert payload["rounds"]


def test_synth_quartic(tmp_path):
    out = tmp_path / "synth.json"
    assert run(["synth", "--order", "2", "--deg-v", "4", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["feasible"] and payload["config"]["deg_v"] == 4


def test_dump_sdp(tmp_path):
    dump = tmp_path / "problem.txt"
    assert run(["verify", "--out", str(tmp_path / "c.json"), "--dump-sdp", str(dump)]) == 0
    first = dump.read_text().splitlines()
    assert int(first[0]) > 0
    assert len(first[2].split()) == int(first[1].split()[0])


def test_simulate_writes_csv_and_summary(tmp_path):
    csv, summary = tmp_path / "run.csv", tmp_path / "summary.json"
    args = ["simulate", "--T", "0.01", "--out", str(csv), "--summary", str(summary)]
    assert run(args) == 0
    first = csv.read_bytes()
    assert first.splitlines()[0].startswith(b"t,pos_err_1")
    s = json.loads(summary.read_text())
    assert s["steps"] == 100 and s["switch_count"] == 9
    assert run(args) == 0
    assert csv.read_bytes() == first


def test_topology_check(tmp_path, capsys):
    assert run(["topology", "check"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["all_connected"] is True
    assert rep["windows"][0]["lambda_min"] > 0
    # a lone G3 never reaches the leader
    obj = json.loads(bundled_example().read_text())["schedule"]
    obj["subintervals"] = [[2, obj["tau"]]]
    path = tmp_path / "sched.json"
    path.write_text(json.dumps(obj))
    assert run(["topology", "check", "--problem", str(path), "--out", str(tmp_path / "rep.json")]) == 2
    assert json.loads((tmp_path / "rep.json").read_text())["all_connected"] is False


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--problem", "missing.json"],
        ["verify", "--problem", "missing.json"],
        ["bogus"],
        ["synth", "--deg-v", "many"],
        [],
    ],
)
def test_errors_exit_one(argv, capsys):
    assert run(argv) == 1
    assert "error" in capsys.readouterr().err


def test_bad_alignment_exits_one(capsys):
    assert run(["simulate", "--dt", "3e-4", "--T", "0.01"]) == 1
    assert "does not divide" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "consensus_sos", "topology", "check"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["all_connected"] is True
