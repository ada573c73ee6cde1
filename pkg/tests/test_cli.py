import csv
import io
import json
import subprocess
import sys

import pytest

from interlacements import __version__
from interlacements.cli import run
from interlacements.lattice_green import lattice_green
from interlacements.sampler import read_binary


def call(*argv):
    out = io.StringIO()
    code = run(list(argv), stdout=out)
    return code, out.getvalue()


def test_capacity_singleton():
    code, text = call("capacity", "--sites", "[[0,0,0]]")
    assert code == 0
    assert json.loads(text)["capacity"] == pytest.approx(1 / lattice_green(3).g0, rel=1e-14)


def test_malformed_sites(capsys):
    code, _ = call("capacity", "--sites", '[[0,0,0],["a",0,0]]')
    assert code == 1
    assert "$.sites[1][0]" in capsys.readouterr().err
    assert call("capacity", "--sites", "[[0,0,0]")[0] == 1
    assert call("capacity", "--sites", "[[0,0]]")[0] == 1


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"sites": [[0, 0, 0]], "bogus": 1}))
    assert call("capacity", "--config", str(cfg))[0] == 1
    assert "bogus" in capsys.readouterr().err


def test_config_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"sites": [[0, 0, 0], [1, 0, 0]], "V": [1, 1], "u": 2.0}))
    _, a = call("laplace", "--config", str(cfg))
    _, b = call("laplace", "--config", str(cfg), "--u", "1.0")
    assert json.loads(a)["rows"][0]["u"] == 2.0
    assert json.loads(b)["rows"][0]["u"] == 1.0


def test_usage_errors():
    assert call("frobnicate")[0] == 1
    assert call("capacity")[0] == 1
    assert call("green", "--points", "[[1,0,0]]", "--format", "binary")[0] == 1


def test_laplace_routes_agree():
    args = ("laplace", "--sites", "[[0,0,0],[1,1,0]]", "--V", "[0.2,0.3]", "--u", "[0.5,1.5]")
    _, a = call(*args)
    _, b = call(*args, "--route", "operator")
    for ra, rb in zip(json.loads(a)["rows"], json.loads(b)["rows"]):
        assert ra["laplace"] == pytest.approx(rb["laplace"], abs=1e-12)


def test_csv_precision():
    _, text = call("green", "--points", "[[0,0,0],[3,1,2]]", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(text)))
    g = lattice_green(3)
    assert float(rows[0]["g"]) == g.g0
    digits = rows[1]["g"].lstrip("0.").replace(".", "").split("e")[0]
    assert len(digits) >= 12


def test_sample_outputs_deterministic(tmp_path):
    paths = []
    for k in range(2):
        p = tmp_path / f"s{k}.csv"
        code, _ = call("sample", "--sites", "[[0,0,0],[1,0,0]]", "--u", "[0.5,1]", "--replicas", "50",
                       "--seed", "3", "--format", "csv", "--out", str(p), "--workers", str(1 + k))
        assert code == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    meta = json.loads((tmp_path / "s0.csv.meta.json").read_text())
    assert "timestamp" in meta and meta["version"] == __version__


def test_sample_binary(tmp_path):
    p = tmp_path / "s.bin"
    code, _ = call("sample", "--sites", "[[0,0,0],[0,0,1]]", "--u", "1", "--replicas", "30",
                   "--seed", "2", "--format", "binary", "--out", str(p))
    assert code == 0
    sites, u, seed, rec = read_binary(p)
    assert u == 1.0 and seed == 2 and len(rec) == 30 and sites.tolist() == [[0, 0, 0], [0, 0, 1]]
    assert call("sample", "--sites", "[[0,0,0]]", "--format", "binary")[0] == 1


def test_coeffs_and_rods():
    code, text = call("coeffs", "--sites", "[[0,0,0]]", "--V", "[1]", "--u", "2", "--n-max", "3")
    g0 = lattice_green(3).g0
    c = [r["coefficient"] for r in json.loads(text)["rows"]]
    assert code == 0 and c[0] == pytest.approx(2.0) and c[1] == pytest.approx(2 * g0)
    code, text = call("rods", "--lambda", "[[0,0],[1,0]]", "--W", "[1,-1]", "--grid", "[64,128]", "--n-max", "3")
    doc = json.loads(text)
    assert code == 0 and [r["N"] for r in doc["rows"]] == [64, 128] and doc["rows"][0]["a1"] == 0.0
    assert call("rods", "--lambda", "[[0,0],[1,0]]", "--W", "[1,1]")[0] == 1


def test_verify_exact_id():
    code, text = call("verify", "exact-id", "--seed", "7")
    doc = json.loads(text)
    assert code == 0 and doc["passed"] and doc["suite"] == "exact-id"


def test_verify_failure_exit_code(monkeypatch):
    from interlacements import verification

    failing = lambda seed: verification.SuiteReport("exact-id", [verification.check("x", 1.0, 0.0, 0.5)])  # noqa: E731
    monkeypatch.setitem(verification.SUITES, "exact-id", failing)
    assert call("verify", "exact-id")[0] == 3


def test_runtime_error_exit_code():
    # two copies of one site differ only in label; the Green matrix is singular
    code, _ = call("laplace", "--sites", "[[0,0,0],[0,0,0]]", "--V", "[1,1]")
    assert code == 1
    code, _ = call("laplace", "--sites", "[[0,0,0],[1,0,0]]", "--V", "[100,100]", "--route", "operator")
    assert code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "interlacements", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
