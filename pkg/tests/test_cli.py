import csv
import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from pmelab.cli import main
from pmelab.service import create_app, execute, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_VERIFY = {
    "command": "verify", "seed": 3, "params": {"N": 3, "m": 0.1, "r": 2.0},
    "field": {"kind": "separable", "T": 0.5},
    "verify": {"checks": [
        {"kind": "gluing", "x_o": [1.0, 0.0, 0.0], "rho": 0.4},
        {"kind": "main", "x_o": [1.0, 0.0, 0.0], "rho": 0.2, "eps": 0.2},
        {"kind": "power-ineq", "alpha": 0.5, "samples": 5000},
    ]},
}


def _write(tmp_path, data, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_exponents_reference_row(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["exponents", "--config", str(CONFIGS / "exponents.json"), "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "exponents.csv").open()))
    row = next(r for r in rows if (r["N"], r["m"], r["r"], r["p"]) == ("3", "0.2", "2.0", "3.0"))
    assert float(row["lambda_r"]) == pytest.approx(1.6, abs=1e-12)
    assert float(row["d"]) == pytest.approx(2.5, abs=1e-12)
    assert float(row["q"]) == pytest.approx(0.789474, abs=1e-6)
    assert (out / "verdicts.json").exists()
    assert "exit 0" in capsys.readouterr().out


def test_csv_has_unix_line_endings(tmp_path):
    out = tmp_path / "out"
    main(["exponents", "--config", str(CONFIGS / "exponents.json"), "--out", str(out)])
    raw = (out / "exponents.csv").read_bytes()
    assert b"\r\n" not in raw and raw.endswith(b"\n")


def test_probe_command(tmp_path):
    out = tmp_path / "out"
    assert main(["probe", "--config", str(CONFIGS / "probe.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "probe.json").read_text())
    assert rep["lhs"] == pytest.approx(3 * 0.9 / 1.1 - 2, rel=0.05)


def test_missing_seed_is_a_config_error(tmp_path, capsys):
    data = json.loads((CONFIGS / "cover.json").read_text())
    del data["seed"]
    code = main(["cover", "--config", _write(tmp_path, data), "--out", str(tmp_path / "o")])
    assert code == 4
    assert "seed" in capsys.readouterr().err


def test_seed_flag_supplies_missing_seed():
    data = json.loads((CONFIGS / "cover.json").read_text())
    del data["seed"]
    assert load_config(data, seed=5).seed == 5


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    data = dict(SMALL_VERIFY, colour="blue")
    assert main(["verify", "--config", _write(tmp_path, data), "--out", str(tmp_path / "o")]) == 4
    assert "colour" in capsys.readouterr().err


def test_command_mismatch_and_bad_json(tmp_path):
    assert main(["probe", "--config", _write(tmp_path, SMALL_VERIFY), "--out", str(tmp_path / "o")]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["verify", "--config", str(bad), "--out", str(tmp_path / "o")]) == 4


def test_jobs_do_not_change_bytes(tmp_path):
    cfg = _write(tmp_path, SMALL_VERIFY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--config", cfg, "--out", str(a), "--jobs", "1"]) == 0
    assert main(["verify", "--config", cfg, "--out", str(b), "--jobs", "3"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_unmet_precondition_exit_codes(tmp_path):
    data = json.loads(json.dumps(SMALL_VERIFY))
    data["verify"]["checks"] = [{"kind": "poincare", "x_o": [1.0, 0.0, 0.0], "rho": 0.1, "theta": 1e9}]
    cfg = _write(tmp_path, data)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "b"), "--fatal-unmet"]) == 3
    summary = json.loads((tmp_path / "b" / "verdicts.json").read_text())
    assert summary["unmet"] == 1 and summary["exit_code"] == 3


def test_failed_expectation_exits_two(tmp_path):
    data = json.loads(json.dumps(SMALL_VERIFY))
    data["verify"]["checks"] = [{"kind": "gluing", "x_o": [1.0, 0.0, 0.0], "rho": 0.4, "expect": "divergent"}]
    assert main(["verify", "--config", _write(tmp_path, data), "--out", str(tmp_path / "o")]) == 2


def test_solve_config_runs():
    res = execute(load_config(json.loads((CONFIGS / "solve.json").read_text())))
    assert res.exit_code == 0
    conv = json.loads(res.files["convergence.json"])
    assert conv["order"] > 1.7


def test_http_service():
    client = TestClient(create_app())
    assert client.get("/health").json()["status"] == "ok"
    body = {"exponents": {"N": [3], "m": [0.2], "r": [3.0], "p": [3.0]}}
    res = client.post("/exponents", json=body)
    assert res.status_code == 200
    payload = res.json()
    assert payload["exit_code"] == 0 and "exponents.csv" in payload["files"]
    # same bytes as the in-process runner
    direct = execute(load_config(dict(body, command="exponents")))
    assert payload["files"] == direct.files
    bad = json.loads((CONFIGS / "cover.json").read_text())
    del bad["seed"]
    assert client.post("/cover", json=bad).status_code == 422
    assert client.post("/probe", json=SMALL_VERIFY).status_code == 422
