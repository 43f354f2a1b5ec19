import json
import subprocess
import sys

import numpy as np
import pytest

from collapsesim import cli
from collapsesim.ensemble import EnsembleStats


def run(argv, capsys):
    code = cli.run(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_lorentz_check_electrons(tmp_path, capsys):
    code, out, err = run(["lorentz-check", "--pair", "electron-electron", "--V", "27.2eV", "--out", str(tmp_path),
                          "--seed", "1"], capsys)
    assert code == 0, err
    table = json.loads((tmp_path / "lorentz.json").read_text())["table"]
    rows = dict(zip(table["quantity"], table["value"]))
    assert rows["dt_int"] == pytest.approx(2.42e-17, rel=5e-3)
    assert rows["nonlinearity"] == pytest.approx(7.1e-10, rel=0.01)
    assert all(table["pass"])
    assert "dt_int" in out and "PASS" in out
    first = (tmp_path / "lorentz.csv").read_text().splitlines()[0]
    assert first.startswith("# ") and json.loads(first[2:])["command"] == "lorentz-check"


def test_lorentz_check_reports_failure(tmp_path, capsys):
    code, _, err = run(["lorentz-check", "--V", "1eV", "--out", str(tmp_path), "--seed", "1"], capsys)
    assert code == 1
    assert "dt_int" in json.loads(err)["failed"]


def test_born_test_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, workers in ((a, "1"), (b, "4")):
        code, _, err = run(["born-test", "--beta2", "0.3", "--n", "10000", "--seed", "42", "--out", str(out),
                            "--workers", workers], capsys)
        assert code == 0, err
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir()) == ["born_0p3.csv", "born_test.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    data = json.loads((a / "born_test.json").read_text())
    run0 = data["runs"][0]
    assert abs(run0["count_y"] / 10_000 - 0.3) <= 3 * np.sqrt(0.21 / 1e4)
    # stored statistics round-trip
    st = EnsembleStats.from_dict(run0["stats"])
    assert st == EnsembleStats.from_dict(json.loads(json.dumps(st.to_dict())))
    meta, cols = cli.read_csv(a / "born_0p3.csv")
    assert meta["seed"] == 42 and meta["threshold"] == pytest.approx(1 - 1e-6)
    assert np.array_equal(cols["beta2"], st.mean("w_y"))


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("COLLAPSE_SEED", "9")
    code, _, _ = run(["noise-audit", "--n-paths", "5", "--n-steps", "100", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads((tmp_path / "noise_audit.json").read_text())["metadata"]["seed"] == 9
    code, _, _ = run(["noise-audit", "--n-paths", "5", "--n-steps", "100", "--seed", "3", "--out", str(tmp_path)], capsys)
    assert json.loads((tmp_path / "noise_audit.json").read_text())["metadata"]["seed"] == 3


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


CUSTOM = {
    "version": 1,
    "scenario": {
        "m_j": 1.0, "m_k": 1.0,
        "potential": {"kind": "gaussian-well", "depth": 1.0, "width": 1.5},
        "initial": {"kind": "packet-pair", "j": {"center": 4, "width": 1.5, "momentum": 1.0},
                    "k": {"center": 12, "width": 1.5, "momentum": -1.0}},
        "grid": {"n_points": 16},
        "c2": 0.5,
    },
    "n": 3, "dt": 1e-3, "t_end": 0.2,
}


def test_custom_interaction_config(tmp_path, capsys):
    code, _, err = run(["simulate-interaction", "--config", str(write(tmp_path, CUSTOM)), "--out", str(tmp_path),
                        "--seed", "0", "--workers", "1"], capsys)
    assert code == 0, err
    meta, cols = cli.read_csv(tmp_path / "interaction_ledger.csv")
    assert list(cols) == ["t", "norm", "V", "gamma", "gamma_integral", "p_total", "h_total"]
    assert np.max(np.abs(cols["norm"] - 1)) <= 1e-9
    assert meta["c2"] == 0.5


def test_missing_mass(tmp_path, capsys):
    bad = json.loads(json.dumps(CUSTOM))
    del bad["scenario"]["m_j"]
    code, _, err = run(["simulate-interaction", "--config", str(write(tmp_path, bad)), "--out", str(tmp_path)], capsys)
    assert code == 2
    e = json.loads(err)
    assert e["error"] == "config" and e["field"] == "scenario.m_j"


def test_config_needs_version(tmp_path, capsys):
    bad = dict(CUSTOM)
    del bad["version"]
    code, _, err = run(["simulate-interaction", "--config", str(write(tmp_path, bad)), "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["field"] == "version"
    code, _, err = run(["born-test", "--config", str(write(tmp_path, {"version": 2})), "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["field"] == "version"


def test_unknown_key_rejected(tmp_path, capsys):
    code, _, err = run(["born-test", "--config", str(write(tmp_path, {"version": 1, "beta": [0.3]})),
                        "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["field"] == "beta"


@pytest.mark.parametrize("argv,field", [
    (["lorentz-check", "--V", "27.2m"], "V"),
    (["lorentz-check", "--boosts", "0.5,1.5"], "boosts"),
    (["born-test", "--beta2", "1.5"], "beta2"),
    (["born-test", "--threshold", "0.2"], "threshold"),
])
def test_bad_values(tmp_path, capsys, argv, field):
    code, _, err = run(argv + ["--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["field"] == field


def test_bad_flag_and_missing_file(tmp_path, capsys):
    code, _, err = run(["born-test", "--frobnicate"], capsys)
    assert code == 2 and json.loads(err)["error"] == "config"
    code, _, err = run(["ensemble", "--config", str(tmp_path / "nope.json")], capsys)
    assert code == 2 and json.loads(err)["field"] == "config"


def test_ensemble_command_round_trip(tmp_path, capsys):
    cfg = {"version": 1, "initial": {"re": [0.6, 0.0], "im": [0.0, 0.8]},
           "terms": [{"operator": [[1, 0], [0, -1]], "rate": 2.0}], "n": 50, "n_steps": 500, "threshold": None}
    code, _, err = run(["ensemble", "--config", str(write(tmp_path, cfg)), "--seed", "4", "--out", str(tmp_path)], capsys)
    assert code == 0, err
    st = cli.stats_from_file(tmp_path / "ensemble.json")
    meta, cols = cli.read_csv(tmp_path / "ensemble.csv")
    assert np.array_equal(cols["rho[0,1].re"], st.mean("rho[0,1].re"))
    assert st.n_traj == 50 and meta["config"]["n"] == 50


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "collapsesim", "noise-audit", "--n-paths", "3", "--n-steps", "50",
                           "--out", str(tmp_path), "--seed", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "noise_audit.json").exists()
