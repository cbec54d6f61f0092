import csv
import json
import math
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from graphsurf import cli
from graphsurf.family import FamilySweepRecord, SweepResult

TORUS = {"kind": "torus", "grid": [16, 16]}
SMALL_SWEEP = {
    "base": TORUS,
    "family": {"deltas": [0.02, 0.1], "samples": 3, "seed": 1},
    "estimators": {"trials": 3, "select": {"Sobolev": {"p": 1.0}, "CZ_B": {"p": 2.0}}},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg, out="out", extra=()):
    out_dir = tmp_path / out
    code = cli.main([command, "--config", write_config(tmp_path, cfg), "--out-dir", str(out_dir), *extra])
    return code, out_dir


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_geometry_command(tmp_path, capsys):
    code, out = run(tmp_path, "geometry", {"base": TORUS})
    assert code == 0
    rows = read_csv(out / "geometry.csv")
    assert len(rows) == 256
    assert float(rows[0]["JPsi"]) == 1.0 and float(rows[0]["sqrt_det_g"]) == 1.0
    volume = float(capsys.readouterr().out.split()[0].split("=")[1])
    assert volume == pytest.approx(4 * math.pi**2, rel=1e-14)


def test_geometry_sphere_volume(tmp_path, capsys):
    code, _ = run(tmp_path, "geometry", {"base": {"kind": "sphere", "grid": [32, 64]}})
    assert code == 0
    volume = float(capsys.readouterr().out.split()[0].split("=")[1])
    assert volume == pytest.approx(4 * math.pi, rel=1e-5)


def test_geometry_failure_exit_code(tmp_path):
    cfg = {"base": {"kind": "sphere", "grid": [8, 16]}, "height_field": {"type": "constant", "value": 1.5}}
    code, out = run(tmp_path, "geometry", cfg)
    assert code == 3
    assert not out.exists() or not any(out.iterdir())


@pytest.mark.parametrize(
    "cfg",
    [
        {"bogus": {}},
        {"base": {"kind": "klein", "grid": [8, 8]}},
        {"base": {"kind": "torus", "grid": [8, 8], "scheme": "fd2"}},
        {"base": TORUS, "height_field": {"type": "harmonics", "terms": []}},
        {"base": TORUS, "estimators": {"select": {"Nash": {}}}},
    ],
)
def test_config_errors_exit_two_without_files(tmp_path, cfg):
    command = "constants" if "estimators" in cfg else "geometry"
    code, out = run(tmp_path, command, cfg)
    assert code == 2
    assert not out.exists()


def test_missing_and_malformed_config(tmp_path):
    assert cli.main(["geometry", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["verify", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_constants_command(tmp_path):
    cfg = {
        "base": {"kind": "torus", "grid": [32, 32]},
        "estimators": {"trials": 3, "select": {"Poincare": {"p": 2.0}, "Sobolev": {"p": 3.0}, "CZ_B": {"p": 2}}},
    }
    code, out = run(tmp_path, "constants", cfg)
    assert code == 0
    rows = {r["inequality"]: r for r in read_csv(out / "constants.csv")}
    assert float(rows["Poincare"]["estimate"]) == pytest.approx(1.0, abs=1e-6)
    assert rows["Poincare"]["status"] == "ok"
    assert rows["Sobolev"]["status"] == "invalid-exponent"
    assert float(rows["CZ_B"]["estimate"]) == 0.0
    assert all(r["wall_time_ms"] == "" for r in rows.values())


def test_constants_timing_column(tmp_path):
    cfg = {"base": TORUS, "estimators": {"select": {"CZ_B": {"p": 2.0}}}, "output": {"record_timing": True}}
    code, out = run(tmp_path, "constants", cfg)
    assert code == 0
    assert float(read_csv(out / "constants.csv")[0]["wall_time_ms"]) >= 0.0


def test_sweep_outputs_and_determinism(tmp_path):
    code, out1 = run(tmp_path, "sweep", SMALL_SWEEP, "a")
    assert code == 0
    code, out2 = run(tmp_path, "sweep", SMALL_SWEEP, "b")
    assert code == 0
    for name in ("records.csv", "aggregates.csv", "sweep.svg"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    records = read_csv(out1 / "records.csv")
    assert len(records) == 6
    assert all(r["JPsi_ok"] == "true" for r in records)
    agg = read_csv(out1 / "aggregates.csv")
    assert [a["delta"] for a in agg] == ["0.02", "0.1", "reference"]
    root = ET.parse(out1 / "sweep.svg").getroot()
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2


def test_sweep_seed_override_changes_records(tmp_path):
    _, a = run(tmp_path, "sweep", SMALL_SWEEP, "a")
    _, b = run(tmp_path, "sweep", SMALL_SWEEP, "b", ("--seed", "7"))
    assert (a / "records.csv").read_bytes() != (b / "records.csv").read_bytes()


def test_sweep_low_success_exit_code(tmp_path, monkeypatch):
    def fake_sweep(spec, deltas, *args, **kwargs):
        recs = [FamilySweepRecord(i, 0.1, status="degenerate-graph" if i else "ok") for i in range(3)]
        agg = [{"delta": 0.1, "samples": 3, "succeeded": 1, "Sobolev": 0.1, "CZ_B": 0.2}]
        return SweepResult(recs, agg, {"Sobolev": 0.1, "CZ_B": 0.0}, {})

    monkeypatch.setattr(cli, "family_sweep", fake_sweep)
    code, out = run(tmp_path, "sweep", SMALL_SWEEP)
    assert code == 4
    assert (out / "records.csv").exists()


def test_verify_command(tmp_path):
    cfg = {
        "base": {"kind": "torus", "grid": [16, 16], "scheme": "fd4"},
        "height_field": {"type": "fourier", "terms": [{"amplitude": 0.1, "k": [1, 0]}]},
        "verify": {"grids": [[24, 24], [48, 48]]},
    }
    code, out = run(tmp_path, "verify", cfg)
    assert code == 0
    rows = read_csv(out / "verify.csv")
    assert {r["check"] for r in rows} == {"simons", "codazzi", "riemann_symmetry", "trace_identity", "divergence"}
    simons = [r for r in rows if r["check"] == "simons"]
    assert simons[0]["regime"] == "measured" and float(simons[0]["observed_order"]) > 3.5


def test_verify_failure_exit_code(tmp_path):
    cfg = {
        "base": {"kind": "torus", "grid": [8, 8], "scheme": "fd4"},
        "height_field": {"type": "fourier", "terms": [{"amplitude": 0.3, "k": [2, 1]}]},
        "verify": {"grids": [[8, 8], [10, 10]], "floor": 0.0},
    }
    code, out = run(tmp_path, "verify", cfg)
    assert code == 5
    assert any(r["status"] == "fail" for r in read_csv(out / "verify.csv"))


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("GRAPHSURF_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2
    monkeypatch.setenv("GRAPHSURF_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli._threads(None)


def test_print_default_config_and_module_entry():
    proc = subprocess.run(
        [sys.executable, "-m", "graphsurf", "--print-default-config"], capture_output=True, text=True, check=True
    )
    assert json.loads(proc.stdout)["family"]["deltas"] == [0.02, 0.05, 0.1]
    assert cli.main([]) == 2
