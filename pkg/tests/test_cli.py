import csv
import json
import subprocess
import sys

import pytest

from levylab.cli import ConfigError, run_command, validate_scenario

OU = {"name": "ou_jump", "params": {"theta": 1.0}, "measure": {"atoms": [{"mark": 1.0, "weight": 1.0}]},
      "convention": "raw"}
SIM = {"dt": 0.05, "horizon": 3.0, "seed": 7, "n_paths": 2000}
BINS = {"lower": -2.0, "upper": 8.0, "counts": 50}


def _run(tmp_path, name, cfg, *extra, out="out"):
    scenario = tmp_path / f"{name}.json"
    scenario.write_text(json.dumps(cfg))
    dest = tmp_path / out
    code = run_command([name, "--scenario", str(scenario), "--out", str(dest), *extra])
    return code, dest


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_tv_curve_outputs(tmp_path):
    cfg = {"model": OU, "sim": SIM, "x": 0.0, "y": 5.0, "t_grid": [1.0, 2.0, 3.0], "binning": BINS, "n_boot": 20}
    code, out = _run(tmp_path, "tv-curve", cfg)
    assert code == 0
    rows = _rows(out / "tv_curve.csv")
    assert rows[0] == ["t", "tv", "stderr"] and len(rows) == 4
    rep = json.loads((out / "report.json").read_text())
    assert rep["command"] == "tv-curve" and rep["seed"] == 7
    assert set(rep["results"]) >= {"C1_emp", "C2_emp", "slope_pvalue", "noise_floor"}


def test_outputs_are_deterministic_across_runs_and_workers(tmp_path):
    cfg = {"model": OU, "sim": SIM, "x0": 1.0, "horizon": 3.0, "binning": BINS}
    assert _run(tmp_path, "invariant", cfg, out="a")[0] == 0
    assert _run(tmp_path, "invariant", cfg, out="b")[0] == 0
    assert _run(tmp_path, "invariant", cfg, "--workers", "3", out="c")[0] == 0
    for name in ("invariant.csv", "report.json"):
        first = (tmp_path / "a" / name).read_bytes()
        assert first == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_seed_flag_changes_results(tmp_path):
    cfg = {"model": OU, "sim": SIM, "x0": 1.0, "horizon": 3.0, "binning": BINS}
    _run(tmp_path, "invariant", cfg, out="a")
    _run(tmp_path, "invariant", cfg, "--seed", "8", out="b")
    assert (tmp_path / "a" / "invariant.csv").read_bytes() != (tmp_path / "b" / "invariant.csv").read_bytes()


def test_gallery_rejects_large_p(tmp_path, capsys):
    code = run_command(["gallery", "5.3", "--p", "0.2", "--out", str(tmp_path)])
    assert code == 2
    assert "p < 1/6" in capsys.readouterr().err


def test_gallery_example_writes_report(tmp_path):
    code = run_command(["gallery", "5.3", "--params", '{"n_steps": 20, "n_paths": 10, "chain_steps": 20000}',
                        "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["results"]["tv_occupation"] == "1"


def test_gallery_bad_params_exit_2(tmp_path):
    assert run_command(["gallery", "5.2", "--params", '{"bogus": 1}', "--out", str(tmp_path)]) == 2
    assert run_command(["gallery", "5.2", "--params", "{not json", "--out", str(tmp_path)]) == 2


def test_rate_bound_command(tmp_path):
    cfg = {"rate": {"alpha": 1, "gamma": 1, "c": 0.5, "T": 1, "delta": 0.5, "sup_phi": 4}}
    code, out = _run(tmp_path, "rate-bound", cfg)
    assert code == 0
    res = json.loads((out / "report.json").read_text())["results"]
    assert res["D"] == pytest.approx(3.245732273553991, abs=1e-12)


@pytest.mark.parametrize("cfg", [
    {"model": OU, "sim": SIM, "x0": 0.0, "extra_key": 1},
    {"model": {**OU, "name": "no_such_model"}, "sim": SIM, "x0": 0.0},
    {"model": OU, "sim": {"dt": -1.0, "horizon": 1.0}, "x0": 0.0},
    {"model": OU, "x0": 0.0},
])
def test_bad_config_exit_2(tmp_path, cfg):
    assert _run(tmp_path, "simulate", cfg)[0] == 2


def test_unreadable_scenario_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run_command(["simulate", "--scenario", str(bad), "--out", str(tmp_path)]) == 2


def test_infinite_jump_mass_exit_3(tmp_path):
    model = {"name": "ou_jump", "measure": {"diffuse": {"radial": "power", "exponent": 2.0, "lower": 0.0,
                                                       "upper": 1.0}}, "convention": "raw"}
    cfg = {"model": model, "sim": {"dt": 0.1, "horizon": 1.0, "truncation": 0.0, "n_paths": 2}, "x0": 0.0}
    assert _run(tmp_path, "simulate", cfg)[0] == 3


def test_report_round_trip(tmp_path, capsys):
    cfg = {"model": OU, "sim": SIM, "x0": 0.5, "obs_times": [1.0, 2.0]}
    code, out = _run(tmp_path, "simulate", cfg)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    validate_scenario(rep["config"], "simulate")
    capsys.readouterr()
    assert run_command(["report", "--out", str(out)]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["results"] == rep["results"]
    assert "timestamp" not in json.dumps(rep)


def test_report_without_file_exit_2(tmp_path):
    assert run_command(["report", "--out", str(tmp_path)]) == 2


def test_validate_scenario_missing_key():
    with pytest.raises(ConfigError):
        validate_scenario({"model": OU}, "tv-curve")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "levylab", "gallery", "5.3", "--p", "0.3", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
