import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mgtlab.cli import (EXIT_ASSUMPTIONS, EXIT_OK, EXIT_UNSTABLE, EXIT_USAGE, EXIT_VERDICT,
                        ConfigError, ScenarioConfig, load_config, main)
from mgtlab.energy import read_energy_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def standard_config(**overrides):
    cfg = {
        "name": "standard",
        "params": {"tau": 1.0, "alpha": 2.0, "b": 1.0, "c2": 1.0},
        "operator": {"eigenvalues": [1.0, 4.0, 9.0]},
        "kernel": {"family": "exponential", "a": 0.1, "rate": 1.0},
        "alpha0": 0.95,
        "ic": [[1.0, 0.0, 0.0]],
        "time": {"T": 20.0, "dt": 0.002},
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_bundled_configs_parse():
    names = sorted(p.name for p in CONFIGS.glob("*.json"))
    assert "standard_exponential.json" in names and "polynomial.json" in names
    for p in CONFIGS.glob("*.json"):
        load_config(p)


def test_config_round_trip(tmp_path):
    for p in CONFIGS.glob("*.json"):
        cfg = load_config(p)
        again = ScenarioConfig.from_dict(json.loads(cfg.dumps()))
        assert again == cfg


def test_check_standard_passes(tmp_path, capsys):
    assert main(["check", "--config", write_config(tmp_path, standard_config())]) == EXIT_OK
    assert "assumptions: PASS" in capsys.readouterr().out


def test_check_negative_gamma_names_item6(tmp_path, capsys):
    cfg = standard_config(params={"tau": 2.0, "alpha": 1.0, "b": 1.0, "c2": 1.0})
    assert main(["check", "--config", write_config(tmp_path, cfg)]) == EXIT_ASSUMPTIONS
    assert "item6" in capsys.readouterr().out


def test_check_strong_kernel_names_item1(capsys):
    assert main(["check", "--config", str(CONFIGS / "kernel_too_strong.json")]) == EXIT_ASSUMPTIONS
    assert "item1" in capsys.readouterr().out


def test_divergent_polynomial_is_an_assumption_failure(tmp_path, capsys):
    cfg = standard_config(kernel={"family": "polynomial", "a": 0.1, "p": 1.0})
    assert main(["check", "--config", write_config(tmp_path, cfg)]) == EXIT_ASSUMPTIONS
    assert "G diverges" in capsys.readouterr().out


@pytest.mark.parametrize("mutate,field", [
    (lambda c: c.pop("kernel"), "kernel"),
    (lambda c: c["params"].update(tau=-1.0), "params.tau"),
    (lambda c: c["time"].update(dt=0.0), "time.dt"),
    (lambda c: c.update(ic=[[1, 0, 0]] * 4), "ic"),
    (lambda c: c.update(ic=[[1, 0]]), "ic[0]"),
    (lambda c: c["kernel"].update(family="gaussian"), "kernel.family"),
])
def test_malformed_config_exits_1_naming_field(tmp_path, capsys, mutate, field):
    cfg = standard_config()
    mutate(cfg)
    assert main(["check", "--config", write_config(tmp_path, cfg)]) == EXIT_USAGE
    assert field in capsys.readouterr().err


def test_config_error_message():
    with pytest.raises(ConfigError, match="kernel"):
        ScenarioConfig.from_dict({"params": {"tau": 1, "alpha": 2, "b": 1, "c2": 1},
                                  "operator": {"eigenvalues": [1.0]}, "time": {"T": 1}})


def test_missing_file_and_bad_json(tmp_path):
    assert main(["check", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["check", "--config", str(bad)]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_simulate_writes_csv_and_echo(tmp_path):
    cfg = standard_config(time={"T": 2.0, "dt": 0.01})
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
    data = read_energy_csv(out / "energy.csv")
    assert data["t"].size == 201
    assert np.all(np.diff(data["E"]) <= 0)
    echoed = load_config(out / "scenario.json")
    assert echoed == ScenarioConfig.from_dict(cfg)


def test_simulate_zero_horizon_single_row(tmp_path):
    cfg = standard_config(time={"T": 0.0, "dt": 0.001})
    csv = tmp_path / "e.csv"
    assert main(["simulate", "--config", write_config(tmp_path, cfg), "--csv", str(csv)]) == EXIT_OK
    data = read_energy_csv(csv)
    assert data["t"].tolist() == [0.0]
    assert data["E"][0] == pytest.approx(1.9)
    assert data["R"][0] == pytest.approx(0.19)


def test_simulate_unstable_step_exits_3(tmp_path, capsys):
    cfg = standard_config(operator={"eigenvalues": [1.0, 25.0, 100.0]},
                          ic=[[1, 0, 0], [0.1, 0, 0], [0.01, 0, 0]], time={"T": 50.0, "dt": 1.0})
    report = tmp_path / "report.txt"
    code = main(["simulate", "--config", write_config(tmp_path, cfg), "--report", str(report),
                 "--csv", str(tmp_path / "e.csv")])
    assert code == EXIT_UNSTABLE
    assert "t =" in report.read_text()
    assert not (tmp_path / "e.csv").exists()


def test_strict_refuses_failing_assumptions(tmp_path):
    cfg = json.loads((CONFIGS / "kernel_too_strong.json").read_text())
    csv = tmp_path / "e.csv"
    code = main(["simulate", "--strict", "--config", write_config(tmp_path, cfg), "--csv", str(csv)])
    assert code == EXIT_ASSUMPTIONS
    assert not csv.exists()


def test_verify_short_standard_passes(tmp_path):
    report = tmp_path / "report.txt"
    code = main(["verify", "--config", write_config(tmp_path, standard_config()),
                 "--out", str(tmp_path), "--report", str(report)])
    assert code == EXIT_OK
    text = report.read_text()
    assert "overall: PASS" in text and "dominator bound" in text


def test_verify_conservative_control_fails_with_note(tmp_path, capsys):
    code = main(["verify", "--config", str(CONFIGS / "conservation_control.json"),
                 "--out", str(tmp_path)])
    assert code == EXIT_ASSUMPTIONS
    out = capsys.readouterr().out
    assert "conserved" in out and "overall: FAIL" in out


def test_verify_memoryless_decay_passes(tmp_path):
    assert main(["verify", "--config", str(CONFIGS / "memoryless_decay.json"),
                 "--out", str(tmp_path)]) == EXIT_OK


def test_verify_failing_verdict_exits_4(tmp_path):
    # too short for the ladder sups to settle
    cfg = standard_config(kernel={"family": "polynomial", "a": 0.1, "p": 2.0}, alpha0=0.25,
                          time={"T": 1.0, "dt": 0.01})
    code = main(["verify", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == EXIT_VERDICT


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mgtlab", "check", "--config",
                           str(CONFIGS / "kernel_too_strong.json")], capture_output=True, text=True)
    assert proc.returncode == EXIT_ASSUMPTIONS
