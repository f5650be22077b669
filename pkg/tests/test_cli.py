import csv
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from reskit.cli import THREAD_VARS, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def clean_thread_env(monkeypatch):
    for var in list(THREAD_VARS) + ["RESKIT_THREADS"]:
        monkeypatch.delenv(var, raising=False)


def run(tmp_path, command, config, *extra):
    cfg = config if isinstance(config, (str, Path)) else _write(tmp_path, config)
    return main([command, "--config", str(cfg), "--out", str(tmp_path), *extra])


def _write(tmp_path, cfg):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_levelshift_demo(tmp_path):
    assert run(tmp_path, "levelshift", CONFIGS / "friedrichs_demo.json") == 0
    rows = read_csv(tmp_path / "levelshift.csv")
    assert len(rows) == 1
    row = rows[0]
    lam = complex(float(row[[k for k in row if k.startswith("re")][0]]),
                  float(row[[k for k in row if k.startswith("im")][0]]))
    assert abs(lam - 1j * np.pi) < 1e-6
    assert (tmp_path / "manifest.json").exists()


def test_a1_violation_exits_2(tmp_path, capsys):
    assert run(tmp_path, "levelshift", CONFIGS / "a1_violation.json") == 2
    assert "PₑIPₑ ≠ 0" in capsys.readouterr().err


def test_missing_config_exits_1(tmp_path, capsys):
    assert run(tmp_path, "levelshift", tmp_path / "nope.json") == 1
    assert "no such file" in capsys.readouterr().err


def test_command_without_config_exits_1(tmp_path):
    assert main(["expand", "--out", str(tmp_path)]) == 1


def test_malformed_config_exits_1(tmp_path):
    assert run(tmp_path, "levelshift", {"model": {"builder": "nothing"}}) == 1
    assert run(tmp_path, "expand", {"model": {"builder": "friedrichs"}}) == 1


def test_unconverged_limit_exits_3(tmp_path):
    cfg = json.loads((CONFIGS / "friedrichs_demo.json").read_text())
    cfg["limit"] = {"eps_max": 0.2, "count": 4, "rtol": 1e-15}
    assert run(tmp_path, "levelshift", cfg) == 3


def test_small_coupling_guard(tmp_path):
    cfg = json.loads((CONFIGS / "friedrichs_demo.json").read_text())
    cfg["model"]["delta"] = 0.3
    cfg["times"] = {"start": 0.5, "stop": 20.0, "num": 40}
    assert run(tmp_path, "expand", cfg) == 2
    assert run(tmp_path, "expand", cfg, "--force") == 0


def test_expand_writes_fit_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["expand", "--config", str(CONFIGS / "quartic_expand.json"), "--out", str(out)]) == 0
    assert (a / "expansion.csv").read_bytes() == (b / "expansion.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["remainder_fit"]["exponent"] <= -0.8
    assert "tolerances" in manifest


def test_resonances_and_contour(tmp_path):
    assert run(tmp_path / "r", "resonances", CONFIGS / "friedrichs_demo.json") == 0
    assert (tmp_path / "r" / "resonances.csv").exists()
    assert run(tmp_path / "c", "contour", CONFIGS / "two_cluster_contour.json") == 0
    assert len(read_csv(tmp_path / "c" / "contour.csv")) > 0


def test_spinboson_demo(tmp_path):
    assert run(tmp_path, "spinboson", CONFIGS / "spinboson_ohmic.json") == 0
    tau = json.loads((tmp_path / "tau.json").read_text())
    assert tau["tau_inv"] > 0 and "x_definition" in tau
    rows = read_csv(tmp_path / "dynamics.csv")
    assert len(rows) > 10


def test_spinboson_zero_detuning(tmp_path):
    assert run(tmp_path, "spinboson", CONFIGS / "spinboson_zero_detuning.json") == 0
    rows = read_csv(tmp_path / "dynamics.csv")
    eq = {round(float(r[[k for k in r if k.startswith("eq") and "re" in k][0]]), 12) for r in rows}
    assert eq == {0.5}


def test_spinboson_infrared_exits_4(tmp_path, capsys):
    assert run(tmp_path, "spinboson", CONFIGS / "spinboson_infrared.json") == 4
    assert "InfraredDivergent" in capsys.readouterr().err


def test_validate_partial_selection(tmp_path, capsys):
    assert run(tmp_path, "validate", CONFIGS / "validate_quick.json") == 0
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["passed"] and [c["number"] for c in report["criteria"]] == [1, 6, 8]
    assert capsys.readouterr().out.count("PASS") == 3


def test_validate_injected_perturbation_exits_5(tmp_path):
    assert run(tmp_path, "validate", {"criteria": [8], "perturb": 0.01}) == 5
    assert not json.loads((tmp_path / "validate.json").read_text())["passed"]


def test_validate_rejects_unknown_criteria(tmp_path):
    assert run(tmp_path, "validate", {"criteria": [9]}) == 1


def test_threads_flag_and_env_fallback(tmp_path, monkeypatch):
    assert run(tmp_path, "validate", {"criteria": [6]}, "--threads", "2") == 0
    assert all(os.environ[v] == "2" for v in THREAD_VARS)
    for v in THREAD_VARS:
        monkeypatch.delenv(v)
    monkeypatch.setenv("RESKIT_THREADS", "3")
    assert run(tmp_path, "validate", {"criteria": [6]}) == 0
    assert all(os.environ[v] == "3" for v in THREAD_VARS)
    assert run(tmp_path, "validate", {"criteria": [6]}, "--threads", "0") == 1


@pytest.mark.skipif(shutil.which("reskit") is None, reason="console script not installed")
def test_console_script_exit_code(tmp_path):
    proc = subprocess.run(["reskit", "spinboson", "--config", str(CONFIGS / "spinboson_infrared.json"),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "reskit.cli", "levelshift", "--config",
                           str(tmp_path / "missing.json")], capture_output=True, text=True)
    assert proc.returncode == 1
