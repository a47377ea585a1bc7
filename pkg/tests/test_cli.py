import json
from pathlib import Path

import pytest

from twistkam.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("command", ["check-genfun", "orbit", "periodic-graph", "conjugate-scan", "normal-form"])
def test_conjugated_commands_succeed(command, tmp_path):
    assert main([command, "--config", str(CONFIGS / "conjugated.ini"), "--out", str(tmp_path)]) == 0


def test_kam_solve_standard_map(tmp_path, capsys):
    assert main(["kam-solve", "--config", str(CONFIGS / "standard_map.ini"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "torus_summary.json").read_text())
    assert summary["residual"] <= 1e-9


def test_verify_theorem_integrable(tmp_path, capsys):
    assert main(["verify-theorem", "--config", str(CONFIGS / "integrable.ini"), "--out", str(tmp_path)]) == 0
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["ok"] and line["replay_identical"]


def test_negative_control_exit_code(tmp_path):
    assert main(["verify-theorem", "--config", str(CONFIGS / "negative.ini"), "--out", str(tmp_path)]) == 1
    assert main(["conjugate-scan", "--config", str(CONFIGS / "negative.ini"), "--out", str(tmp_path)]) == 1


def test_config_error_exit_code(tmp_path):
    assert main(["orbit", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["orbit", "--config", str(CONFIGS / "conjugated.ini"), "--N", "0", "--out", str(tmp_path)]) == 2


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
