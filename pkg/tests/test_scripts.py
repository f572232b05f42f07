"""The shipped experiment scripts stay runnable and their configs valid."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from groupmultiness import SweepConfig

REPO = Path(__file__).resolve().parents[1]
SCRIPTS = sorted((REPO / "scripts").glob("*.py"))
CONFIGS = sorted((REPO / "scripts" / "configs").glob("*.json"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_config_parses_and_is_sampleable(path):
    cfg = SweepConfig.from_json(json.loads(path.read_text()))
    for point in cfg.points():
        omega = point.angles.omega(point.K, point.M)
        assert np.linalg.eigvalsh(omega).min() > 0, f"{path.stem} at {point.value}"


@pytest.mark.parametrize("path", SCRIPTS, ids=lambda p: p.stem)
def test_script_help_runs(path):
    proc = subprocess.run(
        [sys.executable, str(path), "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert "usage" in proc.stdout.lower()


def test_expected_scripts_present():
    names = {p.name for p in SCRIPTS}
    assert {"run_sweeps.py", "demo_two_group_study.py"} <= names
    assert len(CONFIGS) >= 4
