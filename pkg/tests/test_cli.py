import shutil
from pathlib import Path

import numpy as np
import pytest

from mflab.cli import main
from mflab.config import ConfigError, parse_config, sweep_cells
from mflab.params import read_ensemble_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """
[data]
law = uniform_sphere
dim = 2
labels = binary
lambda = halfspace:0.8,0.2
seed = 0

[loss]
kind = softplus

[init]
m = 32
seed = 0

[flow]
dt = 0.1
T = 1
batch_size = 64
eval_size = 128
record_every = 2

[probe]
grid_size = 32
"""


def write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text + f"\n[output]\ndirectory = {tmp_path / 'out'}\n")
    return path


def test_parse_valid_config():
    cfg = parse_config(BASE)
    assert cfg.m == 32 and cfg.flow.dt == 0.1 and cfg.loss.kind == "softplus"
    assert cfg.model.label_model.probability(np.array([[1.0, 0.0]]))[0] == 0.8


@pytest.mark.parametrize("bad, line", [
    (BASE.replace("law = uniform_sphere", "law = torus"), 3),
    (BASE.replace("m = 32", "m = lots"), 13),
    (BASE.replace("kind = softplus", "kind = hinge"), 10),
    (BASE.replace("dt = 0.1", "dt = 5"), 17),
])
def test_errors_are_line_anchored(bad, line):
    with pytest.raises(ConfigError) as info:
        parse_config(bad, "x.ini")
    assert info.value.line == line
    assert str(info.value).startswith(f"x.ini:{line}:")


def test_missing_section():
    with pytest.raises(ConfigError, match="missing section"):
        parse_config("[data]\nlaw = gaussian\ndim = 2\nlabels = binary\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(BASE + "\n[extras]\nx = 1\n")


def test_power_loss_requires_bounded_data():
    text = (BASE.replace("law = uniform_sphere", "law = gaussian")
            .replace("labels = binary", "labels = regression")
            .replace("kind = softplus", "kind = power\np = 3"))
    with pytest.raises(ConfigError, match="bounded data"):
        parse_config(text)


def test_softplus_requires_binary_labels():
    with pytest.raises(ConfigError, match="binary labels"):
        parse_config(BASE.replace("labels = binary", "labels = regression"))


def test_sweep_cells():
    cfg = parse_config(BASE + "\n[sweep]\nflow.dt = 0.1, 0.05\ninit.m = 8, 16, 32\n")
    cells = sweep_cells(cfg.sweep)
    assert len(cells) == 6 and cells[0] == {"flow.dt": "0.1", "init.m": "8"}


def test_run_writes_outputs(tmp_path):
    assert main(["run", str(write(tmp_path, BASE))]) == 0
    out = tmp_path / "out"
    for name in ("trajectory.csv", "report.csv", "verdict.txt", "final_ensemble.csv"):
        assert (out / name).exists()
    assert (out / "verdict.txt").read_text().startswith("verdict=")
    assert read_ensemble_csv(out / "final_ensemble.csv").m == 32


def test_env_overrides_output(tmp_path, monkeypatch):
    monkeypatch.setenv("MFLAB_OUT", str(tmp_path / "env"))
    assert main(["run", str(write(tmp_path, BASE))]) == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["run", str(CONFIGS / "power_gaussian.ini")]) == 1
    assert "bounded data" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.ini")]) == 1


def test_nonfinite_exit_code(tmp_path):
    text = BASE.replace("kind = softplus", "kind = softplus").replace("dt = 0.1", "dt = 1e6\nT = 1e7")
    text = text.replace("T = 1\n", "")
    assert main(["--perturb-gradient", "1e3", "run", str(write(tmp_path, text))]) == 2
    assert (tmp_path / "out" / "nonfinite_dump.csv").exists()


def test_check_and_perturbation(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    assert main(["check", str(cfg)]) == 0
    assert main(["--perturb-gradient", "1e-3", "check", str(cfg)]) == 3
    out = capsys.readouterr().out
    assert "FAIL euler_identity" in out and "FAIL dN_dt_identity" in out


def test_frozen_config_grows(tmp_path):
    text = BASE.replace("T = 1", "T = 20\nfreeze_field = 0").replace("record_every = 2", "record_every = 20")
    assert main(["run", str(write(tmp_path, text))]) == 0
    assert (tmp_path / "out" / "verdict.txt").read_text() == "verdict=growing-moments\n"


def test_admissible_and_sard(tmp_path, capsys):
    shutil.copy(CONFIGS / "empirical.ini", tmp_path / "emp.ini")
    text = (tmp_path / "emp.ini").read_text().replace("out/empirical", str(tmp_path / "adm"))
    (tmp_path / "emp.ini").write_text(text)
    assert main(["admissible", "--pairs", "16", str(tmp_path / "emp.ini")]) == 0
    assert "verdict=fail" in capsys.readouterr().out
    assert (tmp_path / "adm" / "admissible.csv").read_text().startswith("delta,ratio_max")
    assert main(["sard", str(write(tmp_path, BASE))]) == 0
    assert (tmp_path / "out" / "sard.csv").exists()


def test_sweep_and_seed_override(tmp_path):
    cfg = write(tmp_path, BASE + "\n[sweep]\ninit.m = 8, 16\n")
    assert main(["--seed-override", "5", "sweep", str(cfg)]) == 0
    cells = (tmp_path / "out" / "cells.csv").read_text().splitlines()
    assert len(cells) == 3
    assert read_ensemble_csv(tmp_path / "out" / "cell_001" / "final_ensemble.csv").m == 16


def test_threads_flag_keeps_outputs_identical(tmp_path):
    outputs = []
    for threads in ("1", "4"):
        cfg = tmp_path / f"c{threads}.ini"
        cfg.write_text(BASE + f"\n[output]\ndirectory = {tmp_path / threads}\n")
        assert main(["--threads", threads, "run", str(cfg)]) == 0
        outputs.append((tmp_path / threads / "trajectory.csv").read_bytes())
    assert outputs[0] == outputs[1]


@pytest.mark.parametrize("name", ["default.ini", "frozen.ini", "empirical.ini", "sweep.ini"])
def test_shipped_configs_parse(name):
    from mflab.config import load_config
    load_config(CONFIGS / name)
