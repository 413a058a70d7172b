from pathlib import Path

import pytest

from korteweg_lab.cli import main
from korteweg_lab.config import DEFAULTS, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_validate_shipped_configs(path, capsys):
    assert main(["validate-config", str(path)]) == 0
    assert "ok" in capsys.readouterr().out


def test_missing_config_file(tmp_path, capsys):
    assert main(["validate-config", str(tmp_path / "nope.toml")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_key_and_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\npoints = 64\npoinst = 32\n")
    assert main(["validate-config", str(bad)]) == 2
    assert "poinst" in capsys.readouterr().err
    broken = tmp_path / "broken.toml"
    broken.write_text("[grid]\npoints = 64\n\n[solver\n")
    assert main(["validate-config", str(broken)]) == 2
    assert "line 4" in capsys.readouterr().err


def test_minimal_config_gets_defaults(tmp_path):
    cfg_file = tmp_path / "min.toml"
    cfg_file.write_text("[capillarity]\nkind = \"constant\"\n")
    cfg = parse_config(cfg_file, output_dir=tmp_path / "out")
    assert cfg.grid.points_per_axis == DEFAULTS["grid"]["points"]
    assert cfg.setting == "Set1" and cfg.solver.dt == "auto"
    text = (tmp_path / "out" / "resolved.toml").read_text()
    assert "[solver]" in text and "cfl_dispersive = 0.2" in text


def test_validator_clauses_reach_the_user(tmp_path, capsys):
    cfg_file = CONFIGS / "set2_qhd.toml"
    assert main(["validate-config", str(cfg_file), "capillarity.kind=\"power\"",
                 "capillarity.exponent=-2.0"]) == 2
    assert "kappa kappa''" in capsys.readouterr().err
    ws = CONFIGS / "weak_strong.toml"
    assert main(["validate-config", str(ws), "law.gamma=1.5", "initial.perturb_rho_modes=[[0, 1.0, 0.0]]"]) == 2
    assert "A2 mass mismatch" in capsys.readouterr().err


def test_capillarity_set1_end_to_end(tmp_path, capsys):
    out = tmp_path / "set1"
    code = main(["capillarity", str(CONFIGS / "set1.toml"), "-o", str(out), "--jobs", "1", "--gnuplot"])
    assert code == 0
    assert (out / "rates.csv").read_text().splitlines()[0] == "eps,sup_error,floor_flag"
    assert (out / "fit.csv").exists() and (out / "resolved.toml").exists() and (out / "plot.gp").exists()
    assert "PASS" in capsys.readouterr().out


def test_output_dir_needs_force(tmp_path, capsys):
    out = tmp_path / "sim"
    args = ["simulate", str(CONFIGS / "conservation.toml"), "solver.t_end=0.002", "grid.points=32",
            "-o", str(out), "--jobs", "1"]
    assert main(args) == 0
    assert (out / "overrides.txt").read_text() == "solver.t_end=0.002\ngrid.points=32\n"
    assert (out / "trajectory" / "diagnostics.csv").exists()
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_solver_abort_exit_code(tmp_path, capsys):
    out = tmp_path / "shock"
    code = main(["simulate", str(CONFIGS / "conservation.toml"), "experiment.system=\"Euler\"",
                 "initial.rho_modes=[]", "initial.u_modes=[[1, 0.0, 0.5]]", "solver.t_end=1.0",
                 "solver.snapshot_every=1", "grid.points=64", "-o", str(out), "--jobs", "1"])
    assert code == 3
    assert "aborted" in capsys.readouterr().err
    assert (out / "partial" / "diagnostics.csv").exists()
