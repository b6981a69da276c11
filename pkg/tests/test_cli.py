import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from sheethom.cli import EXIT_CONFIG, EXIT_ENZ, EXIT_OK, EXIT_SOLVER, main
from sheethom.config import load_config
from sheethom.effective import analytic_simple, layered_closed_form

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def read_rows(path):
    with open(path) as fh:
        first = fh.readline()
        rows = list(csv.DictReader(fh))
    return first, rows


def cplx(row, name):
    return complex(float(row[f"{name}_re"]), float(row[f"{name}_im"]))


def tensor_from(rows, formula, omega=None):
    out = np.zeros((3, 3), dtype=complex)
    for r in rows:
        if r["formula"] == formula and (omega is None or float(r["omega"]) == omega):
            out[int(r["row"]) - 1] = [cplx(r, f"eps_{j}") for j in (1, 2, 3)]
    return out


def write_config(tmp_path, tree, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(tree))
    return path


def run(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


def test_header_and_columns(tmp_path):
    cfg = CONFIGS / "constant.yaml"
    assert run("cell", cfg, tmp_path) == EXIT_OK
    first, rows = read_rows(tmp_path / "cell_summary.csv")
    assert first.strip() == f"# config_sha256={load_config(cfg).digest}, sheethom 0.1.0"
    assert list(rows[0]) == ["omega", "j", "h_norm", "mean_re", "mean_im", "solver_residual", "weak_residual"]
    assert len(rows) == 3


def test_constant_material_has_no_corrector(tmp_path):
    assert run("cell", CONFIGS / "constant.yaml", tmp_path) == EXIT_OK
    _, rows = read_rows(tmp_path / "cell_summary.csv")
    assert max(float(r["h_norm"]) for r in rows) < 1e-12
    assert max(float(r["weak_residual"]) for r in rows) < 1e-8


def test_two_phase_tensor_matches_laminate_formula(tmp_path):
    assert run("eff", CONFIGS / "two_phase.yaml", tmp_path) == EXIT_OK
    _, rows = read_rows(tmp_path / "eff_tensor.csv")
    profile = lambda t: np.where(t < 0.5, 2 + 0.1j, 4 + 0.1j)
    exact = layered_closed_form(profile, 0.01 + 0.3j, 1.0, breakpoints=[0.5])
    for formula in ("average", "energy"):
        np.testing.assert_allclose(tensor_from(rows, formula), exact, rtol=0, atol=1e-9)
    _, summary = read_rows(tmp_path / "eff_summary.csv")
    assert float(summary[0]["formula_gap"]) <= 10 * float(summary[0]["tol"])
    assert float(summary[0]["coercivity_margin"]) > 0


def test_diagonal_layered_matches_simple_formula(tmp_path):
    cfg = CONFIGS / "diagonal_layered.yaml"
    assert run("eff", cfg, tmp_path) == EXIT_OK
    _, rows = read_rows(tmp_path / "eff_tensor.csv")
    config = load_config(cfg)
    expected = analytic_simple(config.materials(1.0), config.geometry)
    np.testing.assert_allclose(tensor_from(rows, "average"), expected, rtol=0, atol=1e-8)


def test_graph_config_two_frequencies(tmp_path):
    assert run("eff", CONFIGS / "graph.yaml", tmp_path, "--threads", "2") == EXIT_OK
    _, summary = read_rows(tmp_path / "eff_summary.csv")
    assert [float(r["omega"]) for r in summary] == [0.5, 1.0]
    for r in summary:
        assert float(r["formula_gap"]) <= 10 * float(r["tol"])


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("eff", CONFIGS / "graph.yaml", a, "--threads", "2") == EXIT_OK
    assert run("eff", CONFIGS / "graph.yaml", b, "--threads", "1") == EXIT_OK
    for name in ("eff_tensor.csv", "eff_summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_tol_override(tmp_path):
    assert run("eff", CONFIGS / "constant.yaml", tmp_path, "--tol", "1e-6") == EXIT_OK
    _, summary = read_rows(tmp_path / "eff_summary.csv")
    assert float(summary[0]["tol"]) == 1e-6


def test_converge_table(tmp_path):
    tree = yaml.safe_load((CONFIGS / "converge.yaml").read_text())
    tree["finescale"]["d"] = [0.125, 0.0625]
    assert run("converge", write_config(tmp_path, tree), tmp_path) == EXIT_OK
    _, rows = read_rows(tmp_path / "converge.csv")
    errors = [float(r["error"]) for r in rows]
    assert errors[1] < errors[0]
    assert 0.8 < float(rows[1]["observed_order"]) < 1.2
    assert max(float(r["energy_residual"]) for r in rows) < 1e-9


def test_enz_table(tmp_path):
    assert run("enz", CONFIGS / "enz.yaml", tmp_path) == EXIT_OK
    _, summary = read_rows(tmp_path / "enz_summary.csv")
    d0 = float(summary[0]["d0"])
    assert d0 == pytest.approx(0.15, rel=1e-12)
    assert float(summary[0]["d_min_phase_delay"]) == pytest.approx(d0, rel=1e-12)
    _, rows = read_rows(tmp_path / "enz.csv")
    assert any(float(r["factor"]) == 1.0 for r in rows)


def test_check_passes_and_fails(tmp_path):
    assert run("check", CONFIGS / "two_phase.yaml", tmp_path) == EXIT_OK
    bad = write_config(tmp_path, {"omega": 1.0, "material": {"epsilon": {"profile": "sine", "mean": "2+0.05i",
                                                                          "amplitude": "0.1i"}, "sigma": 0}})
    assert run("check", bad, tmp_path) == EXIT_SOLVER
    _, rows = read_rows(tmp_path / "check.csv")
    assert rows[0]["passed"] == "0"


def test_missing_field_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"material": {"epsilon": 2}})
    assert run("cell", cfg, tmp_path) == EXIT_CONFIG
    assert "omega: missing required field" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"omega": 1, "material": {"epsilon": 2, "sigma": 0}, "geometry": {"resolutoin": 8}})
    assert run("cell", cfg, tmp_path) == EXIT_CONFIG
    assert "geometry.resolutoin" in capsys.readouterr().err


def test_lossless_material_exits_3(tmp_path):
    cfg = write_config(tmp_path, {"omega": 1, "material": {"epsilon": 2.0, "sigma": 0}, "geometry": {"resolution": 4}})
    assert run("cell", cfg, tmp_path) == EXIT_SOLVER


def test_outside_enz_regime_exits_4(tmp_path):
    cfg = write_config(tmp_path, {"omega": 1, "enz": {"sigma_sheet": "0.2+0.3i", "eps_host": 2}})
    assert run("enz", cfg, tmp_path) == EXIT_ENZ


def test_bad_flags_exit_2(tmp_path):
    assert run("cell", CONFIGS / "constant.yaml", tmp_path, "--tol", "-1") == EXIT_CONFIG
    assert run("cell", CONFIGS / "constant.yaml", tmp_path, "--threads", "0") == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "sheethom", "check", "--config", str(CONFIGS / "two_phase.yaml"), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "check.csv").exists()


def test_check_applies_floor_to_lossless_sheet(tmp_path):
    # the solver accepts sigma = 0 but the bound report asks for a positive floor
    assert run("check", CONFIGS / "constant.yaml", tmp_path) == EXIT_SOLVER
    assert run("cell", CONFIGS / "constant.yaml", tmp_path) == EXIT_OK
