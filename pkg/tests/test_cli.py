import subprocess
import sys

import numpy as np
import pytest

from semilinear_dpg.adaptivity import ConvergenceRecord
from semilinear_dpg.cli import (
    CSV_COLUMNS,
    EXIT_CONFIG,
    EXIT_NEWTON,
    EXIT_OK,
    RunConfig,
    estimate_rates,
    main,
    read_csv,
    record_row,
)
from semilinear_dpg.mesh2d import read_mesh


def test_rate_estimate_recovers_power_laws():
    recs = [{"N": 4**k, "Res": 3.0 * 4 ** (-k / 2), "err_u_L2": 4.0**-k} for k in range(6)]
    rates = estimate_rates(recs, k=4)
    assert rates.window == 4
    assert rates.slopes["Res"] == pytest.approx(-0.5, abs=1e-12)
    assert rates.slopes["err_u_L2"] == pytest.approx(-1.0, abs=1e-12)
    assert "err_U" not in rates.slopes
    assert "Res" in str(rates)
    with pytest.raises(ValueError):
        estimate_rates(recs[:1])


def test_record_row_blanks_errors_without_exact_solution():
    rec = ConvergenceRecord(0, 8, 33, 3, 0.1, 0.2, 0.3, 0.4, 1.0, 2.0, 3.0, 4.0, 5.0)
    row = record_row(rec, with_errors=False)
    assert row[:4] == ["0", "8", "33", "3"]
    assert row[8:] == [""] * 5
    assert float(record_row(rec, True)[-1]) == 5.0


def test_config_validation():
    for bad in (
        dict(problem="ex3"), dict(mode="graded"), dict(theta=1.0), dict(tol=0.0),
        dict(n0=0), dict(max_elements=0), dict(max_steps=0), dict(rate_window=1),
    ):
        with pytest.raises(ValueError):
            RunConfig(**bad).validate()
    assert RunConfig(problem="ex2").initial_n == 2
    assert RunConfig(n0=5).initial_n == 5


def _run(tmp_path, *args):
    out = tmp_path / "conv.csv"
    code = main(["--out", str(out), *args])
    return code, out


def test_csv_output_and_determinism(tmp_path, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    args = ["--problem", "ex2", "--mode", "adaptive", "--max-steps", "4"]
    code1, out1 = _run(a, *args)
    code2, out2 = _run(b, *args)
    assert code1 == code2 == EXIT_OK
    text = out1.read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert text.splitlines()[0] == (
        "step,N,dofs,newton_iters,res_dual,res_rho,res_gamma,Res,"
        "err_grad_u,err_q,err_r,err_u_L2,err_U"
    )
    assert out1.read_bytes() == out2.read_bytes()
    rows = read_csv(out1)
    assert [r["step"] for r in rows] == [0, 1, 2, 3]
    assert all(r["err_U"] is not None for r in rows)
    assert "rates vs N" in capsys.readouterr().out


def test_field_export_round_trip(tmp_path):
    stem = tmp_path / "fields"
    code, out = _run(tmp_path, "--problem", "ex1", "--max-steps", "2", "--fields", str(stem))
    assert code == EXIT_OK
    mesh = read_mesh(f"{stem}.mesh")
    assert mesh.n_triangles == read_csv(out)[-1]["N"] == 32
    uv = np.loadtxt(f"{stem}.u.txt")
    qr = np.loadtxt(f"{stem}.qr.txt")
    assert uv.shape == (mesh.n_vertices, 3) and qr.shape == (mesh.n_triangles, 2)
    assert np.array_equal(uv[:, :2], mesh.vertices)
    # boundary values are the homogeneous Dirichlet data
    assert np.all(uv[mesh.boundary_vertices, 2] == 0.0)


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# experiment\nproblem = ex1\nmode=uniform\nmax-steps = 3\nn0 = 1\n")
    code, out = _run(tmp_path, "--config", str(cfg), "--max-steps", "2")
    assert code == EXIT_OK
    assert [r["N"] for r in read_csv(out)] == [2, 8]


@pytest.mark.parametrize(
    "args",
    [["--theta", "2"], ["--problem", "ex9"], ["--n0", "0"], ["--config", "/nonexistent/x.cfg"], ["--tol", "abc"]],
)
def test_config_errors_exit_3(tmp_path, args, capsys):
    code, _ = _run(tmp_path, *args)
    assert code == EXIT_CONFIG


def test_bad_config_file_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["--config", str(cfg)]) == EXIT_CONFIG
    cfg.write_text("just words\n")
    assert main(["--config", str(cfg)]) == EXIT_CONFIG


def test_newton_failure_exit_2_keeps_partial_csv(tmp_path):
    code, out = _run(tmp_path, "--problem", "ex1", "--n0", "1", "--tol", "1e-300", "--max-steps", "3")
    assert code == EXIT_NEWTON
    rows = read_csv(out)
    assert len(rows) == 1


def test_module_entry_point(tmp_path):
    out = tmp_path / "c.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "semilinear_dpg", "--problem", "ex1", "--max-steps", "1", "--out", str(out)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert len(read_csv(out)) == 1
