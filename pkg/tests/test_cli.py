import os
import subprocess
import sys

import numpy as np
import pytest

from gradtopo import export
from gradtopo.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main

TINY = ["--set", "domain.nx=8", "--set", "domain.ny=4",
        "--set", "optimizer.max_iter=3", "--set", "output.log_every=0"]


def write_cfg(tmp_path, body=""):
    path = tmp_path / "case.cfg"
    path.write_text("[domain]\nnx = 8\nny = 4\n" + body)
    return str(path)


def test_validate_ok(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["validate", "--config", cfg]) == EXIT_OK
    assert "config ok" in capsys.readouterr().out


def test_validate_dump_round_trips(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["validate", "--config", cfg, "--dump"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[domain]" in out and "nx = 8" in out


def test_validate_bad_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[material]\npoisson = 0.9\n")
    assert main(["validate", "--config", cfg]) == EXIT_ERROR
    captured = capsys.readouterr()
    assert "poisson" in captured.out + captured.err


def test_missing_config_is_an_error(capsys):
    assert main(["run", "--config", "/no/such/file.cfg"]) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


def test_run_not_converged_exit_code(tmp_path, capsys):
    out = str(tmp_path / "out")
    code = main(["run", "--builtin", *TINY, "--out", out])
    assert code == EXIT_NOT_CONVERGED
    stdout = capsys.readouterr().out
    assert "converged=no" in stdout
    assert "iterations=3" in stdout
    for part in ("compliance=", "m_chi=", "objective=", "max_von_mises="):
        assert part in stdout
    for name in ("history.csv", "fields.vtk", "fields.npz"):
        assert os.path.exists(os.path.join(out, name))


def test_run_converged_exit_code(tmp_path, capsys):
    out = str(tmp_path / "out")
    code = main(["run", "--builtin", *TINY, "--set", "optimizer.tol=1e9",
                 "--out", out])
    assert code == EXIT_OK
    assert "converged=yes" in capsys.readouterr().out


def test_identical_runs_identical_csv(tmp_path):
    o1, o2 = str(tmp_path / "a"), str(tmp_path / "b")
    main(["run", "--builtin", *TINY, "--out", o1])
    main(["run", "--builtin", *TINY, "--out", o2])
    b1 = open(os.path.join(o1, "history.csv"), "rb").read()
    b2 = open(os.path.join(o2, "history.csv"), "rb").read()
    assert b1 == b2


def test_export_stl_from_snapshot(tmp_path, capsys):
    out = str(tmp_path / "run")
    main(["run", "--builtin", *TINY, "--out", out])
    stl_dir = str(tmp_path / "stl")
    code = main(["export-stl", "--snapshot", os.path.join(out, "fields.npz"),
                 *TINY, "--out", stl_dir, "--threshold", "0.5", "--height", "4"])
    assert code == EXIT_OK
    written = [l.split()[-1] for l in capsys.readouterr().out.splitlines()
               if l.startswith("wrote ")]
    assert written
    for path in written:
        tris = export.read_stl(path)
        counts = export.stl_edge_use_counts(tris)
        assert all(c == 2 for c in counts.values())


def test_export_stl_whole_structure(tmp_path, capsys):
    out = str(tmp_path / "run")
    main(["run", "--builtin", *TINY, "--out", out])
    stl_dir = str(tmp_path / "stl")
    code = main(["export-stl", "--snapshot", os.path.join(out, "fields.npz"),
                 *TINY, "--out", stl_dir, "--threshold", "0", "--height", "2"])
    assert code == EXIT_OK
    assert os.path.exists(os.path.join(stl_dir, "above.stl"))
    assert not os.path.exists(os.path.join(stl_dir, "below.stl"))


def test_export_stl_mesh_mismatch(tmp_path, capsys):
    out = str(tmp_path / "run")
    main(["run", "--builtin", *TINY, "--out", out])
    code = main(["export-stl", "--snapshot", os.path.join(out, "fields.npz"),
                 "--set", "domain.nx=5", "--set", "domain.ny=5",
                 "--out", str(tmp_path / "stl")])
    assert code == EXIT_ERROR
    assert "mesh" in capsys.readouterr().err


def test_export_stl_bad_height(tmp_path, capsys):
    out = str(tmp_path / "run")
    main(["run", "--builtin", *TINY, "--out", out])
    code = main(["export-stl", "--snapshot", os.path.join(out, "fields.npz"),
                 *TINY, "--out", str(tmp_path / "stl"), "--height", "-1"])
    assert code == EXIT_ERROR


def test_sweep_table(tmp_path, capsys):
    out = str(tmp_path / "sweep")
    table = str(tmp_path / "table.csv")
    code = main(["sweep", "optimizer.kappa2=40,4000", "--reference-beta1",
                 *TINY, "--out", out, "--table", table])
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert "variant" in stdout and "compliance" in stdout
    rows = open(table).read().splitlines()
    assert rows[0] == "variant,compliance,m_chi,convergence"
    assert len(rows) == 4   # header + 2 sweep values + beta=1 reference


def test_sweep_bad_spec(capsys):
    assert main(["sweep", "kappa2"]) == EXIT_ERROR
    assert "sweep spec" in capsys.readouterr().err


def test_console_script_installed(tmp_path):
    # end-to-end through the installed entry point
    proc = subprocess.run([sys.executable, "-m", "gradtopo.cli", "validate",
                           "--config", write_cfg(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "config ok" in proc.stdout
