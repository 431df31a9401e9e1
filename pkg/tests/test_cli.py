import csv
import json
import shutil
import subprocess

import pytest

from pceocp import __version__
from pceocp.cli import EXIT_BUILD, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVE, main
from pceocp.config import bundled_config


def header_of(path):
    return path.read_text().splitlines()[0]


def edited_config(tmp_path, name, edit):
    d = json.loads(bundled_config(name).read_text())
    edit(d)
    p = tmp_path / f"{name}_edited.json"
    p.write_text(json.dumps(d))
    return p


def test_solve_reactor(tmp_path, capsys):
    assert main(["solve", "--config", "reactor", "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "optimal"
    assert summary["variables"] == 8056
    assert summary["header"].startswith(f"pceocp {__version__} config reactor sha256 ")
    assert summary["header"].endswith(" seed -")
    rows = list(csv.DictReader((tmp_path / "coefficients.csv").read_text().splitlines()[1:]))
    assert {r["variable"] for r in rows} == {"x", "u"}
    assert "optimal" in capsys.readouterr().out


def test_pdf_writes_one_file_per_time(tmp_path):
    assert main(["pdf", "--config", "reactor", "--out", str(tmp_path), "--seed", "3"]) == EXIT_OK
    files = sorted(p.name for p in tmp_path.glob("pdf_*.csv"))
    assert files == sorted(f"pdf_x0_k{k}.csv" for k in (0, 10, 20, 30, 40, 50))
    assert header_of(tmp_path / "pdf_x0_k10.csv").endswith("seed 3")


def test_pdf_selection_out_of_range(tmp_path, capsys):
    assert main(["pdf", "--config", "reactor", "--out", str(tmp_path), "--component", "5"]) == EXIT_CONFIG
    assert main(["pdf", "--config", "reactor", "--out", str(tmp_path), "--times", "60"]) == EXIT_CONFIG
    assert "outside" in capsys.readouterr().err


def test_sample(tmp_path):
    assert main(["sample", "--config", "non_iid", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "samples.csv").read_text().splitlines()
    assert lines[0].startswith("# pceocp")
    assert lines[1].startswith("sample,step,x0")


def test_mpc_small_run(tmp_path):
    args = ["mpc", "--config", "tank", "--out", str(tmp_path), "--paths", "2", "--steps", "3", "--seed", "9"]
    assert main(args) == EXIT_OK
    summary = json.loads((tmp_path / "ensemble.json").read_text())
    assert (summary["n_paths"], summary["T"], summary["solves"], summary["failed_paths"]) == (2, 3, 6, 0)
    assert header_of(tmp_path / "traces.csv").endswith("seed 9")
    assert (tmp_path / "ensemble_steps.csv").exists()


def test_mpc_failure_exit_code(tmp_path):
    def shrink(d):
        d["constraints"]["ubx"]["bound"] = [-1.95, -1.95, "inf", "inf"]
        d["simulation"].update(n_paths=1, T=2)

    p = edited_config(tmp_path, "tank", shrink)
    assert main(["mpc", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_SOLVE
    summary = json.loads((tmp_path / "o" / "ensemble.json").read_text())
    assert summary["failed_paths"] == 1 and summary["errors"]


def test_infeasible_solve_exit_code(tmp_path):
    p = edited_config(tmp_path, "reactor", lambda d: d["constraints"]["ubx"].update(bound=["inf", -5.0]))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_SOLVE
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["status"] == "infeasible"


def test_invalid_config_exit_code(tmp_path, capsys):
    p = edited_config(tmp_path, "reactor", lambda d: d["weights"].pop("R"))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "missing R" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_IO


def test_unwritable_output_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["solve", "--config", "reactor", "--out", str(blocker / "sub")]) == EXIT_IO


def test_bad_worker_count(tmp_path):
    assert main(["mpc", "--config", "tank", "--out", str(tmp_path), "--workers", "0"]) == EXIT_CONFIG


def test_exit_codes_are_distinct():
    assert len({EXIT_OK, EXIT_CONFIG, EXIT_BUILD, EXIT_SOLVE, EXIT_IO}) == 5


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["optimize", "--config", "reactor", "--out", "."])
    assert exc.value.code == 2


def test_console_script(tmp_path):
    exe = shutil.which("pceocp")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "--version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == f"pceocp {__version__}"
    r = subprocess.run([exe, "solve", "--config", "tank", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads((tmp_path / "summary.json").read_text())["variables"] == 820
