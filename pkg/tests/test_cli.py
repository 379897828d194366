import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from nullgenus.cli import main
from nullgenus.export import report_schema


@pytest.fixture(scope="module")
def sphere_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sphere")
    code = main(["run", "--surface", "sphere", "--target", "all", "--out", str(out)])
    return code, out


def test_full_sphere_run_passes(sphere_run):
    code, out = sphere_run
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "PASS" and report["failed_stage"] is None
    jsonschema.validate(report, report_schema())
    for t in ("C2", "R3", "L3"):
        solve = report["targets"][t]["solve"]
        assert solve["c_used"] <= solve["requested_c"]
        assert report["targets"][t]["mesh"]["boundary_components"] == 2


def test_artifact_names_embed_backend_target_and_c(sphere_run):
    _, out = sphere_run
    names = {p.name for p in out.iterdir()}
    for expected in ("sphere_P.csv", "sphere_divisor.csv", "sphere_C2_c0.02.csv", "sphere_R3_c0.02.obj",
                     "sphere_L3_c0.02.obj", "sphere_L3_c0.02.json", "sphere_C2_c0.02_contours.svg",
                     "sphere_R3_c0.02_surface.png", "sphere_C2_c0.02_newton.png", "timings.json"):
        assert expected in names


def test_obj_vertex_count_matches_mesh(sphere_run):
    _, out = sphere_run
    report = json.loads((out / "report.json").read_text())
    for t in ("R3", "L3"):
        lines = (out / f"sphere_{t}_c0.02.obj").read_text().splitlines()
        nv = sum(1 for ln in lines if ln.startswith("v "))
        assert nv == report["targets"][t]["mesh"]["vertices"]
        assert sum(1 for ln in lines if ln.startswith("f ")) == report["targets"][t]["mesh"]["triangles"]


def test_c2_csv_has_one_row_per_vertex(sphere_run):
    _, out = sphere_run
    report = json.loads((out / "report.json").read_text())
    with open(out / "sphere_C2_c0.02.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == report["targets"]["C2"]["mesh"]["vertices"]
    assert rows[0] == ["vertex", "z_re", "z_im", "X1_re", "X1_im", "X2_re", "X2_im"]
    for row in rows[1:]:
        [float(v) for v in row[1:]]


def test_rerun_gives_identical_report(sphere_run):
    _, out = sphere_run
    before = (out / "report.json").read_bytes()
    assert main(["run", "--surface", "sphere", "--target", "all", "--out", str(out)]) == 0
    assert (out / "report.json").read_bytes() == before


@pytest.mark.parametrize("command", ["periods", "jacobian", "solve", "mesh", "certify"])
def test_stage_commands(command, tmp_path):
    assert main([command, "--surface", "sphere", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["mode"] == command
    jsonschema.validate(report, report_schema())
    assert (tmp_path / "sphere_P.csv").exists()


def test_validation_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("tolerances:\n  residual: -1.0\n")
    assert main(["periods", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "residual" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("surface: sphere\ntolerances:\n  residual: 1.0e-30\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["status"] == "FAIL" and report["failed_stage"]


def test_unwritable_output_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["periods", "--surface", "sphere", "--out", str(blocker / "sub")]) == 4


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nullgenus.cli", "periods", "--surface", "sphere",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "PASS" in proc.stdout


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for name in ("run", "periods", "jacobian", "solve", "mesh", "certify"):
        assert name in text


def test_base_point_hint_from_config(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("surface: sphere\ndisk:\n  name: z-1\n  z0: [0.1, 0.0]\n")
    assert main(["periods", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["config"]["disk"]["z0"] == [0.1, 0.0]
