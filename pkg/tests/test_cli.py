import csv
import json
import subprocess
import sys

import pytest

from spaceform_lab.cli import main
from spaceform_lab.hypersurface import write_polyline
from spaceform_lab.mesh import build_domain, write_mesh
from spaceform_lab.scenarios import load_scenario


@pytest.fixture(autouse=True)
def no_env_output(monkeypatch):
    monkeypatch.delenv("SPACEFORM_LAB_OUTPUT", raising=False)


def run(tmp_path, *args):
    return main([*args, "--output-dir", str(tmp_path)])


def report(tmp_path, label, command):
    return json.loads((tmp_path / label / f"{command}.json").read_text())


def test_geometry_verify_passes_and_is_deterministic(tmp_path):
    assert run(tmp_path / "a", "geometry-verify", "--samples", "100") == 0
    assert run(tmp_path / "b", "geometry-verify", "--samples", "100") == 0
    a = report(tmp_path / "a", "default", "geometry-verify")
    b = report(tmp_path / "b", "default", "geometry-verify")
    # only the recorded output directory differs
    assert a.pop("config")["output_dir"] != b.pop("config")["output_dir"]
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_geometry_verify_rejects_bad_support(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"support": {"kind": "horosphere", "kappa": 2.0}}))
    assert run(tmp_path, "geometry-verify", "--config", str(cfg)) == 2


def test_unknown_scenario_and_bad_flags(tmp_path):
    assert run(tmp_path, "solve", "--scenario", "nope") == 2
    assert run(tmp_path, "solve", "--h", "-1") == 2
    assert run(tmp_path, "solve", "--format", "pdf") == 2
    assert main(["frobnicate"]) == 2


def test_solve_writes_outputs(tmp_path):
    code = run(tmp_path, "solve", "--scenario", "appendix_two_horospheres", "--h", "0.1",
               "--refinements", "2", "--format", "json,csv,svg")
    assert code == 0
    rep = report(tmp_path, "appendix_two_horospheres", "solve")
    assert {c["name"] for c in rep["checks"]} == {"maximum_principle", "errL2_decreasing"}
    out = tmp_path / "appendix_two_horospheres"
    assert json.loads((out / "solution.json").read_text())["c_hat"] == pytest.approx(0.5, rel=0.05)
    assert (out / "solution.svg").read_text().startswith("<svg")
    assert (out / "solve_levels.csv").exists()


def test_solve_inflated_kappa_fails(tmp_path):
    assert run(tmp_path, "solve", "--scenario", "horocycle_cap_orthogonal", "--h", "0.1", "--kappa", "10") == 1
    rep = report(tmp_path, "horocycle_cap_orthogonal", "solve")
    assert rep["checks"][0]["name"] == "coercive" and rep["checks"][0]["pass"] is False


def test_solve_from_mesh_file(tmp_path):
    sc = load_scenario("horocycle_cap_orthogonal")
    path = tmp_path / "cap.json"
    write_mesh(build_domain(sc.domain, 0.1), path)
    assert run(tmp_path, "solve", "--mesh", str(path)) == 2  # no support in the file
    assert run(tmp_path, "solve", "--mesh", str(path), "--scenario", sc.id) == 0


def test_spectrum_bounds(tmp_path):
    assert run(tmp_path, "spectrum", "--scenario", "half_ball_geodesic,half_ball_sub", "--h", "0.04") == 0
    rep = report(tmp_path, "half_ball_geodesic", "spectrum")
    assert rep["robin_dirichlet"]["eigenvalues"][0] == pytest.approx(-2.0, rel=0.02)


def test_identities_tilted_cap_fails_with_note(tmp_path):
    assert run(tmp_path, "identities", "--scenario", "horocycle_cap_tilted") == 1
    rep = report(tmp_path, "horocycle_cap_tilted", "identities")
    assert rep["notes"] and "Pohozaev" in rep["notes"][0]


def test_identities_orthogonal_cap_passes(tmp_path):
    assert run(tmp_path, "identities", "--scenario", "horocycle_cap_orthogonal", "--h", "0.04") == 0


def test_hkr_circle_and_polyline(tmp_path):
    assert run(tmp_path, "hkr", "--scenario", "closed_umbilical_circle") == 0
    curve = load_scenario("perturbed_cap").build_curve(200)
    path = tmp_path / "bump.json"
    write_polyline(curve, path)
    assert run(tmp_path, "hkr", "--polyline", str(path), "--h", "0.02") == 0
    rep = report(tmp_path, "bump", "hkr")
    assert rep["hkr"]["gap"] > 0
    assert rep["alexandrov"]["verdict"] == "inconsistent"


def test_convergence_csv_and_plot(tmp_path):
    code = run(tmp_path, "convergence", "--scenario", "appendix_two_horospheres", "--refinements", "3",
               "--format", "json,csv,svg")
    assert code == 0
    out = tmp_path / "appendix_two_horospheres"
    rows = list(csv.reader((out / "convergence.csv").open()))
    assert rows[0] == ["level", "h_max", "errL2", "errH1", "rate"]
    assert len(rows) == 5
    assert "polyline" in (out / "convergence.svg").read_text()


def test_env_var_overrides_output_dir(tmp_path, monkeypatch):
    env_dir = tmp_path / "env"
    monkeypatch.setenv("SPACEFORM_LAB_OUTPUT", str(env_dir))
    assert main(["geometry-verify", "--samples", "20", "--output-dir", str(tmp_path / "flag")]) == 0
    assert (env_dir / "default" / "geometry-verify.json").exists()
    assert not (tmp_path / "flag").exists()


def test_parallel_targets_write_separate_reports(tmp_path):
    code = run(tmp_path, "spectrum", "--scenario", "half_ball_sub", "--scenario", "horocycle_cap_orthogonal",
               "--h", "0.1", "--parallel")
    assert code == 0
    assert (tmp_path / "half_ball_sub" / "spectrum.json").exists()
    assert (tmp_path / "horocycle_cap_orthogonal" / "spectrum.json").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spaceform_lab.cli", "geometry-verify", "--samples", "10",
                           "--output-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "[PASS]" in proc.stdout
