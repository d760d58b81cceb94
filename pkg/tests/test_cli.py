import csv
import json
from pathlib import Path

import pytest

from parfluor import cli


TINY_GRID = [
    "--set", "grid.n_t=8", "--set", "grid.n_x=8", "--set", "grid.n_y=8",
    "--set", "grid.n_z=8",
]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfigHandling:
    def test_malformed_json_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = cli.main(["phasematch", "--config", str(bad),
                         "--out", str(tmp_path / "out")])
        assert code == 2
        assert "bad.json" in capsys.readouterr().err

    def test_unknown_key_named_in_diagnostic(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"crystal": {"theta_degrees": 31.3}}))
        code = cli.main(["phasematch", "--config", str(cfg),
                         "--out", str(tmp_path / "out")])
        assert code == 2
        assert "crystal.theta_degrees" in capsys.readouterr().err

    def test_invalid_value_exits_2(self, tmp_path, capsys):
        code = cli.main(["phasematch", "--set", "crystal.theta_deg=120",
                         "--out", str(tmp_path / "out")])
        assert code == 2
        assert "crystal" in capsys.readouterr().err

    def test_out_of_window_exits_3(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = cli.main(["phasematch", "--set", "phasematch.lambda_min_nm=100",
                         "--out", str(out)])
        assert code == 3
        assert "OutOfDispersionWindow" in capsys.readouterr().err
        assert not (out / "phasematch.csv").exists()

    def test_env_var_data_dir(self, tmp_path, monkeypatch):
        material = {
            "name": "BBO-local",
            "sellmeier_o": {"b0": 2.7405, "b1": 0.0184, "c1": 0.0179, "b2": 0.0155},
            "sellmeier_e": {"b0": 2.3730, "b1": 0.0128, "c1": 0.0156, "b2": 0.0044},
            "window_nm": [180.0, 2600.0],
        }
        (tmp_path / "mybbo.json").write_text(json.dumps(material))
        monkeypatch.setenv(cli.DATA_DIR_ENV, str(tmp_path))
        out = tmp_path / "out"
        code = cli.main(["phasematch", "--set", "crystal.material=mybbo",
                         "--set", "phasematch.n_points=5", "--out", str(out)])
        assert code == 0


class TestPhasematchCommand:
    def test_default_29deg_curve_touches_axis_near_800(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["phasematch", "--set", "crystal.theta_deg=29.0",
                         "--set", "phasematch.n_points=201", "--out", str(out)])
        assert code == 0
        rows = read_csv(out / "phasematch.csv")
        assert len(rows) == 201
        near = [r for r in rows if r["alpha_ext_deg"]
                and abs(float(r["lambda_nm"]) - 800) < 50
                and float(r["alpha_ext_deg"]) < 0.6]
        assert near

    def test_manifest_written(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["phasematch", "--set", "phasematch.n_points=5",
                         "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        for key in ("command", "version", "config", "config_sha256", "seed",
                    "wall_time_s", "outputs"):
            assert key in manifest
        assert manifest["outputs"] == ["phasematch.csv"]


class TestPertFluxCommand:
    def test_closed_form_and_gaussianized_agree(self, tmp_path):
        args = ["pert-flux", "--set", "pert_flux.lambda_min_nm=650",
                "--set", "pert_flux.lambda_max_nm=950",
                "--set", "pert_flux.n_points=7"]
        out_cf = tmp_path / "cf"
        out_gs = tmp_path / "gs"
        assert cli.main(args + ["--method", "closed_form", "--out", str(out_cf)]) == 0
        assert cli.main(args + ["--method", "gaussianized", "--out", str(out_gs)]) == 0
        rows_cf = read_csv(out_cf / "pert_flux_closed_form.csv")
        rows_gs = read_csv(out_gs / "pert_flux_gaussianized.csv")
        for a, b in zip(rows_cf, rows_gs):
            if a["flux"]:
                assert abs(float(a["flux"]) / float(b["flux"]) - 1) < 0.01

    def test_flux_nonnegative(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["pert-flux", "--set", "pert_flux.n_points=15",
                         "--out", str(out)]) == 0
        for row in read_csv(out / "pert_flux_closed_form.csv"):
            if row["flux"]:
                assert float(row["flux"]) >= 0


class TestWignerCommand:
    def test_same_seed_byte_identical_csv(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = cli.main(["wigner", *TINY_GRID, "--realizations", "2",
                             "--seed", "31415",
                             "--set", "wigner.lambda_bins=6",
                             "--set", "wigner.alpha_bins=4",
                             "--out", str(out)])
            assert code == 0
            outs.append((out / "wigner.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_single_realization_marks_stderr_unavailable(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["wigner", *TINY_GRID, "--realizations", "1",
                         "--set", "wigner.lambda_bins=6",
                         "--set", "wigner.alpha_bins=4", "--out", str(out)])
        assert code == 0
        for row in read_csv(out / "wigner.csv"):
            assert row["stderr"] == ""

    def test_outputs_and_manifest(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["wigner", *TINY_GRID, "--realizations", "2",
                         "--set", "wigner.lambda_bins=6",
                         "--set", "wigner.alpha_bins=4",
                         "--set", "grid.dtype=\"complex64\"",
                         "--out", str(out)])
        assert code == 0
        assert (out / "wigner.pgm").read_bytes().startswith(b"P5\n6 4\n255\n")
        manifest = json.loads((out / "manifest.json").read_text())
        assert "total_photons" in manifest["run"]
        assert "pgm_flux_at_255" in manifest


class TestCalibrateCommand:
    def test_trace_recorded(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["calibrate", *TINY_GRID, "--realizations", "2",
                         "--target-photons", "500", "--out", str(out)])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        cal = manifest["calibration"]
        assert abs(cal["total_photons"] - 500) <= 0.2 * 500
        assert len(cal["trace"]) == cal["n_probes"]

    def test_requires_target(self, tmp_path):
        assert cli.main(["calibrate", *TINY_GRID,
                         "--out", str(tmp_path / "o")]) == 2


class TestSweepCommand:
    def test_full_matrix_structure(self, tmp_path):
        out = tmp_path / "sweep"
        code = cli.main(["sweep", *TINY_GRID, "--realizations", "1",
                         "--set", "wigner.lambda_bins=4",
                         "--set", "wigner.alpha_bins=3",
                         "--out", str(out)])
        assert code == 0
        index = json.loads((out / "index.json").read_text())
        assert len(index["cells"]) == 12
        subdirs = [d for d in out.iterdir() if d.is_dir()]
        assert len(subdirs) == 12
        for cell in index["cells"]:
            assert cell["exit_code"] == 0
            assert (out / cell["dir"] / "wigner.csv").exists()

    def test_empty_sweep_exits_2(self, tmp_path):
        assert cli.main(["sweep", "--set", "sweep.cells=[]",
                         "--out", str(tmp_path / "s")]) == 2

    def test_failing_cell_isolated(self, tmp_path):
        out = tmp_path / "sweep"
        cells = "[[29.0,60.0,80.0],[120.0,60.0,80.0],[35.0,60.0,80.0]]"
        code = cli.main(["sweep", *TINY_GRID, "--realizations", "1",
                         "--set", f"sweep.cells={cells}",
                         "--set", "wigner.lambda_bins=4",
                         "--set", "wigner.alpha_bins=3",
                         "--out", str(out)])
        assert code == 1
        index = json.loads((out / "index.json").read_text())
        codes = {c["dir"]: c["exit_code"] for c in index["cells"]}
        assert sum(1 for v in codes.values() if v == 0) == 2
        assert sum(1 for v in codes.values() if v != 0) == 1

    def test_parallel_jobs(self, tmp_path):
        out = tmp_path / "sweep"
        cells = "[[29.0,60.0,80.0],[31.3,60.0,80.0]]"
        code = cli.main(["sweep", *TINY_GRID, "--realizations", "1", "--jobs", "2",
                         "--set", f"sweep.cells={cells}",
                         "--set", "wigner.lambda_bins=4",
                         "--set", "wigner.alpha_bins=3",
                         "--out", str(out)])
        assert code == 0
        assert len(json.loads((out / "index.json").read_text())["cells"]) == 2
