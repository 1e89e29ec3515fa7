"""rodctl commands, exit codes and JSON output."""

from __future__ import annotations

import json

import numpy as np
import pytest
from click.testing import CliRunner

from cli.rodctl import EXIT_FAILED, EXIT_INPUT, EXIT_OK, main
from conftest import data_path
from rods.decomposition import TubeField, write_tube_field
from rods.io import load_skeleton


@pytest.fixture
def run():
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)

    return invoke


class TestValidate:
    def test_frame(self, run, tmp_path):
        result = run("--json", "validate", "--skeleton", data_path("frame.json"), "--out", tmp_path)
        assert result.exit_code == EXIT_OK
        report = json.loads(result.stdout)
        assert report["usable"]
        assert report["delta0"] == pytest.approx(0.5)

    def test_tangent_arcs_fail(self, run, tmp_path):
        result = run("--json", "validate", "--skeleton", data_path("tangent_arcs.json"), "--out", tmp_path)
        assert result.exit_code == EXIT_FAILED
        assert not json.loads(result.stdout)["checks"]["non_tangent"]["passed"]

    def test_missing_skeleton(self, run, tmp_path):
        result = run("--json", "validate", "--skeleton", tmp_path / "nope.json", "--out", tmp_path)
        assert result.exit_code == EXIT_INPUT
        payload = json.loads(result.stdout)
        assert payload["success"] is False
        assert "not found" in payload["error"]

    def test_table_output(self, run, tmp_path):
        result = run("validate", "--skeleton", data_path("frame.json"), "--out", tmp_path)
        assert result.exit_code == EXIT_OK
        assert "delta0" in result.stdout
        assert (tmp_path / "validation.json").exists()


class TestSolve:
    def test_cantilever(self, run, tmp_path):
        result = run(
            "--json", "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("cantilever_loads.json"),
            "--out", tmp_path,
            "--h", 0.25,
        )
        assert result.exit_code == EXIT_OK
        payload = json.loads(result.stdout)
        assert payload["metrics"]["tolerances_met"]
        assert payload["metrics"]["extensional_energy"] == pytest.approx(0.4, rel=1e-9)
        assert set(payload["files"]) == {"arc_1.csv", "summary.json", "polyline.txt"}

    def test_repeated_runs_print_identical_results(self, run, tmp_path):
        outputs = []
        for name in ("first", "second"):
            result = run(
                "--json", "solve",
                "--skeleton", data_path("cantilever.json"),
                "--loads", data_path("cantilever_loads.json"),
                "--out", tmp_path / name,
                "--h", 0.25,
            )
            assert result.exit_code == EXIT_OK
            outputs.append(result.stdout)
        assert "wall_time" not in json.loads(outputs[0])["metrics"]
        assert outputs[0] == outputs[1]

    def test_zero_loads(self, run, tmp_path):
        result = run(
            "--json", "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("zero_loads.json"),
            "--out", tmp_path,
        )
        assert result.exit_code == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["energies"] == {"extensional": 0.0, "inextensional": 0.0}

    def test_transverse_extensional_load(self, run, tmp_path):
        args = [
            "--json", "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("cantilever_transverse_ext.json"),
            "--out", tmp_path,
        ]
        rejected = run(*args)
        assert rejected.exit_code == EXIT_FAILED
        assert "OrthogonalityViolated" in json.loads(rejected.stdout)["error"]
        assert run(*args, "--mode", "project").exit_code == EXIT_OK

    def test_material_flags(self, run, tmp_path):
        result = run(
            "--json", "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("cantilever_loads.json"),
            "--out", tmp_path,
            "--lam", 2.0, "--mu", 0.5,
        )
        assert result.exit_code == EXIT_OK
        # E = mu (3 lambda + 2 mu) / (lambda + mu) = 1.4
        energy = json.loads(result.stdout)["metrics"]["extensional_energy"]
        assert energy == pytest.approx(1.0 / 1.4, rel=1e-9)

    def test_invalid_material(self, run, tmp_path):
        result = run(
            "--json", "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("cantilever_loads.json"),
            "--out", tmp_path,
            "--mu", -1.0,
        )
        assert result.exit_code == EXIT_INPUT

    def test_missing_loads_flag(self, run, tmp_path):
        result = run("--json", "solve", "--skeleton", data_path("cantilever.json"), "--out", tmp_path)
        assert result.exit_code == EXIT_INPUT
        assert "--loads is required" in json.loads(result.stdout)["error"]

    def test_run_config_file(self, run, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text(
            "run:\n"
            f"  skeleton: {data_path('cantilever.json')}\n"
            f"  loads: {data_path('cantilever_loads.json')}\n"
            f"  out_dir: {tmp_path / 'out'}\n"
            "  h: 0.5\n"
        )
        result = run("--json", "--config", config, "solve")
        assert result.exit_code == EXIT_OK
        assert json.loads(result.stdout)["metrics"]["h"] == pytest.approx(0.5)
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_bad_settings_in_config(self, run, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("solver:\n  quadrature_order: 2\n")
        result = run(
            "--json", "--config", config, "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("cantilever_loads.json"),
            "--out", tmp_path,
        )
        assert result.exit_code == EXIT_INPUT


class TestDecompose:
    @pytest.fixture
    def rigid_tube(self, tmp_path):
        arc = load_skeleton(data_path("frame.json")).arcs[1]
        path = tmp_path / "tube.csv"
        b = np.array([0.2, -0.1, 0.3])
        write_tube_field(TubeField.from_displacement(arc, 0.1, lambda x: np.cross(b, x)), str(path))
        return path

    def test_rigid_tube_field(self, run, tmp_path, rigid_tube):
        result = run(
            "--json", "decompose",
            "--skeleton", data_path("frame.json"),
            "--tube", rigid_tube,
            "--out", tmp_path / "out",
        )
        assert result.exit_code == EXIT_OK
        row = json.loads(result.stdout)["report"]["tube_fields"][0]
        assert row["arc_id"] == 2
        assert row["strain_energy"] == pytest.approx(0.0, abs=1e-14)

    def test_malformed_header(self, run, tmp_path, rigid_tube):
        rigid_tube.with_suffix(".json").write_text(json.dumps({"arc_id": 2}))
        result = run(
            "--json", "decompose",
            "--skeleton", data_path("frame.json"),
            "--tube", rigid_tube,
            "--out", tmp_path / "out",
        )
        assert result.exit_code == EXIT_INPUT

    def test_unknown_family(self, run, tmp_path):
        result = run(
            "decompose", "--skeleton", data_path("frame.json"), "--family", "shear", "--out", tmp_path
        )
        assert result.exit_code == EXIT_INPUT
        assert "shear" in result.output

    def test_unknown_family_in_config(self, run, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text(f"run:\n  skeleton: {data_path('frame.json')}\n  families: [shear]\n")
        result = run("--json", "--config", config, "decompose", "--out", tmp_path / "out")
        assert result.exit_code == EXIT_INPUT
        assert "unknown families" in json.loads(result.stdout)["error"]

    def test_negative_delta_in_header(self, run, tmp_path, rigid_tube):
        header_path = rigid_tube.with_suffix(".json")
        header = json.loads(header_path.read_text())
        header["delta"] = -0.1
        header_path.write_text(json.dumps(header))
        result = run(
            "--json", "decompose",
            "--skeleton", data_path("frame.json"),
            "--tube", rigid_tube,
            "--out", tmp_path / "out",
        )
        assert result.exit_code == EXIT_INPUT
        assert "delta must be positive" in json.loads(result.stdout)["error"]

    def test_family_sweep(self, run, tmp_path):
        result = run(
            "--json", "decompose",
            "--skeleton", data_path("frame.json"),
            "--family", "rigid",
            "--delta", "0.2,0.1",
            "--out", tmp_path,
        )
        assert result.exit_code == EXIT_OK
        payload = json.loads(result.stdout)
        assert payload["unbounded"] == []
        assert payload["report"]["families"]["rigid"]["deltas"] == [0.2, 0.1]

    def test_nothing_to_decompose(self, run, tmp_path):
        result = run("--json", "decompose", "--skeleton", data_path("frame.json"), "--out", tmp_path)
        assert result.exit_code == EXIT_INPUT

    def test_bad_delta_list(self, run, tmp_path):
        result = CliRunner().invoke(
            main,
            ["decompose", "--skeleton", data_path("frame.json"), "--family", "rigid", "--delta", "0.2,x"],
        )
        assert result.exit_code == EXIT_INPUT


class TestReport:
    def test_after_solve(self, run, tmp_path):
        run(
            "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("cantilever_loads.json"),
            "--out", tmp_path,
        )
        result = run("--json", "report", "--out", tmp_path)
        assert result.exit_code == EXIT_OK
        diag = json.loads(result.stdout)
        assert diag["output"]["manifest"]["valid"]
        assert diag["output"]["solve"]["energies"]["extensional"] == pytest.approx(0.4, rel=1e-9)
        assert diag["solver_config"]["valid"]

    def test_tampered_results(self, run, tmp_path):
        run(
            "solve",
            "--skeleton", data_path("cantilever.json"),
            "--loads", data_path("cantilever_loads.json"),
            "--out", tmp_path,
        )
        (tmp_path / "polyline.txt").write_text("edited\n")
        result = run("report", "--out", tmp_path)
        assert result.exit_code == EXIT_FAILED
        assert "modified" in result.stdout
