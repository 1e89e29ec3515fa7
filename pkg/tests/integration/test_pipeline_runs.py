"""End-to-end validate, solve and decompose runs against the bundled inputs."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import data_path
from rods.atomic_io import verify_manifest
from rods.decomposition import TubeField, synthetic_family, write_tube_field
from rods.io import load_skeleton
from rods.pipeline import (
    decompose_with_validation,
    default_mesh_size,
    solve_with_validation,
    validate_with_report,
)
from rods.postprocess import read_arc_csv


class TestValidateRun:
    def test_frame_report(self, tmp_path):
        result = validate_with_report(data_path("frame.json"), str(tmp_path))
        assert result["success"] and result["usable"]
        assert result["failing"] == []
        written = json.loads((tmp_path / "validation.json").read_text())
        assert written["usable"] is True
        assert written["delta0"] == pytest.approx(0.5)
        assert "1" in written["junction_covering"]

    def test_tangent_arcs_are_reported(self, tmp_path):
        result = validate_with_report(data_path("tangent_arcs.json"), str(tmp_path))
        assert result["success"]
        assert not result["usable"]
        assert result["failing"] == ["non_tangent"]

    def test_missing_file(self, tmp_path):
        result = validate_with_report(str(tmp_path / "nope.json"), str(tmp_path))
        assert not result["success"]
        assert result["error_type"] == "ParseError"


class TestSolveRun:
    def test_cantilever(self, tmp_path):
        result = solve_with_validation(
            data_path("cantilever.json"), data_path("cantilever_loads.json"), str(tmp_path)
        )
        assert result["success"], result.get("error")
        metrics = result["metrics"]
        assert metrics["tolerances_met"]
        assert metrics["h"] == pytest.approx(0.125)
        assert metrics["extensional_energy"] == pytest.approx(0.4, rel=1e-9)
        assert metrics["inextensional_energy"] == pytest.approx(0.4, rel=1e-8)
        assert len(metrics["control_hash"]) == 8
        table = read_arc_csv(str(tmp_path / "arc_1.csv"))
        assert table["UE_T"][-1] == pytest.approx(0.4, rel=1e-9)
        assert table["UI_2"][-1] == pytest.approx(0.4, rel=1e-8)
        assert verify_manifest(str(tmp_path), "manifest.json")["valid"]

    def test_zero_loads_give_zero_fields(self, tmp_path):
        result = solve_with_validation(data_path("cantilever.json"), data_path("zero_loads.json"), str(tmp_path))
        assert result["success"]
        solution = result["solution"]
        assert not np.any(solution.extensional.dofs)
        assert not np.any(solution.inextensional.dofs)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["qc"]["extensional"]["is_zero"]

    def test_transverse_extensional_load_rejected(self, tmp_path):
        result = solve_with_validation(
            data_path("cantilever.json"), data_path("cantilever_transverse_ext.json"), str(tmp_path)
        )
        assert not result["success"]
        assert result["error_type"] == "OrthogonalityViolated"
        assert not (tmp_path / "summary.json").exists()

    def test_projection_mode_override(self, tmp_path):
        result = solve_with_validation(
            data_path("cantilever.json"),
            data_path("cantilever_transverse_ext.json"),
            str(tmp_path),
            mode="project",
        )
        assert result["success"]
        assert result["metrics"]["load_mode"] == "project"
        assert result["metrics"]["extensional_energy"] == pytest.approx(0.0, abs=1e-20)

    def test_star_knot_force(self, tmp_path):
        result = solve_with_validation(data_path("star.json"), data_path("star_loads.json"), str(tmp_path))
        assert result["success"]
        assert result["metrics"]["extensional_energy"] == pytest.approx(2.0 / 7.5, rel=1e-8)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["knot_equilibrium"]["1"]["norm"] < 1e-9

    def test_invalid_settings_stop_before_solving(self, tmp_path):
        result = solve_with_validation(
            data_path("cantilever.json"),
            data_path("cantilever_loads.json"),
            str(tmp_path),
            settings={"quadrature_order": 2},
        )
        assert not result["success"]
        assert result["error_type"] == "ConfigInvalid"

    def test_skeleton_failing_checks(self, tmp_path):
        result = solve_with_validation(
            data_path("tangent_arcs.json"), data_path("zero_loads.json"), str(tmp_path)
        )
        assert not result["success"]
        assert result["error_type"] == "SkeletonInvalid"

    @pytest.mark.slow
    def test_quarter_circle_tip(self, tmp_path):
        skeleton = load_skeleton(data_path("quarter_circle.json"))
        result = solve_with_validation(
            data_path("quarter_circle.json"),
            data_path("quarter_circle_loads.json"),
            str(tmp_path),
            h=skeleton.arcs[0].length / 32,
        )
        assert result["success"]
        expected = 3.0 / 2.5 * math.pi / 4 + 3.0 * (3.0 * math.pi / 4 - 2.0)
        assert result["metrics"]["inextensional_energy"] == pytest.approx(expected, rel=0.01)

    def test_default_mesh_size(self):
        assert default_mesh_size(load_skeleton(data_path("frame.json"))) == pytest.approx(0.125)


class TestDecomposeRun:
    def test_rigid_tube_field(self, tmp_path):
        skeleton = load_skeleton(data_path("frame.json"))
        arc = skeleton.arcs[0]
        a, b = np.array([0.1, 0.0, -0.2]), np.array([0.0, 0.4, 0.1])
        path = str(tmp_path / "rigid.csv")
        write_tube_field(TubeField.from_displacement(arc, 0.1, lambda x: a + np.cross(b, x)), path)
        out = tmp_path / "out"
        result = decompose_with_validation(data_path("frame.json"), str(out), tube_files=[path])
        assert result["success"], result.get("error")
        row = result["report"]["tube_fields"][0]
        assert row["arc_id"] == 1
        assert row["strain_energy"] == pytest.approx(0.0, abs=1e-14)
        assert row["numerators"]["gradient_residual"] == pytest.approx(0.0, abs=1e-14)
        assert row["rigid_knots"] == [1]
        assert set(row["ratios"]) == {"gradient_residual", "l2_residual", "rotation", "rigidification"}
        assert all(value is None for value in row["ratios"].values())
        assert row["numerators"]["rigidification"] == pytest.approx(0.0, abs=1e-20)
        assert row["numerators"]["rotation"] == pytest.approx(0.0, abs=1e-16)
        assert verify_manifest(str(out), "manifest.json")["valid"]
        assert json.loads((out / "estimates.json").read_text())["tube_fields"][0]["file"] == "rigid.csv"

    def test_family_sweep(self, tmp_path):
        result = decompose_with_validation(
            data_path("frame.json"), str(tmp_path), families=["rigid"], deltas=[0.2, 0.1]
        )
        assert result["success"]
        assert result["unbounded"] == []
        assert result["report"]["families"]["rigid"]["deltas"] == [0.2, 0.1]

    def test_bending_tube_field_matches_family_row_keys(self, tmp_path):
        skeleton = load_skeleton(data_path("frame.json"))
        path = str(tmp_path / "bending.csv")
        write_tube_field(TubeField.from_displacement(skeleton.arcs[0], 0.1, synthetic_family("bending")), path)
        result = decompose_with_validation(
            data_path("frame.json"), str(tmp_path / "out"), tube_files=[path], families=["bending"], deltas=[0.1]
        )
        assert result["success"], result.get("error")
        row = result["report"]["tube_fields"][0]
        family_row = result["report"]["families"]["bending"]["by_delta"]["0.1"]
        assert set(row["ratios"]) == set(family_row["ratios"]) - {"splitting"}
        assert row["strain_energy"] > 0
        assert all(value is not None and math.isfinite(value) for value in row["ratios"].values())

    def test_unknown_family(self, tmp_path):
        result = decompose_with_validation(data_path("frame.json"), str(tmp_path), families=["shear"])
        assert not result["success"]
        assert result["error_type"] == "ParseError"


    def test_unreadable_tube_field(self, tmp_path):
        (tmp_path / "bad.csv").write_text("s,Y2,Y3,u1,u2,u3\n")
        result = decompose_with_validation(
            data_path("frame.json"), str(tmp_path / "out"), tube_files=[str(tmp_path / "bad.csv")]
        )
        assert not result["success"]
        assert result["error_type"] == "ParseError"
