"""Tube-field energies, elementary fits, junction rigidification and estimate tables."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import segment
from rods.decomposition import (
    KnotFit,
    TubeField,
    cutoff_m,
    disc_quadrature,
    elementary_decompose,
    energy_functionals,
    estimate_report,
    fit_knots,
    read_tube_field,
    refold,
    rigid_fit_ball,
    rigidify_junctions,
    sample_ball,
    section_moments,
    synthetic_family,
    tube_estimate_row,
    unfold,
    write_tube_field,
)
from rods.errors import GridTooCoarse, OverlappingJunctions, ParseError, RankDeficient
from rods.geometry import Knot, Skeleton, build_arc

A = np.array([1.0, -2.0, 0.5])
B = np.array([0.3, -0.2, 0.7])


def rigid(x):
    return A + np.cross(B, x)


@pytest.fixture
def rod():
    return segment(1, [0, 0, 0], [2, 0, 0], [0, 1, 0])


class TestQuadrature:
    def test_disc_weights(self):
        Y, w = disc_quadrature(4, 8)
        assert w.sum() == pytest.approx(math.pi)
        assert np.all(np.sum(Y**2, axis=1) < 1.0)
        assert float(w @ Y[:, 0] ** 2) == pytest.approx(math.pi / 4)
        assert float(w @ Y[:, 0]) == pytest.approx(0.0, abs=1e-14)

    def test_ball_volume(self):
        pts, w = sample_ball(np.array([1.0, 2.0, 3.0]), 0.5)
        assert w.sum() == pytest.approx(4.0 / 3.0 * math.pi * 0.125)
        assert np.all(np.linalg.norm(pts - [1.0, 2.0, 3.0], axis=1) < 0.5)


class TestEnergies:
    def test_linear_symmetric_field(self, rod):
        G = np.array([[1.0, 0.2, 0.0], [0.2, -0.5, 0.3], [0.0, 0.3, 0.4]])
        delta = 0.1
        field = TubeField.from_displacement(rod, delta, lambda x: x @ G.T)
        E, D = energy_functionals(field)
        expected = float(np.trace(G @ G)) * math.pi * delta**2 * rod.length
        assert E == pytest.approx(expected, rel=1e-9)
        assert D == pytest.approx(expected, rel=1e-9)

    def test_rigid_field(self, rod):
        delta = 0.1
        E, D = energy_functionals(TubeField.from_displacement(rod, delta, rigid))
        assert E == pytest.approx(0.0, abs=1e-20)
        assert D == pytest.approx(2.0 * float(B @ B) * math.pi * delta**2 * rod.length, rel=1e-9)

    def test_too_few_disc_points(self, rod):
        field = TubeField.from_displacement(rod, 0.1, rigid, n_radial=1, n_angular=8)
        with pytest.raises(GridTooCoarse):
            energy_functionals(field)
        with pytest.raises(GridTooCoarse):
            elementary_decompose(field)

    def test_too_few_sections(self, rod):
        field = TubeField.from_displacement(rod, 0.1, rigid, s=np.array([0.0, 1.0]))
        with pytest.raises(GridTooCoarse):
            energy_functionals(field)

    def test_volume_factor_on_curved_arc(self):
        arc = build_arc({"type": "circular_arc", "radius": 1.0, "sweep": math.pi / 2})
        field = TubeField.from_displacement(arc, 0.1, lambda x: np.ones_like(x) / math.sqrt(3.0))
        assert field.l2_norm_sq() == pytest.approx(math.pi * 0.01 * arc.length, rel=1e-9)


class TestElementary:
    def test_rigid_field_is_elementary(self, rod):
        field = TubeField.from_displacement(rod, 0.1, rigid)
        elem = elementary_decompose(field)
        np.testing.assert_allclose(elem.R, np.tile(B, (len(field.s), 1)), atol=1e-12)
        np.testing.assert_allclose(elem.U, rigid(rod.frames(field.s)["x"]), atol=1e-12)
        np.testing.assert_allclose(elem.evaluate(field.y), field.values, atol=1e-12)

    def test_residual_moments_vanish(self, rod):
        field = TubeField.from_displacement(rod, 0.1, synthetic_family("bending"))
        moments = section_moments(field, elementary_decompose(field))
        assert moments["mean"] < 1e-12
        assert moments["rotational_moment"] < 1e-12

    def test_unfold_refold(self, rod):
        field = TubeField.from_displacement(rod, 0.05, rigid)
        unfolded = unfold(field)
        assert unfolded.weights.sum() == pytest.approx(math.pi)
        back = refold(unfolded, 0.05, rod)
        np.testing.assert_allclose(back.y, field.y)
        np.testing.assert_allclose(back.weights, field.weights)


class TestBallFit:
    def test_recovers_rigid_motion(self):
        center = np.array([0.5, 0.5, 0.0])
        pts, w = sample_ball(center, 0.2)
        a, b = rigid_fit_ball(pts, rigid(pts), center, w)
        np.testing.assert_allclose(b, B, atol=1e-10)
        np.testing.assert_allclose(a, rigid(center), atol=1e-10)

    def test_too_few_samples(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        with pytest.raises(RankDeficient):
            rigid_fit_ball(pts, rigid(pts), np.zeros(3))

    def test_collinear_samples(self):
        pts = np.outer(np.linspace(-1.0, 1.0, 25), [1.0, 0.0, 0.0])
        with pytest.raises(RankDeficient):
            rigid_fit_ball(pts, rigid(pts), np.zeros(3))


class TestCutoff:
    def test_values(self):
        assert cutoff_m(2.0, 2.0) == 0.0
        assert cutoff_m(2.5, 2.0) == pytest.approx(0.5)
        assert cutoff_m(3.0, 2.0) == pytest.approx(1.0)
        assert cutoff_m(-2.5, 2.0) == pytest.approx(0.5)
        np.testing.assert_allclose(cutoff_m(np.array([0.0, 10.0]), 1.0), [0.0, 1.0])

    def test_rho_below_one(self):
        with pytest.raises(ValueError):
            cutoff_m(0.5, 0.5)


class TestTubeFiles:
    def test_written_field_reads_back(self, tmp_path, rod):
        skeleton = Skeleton((rod,), (), ((1, 0.0),))
        field = TubeField.from_displacement(rod, 0.1, rigid)
        path = str(tmp_path / "tube.csv")
        write_tube_field(field, path)
        loaded = read_tube_field(path, skeleton)
        assert loaded.arc is rod
        assert loaded.delta == pytest.approx(0.1)
        np.testing.assert_allclose(loaded.values, field.values)
        np.testing.assert_allclose(loaded.weights, field.weights)

    def test_malformed_header(self, tmp_path, rod):
        path = str(tmp_path / "tube.csv")
        write_tube_field(TubeField.from_displacement(rod, 0.1, rigid), path)
        (tmp_path / "tube.json").write_text(json.dumps({"arc_id": 1}))
        with pytest.raises(ParseError):
            read_tube_field(path)

    def test_missing_header(self, tmp_path):
        (tmp_path / "tube.csv").write_text("s,Y2,Y3,u1,u2,u3\n")
        with pytest.raises(ParseError):
            read_tube_field(str(tmp_path / "tube.csv"))


class TestJunctions:
    def test_blend_zones_overlap(self):
        arcs = (
            segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),
            segment(2, [0, 0, 0], [0, 1, 0], [1, 0, 0]),
            segment(3, [1, 0, 0], [1, 1, 0], [-1, 0, 0]),
        )
        knots = (
            Knot(1, np.zeros(3), ((1, 0.0), (2, 0.0))),
            Knot(2, np.array([1.0, 0, 0]), ((1, 1.0), (3, 0.0))),
        )
        skeleton = Skeleton(arcs, knots, ((2, 1.0),))
        fits = {k.id: KnotFit(k.id, np.zeros(3), np.zeros(3), 1.0) for k in knots}
        elementary = {1: elementary_decompose(TubeField.from_displacement(arcs[0], 0.3, rigid))}
        with pytest.raises(OverlappingJunctions):
            rigidify_junctions(elementary, skeleton, 0.3, fits)

    def test_rigid_family_has_negligible_strain(self, l_frame):
        report = estimate_report(l_frame, "rigid", deltas=[0.2, 0.1])
        assert report["deltas"] == [0.2, 0.1]
        for row in report["by_delta"].values():
            assert all(v is None for v in row["ratios"].values())
        assert all(flag["bounded"] for flag in report["flags"].values())

    def test_unknown_family(self):
        with pytest.raises(ParseError):
            synthetic_family("shear")

    def test_rigidify_keeps_rigid_input(self, l_frame):
        delta = 0.1
        elementary = {
            arc.id: elementary_decompose(TubeField.from_displacement(arc, delta, rigid)) for arc in l_frame.arcs
        }
        structure = rigidify_junctions(elementary, l_frame, delta, fit_knots(l_frame, delta, rigid))
        for arc_id, before in elementary.items():
            after = structure.arcs[arc_id]
            np.testing.assert_allclose(after.U, before.U, atol=1e-12)
            np.testing.assert_allclose(after.R, before.R, atol=1e-12)
        fit = structure.knots[1]
        np.testing.assert_allclose(fit.a, rigid(np.array([1.0, 0.0, 0.0])), atol=1e-10)
        np.testing.assert_allclose(fit.b, B, atol=1e-10)

    def test_rigid_tube_row_on_knot_arc(self, l_frame):
        field = TubeField.from_displacement(l_frame.arcs[1], 0.1, rigid)
        row = tube_estimate_row(field, l_frame)
        assert row["rigid_knots"] == [1]
        assert row["strain_energy"] == pytest.approx(0.0, abs=1e-14)
        assert row["numerators"]["rigidification"] == pytest.approx(0.0, abs=1e-20)
        assert all(value is None for value in row["ratios"].values())


@pytest.mark.slow
@pytest.mark.parametrize("family", ["extension", "bending", "torsion"])
def test_family_ratios_stay_bounded(l_frame, family):
    report = estimate_report(l_frame, family, deltas=[0.2, 0.1, 0.05])
    assert report["deltas"] == [0.2, 0.1, 0.05]
    for key, flag in report["flags"].items():
        assert flag["bounded"], (key, flag)
    for row in report["by_delta"].values():
        assert row["strain_energy"] > 0
        assert all(value is not None and math.isfinite(value) for value in row["ratios"].values())
