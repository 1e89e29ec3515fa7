"""Arc construction, Frenet frames, skeleton validation and junction widths."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import segment
from rods.errors import DeltaTooLarge, FrameUndefined, OutOfRange, ParseError
from rods.geometry import (
    Knot,
    Skeleton,
    build_arc,
    frame_defects,
    frenet,
    junction_extent,
    minimal_covering_rho,
    tube_map,
    validate_skeleton,
)

HELIX = {"type": "helix", "radius": 1.0, "pitch": 1.0, "t0": 0.0, "t1": 2 * math.pi}


class TestBuildArc:
    def test_segment_length_and_constant_frame(self):
        arc = segment(1, [0, 0, 0], [3, 4, 0], [0, 0, 1])
        assert arc.length == pytest.approx(5.0)
        fr = arc.frames(arc.sample(7))
        np.testing.assert_allclose(fr["T"], np.tile([0.6, 0.8, 0.0], (7, 1)), atol=1e-14)
        np.testing.assert_allclose(fr["N"], np.tile([0.0, 0.0, 1.0], (7, 1)), atol=1e-14)
        np.testing.assert_allclose(fr["c"], 0.0)

    def test_straight_arc_without_override_has_no_frame(self):
        with pytest.raises(FrameUndefined):
            build_arc({"type": "segment", "start": [0, 0, 0], "end": [1, 0, 0]})

    def test_override_parallel_to_tangent_rejected(self):
        with pytest.raises(FrameUndefined):
            segment(1, [0, 0, 0], [1, 0, 0], [2, 0, 0])

    def test_unknown_type(self):
        with pytest.raises(ParseError, match="unknown arc type"):
            build_arc({"type": "clothoid"})

    def test_missing_parameter(self):
        with pytest.raises(ParseError, match="missing parameter"):
            build_arc({"type": "circular_arc", "sweep": 1.0})

    def test_helix_curvature_and_torsion(self):
        arc = build_arc(HELIX, arc_id=3)
        assert arc.length == pytest.approx(2 * math.pi * math.sqrt(2.0))
        s = arc.sample(40)
        fr = arc.frames(s)
        np.testing.assert_allclose(fr["c"], 0.5, atol=1e-8)
        np.testing.assert_allclose(arc.torsion(s), 0.5, atol=1e-8)

    def test_helix_frenet_derivative(self):
        arc = build_arc(HELIX)
        s, h = 1.3, 1e-5
        T_lo, _, _, _ = frenet(arc, s - h)
        T_hi, _, _, _ = frenet(arc, s + h)
        _, N, _, c = frenet(arc, s)
        np.testing.assert_allclose((T_hi - T_lo) / (2 * h), c * N, atol=1e-8)

    def test_circle_normal_points_to_center(self):
        arc = build_arc({"type": "circular_arc", "center": [1, 1, 0], "radius": 2.0, "sweep": math.pi})
        fr = arc.frames(np.array([0.0, 1.0, 2.0]))
        np.testing.assert_allclose(fr["c"], 0.5)
        np.testing.assert_allclose(fr["x"] + 2.0 * fr["N"], np.tile([1.0, 1.0, 0.0], (3, 1)), atol=1e-12)
        assert frame_defects(fr)["orthonormality"] < 1e-12

    def test_closed_circle_frame_is_periodic(self):
        arc = build_arc({"type": "circular_arc", "radius": 1.0, "closed": True})
        assert arc.closed
        ends = arc.frames(np.array([0.0, arc.length]))
        for key in ("T", "N", "B"):
            np.testing.assert_allclose(ends[key][0], ends[key][1], atol=1e-12)

    def test_spline_is_unit_speed(self):
        theta = np.linspace(0.0, math.pi, 9)
        points = np.stack([np.cos(theta), np.sin(theta), 0.2 * theta], axis=1)
        arc = build_arc({"type": "spline", "points": points.tolist()})
        s = np.linspace(0.05, arc.length - 0.05, 25)
        h = 1e-3
        speed = np.linalg.norm(arc.position(s + h) - arc.position(s - h), axis=1) / (2 * h)
        np.testing.assert_allclose(speed, 1.0, atol=1e-4)

    def test_abscissa_out_of_range(self):
        arc = segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0])
        with pytest.raises(OutOfRange):
            arc.frames(1.5)


class TestTubeMap:
    def test_offsets_follow_the_frame(self):
        arc = build_arc({"type": "circular_arc", "radius": 1.0, "sweep": math.pi / 2})
        x = tube_map(arc, 0.0, 0.1, 0.05, delta0=0.5)
        np.testing.assert_allclose(x, [0.9, 0.0, 0.05], atol=1e-12)

    def test_offset_outside_disc(self):
        arc = segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0])
        with pytest.raises(OutOfRange):
            tube_map(arc, 0.5, 0.3, 0.3, delta0=0.4)


class TestValidation:
    def test_l_frame_is_usable(self, l_frame):
        report = validate_skeleton(l_frame)
        assert report.usable, report.to_dict()
        assert report.failing() == []
        assert report.delta0 == pytest.approx(0.5)

    def test_tangent_arcs_fail_non_tangent_check(self):
        arcs = (
            segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),
            segment(2, [1, 0, 0], [2, 0, 0], [0, 1, 0]),
        )
        skeleton = Skeleton(arcs, (Knot(1, np.array([1.0, 0, 0]), ((1, 1.0), (2, 0.0))),))
        report = validate_skeleton(skeleton)
        assert not report.usable
        assert report.failing() == ["non_tangent"]

    def test_crossing_without_knot(self):
        arcs = (
            segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),
            segment(2, [0.5, -0.5, 0], [0.5, 0.5, 0], [1, 0, 0]),
        )
        report = validate_skeleton(Skeleton(arcs))
        assert "intersections_at_knots" in report.failing()
        assert "connected" in report.failing()

    def test_knot_off_the_arc(self):
        arcs = (
            segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),
            segment(2, [1, 0, 0], [1, 1, 0], [-1, 0, 0]),
        )
        knot = Knot(1, np.array([1.0, 0.01, 0.0]), ((1, 1.0), (2, 0.0)))
        report = validate_skeleton(Skeleton(arcs, (knot,)))
        assert "knots" in report.failing()

    def test_unknown_arc_in_knot(self):
        with pytest.raises(ParseError):
            Skeleton((segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),), (Knot(1, np.zeros(3), ((7, 0.0),)),))

    def test_rotated_override_breaks_frame_continuity(self):
        def override(s):
            return np.where((np.asarray(s) < 0.3)[:, None], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0])

        arc = build_arc({"type": "segment", "start": [0, 0, 0], "end": [1, 0, 0], "frame_override": override}, arc_id=1)
        report = validate_skeleton(Skeleton((arc,), (), ((1, 0.0),)))
        assert report.failing() == ["frames_continuous"]
        assert report.metrics["frame_jump"] > 1.0
        assert "arc 1" in report.checks["frames_continuous"].details[0]

    def test_twisting_override_is_continuous(self):
        def override(s):
            s = np.asarray(s)
            return np.stack([0.0 * s, np.cos(s), np.sin(s)], axis=1)

        arc = build_arc({"type": "segment", "start": [0, 0, 0], "end": [1, 0, 0], "frame_override": override}, arc_id=1)
        report = validate_skeleton(Skeleton((arc,), (), ((1, 0.0),)))
        assert report.usable, report.to_dict()
        assert report.metrics["frame_jump"] == 0.0
        np.testing.assert_allclose(arc.torsion([0.5]), [1.0], rtol=1e-6)

    def test_report_dict_shape(self, cantilever):
        data = validate_skeleton(cantilever).to_dict()
        assert set(data) == {"usable", "delta0", "checks", "metrics"}
        assert all("passed" in c for c in data["checks"].values())


class TestJunctions:
    @pytest.fixture
    def wedge(self):
        angle = math.radians(30.0)
        arcs = (
            segment(1, [0, 0, 0], [1, 0, 0], [0, 0, 1]),
            segment(2, [0, 0, 0], [math.cos(angle), math.sin(angle), 0], [0, 0, 1]),
        )
        return Skeleton(arcs, (Knot(1, np.zeros(3), ((1, 0.0), (2, 0.0))),))

    def test_centerline_covering_at_30_degrees(self, wedge):
        rho = minimal_covering_rho(wedge, wedge.knots[0], 0.1)
        assert rho["centerline"] == pytest.approx(2.0, rel=0.1)
        assert rho["tube_overlap"] > rho["centerline"]

    def test_extent_clipped_to_arc(self, l_frame):
        intervals = junction_extent(l_frame, l_frame.knots[0], 0.1, rho=2.0)
        spans = {iv.arc_id: (iv.lower, iv.upper) for iv in intervals}
        assert spans[1] == pytest.approx((0.8, 1.0))
        assert spans[2] == pytest.approx((0.0, 0.2))

    def test_delta_above_delta0(self, l_frame):
        with pytest.raises(DeltaTooLarge):
            junction_extent(l_frame, l_frame.knots[0], 0.6)
