"""Shared fixtures: quiet event output, pristine config tables, common skeletons."""

from __future__ import annotations

import math
import os

import numpy as np
import pytest

from configs import rod_config
from rods.geometry import Knot, Skeleton, build_arc
from rods.solver import Material

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "examples_data")


def data_path(name: str) -> str:
    return os.path.join(DATA_DIR, name)


@pytest.fixture(autouse=True)
def quiet_events(monkeypatch):
    monkeypatch.setenv("ROD_LOG_LEVEL", "quiet")


@pytest.fixture(autouse=True)
def pristine_config():
    """Tests may patch the live tables; start the next one from the defaults."""
    yield
    rod_config.reset_tables()


@pytest.fixture
def material():
    """lambda = mu = 1, so E = 2.5."""
    return Material(1.0, 1.0)


def segment(arc_id, start, end, normal):
    return build_arc(
        {"type": "segment", "start": start, "end": end, "frame_override": normal}, arc_id=arc_id
    )


@pytest.fixture
def cantilever():
    """Unit straight rod along x, clamped at the origin."""
    return Skeleton((segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),), (), ((1, 0.0),))


@pytest.fixture
def quarter_circle():
    arc = build_arc({"type": "circular_arc", "radius": 1.0, "sweep": math.pi / 2}, arc_id=1)
    return Skeleton((arc,), (), ((1, 0.0),))


@pytest.fixture
def l_frame():
    """Two unit rods meeting at a right angle at (1, 0, 0), clamped at the origin."""
    arcs = (
        segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),
        segment(2, [1, 0, 0], [1, 1, 0], [-1, 0, 0]),
    )
    knot = Knot(1, np.array([1.0, 0.0, 0.0]), ((1, 1.0), (2, 0.0)))
    return Skeleton(arcs, (knot,), ((1, 0.0),))


@pytest.fixture
def star():
    """Three coplanar unit rods at 120 degrees, joined at the origin, clamped at their far ends."""
    arcs = []
    for k in range(3):
        angle = 2 * math.pi * k / 3
        end = [math.cos(angle), math.sin(angle), 0.0]
        arcs.append(segment(k + 1, [0, 0, 0], end, [0, 0, 1]))
    knot = Knot(1, np.zeros(3), ((1, 0.0), (2, 0.0), (3, 0.0)))
    return Skeleton(tuple(arcs), (knot,), ((1, 1.0), (2, 1.0), (3, 1.0)))
