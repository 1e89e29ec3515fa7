"""
Input Documents

JSON/YAML loaders for skeletons and load cases.
"""

from __future__ import annotations

from typing import Any, Dict, List, Tuple, Union

import numpy as np
import yaml

from rods.errors import ParseError
from rods.geometry import ArcGeometry, Knot, Skeleton, build_arc
from rods.loads import LOAD_MODES, LoadCase, LoadSet

Abscissa = Union[str, float, int]


def _read(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    if not isinstance(data, dict):
        raise ParseError(f"{path} must contain a mapping")
    return data


def _vector(value: Any, what: str) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{what}: not a numeric vector") from e
    if v.shape != (3,):
        raise ParseError(f"{what}: expected 3 components, got shape {v.shape}")
    return v


def _abscissa(arc: ArcGeometry, where: Abscissa, what: str) -> float:
    """'start' -> 0, 'end' -> L, numbers pass through."""
    if where == "start":
        return 0.0
    if where == "end":
        return arc.length
    try:
        s = float(where)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{what}: abscissa must be 'start', 'end' or a number") from e
    if not 0.0 <= s <= arc.length * (1 + 1e-12):
        raise ParseError(f"{what}: abscissa {s} outside [0, {arc.length}]")
    return min(s, arc.length)


def skeleton_from_dict(data: Dict[str, Any]) -> Skeleton:
    """
    Build a skeleton from a parsed document.

    Schema:
        arcs: [{id, type, ...curve parameters, frame_override?, closed?}]
        knots: [{id, incidences: [[arc_id, start|end|s], ...], position?, rho?}]
        clamped: [{arc_id, end: start|end|s}]
    """
    if "arcs" not in data or not data["arcs"]:
        raise ParseError("skeleton needs a non-empty 'arcs' list")
    arcs = []
    for k, spec in enumerate(data["arcs"]):
        if not isinstance(spec, dict):
            raise ParseError(f"arc entry {k} must be a mapping")
        arcs.append(build_arc(spec, arc_id=spec.get("id", k + 1)))
    by_id = {a.id: a for a in arcs}

    def arc_of(arc_id: Any, what: str) -> ArcGeometry:
        try:
            return by_id[int(arc_id)]
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{what}: unknown arc {arc_id!r}") from None

    knots = []
    for k, spec in enumerate(data.get("knots") or []):
        ident = int(spec.get("id", k + 1))
        what = f"knot {ident}"
        incidences: List[Tuple[int, float]] = []
        for entry in spec.get("incidences") or []:
            if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                raise ParseError(f"{what}: incidences are [arc_id, start|end|s] pairs")
            arc = arc_of(entry[0], what)
            incidences.append((arc.id, _abscissa(arc, entry[1], what)))
        if not incidences:
            raise ParseError(f"{what}: no incidences")
        if "position" in spec:
            position = _vector(spec["position"], what)
        else:
            arc_id, a = incidences[0]
            position = by_id[arc_id].position(a)[0]
        knots.append(Knot(ident, position, tuple(incidences), float(spec.get("rho", 1.0))))

    clamped = []
    for spec in data.get("clamped") or []:
        arc = arc_of(spec.get("arc_id"), "clamp")
        clamped.append((arc.id, _abscissa(arc, spec.get("end", "start"), f"clamp on arc {arc.id}")))

    return Skeleton(tuple(arcs), tuple(knots), tuple(clamped))


def load_skeleton(path: str) -> Skeleton:
    """Load a skeleton from a JSON or YAML file."""
    return skeleton_from_dict(_read(path))


def _load_set(data: Dict[str, Any], skeleton: Skeleton, what: str) -> LoadSet:
    if not isinstance(data, dict):
        raise ParseError(f"{what} loads must be a mapping")
    arcs = {}
    for key, table in (data.get("arcs") or {}).items():
        arc_id = int(key)
        try:
            skeleton.arc(arc_id)
        except KeyError:
            raise ParseError(f"{what}: unknown arc {key}") from None
        arcs[arc_id] = np.asarray(table, dtype=float)
    knots = {}
    for key, force in (data.get("knots") or {}).items():
        knot_id = int(key)
        try:
            skeleton.knot(knot_id)
        except KeyError:
            raise ParseError(f"{what}: unknown knot {key}") from None
        knots[knot_id] = _vector(force, f"{what} knot {key}")
    points = []
    for entry in data.get("points") or []:
        try:
            arc = skeleton.arc(int(entry["arc_id"]))
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{what}: point load needs a known arc_id") from None
        points.append(
            (arc.id, _abscissa(arc, entry.get("s", "end"), f"{what} point"), _vector(entry.get("force"), f"{what} point"))
        )
    return LoadSet(arcs, knots, tuple(points))


def loads_from_dict(data: Dict[str, Any], skeleton: Skeleton) -> LoadCase:
    """
    Build a load case.

    Schema:
        mode: check | project
        inextensional / extensional: {arcs: {id: [[s, F1, F2, F3], ...]},
                                      knots: {id: [f1, f2, f3]},
                                      points: [{arc_id, s, force}]}
    """
    mode = data.get("mode", "check")
    if mode not in LOAD_MODES:
        raise ParseError(f"load mode must be one of {LOAD_MODES}, got {mode!r}")
    return LoadCase(
        inextensional=_load_set(data.get("inextensional") or {}, skeleton, "inextensional"),
        extensional=_load_set(data.get("extensional") or {}, skeleton, "extensional"),
        mode=mode,
    )


def load_loads(path: str, skeleton: Skeleton) -> LoadCase:
    return loads_from_dict(_read(path), skeleton)
