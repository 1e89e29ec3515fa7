"""
Skeleton Geometry

Arclength-parametrized arcs with Frenet frames, knots, skeleton validation,
junction extents and the thickness bound delta0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from configs.rod_config import get_geometry_config, get_tolerances
from rods.errors import (
    DeltaTooLarge,
    FrameUndefined,
    NonUnitSpeedUnfixable,
    OutOfRange,
    ParseError,
)
from rods.events import log_event

FrameOverride = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(8)


# ---------------------------------------------------------------------------
# Parametric curves (parameter t, not yet arclength)
# ---------------------------------------------------------------------------


class _Curve:
    """Curve r(t) on [t0, t1] with derivatives up to order three."""

    t0: float = 0.0
    t1: float = 1.0
    kind: str = "curve"
    constant_speed: Optional[float] = None

    def derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def speed(self, t: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.derivatives(t, 1), axis=-1)


class _Segment(_Curve):
    kind = "segment"

    def __init__(self, start: Sequence[float], end: Sequence[float]):
        self.start = np.asarray(start, dtype=float)
        self.direction = np.asarray(end, dtype=float) - self.start
        length = float(np.linalg.norm(self.direction))
        if length <= 0.0:
            raise ParseError("segment start and end coincide")
        self.direction /= length
        self.t1 = length
        self.constant_speed = 1.0

    def derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if order == 0:
            return self.start + t[..., None] * self.direction
        if order == 1:
            return np.broadcast_to(self.direction, t.shape + (3,)).copy()
        return np.zeros(t.shape + (3,))


class _CircularArc(_Curve):
    kind = "circular_arc"

    def __init__(
        self,
        center: Sequence[float],
        radius: float,
        sweep: float,
        start_angle: float = 0.0,
        axis: Sequence[float] = (0.0, 0.0, 1.0),
        reference: Sequence[float] = (1.0, 0.0, 0.0),
    ):
        if radius <= 0.0 or sweep <= 0.0:
            raise ParseError("circular_arc needs positive radius and sweep")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        axis_v = np.asarray(axis, dtype=float)
        axis_v = axis_v / np.linalg.norm(axis_v)
        ref = np.asarray(reference, dtype=float)
        ref = ref - (ref @ axis_v) * axis_v
        if np.linalg.norm(ref) < 1e-12:
            raise ParseError("circular_arc reference direction is parallel to its axis")
        self.e1 = ref / np.linalg.norm(ref)
        self.e2 = np.cross(axis_v, self.e1)
        self.start_angle = float(start_angle)
        self.t0 = 0.0
        self.t1 = self.radius * float(sweep)
        self.constant_speed = 1.0

    def derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        R = self.radius
        theta = self.start_angle + t / R
        cos, sin = np.cos(theta)[..., None], np.sin(theta)[..., None]
        scale = R ** (1 - order)
        # d^k/dt^k of (cos, sin) cycles with period four
        k = order % 4
        if k == 0:
            a, b = cos, sin
        elif k == 1:
            a, b = -sin, cos
        elif k == 2:
            a, b = -cos, -sin
        else:
            a, b = sin, -cos
        base = self.center if order == 0 else 0.0
        return base + scale * (a * self.e1 + b * self.e2)


class _Helix(_Curve):
    kind = "helix"

    def __init__(
        self,
        radius: float,
        pitch: float,
        t0: float,
        t1: float,
        origin: Sequence[float] = (0.0, 0.0, 0.0),
    ):
        if radius <= 0.0 or t1 <= t0:
            raise ParseError("helix needs positive radius and t1 > t0")
        self.a = float(radius)
        self.b = float(pitch)
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.origin = np.asarray(origin, dtype=float)
        self.constant_speed = math.hypot(self.a, self.b)

    def derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a, b = self.a, self.b
        cos, sin = np.cos(t), np.sin(t)
        if order == 0:
            out = np.stack([a * cos, a * sin, b * t], axis=-1)
            return out + self.origin
        k = order % 4
        trig = {1: (-sin, cos), 2: (-cos, -sin), 3: (sin, -cos), 0: (cos, sin)}[k]
        z = np.full_like(t, b if order == 1 else 0.0)
        return np.stack([a * trig[0], a * trig[1], z], axis=-1)


class _SplineCurve(_Curve):
    kind = "spline"

    def __init__(self, points: Sequence[Sequence[float]], closed: bool = False):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
            raise ParseError("spline needs at least four 3D control points")
        if closed and not np.allclose(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[:1]])
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chords <= 0.0):
            raise ParseError("spline has repeated consecutive control points")
        knots = np.concatenate([[0.0], np.cumsum(chords)])
        self.spline = CubicSpline(knots, pts, bc_type="periodic" if closed else "not-a-knot")
        self.breakpoints = knots
        self.t0, self.t1 = 0.0, float(knots[-1])

    def derivatives(self, t: np.ndarray, order: int) -> np.ndarray:
        return self.spline(np.asarray(t, dtype=float), order)


# ---------------------------------------------------------------------------
# Arc geometry
# ---------------------------------------------------------------------------


class ArcGeometry:
    """
    Arclength-parametrized arc with Frenet frame evaluators.

    All evaluators are vectorized over the abscissa and read-only after
    construction, so instances can be shared between worker threads.
    """

    def __init__(
        self,
        arc_id: int,
        curve: _Curve,
        frame_override: Optional[FrameOverride] = None,
        closed: bool = False,
        resample_n: int = 64,
    ):
        tol = get_tolerances()
        self.id = int(arc_id)
        self.closed = bool(closed)
        self.kind = curve.kind
        self._curve = curve
        self._c_min = tol["c_min"]
        if frame_override is not None and not callable(frame_override):
            frame_override = np.asarray(frame_override, dtype=float)
            if frame_override.shape != (3,):
                raise ParseError(f"arc {arc_id}: frame_override must be a 3-vector")
        self.frame_override = frame_override

        if curve.constant_speed is not None:
            self._table_t = np.array([curve.t0, curve.t1])
            self._table_s = np.array([0.0, curve.constant_speed * (curve.t1 - curve.t0)])
        else:
            self._build_arclength_table(max(resample_n, 8))
        self.length = float(self._table_s[-1])

    def _build_arclength_table(self, resample_n: int):
        curve = self._curve
        base = getattr(curve, "breakpoints", np.array([curve.t0, curve.t1]))
        pieces = max(1, int(math.ceil(resample_n / max(len(base) - 1, 1))))
        t_nodes = [base[0]]
        for left, right in zip(base[:-1], base[1:]):
            t_nodes.extend(np.linspace(left, right, pieces + 1)[1:])
        t_nodes = np.asarray(t_nodes)
        lengths = np.array([self._gauss_length(a, b) for a, b in zip(t_nodes[:-1], t_nodes[1:])])
        self._table_t = t_nodes
        self._table_s = np.concatenate([[0.0], np.cumsum(lengths)])

    def _gauss_length(self, a: float, b: float) -> float:
        half = 0.5 * (b - a)
        ts = 0.5 * (a + b) + half * _GAUSS_X
        return float(half * np.sum(_GAUSS_W * self._curve.speed(ts)))

    def _arclength_of(self, t: np.ndarray) -> np.ndarray:
        """s(t) from the table plus Gauss quadrature on the last partial piece."""
        idx = np.clip(np.searchsorted(self._table_t, t, side="right") - 1, 0, len(self._table_t) - 2)
        left = self._table_t[idx]
        half = 0.5 * (t - left)
        mid = 0.5 * (t + left)
        ts = mid[:, None] + half[:, None] * _GAUSS_X[None, :]
        partial = half * np.sum(_GAUSS_W[None, :] * self._curve.speed(ts), axis=1)
        return self._table_s[idx] + partial

    def parameter(self, s: Any) -> np.ndarray:
        """Curve parameter t for abscissa s (Newton on the integrated speed)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        curve = self._curve
        if curve.constant_speed is not None:
            return curve.t0 + s / curve.constant_speed
        t = np.interp(s, self._table_s, self._table_t)
        tol = get_tolerances()["tol_arclen"] * max(self.length, 1.0)
        for _ in range(50):
            err = self._arclength_of(t) - s
            if np.max(np.abs(err)) <= 0.01 * tol:
                break
            t = np.clip(t - err / curve.speed(t), curve.t0, curve.t1)
        err = self._arclength_of(t) - s
        if np.max(np.abs(err)) > tol:
            raise NonUnitSpeedUnfixable(
                f"arc {self.id}: arclength inversion residual {np.max(np.abs(err)):.3e}"
            )
        return t

    def _check_range(self, s: np.ndarray) -> np.ndarray:
        slack = 1e-12 * max(self.length, 1.0)
        if np.any(s < -slack) or np.any(s > self.length + slack):
            raise OutOfRange(f"arc {self.id}: abscissa outside [0, {self.length:.6g}]")
        return np.clip(s, 0.0, self.length)

    def _parameter_derivatives(self, s: np.ndarray, max_order: int) -> List[np.ndarray]:
        """Curve derivatives in the raw parameter; frame formulas below are parameter invariant."""
        t = self.parameter(s)
        derivs = [self._curve.derivatives(t, k) for k in range(max_order + 1)]
        return derivs

    def position(self, s: Any) -> np.ndarray:
        s = self._check_range(np.atleast_1d(np.asarray(s, dtype=float)))
        return self._curve.derivatives(self.parameter(s), 0)

    def frames(self, s: Any) -> Dict[str, np.ndarray]:
        """
        Frenet data at abscissae s.

        Returns:
            Dict with arrays T, N, B of shape (n, 3) and c, tau of shape (n,)
        """
        s = self._check_range(np.atleast_1d(np.asarray(s, dtype=float)))
        r0, r1, r2, r3 = self._parameter_derivatives(s, 3)
        speed = np.linalg.norm(r1, axis=1)
        T = r1 / speed[:, None]
        cross = np.cross(r1, r2)
        cross_norm = np.linalg.norm(cross, axis=1)
        c = cross_norm / speed**3
        straight = c < self._c_min
        safe = np.where(straight, 1.0, cross_norm)
        B = cross / safe[:, None]
        N = np.cross(B, T)
        tau = np.einsum("ij,ij->i", cross, r3) / safe**2
        if np.any(straight):
            if self.frame_override is None:
                bad = s[straight]
                raise FrameUndefined(
                    f"arc {self.id}: curvature below c_min at s={bad[0]:.6g} "
                    f"({int(straight.sum())} samples) and no frame_override"
                )
            N_o, tau_o = self._override_frame(s[straight], T[straight])
            N[straight] = N_o
            c = np.where(straight, 0.0, c)
            tau[straight] = tau_o
        # B from the cross product so that B = T x N holds to rounding
        B = np.cross(T, N)
        return {"T": T, "N": N, "B": B, "c": c, "tau": tau, "x": r0}

    def _override_vectors(self, s: np.ndarray, T: np.ndarray) -> np.ndarray:
        raw = self.frame_override
        n = raw(s) if callable(raw) else np.broadcast_to(raw, (len(s), 3))
        n = np.asarray(n, dtype=float).reshape(len(s), 3)
        n = n - np.einsum("ij,ij->i", n, T)[:, None] * T
        norms = np.linalg.norm(n, axis=1)
        if np.any(norms < 1e-12):
            raise FrameUndefined(f"arc {self.id}: frame_override is parallel to the tangent")
        return n / norms[:, None]

    def _override_frame(self, s: np.ndarray, T: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        N = self._override_vectors(s, T)
        if not callable(self.frame_override):
            return N, np.zeros(len(s))
        # torsion of a prescribed frame: tau = dN/ds . B by central differences
        h = 1e-5 * max(self.length, 1.0)
        lo = np.clip(s - h, 0.0, self.length)
        hi = np.clip(s + h, 0.0, self.length)
        t_lo = self._curve.derivatives(self.parameter(lo), 1)
        t_hi = self._curve.derivatives(self.parameter(hi), 1)
        t_lo /= np.linalg.norm(t_lo, axis=1)[:, None]
        t_hi /= np.linalg.norm(t_hi, axis=1)[:, None]
        dN = (self._override_vectors(hi, t_hi) - self._override_vectors(lo, t_lo)) / (hi - lo)[:, None]
        return N, np.einsum("ij,ij->i", dN, np.cross(T, N))

    def torsion(self, s: Any) -> np.ndarray:
        return self.frames(s)["tau"]

    def sample(self, n: int) -> np.ndarray:
        return np.linspace(0.0, self.length, n)

    def __repr__(self) -> str:
        return f"ArcGeometry(id={self.id}, kind={self.kind}, L={self.length:.6g}, closed={self.closed})"


def build_arc(
    curve_spec: Dict[str, Any],
    resample_n: Optional[int] = None,
    arc_id: Optional[int] = None,
) -> ArcGeometry:
    """
    Build an arclength-parametrized arc from a curve description.

    Args:
        curve_spec: Mapping with "type" in {segment, circular_arc, helix, spline}
            and the primitive's parameters; optional "frame_override" and "closed"
        resample_n: Arclength table resolution for splines (>= 8)
        arc_id: Overrides curve_spec["id"]

    Returns:
        Validated ArcGeometry
    """
    resample_n = resample_n or int(curve_spec.get("resample_n", get_geometry_config()["resample_n"]))
    if resample_n < 8:
        raise ParseError("resample_n must be at least 8")
    kind = curve_spec.get("type")
    ident = int(arc_id if arc_id is not None else curve_spec.get("id", 0))
    closed = bool(curve_spec.get("closed", False))
    try:
        if kind == "segment":
            curve: _Curve = _Segment(curve_spec["start"], curve_spec["end"])
            closed = False
        elif kind == "circular_arc":
            sweep = 2.0 * math.pi if closed else float(curve_spec["sweep"])
            curve = _CircularArc(
                curve_spec.get("center", (0.0, 0.0, 0.0)),
                float(curve_spec["radius"]),
                sweep,
                float(curve_spec.get("start_angle", 0.0)),
                curve_spec.get("axis", (0.0, 0.0, 1.0)),
                curve_spec.get("reference", (1.0, 0.0, 0.0)),
            )
        elif kind == "helix":
            curve = _Helix(
                float(curve_spec["radius"]),
                float(curve_spec["pitch"]),
                float(curve_spec.get("t0", 0.0)),
                float(curve_spec["t1"]),
                curve_spec.get("origin", (0.0, 0.0, 0.0)),
            )
            closed = False
        elif kind == "spline":
            curve = _SplineCurve(curve_spec["points"], closed=closed)
        else:
            raise ParseError(f"unknown arc type: {kind!r}")
    except KeyError as e:
        raise ParseError(f"arc {ident} ({kind}) missing parameter {e}") from e

    arc = ArcGeometry(ident, curve, curve_spec.get("frame_override"), closed, resample_n)
    _check_arc(arc)
    return arc


def _check_arc(arc: ArcGeometry):
    """Unit speed and frame orthonormality on a sample grid; raises on failure."""
    tol = get_tolerances()
    s = arc.sample(max(33, get_geometry_config()["resample_n"]))
    data = arc.frames(s)  # raises FrameUndefined
    if arc._curve.constant_speed is None:
        t = arc.parameter(s)
        if np.max(np.abs(arc._arclength_of(t) - s)) > tol["tol_arclen"] * max(arc.length, 1.0):
            raise NonUnitSpeedUnfixable(f"arc {arc.id}: arclength table inconsistent")
    defect = frame_defects(data)
    if defect["orthonormality"] > 1e3 * tol["tol_frame"]:
        raise FrameUndefined(f"arc {arc.id}: frame orthonormality defect {defect['orthonormality']:.3e}")


def frame_defects(data: Dict[str, np.ndarray]) -> Dict[str, float]:
    """Orthonormality and B = T x N defects of sampled frames."""
    T, N, B = data["T"], data["N"], data["B"]
    gram = np.stack([T, N, B], axis=1)
    eye = np.einsum("nij,nkj->nik", gram, gram) - np.eye(3)
    return {
        "orthonormality": float(np.max(np.abs(eye))),
        "cross": float(np.max(np.linalg.norm(B - np.cross(T, N), axis=1))),
    }


def frenet(arc: ArcGeometry, s: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Frenet frame (T, N, B) and curvature c at one abscissa."""
    data = arc.frames(np.array([float(s)]))
    return data["T"][0], data["N"][0], data["B"][0], float(data["c"][0])


def tube_map(
    arc: ArcGeometry, s: float, y2: float, y3: float, delta0: float = math.inf
) -> np.ndarray:
    """phi(s) + y2 N(s) + y3 B(s), for y2^2 + y3^2 <= delta0^2."""
    if y2 * y2 + y3 * y3 > delta0 * delta0 * (1.0 + 1e-12):
        raise OutOfRange(f"offset ({y2}, {y3}) outside the disc of radius {delta0}")
    data = arc.frames(np.array([float(s)]))
    return data["x"][0] + y2 * data["N"][0] + y3 * data["B"][0]


# ---------------------------------------------------------------------------
# Knots and skeleton
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Knot:
    id: int
    position: np.ndarray
    incidences: Tuple[Tuple[int, float], ...]
    rho: float = 1.0

    def abscissa_on(self, arc_id: int) -> List[float]:
        return [a for i, a in self.incidences if i == arc_id]


@dataclass(frozen=True)
class JunctionInterval:
    arc_id: int
    lower: float
    upper: float

    def contains(self, s: float) -> bool:
        return self.lower < s < self.upper


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Arcs, knots and clamped ends; the domain of every skeleton field."""

    arcs: Tuple[ArcGeometry, ...]
    knots: Tuple[Knot, ...] = ()
    clamped: Tuple[Tuple[int, float], ...] = ()

    def __post_init__(self):
        ids = [a.id for a in self.arcs]
        if len(set(ids)) != len(ids):
            raise ParseError(f"duplicate arc ids: {ids}")
        known = set(ids)
        for knot in self.knots:
            for arc_id, _ in knot.incidences:
                if arc_id not in known:
                    raise ParseError(f"knot {knot.id} references unknown arc {arc_id}")
        for arc_id, _ in self.clamped:
            if arc_id not in known:
                raise ParseError(f"clamp references unknown arc {arc_id}")

    def arc(self, arc_id: int) -> ArcGeometry:
        for arc in self.arcs:
            if arc.id == arc_id:
                return arc
        raise KeyError(arc_id)

    def knot(self, knot_id: int) -> Knot:
        for knot in self.knots:
            if knot.id == knot_id:
                return knot
        raise KeyError(knot_id)

    def knots_on(self, arc_id: int) -> List[Tuple[Knot, float]]:
        return [(k, a) for k in self.knots for i, a in k.incidences if i == arc_id]

    def components(self) -> List[List[int]]:
        """Connected components of the arc/knot incidence graph (arc ids)."""
        parent = {a.id: a.id for a in self.arcs}

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for knot in self.knots:
            arc_ids = [i for i, _ in knot.incidences]
            for other in arc_ids[1:]:
                parent[find(other)] = find(arc_ids[0])
        groups: Dict[int, List[int]] = {}
        for arc in self.arcs:
            groups.setdefault(find(arc.id), []).append(arc.id)
        return list(groups.values())

    @cached_property
    def delta0(self) -> float:
        return estimate_delta0(self)


def _sample_arcs(skeleton: Skeleton, n: int) -> List[Tuple[ArcGeometry, np.ndarray, np.ndarray]]:
    out = []
    for arc in skeleton.arcs:
        s = arc.sample(n)
        out.append((arc, s, arc.position(s)))
    return out


def _periodic_gap(arc: ArcGeometry, s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    gap = np.abs(s1 - s2)
    if arc.closed:
        gap = np.minimum(gap, arc.length - gap)
    return gap


def _curvature_bound(skeleton: Skeleton, n: int) -> float:
    c_max = 0.0
    for arc in skeleton.arcs:
        try:
            c_max = max(c_max, float(np.max(arc.frames(arc.sample(n))["c"])))
        except FrameUndefined:
            continue
    return c_max


def _clearance(skeleton: Skeleton, n: int) -> float:
    """Minimal distance between centerline samples that are not adjacent."""
    cfg = get_geometry_config()
    samples = _sample_arcs(skeleton, n)
    best = math.inf
    for idx, (arc_i, s_i, x_i) in enumerate(samples):
        # self approach: points more than (almost) half an osculating turn apart
        c_max = _curvature_bound(Skeleton((arc_i,)), n)
        if c_max > 0.0:
            gap_min = 0.9 * math.pi / c_max
            d = np.linalg.norm(x_i[:, None, :] - x_i[None, :, :], axis=2)
            far = _periodic_gap(arc_i, s_i[:, None], s_i[None, :]) >= gap_min
            if np.any(far):
                best = min(best, float(np.min(d[far])))
        tree = cKDTree(x_i)
        for arc_j, s_j, x_j in samples[idx + 1:]:
            shared = [
                (a, b)
                for k in skeleton.knots
                for a in k.abscissa_on(arc_i.id)
                for b in k.abscissa_on(arc_j.id)
            ]
            dist, nearest = tree.query(x_j)
            keep = np.ones(len(s_j), dtype=bool)
            excl = cfg["knot_exclusion"] * min(arc_i.length, arc_j.length)
            for a, b in shared:
                near_j = _periodic_gap(arc_j, s_j, b) < excl
                near_i = _periodic_gap(arc_i, s_i[nearest], a) < excl
                keep &= ~(near_j | near_i)
            if np.any(keep):
                best = min(best, float(np.min(dist[keep])))
    return best


def estimate_delta0(skeleton: Skeleton, n: Optional[int] = None) -> float:
    """Sufficient injectivity bound min(1/max c, clearance/2), sampled."""
    n = n or get_geometry_config()["validation_samples"]
    c_max = _curvature_bound(skeleton, n)
    bound = 1.0 / c_max if c_max > 0.0 else math.inf
    bound = min(bound, 0.5 * _clearance(skeleton, n))
    if not math.isfinite(bound):
        bound = 0.5 * min(arc.length for arc in skeleton.arcs)
    return float(bound)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    passed: bool
    details: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "details": list(self.details)}


@dataclass
class ValidationReport:
    checks: Dict[str, CheckResult]
    delta0: Optional[float]
    metrics: Dict[str, Any] = field(default_factory=dict)

    @property
    def usable(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failing(self) -> List[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "usable": self.usable,
            "delta0": self.delta0,
            "checks": {name: c.to_dict() for name, c in self.checks.items()},
            "metrics": dict(self.metrics),
        }


def _check_connected(skeleton: Skeleton) -> CheckResult:
    comps = skeleton.components()
    if len(comps) <= 1:
        return CheckResult(True)
    return CheckResult(False, [f"{len(comps)} components: {sorted(sorted(c) for c in comps)}"])


def _check_knots(skeleton: Skeleton) -> CheckResult:
    tol = get_tolerances()
    details = []
    for knot in skeleton.knots:
        if len(knot.incidences) < 2:
            details.append(f"knot {knot.id}: fewer than two incidences")
        if knot.rho < 1.0:
            details.append(f"knot {knot.id}: rho {knot.rho} < 1")
        for arc_id, a in knot.incidences:
            arc = skeleton.arc(arc_id)
            if not -1e-12 <= a <= arc.length * (1 + 1e-12):
                details.append(f"knot {knot.id}: abscissa {a} outside arc {arc_id}")
                continue
            gap = float(np.linalg.norm(arc.position(a)[0] - knot.position))
            if gap > tol["tol_knot_rel"] * max(arc.length, 1.0):
                details.append(f"knot {knot.id}: arc {arc_id} passes {gap:.3e} away")
    return CheckResult(not details, details)


def _check_tangency(skeleton: Skeleton) -> CheckResult:
    tol = get_tolerances()
    details = []
    for knot in skeleton.knots:
        tangents = []
        for arc_id, a in knot.incidences:
            try:
                tangents.append((arc_id, skeleton.arc(arc_id).frames(a)["T"][0]))
            except (FrameUndefined, OutOfRange):
                continue
        for p in range(len(tangents)):
            for q in range(p + 1, len(tangents)):
                (i, ti), (j, tj) = tangents[p], tangents[q]
                if i == j and skeleton.arc(i).closed:
                    continue
                dot = abs(float(ti @ tj))
                if dot > 1.0 - tol["tol_tangency"]:
                    details.append(f"knot {knot.id}: arcs {i} and {j} tangent (|T.T|={dot:.9f})")
    return CheckResult(not details, details)


def _check_frames(skeleton: Skeleton, n: int) -> Tuple[CheckResult, CheckResult, Dict[str, float]]:
    tol = get_tolerances()
    details = []
    jumps = []
    worst = {"orthonormality": 0.0, "cross": 0.0, "frenet_fd": 0.0, "frame_jump": 0.0}
    for arc in skeleton.arcs:
        s = arc.sample(n)
        try:
            data = arc.frames(s)
        except FrameUndefined as e:
            details.append(str(e))
            continue
        defects = frame_defects(data)
        for key in ("orthonormality", "cross"):
            worst[key] = max(worst[key], defects[key])
        if defects["orthonormality"] > 1e3 * tol["tol_frame"]:
            details.append(f"arc {arc.id}: frame not orthonormal ({defects['orthonormality']:.3e})")
        # dT/ds = c N, second-order differences on the sample grid
        ds = s[1] - s[0]
        dT = (data["T"][2:] - data["T"][:-2]) / (2 * ds)
        fd = float(np.max(np.linalg.norm(dT - data["c"][1:-1, None] * data["N"][1:-1], axis=1)))
        worst["frenet_fd"] = max(worst["frenet_fd"], fd)
        # |dN/ds| = sqrt(c^2 + tau^2) bounds the step between neighbouring samples
        step = np.linalg.norm(np.diff(data["N"], axis=0), axis=1)
        rate = np.hypot(data["c"], data["tau"])
        excess = step - 2.0 * np.maximum(rate[:-1], rate[1:]) * ds - 1e3 * tol["tol_frame"]
        worst["frame_jump"] = max(worst["frame_jump"], float(max(excess.max(), 0.0)))
        for i in np.flatnonzero(excess > 0.0)[:3]:
            jumps.append(
                f"arc {arc.id}: normal jumps by {step[i]:.3e} between s={s[i]:.6g} and s={s[i + 1]:.6g}"
            )
        if arc.closed:
            ends = arc.frames(np.array([0.0, arc.length]))
            jump = max(
                float(np.linalg.norm(ends[key][0] - ends[key][1])) for key in ("T", "N", "B")
            )
            if jump > max(tol["tol_frame"], 1e-8):
                details.append(f"arc {arc.id}: closed arc frame not periodic (jump {jump:.3e})")
    return CheckResult(not details, details), CheckResult(not jumps, jumps), worst


def _check_intersections(skeleton: Skeleton, n: int) -> CheckResult:
    samples = _sample_arcs(skeleton, n)
    points = np.vstack([x for _, _, x in samples])
    owner = np.concatenate([np.full(len(s), arc.id) for arc, s, _ in samples])
    abscissa = np.concatenate([s for _, s, _ in samples])
    spacing = max(arc.length / (n - 1) for arc in skeleton.arcs)
    radius = 0.75 * spacing
    details = []
    reported = set()
    for p, q in cKDTree(points).query_pairs(radius):
        i, j = int(owner[p]), int(owner[q])
        if i == j:
            arc = skeleton.arc(i)
            if _periodic_gap(arc, abscissa[p], abscissa[q]) <= 3 * spacing:
                continue
        midpoint = 0.5 * (points[p] + points[q])
        explained = any(
            np.linalg.norm(k.position - midpoint) <= 3 * spacing
            and {i, j} <= {a for a, _ in k.incidences}
            for k in skeleton.knots
        )
        if not explained and (i, j) not in reported:
            reported.add((i, j))
            where = ", ".join(f"{v:.4g}" for v in midpoint)
            details.append(f"arcs {i} and {j} meet near ({where}) without a declared knot")
    return CheckResult(not details, details)


def validate_skeleton(skeleton: Skeleton, n: Optional[int] = None) -> ValidationReport:
    """
    Check the structural hypotheses and compute delta0.

    Failures are report entries; nothing is raised and the skeleton is not modified.

    Args:
        skeleton: Skeleton to check
        n: Samples per arc (defaults to GEOMETRY_CONFIG["validation_samples"])

    Returns:
        ValidationReport with one check per hypothesis
    """
    n = n or get_geometry_config()["validation_samples"]
    frames, continuity, frame_metrics = _check_frames(skeleton, n)
    checks = {
        "connected": _check_connected(skeleton),
        "intersections_at_knots": _check_intersections(skeleton, n),
        "non_tangent": _check_tangency(skeleton),
        "frames_defined": frames,
        "frames_continuous": continuity,
        "knots": _check_knots(skeleton),
    }
    delta0 = estimate_delta0(skeleton, n) if frames.passed else None
    report = ValidationReport(checks, delta0, {"samples_per_arc": n, **frame_metrics})
    log_event(
        "skeleton_validated",
        usable=report.usable,
        failing=report.failing(),
        delta0=delta0,
        arcs=len(skeleton.arcs),
        knots=len(skeleton.knots),
    )
    return report


# ---------------------------------------------------------------------------
# Junctions
# ---------------------------------------------------------------------------


def junction_extent(
    skeleton: Skeleton, knot: Knot, delta: float, rho: Optional[float] = None
) -> List[JunctionInterval]:
    """
    Per-arc intervals ]a - rho*delta, a + rho*delta[ around a knot, clipped to [0, L].

    Closed arcs wrap: a knot at an arc end also yields the interval at the other end.
    """
    if not 0.0 < delta <= skeleton.delta0 * (1 + 1e-12):
        raise DeltaTooLarge(f"delta={delta} outside (0, delta0={skeleton.delta0:.6g}]")
    rho = knot.rho if rho is None else float(rho)
    if rho < 1.0:
        raise ValueError("rho must be at least 1")
    out = []
    for arc_id, a in knot.incidences:
        arc = skeleton.arc(arc_id)
        lo, hi = a - rho * delta, a + rho * delta
        out.append(JunctionInterval(arc_id, max(lo, 0.0), min(hi, arc.length)))
        if arc.closed and lo < 0.0:
            out.append(JunctionInterval(arc_id, arc.length + lo, arc.length))
        if arc.closed and hi > arc.length:
            out.append(JunctionInterval(arc_id, 0.0, hi - arc.length))
    return out


def _distance_to_centerline(points: np.ndarray, line: np.ndarray) -> np.ndarray:
    """Distance from points to a densely sampled polyline (segment projection)."""
    tree = cKDTree(line)
    _, idx = tree.query(points)
    best = np.full(len(points), np.inf)
    for shift in (-1, 0):
        a = np.clip(idx + shift, 0, len(line) - 2)
        p0, p1 = line[a], line[a + 1]
        d = p1 - p0
        t = np.clip(np.einsum("ij,ij->i", points - p0, d) / np.einsum("ij,ij->i", d, d), 0, 1)
        best = np.minimum(best, np.linalg.norm(points - (p0 + t[:, None] * d), axis=1))
    return best


def minimal_covering_rho(skeleton: Skeleton, knot: Knot, delta: float) -> Dict[str, float]:
    """
    Smallest rho whose junction intervals cover the pairwise tube overlaps at a knot.

    Returns:
        {"tube_overlap": rho for full cross-sections, "centerline": rho for the
        centerline points of one arc lying inside another arc's tube}
    """
    n = get_geometry_config()["covering_samples"]
    reach = 8.0
    theta = np.linspace(0.0, 2 * np.pi, 16, endpoint=False)
    radii = np.linspace(0.0, 1.0, 6)
    rho_tube, rho_line = 1.0, 1.0
    pieces = []
    for arc_id, a in knot.incidences:
        arc = skeleton.arc(arc_id)
        lo, hi = max(a - reach * delta, 0.0), min(a + reach * delta, arc.length)
        s = np.linspace(lo, hi, 8 * n + 1)
        pieces.append((arc_id, a, arc, s, arc.frames(s)))
    for p, (i, a_i, arc_i, s_i, f_i) in enumerate(pieces):
        for q, (j, a_j, arc_j, s_j, f_j) in enumerate(pieces):
            if p == q:
                continue
            line_j = f_j["x"]
            in_line = _distance_to_centerline(f_i["x"], line_j) < delta
            if np.any(in_line):
                rho_line = max(rho_line, float(np.max(np.abs(s_i[in_line] - a_i))) / delta)
            yy = radii[:, None] * np.cos(theta)[None, :]
            zz = radii[:, None] * np.sin(theta)[None, :]
            offsets = delta * (
                yy.reshape(-1)[None, :, None] * f_i["N"][:, None, :]
                + zz.reshape(-1)[None, :, None] * f_i["B"][:, None, :]
            )
            pts = (f_i["x"][:, None, :] + offsets).reshape(-1, 3)
            inside = (_distance_to_centerline(pts, line_j) < delta).reshape(len(s_i), -1)
            hit = np.any(inside, axis=1)
            if np.any(hit):
                rho_tube = max(rho_tube, float(np.max(np.abs(s_i[hit] - a_i))) / delta)
    return {"tube_overlap": rho_tube, "centerline": rho_line}


def effective_rho(skeleton: Skeleton, knot: Knot, delta: float) -> float:
    """Declared rho, raised to the sampled covering value when the angle is shallow."""
    covering = minimal_covering_rho(skeleton, knot, delta)["tube_overlap"]
    if covering > knot.rho:
        log_event("rho_raised", knot=knot.id, declared=knot.rho, effective=covering)
    return max(knot.rho, covering)
