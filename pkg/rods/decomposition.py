"""
Tube Field Decomposition

Sampled 3D displacements in thin tubes around arcs: strain and gradient
energies, elementary rod fits, rigid junction blending and estimate tables.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from configs.rod_config import get_decomposition_config, worker_count
from rods.atomic_io import atomic_write_json, atomic_write_text
from rods.errors import GridTooCoarse, OverlappingJunctions, ParseError, RankDeficient
from rods.events import log_event
from rods.geometry import ArcGeometry, Knot, Skeleton, effective_rho, junction_extent
from rods.spaces import SkeletonField, build_mesh, project_DI

Displacement = Callable[[np.ndarray], np.ndarray]

MIN_SECTION_POINTS = 12

FAMILIES = ("rigid", "extension", "bending", "torsion")


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def disc_quadrature(n_radial: int, n_angular: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss in radius times uniform angle on the unit disc.

    Returns:
        (Y (n, 2), weights (n,)) with weights summing to pi
    """
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * (xg + 1.0)
    wr = 0.5 * wg * r
    theta = 2.0 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    Y = np.stack(
        [(r[:, None] * np.cos(theta)[None, :]).ravel(), (r[:, None] * np.sin(theta)[None, :]).ravel()],
        axis=1,
    )
    w = (wr[:, None] * np.full(n_angular, 2.0 * np.pi / n_angular)[None, :]).ravel()
    return Y, w


def sample_ball(
    center: np.ndarray, radius: float, n_radial: int = 3, n_polar: int = 4, n_azimuth: int = 8
) -> Tuple[np.ndarray, np.ndarray]:
    """Points and volume weights of a product rule on the ball B(center, radius)."""
    xr, wr = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * radius * (xr + 1.0)
    wr = 0.5 * radius * wr * r**2
    xc, wc = np.polynomial.legendre.leggauss(n_polar)  # cos(polar angle)
    phi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    wphi = 2.0 * np.pi / n_azimuth
    R, C, P = np.meshgrid(r, xc, phi, indexing="ij")
    W = wr[:, None, None] * wc[None, :, None] * wphi
    S = np.sqrt(1.0 - C**2)
    pts = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * C], axis=-1).reshape(-1, 3)
    return np.asarray(center, dtype=float) + pts, np.broadcast_to(W, R.shape).reshape(-1).copy()


# ---------------------------------------------------------------------------
# Tube fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TubeField:
    """
    Displacement samples u(s, y2, y3) at Phi(s, y2, y3) on one arc's tube.

    y holds physical cross-section offsets (|y| <= delta) and weights the
    matching disc quadrature weights (summing to pi delta^2).
    """

    arc_id: int
    delta: float
    s: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    values: np.ndarray  # (n_s, n_d, 3)
    arc: Optional[ArcGeometry] = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ParseError(f"delta must be positive, got {self.delta}")
        if self.values.shape != (len(self.s), len(self.y), 3):
            raise ParseError(
                f"values shape {self.values.shape} does not match grid ({len(self.s)}, {len(self.y)}, 3)"
            )

    @property
    def Y(self) -> np.ndarray:
        return self.y / self.delta

    @classmethod
    def from_function(
        cls,
        arc: ArcGeometry,
        delta: float,
        fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
        s: Optional[np.ndarray] = None,
        n_radial: Optional[int] = None,
        n_angular: Optional[int] = None,
    ) -> "TubeField":
        """Sample fn(s, y2, y3) -> (..., 3) on the default or given grid."""
        cfg = get_decomposition_config()
        if s is None:
            n = max(3, int(math.ceil(cfg["sections_per_delta"] * arc.length / delta)) + 1)
            s = np.linspace(0.0, arc.length, n)
        Y, w = disc_quadrature(n_radial or cfg["n_radial"], n_angular or cfg["n_angular"])
        y = delta * Y
        S = np.repeat(np.asarray(s, dtype=float)[:, None], len(y), axis=1)
        values = np.asarray(fn(S, np.broadcast_to(y[:, 0], S.shape), np.broadcast_to(y[:, 1], S.shape)))
        return cls(arc.id, float(delta), np.asarray(s, dtype=float), y, delta**2 * w, values, arc)

    @classmethod
    def from_displacement(
        cls, arc: ArcGeometry, delta: float, u: Displacement, **grid: Any
    ) -> "TubeField":
        """Sample a displacement given as a function of the physical point x."""

        def fn(S, y2, y3):
            fr = arc.frames(S[:, 0])
            x = fr["x"][:, None, :] + y2[..., None] * fr["N"][:, None, :] + y3[..., None] * fr["B"][:, None, :]
            return np.asarray(u(x.reshape(-1, 3))).reshape(x.shape)

        return cls.from_function(arc, delta, fn, **grid)

    def points(self) -> np.ndarray:
        """Physical positions of the samples (n_s, n_d, 3)."""
        fr = self._frames()
        return (
            fr["x"][:, None, :]
            + self.y[None, :, 0, None] * fr["N"][:, None, :]
            + self.y[None, :, 1, None] * fr["B"][:, None, :]
        )

    def _frames(self) -> Dict[str, np.ndarray]:
        if self.arc is None:
            raise ValueError(f"tube field on arc {self.arc_id} has no attached geometry")
        return self.arc.frames(self.s)

    def with_values(self, values: np.ndarray) -> "TubeField":
        return replace(self, values=np.asarray(values, dtype=float))

    def l2_norm_sq(self) -> float:
        """||u||^2 over the tube, with the volume factor 1 - c y2."""
        fr = self._frames()
        det = 1.0 - fr["c"][:, None] * self.y[None, :, 0]
        section = np.sum(self.weights[None, :] * det * np.sum(self.values**2, axis=2), axis=1)
        return float(simpson(section, x=self.s))


@dataclass(frozen=True, eq=False)
class UnfoldedField:
    """Samples on the reference cylinder (0, L) x D(0, 1)."""

    arc_id: int
    s: np.ndarray
    Y: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def section_l2_sq(self) -> np.ndarray:
        return np.sum(self.weights[None, :] * np.sum(self.values**2, axis=2), axis=1)


def unfold(field: TubeField) -> UnfoldedField:
    """Reindex samples by Y = y / delta; values unchanged."""
    return UnfoldedField(
        field.arc_id, field.s.copy(), field.y / field.delta, field.weights / field.delta**2, field.values.copy()
    )


def refold(unfolded: UnfoldedField, delta: float, arc: Optional[ArcGeometry] = None) -> TubeField:
    return TubeField(
        unfolded.arc_id,
        float(delta),
        unfolded.s.copy(),
        delta * unfolded.Y,
        delta**2 * unfolded.weights,
        unfolded.values.copy(),
        arc,
    )


def write_tube_field(field: TubeField, path: str) -> Dict[str, Any]:
    """CSV rows (s, Y2, Y3, u1, u2, u3) plus a JSON header next to it."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "Y2", "Y3", "u1", "u2", "u3"])
    Y = field.Y
    for i, s in enumerate(field.s):
        for d in range(len(Y)):
            u = field.values[i, d]
            writer.writerow([repr(float(s)), repr(float(Y[d, 0])), repr(float(Y[d, 1]))] + [repr(float(v)) for v in u])
    result = atomic_write_text(path, buf.getvalue())
    atomic_write_json(
        _header_path(path),
        {
            "arc_id": field.arc_id,
            "delta": field.delta,
            "n_sections": len(field.s),
            "n_disc": len(field.y),
            "weights": [float(w) for w in field.weights / field.delta**2],
        },
    )
    return result


def _header_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + ".json"


def read_tube_field(path: str, skeleton: Optional[Skeleton] = None) -> TubeField:
    try:
        with open(_header_path(path)) as f:
            header = json.load(f)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read tube field {path}: {e}") from e
    if not rows or rows[0] != ["s", "Y2", "Y3", "u1", "u2", "u3"]:
        raise ParseError(f"{path}: unexpected tube field header")
    try:
        n_s, n_d, delta = int(header["n_sections"]), int(header["n_disc"]), float(header["delta"])
        arc_id = int(header["arc_id"])
        weights = np.asarray(header["weights"], dtype=float)
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: malformed tube field: {e}") from e
    if data.shape != (n_s * n_d, 6):
        raise ParseError(f"{path}: expected {n_s * n_d} samples, found {len(data)}")
    if weights.shape != (n_d,):
        raise ParseError(f"{path}: expected {n_d} disc weights, found {weights.size}")
    data = data.reshape(n_s, n_d, 6)
    arc = None
    if skeleton is not None:
        try:
            arc = skeleton.arc(arc_id)
        except KeyError:
            raise ParseError(f"{path}: tube field on unknown arc {arc_id}") from None
    return TubeField(
        arc_id,
        delta,
        data[:, 0, 0],
        delta * data[0, :, 1:3],
        delta**2 * weights,
        data[:, :, 3:6],
        arc,
    )


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def _monomials(Y: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and Y2/Y3 derivatives of all monomials Y2^p Y3^q with p + q <= degree."""
    powers = [(p, q) for total in range(degree + 1) for p in range(total + 1) for q in [total - p]]
    y2, y3 = Y[:, 0], Y[:, 1]
    V = np.stack([y2**p * y3**q for p, q in powers], axis=1)
    D2 = np.stack([p * y2 ** max(p - 1, 0) * y3**q for p, q in powers], axis=1)
    D3 = np.stack([q * y2**p * y3 ** max(q - 1, 0) for p, q in powers], axis=1)
    return V, D2, D3


def _gradients(field: TubeField) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cartesian gradients du_k/dx_l at every sample and the volume factor.

    Cross-section derivatives come from a per-section polynomial fit, the
    s-derivative from second-order finite differences; both are mapped to x
    through the inverse Jacobian of the tube map.
    """
    cfg = get_decomposition_config()
    n_s, n_d = len(field.s), len(field.y)
    V, D2, D3 = _monomials(field.Y, int(cfg["fit_degree"]))
    if n_s < 3 or n_d < max(MIN_SECTION_POINTS, V.shape[1]):
        raise GridTooCoarse(
            f"tube grid {n_s} sections x {n_d} disc points is too coarse "
            f"(need >= 3 sections and >= {max(MIN_SECTION_POINTS, V.shape[1])} points)"
        )
    pinv = np.linalg.pinv(V)
    du_dy2 = np.einsum("dt,te,sec->sdc", D2, pinv, field.values) / field.delta
    du_dy3 = np.einsum("dt,te,sec->sdc", D3, pinv, field.values) / field.delta
    du_ds = np.gradient(field.values, field.s, axis=0, edge_order=2)

    fr = field._frames()
    T, N, B, c, tau = fr["T"], fr["N"], fr["B"], fr["c"], fr["tau"]
    y2, y3 = field.y[None, :, 0], field.y[None, :, 1]
    det = 1.0 - c[:, None] * y2
    ds_col = (
        det[..., None] * T[:, None, :]
        - (tau[:, None] * y3)[..., None] * N[:, None, :]
        + (tau[:, None] * y2)[..., None] * B[:, None, :]
    )
    J = np.empty((n_s, n_d, 3, 3))
    J[..., :, 0] = ds_col
    J[..., :, 1] = N[:, None, :]
    J[..., :, 2] = B[:, None, :]
    du_dq = np.stack([du_ds, du_dy2, du_dy3], axis=-1)  # [k, m]
    grad = np.einsum("sdkm,sdml->sdkl", du_dq, np.linalg.inv(J))
    return grad, det


def _integrate(field: TubeField, density: np.ndarray, det: np.ndarray) -> float:
    section = np.sum(field.weights[None, :] * det * density, axis=1)
    return float(simpson(section, x=field.s))


def energy_functionals(field: TubeField) -> Tuple[float, float]:
    """
    Strain energy E(u) = int gamma:gamma and gradient energy D(u) = int grad u : grad u.

    Raises:
        GridTooCoarse: fewer than 3 sections or too few disc points
    """
    grad, det = _gradients(field)
    gamma = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    E = _integrate(field, np.sum(gamma**2, axis=(-1, -2)), det)
    D = _integrate(field, np.sum(grad**2, axis=(-1, -2)), det)
    return E, D


def elastic_energy(field: TubeField, material: Any) -> float:
    """int a_ljkh gamma_lj gamma_kh with the isotropic tensor of material."""
    grad, det = _gradients(field)
    gamma = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    a = material.elasticity_tensor()
    density = np.einsum("ljkh,sdlj,sdkh->sd", a, gamma, gamma)
    return _integrate(field, density, det)


# ---------------------------------------------------------------------------
# Elementary displacements
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ElementaryDisplacement:
    """U_e(s, y2, y3) = U(s) + R(s) x (y2 N(s) + y3 B(s)) on one arc."""

    arc_id: int
    s: np.ndarray
    U: np.ndarray
    R: np.ndarray
    N: np.ndarray
    B: np.ndarray
    rigid_intervals: Tuple[Tuple[float, float], ...] = ()

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        """Values on the grid (s) x (y rows), shape (n_s, n_d, 3)."""
        r = y[None, :, 0, None] * self.N[:, None, :] + y[None, :, 1, None] * self.B[:, None, :]
        return self.U[:, None, :] + np.cross(self.R[:, None, :], r)

    def on_grid(self, field: TubeField) -> TubeField:
        return field.with_values(self.evaluate(field.y))

    def dU(self) -> np.ndarray:
        return np.gradient(self.U, self.s, axis=0, edge_order=2)

    def dR(self) -> np.ndarray:
        return np.gradient(self.R, self.s, axis=0, edge_order=2)


def _skew(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _rigid_normal_equations(r: np.ndarray, u: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normal equations of min sum w |u - a - b x r|^2 over leading batch axes.

    r, u: (..., n, 3); w: (n,). Returns (M (..., 6, 6), rhs (..., 6)).
    """
    m0 = np.sum(w)
    m1 = np.einsum("n,...nc->...c", w, r)
    rr = np.einsum("n,...ni,...nj->...ij", w, r, r)
    second = np.einsum("...ii->...", rr)[..., None, None] * np.eye(3) - rr
    M = np.zeros(m1.shape[:-1] + (6, 6))
    M[..., :3, :3] = m0 * np.eye(3)
    M[..., :3, 3:] = -_skew(m1)
    M[..., 3:, :3] = _skew(m1)
    M[..., 3:, 3:] = second
    rhs = np.concatenate(
        [np.einsum("n,...nc->...c", w, u), np.einsum("n,...nc->...c", w, np.cross(r, u))], axis=-1
    )
    return M, rhs


def _solve_rigid(M: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    sv = np.linalg.svd(M, compute_uv=False)
    if np.any(sv[..., -1] <= 1e-12 * sv[..., 0]):
        raise RankDeficient(f"{what}: sampling does not determine a rigid displacement")
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def elementary_decompose(field: TubeField) -> ElementaryDisplacement:
    """
    Per-section least-squares fit of U + R x (y2 N + y3 B).

    The residual has zero cross-section mean and zero rotational moment
    sum w r x (u - U_e); see section_moments.

    Raises:
        RankDeficient: degenerate cross-section sampling
    """
    if len(field.y) < MIN_SECTION_POINTS:
        raise GridTooCoarse(f"{len(field.y)} disc points per section, need {MIN_SECTION_POINTS}")
    fr = field._frames()
    r = field.y[None, :, 0, None] * fr["N"][:, None, :] + field.y[None, :, 1, None] * fr["B"][:, None, :]
    M, rhs = _rigid_normal_equations(r, field.values, field.weights)
    x = _solve_rigid(M, rhs, f"arc {field.arc_id}")
    return ElementaryDisplacement(field.arc_id, field.s.copy(), x[:, :3], x[:, 3:], fr["N"], fr["B"])


def section_moments(field: TubeField, elementary: ElementaryDisplacement) -> Dict[str, float]:
    """Max over sections of the residual mean, rotational moment and symmetric first moment."""
    res = field.values - elementary.evaluate(field.y)
    w = field.weights
    r = field.y[None, :, 0, None] * elementary.N[:, None, :] + field.y[None, :, 1, None] * elementary.B[:, None, :]
    mean = np.einsum("d,sdc->sc", w, res)
    rot = np.einsum("d,sdc->sc", w, np.cross(r, res))
    first = np.einsum("d,sdi,sdj->sij", w, r, res)
    sym = 0.5 * (first + np.swapaxes(first, 1, 2))
    return {
        "mean": float(np.abs(mean).max()),
        "rotational_moment": float(np.abs(rot).max()),
        "symmetric_moment": float(np.abs(sym).max()),
    }


def rigid_fit_ball(
    points: np.ndarray, values: np.ndarray, center: np.ndarray, weights: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rigid displacement a + b x (x - A) closest to the samples in mean square.

    Returns:
        (a, b)

    Raises:
        RankDeficient: fewer than 20 samples or samples on a line
    """
    points = np.asarray(points, dtype=float)
    if len(points) < 20:
        raise RankDeficient(f"rigid fit needs at least 20 samples, got {len(points)}")
    w = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=float)
    M, rhs = _rigid_normal_equations(points - np.asarray(center, dtype=float), np.asarray(values, dtype=float), w)
    x = _solve_rigid(M, rhs, "ball fit")
    return x[:3], x[3:]


def cutoff_m(t, rho: float):
    """Even quintic smoothstep: 0 on [0, rho], 1 beyond rho + 1."""
    if rho < 1.0:
        raise ValueError("rho must be at least 1")
    x = np.clip(np.abs(np.asarray(t, dtype=float)) - rho, 0.0, 1.0)
    out = x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Junctions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnotFit:
    knot_id: int
    a: np.ndarray
    b: np.ndarray
    rho: float


@dataclass(frozen=True, eq=False)
class StructureElementary:
    arcs: Dict[int, ElementaryDisplacement]
    knots: Dict[int, KnotFit] = field(default_factory=dict)
    delta: float = 0.0


def fit_knots(
    skeleton: Skeleton, delta: float, u: Displacement, rho: Optional[float] = None
) -> Dict[int, KnotFit]:
    """Rigid fit of u on the ball B(A, ball_fraction * delta) at every knot."""
    cfg = get_decomposition_config()
    fits = {}
    for knot in skeleton.knots:
        pts, w = sample_ball(knot.position, cfg["ball_fraction"] * delta)
        a, b = rigid_fit_ball(pts, u(pts), knot.position, w)
        k_rho = effective_rho(skeleton, knot, delta) if rho is None else max(float(rho), knot.rho)
        fits[knot.id] = KnotFit(knot.id, a, b, k_rho)
    return fits


def _offsets(arc: ArcGeometry, s: np.ndarray, a: float) -> np.ndarray:
    d = s - a
    if arc.closed:
        d = (d + 0.5 * arc.length) % arc.length - 0.5 * arc.length
    return d


def rigidify_junctions(
    elementary: Dict[int, ElementaryDisplacement],
    skeleton: Skeleton,
    delta: float,
    fits: Dict[int, KnotFit],
) -> StructureElementary:
    """
    Blend each arc's elementary displacement into the rigid fit at its knots.

    Inside |s - a| < rho delta the result is a + b x (M(s) - A) with rotation
    b; beyond (rho + 1) delta it is the input; in between the quintic cutoff
    mixes the two. Knots missing from fits are left unblended.

    Raises:
        OverlappingJunctions: blend zones of two knots meet on one arc
        DeltaTooLarge: delta above delta0
    """
    for knot in skeleton.knots:
        if knot.id in fits:
            junction_extent(skeleton, knot, delta, fits[knot.id].rho)
    out: Dict[int, ElementaryDisplacement] = {}
    for arc_id, elem in elementary.items():
        arc = skeleton.arc(arc_id)
        on_arc: List[Tuple[Knot, float]] = [(k, a) for k, a in skeleton.knots_on(arc_id) if k.id in fits]
        zones = [(a, (fits[k.id].rho + 1.0) * delta) for k, a in on_arc]
        for i in range(len(zones)):
            for j in range(i + 1, len(zones)):
                gap = abs(float(_offsets(arc, np.array([zones[i][0]]), zones[j][0])[0]))
                if gap < zones[i][1] + zones[j][1]:
                    raise OverlappingJunctions(
                        f"arc {arc_id}: blend zones around s={zones[i][0]:g} and s={zones[j][0]:g} "
                        f"overlap at delta={delta:g}; use a smaller delta"
                    )
        U, R = elem.U.copy(), elem.R.copy()
        x = arc.frames(elem.s)["x"]
        rigid = []
        for knot, a in on_arc:
            fit = fits[knot.id]
            m = cutoff_m(_offsets(arc, elem.s, a) / delta, fit.rho)[:, None]
            U_rigid = fit.a + np.cross(fit.b, x - knot.position)
            U = m * U + (1.0 - m) * U_rigid
            R = m * R + (1.0 - m) * fit.b
            rigid.append((a - fit.rho * delta, a + fit.rho * delta))
        out[arc_id] = replace(elem, U=U, R=R, rigid_intervals=tuple(rigid))
    return StructureElementary(out, dict(fits), float(delta))


def rigidification_terms(
    before: ElementaryDisplacement, after: ElementaryDisplacement, delta: float
) -> float:
    """||U - U'||^2 + delta^2 ||dU - dU'||^2 + delta^2 ||R - R'||^2 along the arc."""
    s = before.s
    dU = after.U - before.U
    ddU = after.dU() - before.dU()
    dR = after.R - before.R
    return float(
        simpson(np.sum(dU**2, axis=1), x=s)
        + delta**2 * simpson(np.sum(ddU**2, axis=1), x=s)
        + delta**2 * simpson(np.sum(dR**2, axis=1), x=s)
    )


# ---------------------------------------------------------------------------
# Synthetic families and estimate tables
# ---------------------------------------------------------------------------


def synthetic_family(name: str, amplitude: float = 1.0) -> Displacement:
    """
    Test displacements of x: rigid, extension, bending about x3, torsion about x1.
    """
    k = float(amplitude)
    if name == "rigid":
        a = k * np.array([1.0, -2.0, 0.5])
        b = k * np.array([0.3, -0.2, 0.7])
        return lambda x: a + np.cross(b, x)
    if name == "extension":
        return lambda x: k * np.stack([x[..., 0], np.zeros_like(x[..., 0]), np.zeros_like(x[..., 0])], axis=-1)
    if name == "bending":
        return lambda x: k * np.stack(
            [-x[..., 0] * x[..., 1], 0.5 * x[..., 0] ** 2, np.zeros_like(x[..., 0])], axis=-1
        )
    if name == "torsion":
        return lambda x: k * np.stack(
            [np.zeros_like(x[..., 0]), -x[..., 0] * x[..., 2], x[..., 0] * x[..., 1]], axis=-1
        )
    raise ParseError(f"unknown displacement family {name!r}; expected one of {FAMILIES}")


def _arc_terms(arc: ArcGeometry, delta: float, u: Displacement) -> Dict[str, Any]:
    tube = TubeField.from_displacement(arc, delta, u)
    E, D = energy_functionals(tube)
    return {"tube": tube, "E": E, "D": D, "elementary": elementary_decompose(tube)}


def _splitting_terms(skeleton: Skeleton, structure: StructureElementary, delta: float) -> float:
    """delta^2 (||U_E||^2_H1 + delta^2 ||U_I||^2_H1 + sum ||U_I' - R x T||^2) for the fitted U."""
    h = min(delta, min(a.length for a in skeleton.arcs) / 4.0)
    mesh = build_mesh(skeleton, h)

    def interp(arc: ArcGeometry, s: np.ndarray, key: str) -> np.ndarray:
        elem = structure.arcs[arc.id]
        data = getattr(elem, key)
        return np.stack([np.interp(s, elem.s, data[:, c]) for c in range(3)], axis=1)

    U = SkeletonField.from_function(mesh, lambda arc, s: interp(arc, s, "U"))
    U_I, U_E = project_DI(U)
    ops = mesh.operators
    H1 = ops.stiffness + ops.mass
    q = mesh.quadrature
    R_q = np.zeros((q.size, 3))
    for arc in skeleton.arcs:
        sel = q.arc_id == arc.id
        R_q[sel] = interp(arc, q.s[sel], "R")
    _, dU_I = U_I.at_quadrature()
    mismatch = float(np.sum(q.weight * np.sum((dU_I - np.cross(R_q, q.T)) ** 2, axis=1)))
    return delta**2 * (
        float(U_E.dofs @ (H1 @ U_E.dofs)) + delta**2 * float(U_I.dofs @ (H1 @ U_I.dofs)) + mismatch
    )


def _ratio(num: float, den: float) -> Optional[float]:
    return None if den <= 0.0 else num / den


def _negligible(E: float, D: float) -> bool:
    """Strain energy at round-off level relative to the gradient energy (rigid fields)."""
    return E <= 1e-12 * max(D, 1e-300)


def _estimate_numerators(
    skeleton: Skeleton, delta: float, per_arc: Dict[int, Dict[str, Any]], structure: StructureElementary
) -> Dict[str, float]:
    """Residual, rotation and rigidification terms summed over the sampled arcs."""
    out = dict.fromkeys(("gradient_residual", "l2_residual", "rotation", "rigidification"), 0.0)
    for arc_id, terms in per_arc.items():
        tube = terms["tube"]
        elem = structure.arcs[arc_id]
        residual = tube.with_values(tube.values - elem.evaluate(tube.y))
        out["gradient_residual"] += energy_functionals(residual)[1]
        out["l2_residual"] += residual.l2_norm_sq()
        T = skeleton.arc(arc_id).frames(elem.s)["T"]
        out["rotation"] += delta**2 * float(
            delta**2 * simpson(np.sum(elem.dR() ** 2, axis=1), x=elem.s)
            + simpson(np.sum((elem.dU() - np.cross(elem.R, T)) ** 2, axis=1), x=elem.s)
        )
        out["rigidification"] += rigidification_terms(terms["elementary"], elem, delta)
    return out


def _estimate_ratios(numerators: Dict[str, float], delta: float, E_ref: float) -> Dict[str, Optional[float]]:
    # the L2 residual is measured against delta^2 E
    return {
        key: _ratio(value, (delta**2 if key == "l2_residual" else 1.0) * E_ref)
        for key, value in numerators.items()
    }


def estimate_row(
    skeleton: Skeleton, delta: float, u: Displacement, rho: Optional[float] = None
) -> Dict[str, Any]:
    """Energies and estimate ratios of one displacement at one thickness."""
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        per_arc = dict(
            zip(
                [a.id for a in skeleton.arcs],
                pool.map(lambda arc: _arc_terms(arc, delta, u), skeleton.arcs),
            )
        )
    fits = fit_knots(skeleton, delta, u, rho) if skeleton.knots else {}
    structure = rigidify_junctions({k: v["elementary"] for k, v in per_arc.items()}, skeleton, delta, fits)

    E = sum(v["E"] for v in per_arc.values())
    D = sum(v["D"] for v in per_arc.values())
    E_ref = 0.0 if _negligible(E, D) else E
    numerators = _estimate_numerators(skeleton, delta, per_arc, structure)
    if skeleton.clamped:
        numerators["splitting"] = _splitting_terms(skeleton, structure, delta)
    return {
        "delta": delta,
        "strain_energy": E,
        "gradient_energy": D,
        "ratios": _estimate_ratios(numerators, delta, E_ref),
        "numerators": numerators,
    }


def fit_knots_from_tube(
    field: TubeField, skeleton: Skeleton, rho: Optional[float] = None
) -> Dict[int, KnotFit]:
    """
    Rigid fit at every knot on the field's arc, from the tube samples of the
    knot's rigid zone |s - a| <= rho delta.

    Raises:
        RankDeficient: the zone holds fewer than 20 samples
    """
    arc = skeleton.arc(field.arc_id)
    points = field.points()
    weights = np.broadcast_to(field.weights, field.values.shape[:2])
    fits = {}
    for knot in {k.id: k for k, _ in skeleton.knots_on(field.arc_id)}.values():
        k_rho = effective_rho(skeleton, knot, field.delta) if rho is None else max(float(rho), knot.rho)
        near = np.zeros(len(field.s), dtype=bool)
        for arc_id, a in knot.incidences:
            if arc_id == field.arc_id:
                near |= np.abs(_offsets(arc, field.s, a)) <= k_rho * field.delta
        a_fit, b_fit = rigid_fit_ball(
            points[near].reshape(-1, 3), field.values[near].reshape(-1, 3), knot.position, weights[near].reshape(-1)
        )
        fits[knot.id] = KnotFit(knot.id, a_fit, b_fit, k_rho)
    return fits


def tube_estimate_row(field: TubeField, skeleton: Skeleton, rho: Optional[float] = None) -> Dict[str, Any]:
    """
    Estimate row of one sampled tube field, with the same numerators and
    ratios as estimate_row; the splitting term needs every arc and is left out.
    """
    if field.arc is None:
        field = replace(field, arc=skeleton.arc(field.arc_id))
    E, D = energy_functionals(field)
    elementary = elementary_decompose(field)
    fits = fit_knots_from_tube(field, skeleton, rho)
    structure = rigidify_junctions({field.arc_id: elementary}, skeleton, field.delta, fits)
    per_arc = {field.arc_id: {"tube": field, "E": E, "D": D, "elementary": elementary}}
    numerators = _estimate_numerators(skeleton, field.delta, per_arc, structure)
    E_ref = 0.0 if _negligible(E, D) else E
    return {
        "arc_id": field.arc_id,
        "delta": field.delta,
        "strain_energy": E,
        "gradient_energy": D,
        "moments": section_moments(field, elementary),
        "rigid_knots": sorted(fits),
        "ratios": _estimate_ratios(numerators, field.delta, E_ref),
        "numerators": numerators,
    }


def estimate_report(
    skeleton: Skeleton,
    family: str,
    deltas: Optional[Sequence[float]] = None,
    amplitude: Optional[float] = None,
    rho: Optional[float] = None,
    displacement: Optional[Displacement] = None,
) -> Dict[str, Any]:
    """
    Estimate ratios of one displacement family over a decreasing list of deltas.

    Ratios must stay bounded as delta shrinks; growth beyond growth_limit
    between the largest and smallest delta is flagged, never raised.

    Returns:
        {"family", "by_delta": {delta: row}, "flags": {ratio: {...}}}
    """
    cfg = get_decomposition_config()
    deltas = sorted((float(d) for d in (deltas or cfg["deltas"])), reverse=True)
    u = displacement or synthetic_family(family, cfg["amplitude"] if amplitude is None else amplitude)
    rows = [estimate_row(skeleton, d, u, rho) for d in deltas]

    flags: Dict[str, Any] = {}
    for key in rows[0]["ratios"]:
        series = [r["ratios"][key] for r in rows]
        if any(v is None for v in series):
            flags[key] = {"bounded": True, "monotone_growth": False, "spread": None}
            continue
        lo, hi = min(series), max(series)
        spread = hi / lo if lo > 0 else (1.0 if hi == 0 else math.inf)
        growth = all(b > a for a, b in zip(series[:-1], series[1:]))
        flags[key] = {
            "bounded": bool(spread <= cfg["growth_limit"] or not growth),
            "monotone_growth": bool(growth),
            "spread": spread,
        }
    report = {
        "family": family,
        "deltas": deltas,
        "by_delta": {repr(r["delta"]): r for r in rows},
        "flags": flags,
    }
    log_event(
        "estimates_computed",
        family=family,
        deltas=deltas,
        unbounded=[k for k, v in flags.items() if not v["bounded"]],
    )
    return report
