"""
Limit Loads

Per-arc force densities, knot forces and point forces for both limit
problems, with the orthogonality check and its projection repair.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import splu

from configs.rod_config import get_tolerances
from rods.errors import (
    OrthogonalityNotEnforced,
    OrthogonalityViolated,
    OutOfRange,
    ParseError,
)
from rods.events import log_event
from rods.spaces import SkeletonField, SkeletonMesh, gram_matrix, quadratic_shape

LOAD_MODES = ("check", "project")


@dataclass(frozen=True)
class LoadSet:
    """
    One family of forces.

    arcs maps arc id to a table with rows (s, F1, F2, F3), linearly
    interpolated and zero outside its span; knots maps knot id to a force;
    points holds concentrated forces (arc_id, s, force) anywhere on an arc.
    """

    arcs: Mapping[int, np.ndarray] = field(default_factory=dict)
    knots: Mapping[int, np.ndarray] = field(default_factory=dict)
    points: Tuple[Tuple[int, float, np.ndarray], ...] = ()

    def __post_init__(self):
        for arc_id, table in self.arcs.items():
            table = np.asarray(table, dtype=float)
            if table.ndim != 2 or table.shape[1] != 4 or len(table) < 1:
                raise ParseError(f"arc {arc_id}: load table rows must be (s, F1, F2, F3)")
            if np.any(np.diff(table[:, 0]) <= 0):
                raise ParseError(f"arc {arc_id}: load table abscissae must increase")

    @property
    def is_empty(self) -> bool:
        return not self.arcs and not self.knots and not self.points


@dataclass(frozen=True)
class LoadCase:
    """
    Forces of the inextensional and extensional limit problems.

    Once the extensional part has been checked or projected, orthogonal is
    set; a projection stores the corrected functional in extensional_dofs.
    """

    inextensional: LoadSet = field(default_factory=LoadSet)
    extensional: LoadSet = field(default_factory=LoadSet)
    mode: str = "check"
    orthogonal: bool = False
    extensional_dofs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in LOAD_MODES:
            raise ParseError(f"load mode must be one of {LOAD_MODES}, got {self.mode!r}")


@dataclass(frozen=True, eq=False)
class DofFunctional:
    """Linear functional V -> vector . V.dofs on one mesh."""

    mesh: SkeletonMesh
    vector: np.ndarray

    def __call__(self, V: SkeletonField) -> float:
        return float(self.vector @ V.dofs)

    @property
    def free(self) -> np.ndarray:
        return self.vector[self.mesh.free_dofs]


def _distributed(vector: np.ndarray, mesh: SkeletonMesh, arc_id: int, table: np.ndarray):
    am = mesh.arc_mesh(arc_id)
    L = am.vertices[-1]
    s_tab = table[:, 0]
    cuts = np.unique(np.concatenate([am.vertices, s_tab[(s_tab > 0) & (s_tab < L)]]))
    a, b = cuts[:-1], cuts[1:]
    keep = b - a > 0
    a, b = a[keep], b[keep]
    xg, wg = np.polynomial.legendre.leggauss(max(3, mesh.quadrature_order))
    s = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * xg[None, :]).ravel()
    w = (0.5 * (b - a)[:, None] * wg[None, :]).ravel()
    # element of each sub-interval by its midpoint
    e, _ = am.locate(np.repeat(0.5 * (a + b), len(xg)))
    v = am.vertices
    xi = (s - v[e]) / (v[e + 1] - v[e])
    N, _ = quadratic_shape(xi)
    F = np.stack(
        [np.interp(s, s_tab, table[:, 1 + i], left=0.0, right=0.0) for i in range(3)], axis=1
    )
    if len(s_tab) == 1:
        F = np.zeros_like(F)
    nodes = am.elements[e]
    for i in range(3):
        np.add.at(vector, 3 * nodes + i, (w * F[:, i])[:, None] * N)


def assemble_functional(load_set: LoadSet, mesh: SkeletonMesh) -> np.ndarray:
    """
    Dof vector of V -> int F . V + sum_A f_A . V(A) + sum_p f_p . V(p).

    Quadrature is split at table breakpoints so piecewise-linear densities
    are integrated exactly against quadratic fields.
    """
    vector = np.zeros(mesh.n_dofs)
    skeleton = mesh.skeleton
    for arc_id, table in load_set.arcs.items():
        try:
            skeleton.arc(arc_id)
        except KeyError:
            raise ParseError(f"load references unknown arc {arc_id}") from None
        _distributed(vector, mesh, arc_id, np.asarray(table, dtype=float))
    for knot_id, force in load_set.knots.items():
        if knot_id not in mesh.knot_nodes:
            raise ParseError(f"load references unknown knot {knot_id}")
        node = mesh.knot_nodes[knot_id]
        vector[3 * node: 3 * node + 3] += np.asarray(force, dtype=float)
    for arc_id, s, force in load_set.points:
        arc = skeleton.arc(arc_id)
        if not (0.0 <= s <= arc.length):
            raise OutOfRange(f"point load at s={s} outside [0, {arc.length}] on arc {arc_id}")
        am = mesh.arc_mesh(arc_id)
        e, xi = am.locate(s)
        N, _ = quadratic_shape(xi)
        nodes = am.elements[e[0]]
        for a in range(3):
            vector[3 * nodes[a]: 3 * nodes[a] + 3] += N[0, a] * np.asarray(force, dtype=float)
    return vector


def _riesz_split(vector: np.ndarray, mesh: SkeletonMesh) -> Dict[str, np.ndarray]:
    """K-Riesz representer of a functional and its ker B component (free dofs)."""
    K = gram_matrix(mesh)
    b = vector[mesh.free_dofs]
    r = splu(K.tocsc()).solve(b)
    r_I, _ = mesh.projector.solve(K @ r)
    return {"K": K, "b": b, "r": r, "r_I": r_I}


def orthogonality_defect(loads: LoadCase, mesh: SkeletonMesh) -> float:
    """
    ||r_I||_K / ||r||_K for the extensional functional, where r is its
    K-representer; zero when the loads do not act on ker B.
    """
    vector = (
        loads.extensional_dofs
        if loads.extensional_dofs is not None
        else assemble_functional(loads.extensional, mesh)
    )
    split = _riesz_split(vector, mesh)
    total = float(np.sqrt(max(split["r"] @ split["b"], 0.0)))
    if total == 0.0:
        return 0.0
    on_kernel = float(np.sqrt(max(split["r_I"] @ (split["K"] @ split["r_I"]), 0.0)))
    return on_kernel / total


def check_orthogonality(loads: LoadCase, mesh: SkeletonMesh) -> LoadCase:
    """
    Verify the extensional loads vanish on inextensional displacements.

    Raises:
        OrthogonalityViolated: relative defect above tol_orth
    """
    tol = get_tolerances()["tol_orth"]
    defect = orthogonality_defect(loads, mesh)
    log_event("orthogonality_checked", defect=defect, tol=tol)
    if defect > tol:
        raise OrthogonalityViolated(
            f"extensional loads act on inextensional displacements (relative defect {defect:.3e} > {tol:g}); "
            f"move the transverse part to the inextensional loads or use mode 'project'"
        )
    return replace(loads, orthogonal=True)


def enforce_orthogonality(loads: LoadCase, mesh: SkeletonMesh) -> LoadCase:
    """
    Replace the extensional loads by their part that vanishes on ker B.

    The corrected functional is K r_E with r_E = r - P_I r, where r is the
    K-representer of the original; inextensional loads are untouched.

    Returns:
        LoadCase with extensional_dofs set and orthogonal True
    """
    vector = (
        loads.extensional_dofs
        if loads.extensional_dofs is not None
        else assemble_functional(loads.extensional, mesh)
    )
    split = _riesz_split(vector, mesh)
    r_E = split["r"] - split["r_I"]
    total = float(np.sqrt(max(split["r"] @ split["b"], 0.0)))
    kept = float(np.sqrt(max(r_E @ (split["K"] @ r_E), 0.0)))
    # a load entirely on ker B leaves only round-off behind
    if kept <= get_tolerances()["tol_orth"] * total:
        r_E = np.zeros_like(r_E)
    corrected = np.zeros(mesh.n_dofs)
    corrected[mesh.free_dofs] = split["K"] @ r_E
    removed = float(np.linalg.norm(vector[mesh.free_dofs] - corrected[mesh.free_dofs]))
    log_event("orthogonality_enforced", removed=removed)
    return replace(loads, orthogonal=True, extensional_dofs=corrected)


def prepare_loads(loads: LoadCase, mesh: SkeletonMesh) -> LoadCase:
    """Apply the load file's mode: check (default) or project."""
    if loads.mode == "project":
        return enforce_orthogonality(loads, mesh)
    return check_orthogonality(loads, mesh)


def rhs_extensional(loads: LoadCase, mesh: SkeletonMesh) -> DofFunctional:
    """V -> int F_E . V + sum_A f_{A,E} . V(A), after the orthogonality step."""
    if not loads.orthogonal:
        raise OrthogonalityNotEnforced(
            "run check_orthogonality or enforce_orthogonality before the extensional solve"
        )
    if loads.extensional_dofs is not None:
        return DofFunctional(mesh, np.asarray(loads.extensional_dofs, dtype=float))
    return DofFunctional(mesh, assemble_functional(loads.extensional, mesh))


def rhs_inextensional(loads: LoadCase, mesh: SkeletonMesh) -> DofFunctional:
    """V -> int F_I . V + sum_A f_{A,I} . V(A); knot forces are the f_{A,I}."""
    return DofFunctional(mesh, assemble_functional(loads.inextensional, mesh))
