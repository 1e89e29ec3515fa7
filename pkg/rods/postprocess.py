"""
Limit Postprocessing

Stresses recovered from the limit fields, knot equilibrium residuals and
result exports (per-arc CSV, JSON summary, polyline, manifest).
"""

from __future__ import annotations

import csv
import io
import os
from typing import Any, Dict, List, Optional

import numpy as np

from configs.rod_config import get_output_config
from rods.atomic_io import atomic_write_json, atomic_write_lines, atomic_write_text, write_manifest
from rods.decomposition import disc_quadrature
from rods.errors import KnotNotMeshNode, OutOfRange
from rods.events import log_event
from rods.field_qc import qc_field
from rods.geometry import Knot
from rods.loads import LoadCase
from rods.solver import LimitSolution, Material
from rods.spaces import SkeletonField

ARC_COLUMNS = [
    "s", "UE_T", "UE_N", "UE_B",
    "UI_1", "UI_2", "UI_3",
    "R_1", "R_2", "R_3",
    "Theta",
]


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("nc,nc->n", a, b)


def _strains(solution: LimitSolution, arc_id: int, s) -> Dict[str, np.ndarray]:
    """Axial strain and the rotation-gradient projections along one arc."""
    arc = solution.mesh.skeleton.arc(arc_id)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0.0) or np.any(s > arc.length):
        raise OutOfRange(f"abscissa outside [0, {arc.length}] on arc {arc_id}")
    fr = arc.frames(s)
    dUE = solution.extensional.derivative(arc_id, s)
    dR = solution.rotation.derivative(arc_id, s)
    return {
        "axial": _dot(dUE, fr["T"]),
        "curv_N": _dot(dR, fr["N"]),
        "curv_B": _dot(dR, fr["B"]),
        "twist": _dot(dR, fr["T"]),
    }


def limit_stress(
    solution: LimitSolution,
    arc_id: int,
    s,
    Y2,
    Y3,
    material: Optional[Material] = None,
) -> np.ndarray:
    """
    Limit stress tensor at (s, Y2, Y3) of the unit cross-section.

    sigma_11 = E [U_E'.T - Y2 (U_I''.N) - Y3 (U_I''.B - c Theta)], with the
    second derivatives replaced by R'.B and -R'.N; sigma_12 = -mu Y3 / 2 * k
    and sigma_13 = mu Y2 / 2 * k with k = c U_I'.B + Theta' = R'.T.

    Returns:
        (n, 3, 3) symmetric tensors

    Raises:
        OutOfRange: |(Y2, Y3)| > 1 or s outside the arc
    """
    material = material or solution.material
    Y2 = np.atleast_1d(np.asarray(Y2, dtype=float))
    Y3 = np.atleast_1d(np.asarray(Y3, dtype=float))
    if np.any(Y2**2 + Y3**2 > 1.0 + 1e-12):
        raise OutOfRange("cross-section offsets must lie in the unit disc")
    st = _strains(solution, arc_id, s)
    s11 = material.E * (st["axial"] - Y2 * st["curv_B"] + Y3 * st["curv_N"])
    s12 = -0.5 * material.mu * Y3 * st["twist"]
    s13 = 0.5 * material.mu * Y2 * st["twist"]
    n = np.broadcast(s11, s12, s13).shape[0]
    sigma = np.zeros((n, 3, 3))
    sigma[:, 0, 0] = s11
    sigma[:, 0, 1] = sigma[:, 1, 0] = s12
    sigma[:, 0, 2] = sigma[:, 2, 0] = s13
    return sigma


def stress_resultants(
    solution: LimitSolution, arc_id: int, s, n_radial: Optional[int] = None, n_angular: Optional[int] = None
) -> Dict[str, np.ndarray]:
    """
    Cross-section resultants by unit-disc quadrature.

    Returns:
        axial force int sigma_11, torque int (Y2 sigma_13 - Y3 sigma_12),
        moments int Y2 sigma_11 and int Y3 sigma_11, per abscissa
    """
    out_cfg = get_output_config()
    Y, w = disc_quadrature(n_radial or out_cfg["stress_radial"], n_angular or out_cfg["stress_angular"])
    s = np.atleast_1d(np.asarray(s, dtype=float))
    S = np.repeat(s, len(Y))
    sigma = limit_stress(solution, arc_id, S, np.tile(Y[:, 0], len(s)), np.tile(Y[:, 1], len(s)))
    sigma = sigma.reshape(len(s), len(Y), 3, 3)
    y2, y3 = Y[None, :, 0], Y[None, :, 1]
    return {
        "axial_force": np.sum(w * sigma[..., 0, 0], axis=1),
        "torque": np.sum(w * (y2 * sigma[..., 0, 2] - y3 * sigma[..., 0, 1]), axis=1),
        "moment_2": np.sum(w * y2 * sigma[..., 0, 0], axis=1),
        "moment_3": np.sum(w * y3 * sigma[..., 0, 0], axis=1),
    }


def knot_equilibrium_residual(
    U_E: SkeletonField,
    material: Material,
    knot: Knot,
    loads: Optional[LoadCase] = None,
) -> np.ndarray:
    """
    E sum_i [(U_E'(a_i-) - U_E'(a_i+)) . T_i] T_i - f_{A,E} at one knot.

    One-sided derivatives come from the elements adjacent to the knot; a
    side outside the arc contributes zero. Sums run over incident arcs only.

    Raises:
        KnotNotMeshNode: a knot abscissa is not a mesh vertex
    """
    mesh = U_E.mesh
    total = np.zeros(3)
    for arc_id, a in knot.incidences:
        mesh.vertex_node(arc_id, a)
        arc = mesh.skeleton.arc(arc_id)
        T = arc.frames(a)["T"][0]
        jump = 0.0
        if a > 0.0 or arc.closed:
            side_s = arc.length if (arc.closed and a == 0.0) else a
            jump += float(U_E.derivative(arc_id, side_s, "left")[0] @ T)
        if a < arc.length or arc.closed:
            side_s = 0.0 if (arc.closed and a == arc.length) else a
            jump -= float(U_E.derivative(arc_id, side_s, "right")[0] @ T)
        total += material.E * jump * T
    if loads is not None and loads.extensional.knots.get(knot.id) is not None:
        total -= np.asarray(loads.extensional.knots[knot.id], dtype=float)
    return total


def equilibrium_table(solution: LimitSolution, loads: Optional[LoadCase] = None) -> Dict[str, Any]:
    out = {}
    for knot in solution.mesh.skeleton.knots:
        try:
            r = knot_equilibrium_residual(solution.extensional, solution.material, knot, loads)
            out[str(knot.id)] = {"residual": r.tolist(), "norm": float(np.linalg.norm(r))}
        except KnotNotMeshNode as e:
            out[str(knot.id)] = {"error": str(e)}
    return out


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def arc_rows(solution: LimitSolution, arc_id: int) -> List[List[float]]:
    """Nodal rows (ARC_COLUMNS order) along one arc."""
    arc = solution.mesh.skeleton.arc(arc_id)
    s, ids = solution.mesh.arc_mesh(arc_id).node_abscissae()
    fr = arc.frames(s)
    UE = solution.extensional.nodal[ids]
    UI = solution.inextensional.nodal[ids]
    R = solution.rotation.nodal[ids]
    table = np.column_stack(
        [s, _dot(UE, fr["T"]), _dot(UE, fr["N"]), _dot(UE, fr["B"]), UI, R, _dot(R, fr["T"])]
    )
    return table.tolist()


def arc_csv(solution: LimitSolution, arc_id: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ARC_COLUMNS)
    for row in arc_rows(solution, arc_id):
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def read_arc_csv(path: str) -> Dict[str, np.ndarray]:
    """Columns of an exported arc file, parsed back to float arrays."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def polyline_lines(solution: LimitSolution) -> List[str]:
    """One line per node: arc_id s x y z u1 u2 u3, with u = U_E + U_I."""
    total = solution.total()
    lines = ["# arc_id s x y z u1 u2 u3"]
    for am in solution.mesh.arc_meshes:
        arc = solution.mesh.skeleton.arc(am.arc_id)
        s, ids = am.node_abscissae()
        x = arc.frames(s)["x"]
        for k in range(len(s)):
            vals = [s[k], *x[k], *total.nodal[ids[k]]]
            lines.append(f"{am.arc_id} " + " ".join(repr(float(v)) for v in vals))
    return lines


def solution_summary(solution: LimitSolution, loads: Optional[LoadCase] = None) -> Dict[str, Any]:
    diag = solution.diagnostics
    return {
        "material": solution.material.to_dict(),
        "mesh": diag.get("mesh", {}),
        "energies": {
            "extensional": diag.get("extensional", {}).get("energy", 0.0),
            "inextensional": diag.get("inextensional", {}).get("energy", 0.0),
        },
        "residuals": {
            "extensional": diag.get("extensional", {}).get("residual", 0.0),
            "inextensional": diag.get("inextensional", {}).get("residual", 0.0),
            "constraint_projected": diag.get("inextensional", {}).get("constraint_projected"),
            "constraint_l2": diag.get("inextensional", {}).get("constraint_l2"),
        },
        "knot_equilibrium": equilibrium_table(solution, loads),
        "diagnostics": diag,
        "qc": {
            "extensional": qc_field(solution.extensional.nodal, "U_E"),
            "inextensional": qc_field(solution.inextensional.nodal, "U_I"),
            "rotation": qc_field(solution.rotation.nodal, "R"),
        },
    }


def export_solution(
    solution: LimitSolution,
    out_dir: str,
    formats: tuple = ("csv", "json", "polyline"),
    loads: Optional[LoadCase] = None,
) -> Dict[str, Any]:
    """
    Write result files atomically and a manifest of their hashes.

    Args:
        solution: Solved limit fields
        out_dir: Target directory (created)
        formats: Any of "csv", "json", "polyline"
        loads: Load case used for the knot equilibrium table

    Returns:
        {"success", "files", "manifest"}

    Raises:
        ValueError: non-finite fields
        OSError: write failure
    """
    cfg = get_output_config()
    os.makedirs(out_dir, exist_ok=True)
    summary = solution_summary(solution, loads)
    bad = [name for name, qc in summary["qc"].items() if not qc["is_valid"]]
    if bad:
        raise ValueError(f"refusing to export non-finite fields: {bad}")
    written = []
    if "csv" in formats:
        for am in solution.mesh.arc_meshes:
            name = cfg["arc_file_pattern"].format(arc_id=am.arc_id)
            atomic_write_text(os.path.join(out_dir, name), arc_csv(solution, am.arc_id))
            written.append(name)
    if "json" in formats:
        atomic_write_json(os.path.join(out_dir, cfg["summary_file"]), summary)
        written.append(cfg["summary_file"])
    if "polyline" in formats:
        atomic_write_lines(os.path.join(out_dir, cfg["polyline_file"]), polyline_lines(solution))
        written.append(cfg["polyline_file"])
    manifest = write_manifest(out_dir, written, cfg["manifest_file"])
    log_event("solution_exported", out_dir=out_dir, files=written)
    return {"success": True, "files": written, "manifest": manifest["path"]}

