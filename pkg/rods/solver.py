"""
Limit Problem Solver

Extensional and inextensional/torsion limit problems on the skeleton mesh,
coercivity estimates and the combined limit solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.interpolate import CubicHermiteSpline
from scipy.sparse.linalg import LinearOperator, cg, splu

from configs.rod_config import DEFAULT_MATERIAL, get_solver_config, get_tolerances
from rods.errors import (
    InvalidMaterial,
    NoConvergence,
    NotClamped,
    SaddleSingular,
    SingularInconsistent,
)
from rods.events import log_event
from rods.loads import LoadCase, orthogonality_defect, prepare_loads, rhs_extensional, rhs_inextensional
from rods.spaces import (
    KinematicPair,
    SkeletonField,
    SkeletonMesh,
    _extensional_basis,
    gram_matrix,
    pair_constraint_residual,
    project_DI,
    reduction_identity_defects,
)


@dataclass(frozen=True)
class Material:
    """Isotropic Lamé coefficients; E is the derived Young modulus."""

    lam: float = DEFAULT_MATERIAL["lambda"]
    mu: float = DEFAULT_MATERIAL["mu"]

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise InvalidMaterial(f"Lamé coefficients must be positive, got lambda={self.lam}, mu={self.mu}")

    @property
    def E(self) -> float:
        return self.mu * (3 * self.lam + 2 * self.mu) / (self.lam + self.mu)

    def elasticity_tensor(self) -> np.ndarray:
        """a_ljkh = lambda d_lj d_kh + mu (d_lk d_jh + d_lh d_jk)."""
        d = np.eye(3)
        return (
            self.lam * np.einsum("lj,kh->ljkh", d, d)
            + self.mu * (np.einsum("lk,jh->ljkh", d, d) + np.einsum("lh,jk->ljkh", d, d))
        )

    def to_dict(self) -> Dict[str, float]:
        return {"lambda": self.lam, "mu": self.mu, "E": self.E}


@dataclass(frozen=True, eq=False)
class LimitSolution:
    extensional: SkeletonField
    pair: KinematicPair
    material: Material
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def mesh(self) -> SkeletonMesh:
        return self.extensional.mesh

    @property
    def inextensional(self) -> SkeletonField:
        return self.pair.displacement

    @property
    def rotation(self) -> SkeletonField:
        return self.pair.rotation

    def torsion(self, arc_id: int, s) -> np.ndarray:
        return self.pair.torsion(arc_id, s)

    def total(self) -> SkeletonField:
        """U_E + U_I, the limit displacement of the centerline."""
        return self.extensional + self.pair.displacement


# ---------------------------------------------------------------------------
# Extensional problem
# ---------------------------------------------------------------------------


def extensional_operator(mesh: SkeletonMesh, material: Material) -> sp.csr_matrix:
    """E int (dU/ds . T)(dV/ds . T) on the free dofs (semidefinite)."""
    ops = mesh.operators
    A = material.E * ops.weighted_gram(ops.tangential)
    free = mesh.free_dofs
    return A[free][:, free].tocsr()


def _jacobi(A: sp.csr_matrix) -> LinearOperator:
    d = A.diagonal()
    scale = np.abs(d).max() if d.size else 1.0
    inv = np.where(np.abs(d) > 1e-14 * scale, 1.0 / np.where(d == 0, 1.0, d), 1.0)
    return LinearOperator(A.shape, matvec=lambda x: inv * x)


def _solve_extensional(
    mesh: SkeletonMesh, material: Material, loads: LoadCase
) -> Tuple[SkeletonField, Dict[str, Any]]:
    cfg = get_solver_config()
    tol = get_tolerances()
    if not mesh.is_clamped:
        raise NotClamped("extensional problem needs clamped ends")
    rhs = rhs_extensional(loads, mesh)
    b = rhs.free
    A = extensional_operator(mesh, material)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        zero = SkeletonField.zeros(mesh)
        return zero, {"iterations": 0, "residual": 0.0, "energy": 0.0}

    defect = orthogonality_defect(loads, mesh)
    if defect > tol["tol_orth"]:
        raise SingularInconsistent(
            f"extensional right-hand side has a component on ker B (relative {defect:.3e})"
        )

    iterations = {"n": 0}

    def count(_):
        iterations["n"] += 1

    M = _jacobi(A) if cfg["cg_preconditioner"] == "jacobi" else None
    x, info = cg(
        A,
        b,
        rtol=cfg["cg_rtol"],
        atol=0.0,
        maxiter=int(cfg["cg_maxiter_factor"]) * A.shape[0],
        M=M,
        callback=count,
    )
    log_event("cg_finished", debug=True, iterations=iterations["n"], info=info, size=A.shape[0])
    if info != 0:
        raise NoConvergence(f"CG stopped after {iterations['n']} iterations (info={info})")

    _, U_E = project_DI(SkeletonField.from_free(mesh, x))
    residual = float(np.linalg.norm(A @ U_E.free - b) / b_norm)
    if residual > tol["residual_rtol"]:
        raise NoConvergence(f"extensional residual {residual:.3e} above {tol['residual_rtol']:g}")
    energy = float(U_E.free @ (A @ U_E.free))
    work = rhs(U_E)
    info_out = {
        "iterations": iterations["n"],
        "residual": residual,
        "energy": energy,
        "work": work,
        "energy_identity": abs(energy - work) / max(abs(work), 1e-300),
    }
    log_event("extensional_solved", **info_out)
    return U_E, info_out


def solve_extensional(mesh: SkeletonMesh, material: Material, loads: LoadCase) -> SkeletonField:
    """
    Extensional displacement U_E in D_E^h.

    The semidefinite system is solved by preconditioned CG (consistent since
    the loads vanish on ker B), then projected onto D_E.

    Args:
        mesh: Clamped skeleton mesh
        material: Lamé coefficients
        loads: Load case after the orthogonality step

    Returns:
        U_E as a SkeletonField

    Raises:
        OrthogonalityNotEnforced, SingularInconsistent, NoConvergence
    """
    return _solve_extensional(mesh, material, loads)[0]


# ---------------------------------------------------------------------------
# Inextensional problem
# ---------------------------------------------------------------------------


def rotation_operator(mesh: SkeletonMesh, material: Material) -> sp.csr_matrix:
    """
    Reduced bending/torsion form on rotation fields (all dofs):
    (E/3)[(R'.N)(A'.N) + (R'.B)(A'.B)] + (mu/3)(R'.T)(A'.T).
    """
    ops = mesh.operators
    return (
        (material.E / 3.0)
        * (ops.weighted_gram(ops.normal_derivative) + ops.weighted_gram(ops.binormal_derivative))
        + (material.mu / 3.0) * ops.weighted_gram(ops.tangential)
    ).tocsr()


def _check_components(mesh: SkeletonMesh):
    clamped_arcs = {arc_id for arc_id, _ in mesh.skeleton.clamped}
    for component in mesh.skeleton.components():
        if not clamped_arcs.intersection(component):
            raise SaddleSingular(
                f"arcs {sorted(component)} form a component without clamped ends; "
                f"rigid motions make the constrained system singular"
            )


def _solve_inextensional(
    mesh: SkeletonMesh, material: Material, loads: LoadCase
) -> Tuple[KinematicPair, Dict[str, Any]]:
    cfg = get_solver_config()
    tol = get_tolerances()
    _check_components(mesh)
    free = mesh.free_dofs
    n = free.size
    G_U, G_R, _ = mesh.pair_operators
    Gu = G_U[:, free].tocsr()
    Gr = G_R[:, free].tocsr()
    KR = rotation_operator(mesh, material)[free][:, free].tocsr()
    m = Gu.shape[0]

    f = rhs_inextensional(loads, mesh)
    rhs = np.concatenate([f.free, np.zeros(n), np.zeros(m)])
    if not np.any(rhs):
        zero = SkeletonField.zeros(mesh)
        return KinematicPair(zero, SkeletonField.zeros(mesh)), {"residual": 0.0, "energy": 0.0}

    g_scale = max(float(abs(Gu).max()), float(abs(Gr).max())) ** 2
    eps = cfg["saddle_regularization"] * g_scale / float(abs(KR).max())
    zero_nn = sp.csr_matrix((n, n))
    exact = sp.bmat(
        [[zero_nn, None, Gu.T], [None, KR, Gr.T], [Gu, Gr, sp.csr_matrix((m, m))]]
    ).tocsr()
    regular = sp.bmat(
        [[zero_nn, None, Gu.T], [None, KR, Gr.T], [Gu, Gr, -eps * sp.identity(m)]]
    ).tocsc()
    try:
        lu = splu(regular)
    except RuntimeError as e:
        raise SaddleSingular(f"constrained system is singular: {e}") from e

    x = lu.solve(rhs)
    for step in range(int(cfg["refinement_steps"])):
        correction = lu.solve(rhs - exact @ x)
        x = x + correction
        log_event("refinement_step", debug=True, step=step, correction=float(np.linalg.norm(correction)))
    if not np.all(np.isfinite(x)):
        raise SaddleSingular("constrained system produced non-finite values")
    residual = float(np.linalg.norm(exact @ x - rhs) / np.linalg.norm(rhs))
    if residual > tol["residual_rtol"]:
        raise NoConvergence(f"inextensional residual {residual:.3e} above {tol['residual_rtol']:g}")

    U = SkeletonField.from_free(mesh, x[:n])
    R = SkeletonField.from_free(mesh, x[n: 2 * n])
    pair = KinematicPair(U, R)
    energy = float(R.free @ (KR @ R.free))
    work = f(U)
    info = {
        "residual": residual,
        "energy": energy,
        "work": work,
        "energy_identity": abs(energy - work) / max(abs(work), 1e-300),
        "multipliers": m,
        "regularization": eps,
    }
    log_event("inextensional_solved", **info)
    return pair, info


def solve_inextensional(mesh: SkeletonMesh, material: Material, loads: LoadCase) -> KinematicPair:
    """
    Inextensional displacement and rotation field (U_I, R).

    Bending and torsion are written in first derivatives of R; the pair
    constraint U' = R x T enters through discontinuous linear multipliers
    and the saddle system is factored directly. Both U and R vanish at
    clamped ends, so does the torsion angle.

    Raises:
        SaddleSingular: a component has no clamped end
        NoConvergence: refinement left a residual above residual_rtol
    """
    return _solve_inextensional(mesh, material, loads)[0]


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def coercivity_check(mesh: SkeletonMesh, material: Material) -> Dict[str, Any]:
    """
    Smallest generalized eigenvalues of both reduced forms against their norms.

    Clamped meshes use the K norm on D_E^h and int |R'|^2 on constrained
    pairs; unclamped meshes add the L2 mass so rigid modes appear as zero
    eigenvalues. Dense, for desk-scale meshes.
    """
    ops = mesh.operators
    clamped = mesh.is_clamped
    dofs = mesh.free_dofs if clamped else np.arange(mesh.n_dofs)

    def restrict(M: sp.spmatrix) -> np.ndarray:
        return M[dofs][:, dofs].toarray()

    K = restrict(ops.stiffness)
    mass = restrict(ops.mass)
    norm_E = K if clamped else K + mass
    A_E = material.E * restrict(ops.weighted_gram(ops.tangential))
    Q = _extensional_basis(mesh, norm_E) if clamped else _unclamped_extensional_basis(mesh, norm_E)
    ext = _spectrum(Q.T @ A_E @ Q, Q.T @ norm_E @ Q)

    G_U, G_R, _ = mesh.pair_operators
    G = np.hstack([G_U[:, dofs].toarray(), G_R[:, dofs].toarray()])
    Z = sla.null_space(G)
    KR = restrict(rotation_operator(mesh, material))
    n = dofs.size
    form = np.zeros((2 * n, 2 * n))
    form[n:, n:] = KR
    norm_I = np.zeros((2 * n, 2 * n))
    norm_I[n:, n:] = K
    if not clamped:
        norm_I[:n, :n] += mass
        norm_I[n:, n:] += mass
    inext = _spectrum(Z.T @ form @ Z, Z.T @ norm_I @ Z)

    report = {"clamped": clamped, "extensional": ext, "inextensional": inext}
    log_event(
        "coercivity_checked",
        clamped=clamped,
        extensional_min=ext["min"],
        inextensional_min=inext["min"],
        zero_modes=ext["zero_modes"] + inext["zero_modes"],
    )
    return report


def _unclamped_extensional_basis(mesh: SkeletonMesh, norm: np.ndarray) -> np.ndarray:
    Bw = (sp.diags(np.sqrt(mesh.operators.weights)) @ mesh.operators.tangential).toarray()
    kernel = sla.null_space(Bw)
    return sla.null_space(kernel.T @ norm) if kernel.shape[1] else np.eye(norm.shape[0])


def _spectrum(a: np.ndarray, b: np.ndarray) -> Dict[str, Any]:
    if a.size == 0:
        return {"min": float("nan"), "max": float("nan"), "zero_modes": 0, "dimension": 0}
    eig = sla.eigh(a, b, eigvals_only=True)
    top = float(eig[-1])
    zero = int(np.sum(eig <= 1e-9 * max(abs(top), 1e-300)))
    return {
        "min": float(max(eig[0], 0.0)) if zero else float(eig[0]),
        "max": top,
        "zero_modes": zero,
        "dimension": int(eig.size),
    }


def original_form_energy(pair: KinematicPair, material: Material) -> Dict[str, float]:
    """
    Energy of the pair under the second-derivative integrand and under the
    reduced first-derivative one.

    V is re-interpolated per arc by a C1 cubic Hermite spline through its
    vertex values with slopes R x T, so V'' exists. The two values agree
    up to O(h^2) for constrained pairs.
    """
    mesh = pair.mesh
    xg, wg = np.polynomial.legendre.leggauss(5)
    original = 0.0
    for am in mesh.arc_meshes:
        arc = mesh.skeleton.arc(am.arc_id)
        v = am.vertices
        vertex_nodes = np.append(am.elements[:, 0], am.elements[-1, 2])
        T_v = arc.frames(v)["T"]
        V_v = pair.displacement.nodal[vertex_nodes]
        slopes = np.cross(pair.rotation.nodal[vertex_nodes], T_v)
        spline = CubicHermiteSpline(v, V_v, slopes, axis=0)
        le = np.diff(v)
        s = (v[:-1, None] + 0.5 * le[:, None] * (xg[None, :] + 1.0)).ravel()
        w = (0.5 * le[:, None] * wg[None, :]).ravel()
        fr = arc.frames(s)
        T, N, B, c = fr["T"], fr["N"], fr["B"], fr["c"]
        dV, d2V = spline(s, 1), spline(s, 2)
        A = pair.rotation.values(am.arc_id, s)
        dA = pair.rotation.derivative(am.arc_id, s)
        theta = np.einsum("nc,nc->n", A, T)
        dtheta = np.einsum("nc,nc->n", dA, T) + c * np.einsum("nc,nc->n", A, N)
        bend_n = np.einsum("nc,nc->n", d2V, N)
        bend_b = np.einsum("nc,nc->n", d2V, B) - c * theta
        twist = dtheta + c * np.einsum("nc,nc->n", dV, B)
        original += float(
            np.sum(w * ((material.E / 3.0) * (bend_n**2 + bend_b**2) + (material.mu / 3.0) * twist**2))
        )
    R = pair.rotation.dofs
    reduced = float(R @ (rotation_operator(mesh, material) @ R))
    return {"original": original, "reduced": reduced}


def knot_rigidity_defect(pair: KinematicPair) -> Dict[int, float]:
    """
    Per knot, max over incident arcs of |dU/ds(a) - R(A) x T(a)|, with the
    derivative taken from inside the arc.
    """
    mesh = pair.mesh
    out: Dict[int, float] = {}
    for knot in mesh.skeleton.knots:
        R_A = pair.rotation.nodal[mesh.knot_nodes[knot.id]]
        worst = 0.0
        for arc_id, a in knot.incidences:
            arc = mesh.skeleton.arc(arc_id)
            T = arc.frames(a)["T"][0]
            sides: List[str] = []
            if a > 0:
                sides.append("left")
            if a < arc.length:
                sides.append("right")
            for side in sides:
                dU = pair.displacement.derivative(arc_id, a, side)[0]
                worst = max(worst, float(np.linalg.norm(dU - np.cross(R_A, T))))
        out[knot.id] = worst
    return out


# ---------------------------------------------------------------------------
# Both problems
# ---------------------------------------------------------------------------


def solve_limit(
    mesh: SkeletonMesh,
    material: Material,
    loads: LoadCase,
    control_hash: Optional[str] = None,
) -> LimitSolution:
    """
    Run both limit problems and collect diagnostics.

    Args:
        mesh: Clamped skeleton mesh
        material: Lamé coefficients
        loads: Load case; its mode decides check or projection when not yet done
        control_hash: Solver configuration fingerprint recorded in diagnostics

    Returns:
        LimitSolution
    """
    cfg = get_solver_config()
    if not loads.orthogonal:
        loads = prepare_loads(loads, mesh)
    U_E, ext_info = _solve_extensional(mesh, material, loads)
    pair, inext_info = _solve_inextensional(mesh, material, loads)

    K = gram_matrix(mesh)
    U_I_part, _ = project_DI(U_E) if np.any(U_E.dofs) else (U_E, U_E)
    ext_info["kernel_component"] = float(
        np.sqrt(max(U_I_part.free @ (K @ U_I_part.free), 0.0))
    )
    inext_info["constraint_projected"] = pair_constraint_residual(pair, projected=True)
    inext_info["constraint_l2"] = pair_constraint_residual(pair)
    inext_info["reduction_defects"] = reduction_identity_defects(pair)
    inext_info["knot_rigidity"] = {str(k): v for k, v in knot_rigidity_defect(pair).items()}

    diagnostics: Dict[str, Any] = {
        "extensional": ext_info,
        "inextensional": inext_info,
        "mesh": {"h": mesh.h, "elements": mesh.n_elements, "dofs": mesh.n_dofs},
        "material": material.to_dict(),
        "load_mode": loads.mode,
    }
    if control_hash:
        diagnostics["control_hash"] = control_hash
    if cfg["check_coercivity"]:
        diagnostics["coercivity"] = coercivity_check(mesh, material)
    return LimitSolution(U_E, pair, material, diagnostics)
