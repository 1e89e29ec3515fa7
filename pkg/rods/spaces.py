"""
Skeleton Function Spaces

Quadratic C0 fields on the skeleton mesh, the H1 inner product, the tangential
constraint, the inextensional projection and constrained kinematic pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr, splu

from configs.rod_config import get_solver_config, get_tolerances
from rods.atomic_io import atomic_write_text
from rods.errors import KnotNotMeshNode, NotClamped, SolverFailure
from rods.events import log_event
from rods.geometry import ArcGeometry, Skeleton

FieldFunction = Callable[[ArcGeometry, np.ndarray], np.ndarray]


def quadratic_shape(xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Quadratic Lagrange basis on [0, 1] (left, middle, right) and its xi-derivative."""
    xi = np.asarray(xi, dtype=float)
    N = np.stack([(1 - xi) * (1 - 2 * xi), 4 * xi * (1 - xi), xi * (2 * xi - 1)], axis=-1)
    dN = np.stack([4 * xi - 3, 4 - 8 * xi, 4 * xi - 1], axis=-1)
    return N, dN


def _skew(v: np.ndarray) -> np.ndarray:
    """[v]x for each row: [v]x w = v x w."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArcMesh:
    arc_id: int
    vertices: np.ndarray
    elements: np.ndarray  # (n_el, 3) global node ids: left, middle, right

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def locate(self, s: np.ndarray, side: str = "right") -> Tuple[np.ndarray, np.ndarray]:
        """Element index and local coordinate; side picks the element at a vertex."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        v = self.vertices
        if side == "left":
            e = np.searchsorted(v, s, side="left") - 1
        else:
            e = np.searchsorted(v, s, side="right") - 1
        e = np.clip(e, 0, self.n_elements - 1)
        xi = (s - v[e]) / (v[e + 1] - v[e])
        return e, xi

    def node_abscissae(self) -> Tuple[np.ndarray, np.ndarray]:
        """Sorted abscissae of all nodes on the arc and their global ids."""
        v = self.vertices
        s = np.empty(2 * self.n_elements + 1)
        s[0::2] = v
        s[1::2] = 0.5 * (v[:-1] + v[1:])
        ids = np.empty(2 * self.n_elements + 1, dtype=int)
        ids[0::2] = np.append(self.elements[:, 0], self.elements[-1, 2])
        ids[1::2] = self.elements[:, 1]
        return s, ids


@dataclass(frozen=True)
class QuadratureData:
    """Per-point data of the Gauss rule on every element, flattened over the skeleton."""

    arc_id: np.ndarray
    element: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    weight: np.ndarray
    nodes: np.ndarray
    shape: np.ndarray
    dshape: np.ndarray
    T: np.ndarray
    N: np.ndarray
    B: np.ndarray
    c: np.ndarray
    tau: np.ndarray
    x: np.ndarray

    @property
    def size(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class SpaceOperators:
    """Sparse samplers (quadrature points x dofs) and the assembled Gram matrices."""

    weights: np.ndarray
    value: Tuple[sp.csr_matrix, ...]
    derivative: Tuple[sp.csr_matrix, ...]
    tangential: sp.csr_matrix
    normal_derivative: sp.csr_matrix
    binormal_derivative: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix

    def weighted_gram(self, sampler: sp.csr_matrix) -> sp.csr_matrix:
        return (sampler.T @ sp.diags(self.weights) @ sampler).tocsr()


@dataclass(frozen=True, eq=False)
class SkeletonMesh:
    """Per-arc 1D meshes with shared knot nodes and clamped nodes."""

    skeleton: Skeleton
    h: float
    arc_meshes: Tuple[ArcMesh, ...]
    n_nodes: int
    knot_nodes: Dict[int, int]
    clamped_nodes: np.ndarray
    quadrature_order: int = 3

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @property
    def n_elements(self) -> int:
        return sum(am.n_elements for am in self.arc_meshes)

    @property
    def is_clamped(self) -> bool:
        return self.clamped_nodes.size > 0

    def arc_mesh(self, arc_id: int) -> ArcMesh:
        for am in self.arc_meshes:
            if am.arc_id == arc_id:
                return am
        raise KeyError(arc_id)

    def vertex_node(self, arc_id: int, s: float) -> int:
        """Global node of the vertex at abscissa s; raises if s is not a vertex."""
        am = self.arc_mesh(arc_id)
        arc = self.skeleton.arc(arc_id)
        tol = get_tolerances()["tol_knot_rel"] * max(arc.length, 1.0)
        idx = int(np.argmin(np.abs(am.vertices - s)))
        if abs(am.vertices[idx] - s) > tol:
            raise KnotNotMeshNode(f"arc {arc_id}: abscissa {s} is not a mesh vertex")
        nodes = np.append(am.elements[:, 0], am.elements[-1, 2])
        return int(nodes[idx])

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        for node in self.clamped_nodes:
            mask[3 * node: 3 * node + 3] = False
        return np.flatnonzero(mask)

    @cached_property
    def quadrature(self) -> QuadratureData:
        return _build_quadrature(self)

    @cached_property
    def operators(self) -> SpaceOperators:
        return _build_operators(self)

    @cached_property
    def pair_operators(self) -> Tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray]:
        return _build_pair_operators(self)

    @cached_property
    def projector(self) -> "InextensionalProjector":
        return InextensionalProjector(self)

    @cached_property
    def midpoints(self) -> Dict[str, np.ndarray]:
        """Frames at element midpoints, in global element order."""
        parts: Dict[str, List[np.ndarray]] = {k: [] for k in ("T", "N", "B", "c", "length", "nodes")}
        for am in self.arc_meshes:
            arc = self.skeleton.arc(am.arc_id)
            v = am.vertices
            frames = arc.frames(0.5 * (v[:-1] + v[1:]))
            for key in ("T", "N", "B", "c"):
                parts[key].append(frames[key])
            parts["length"].append(np.diff(v))
            parts["nodes"].append(am.elements)
        return {k: np.concatenate(v) for k, v in parts.items()}


def build_mesh(skeleton: Skeleton, h: float, quadrature_order: Optional[int] = None) -> SkeletonMesh:
    """
    Mesh every arc with quadratic elements of size at most h.

    Knot abscissae and clamped ends are vertices; knot vertices share one
    global node across incident arcs and closed arcs identify s=0 with s=L.

    Args:
        skeleton: Skeleton to discretize
        h: Target element size (> 0)
        quadrature_order: Gauss points per element (>= 3)

    Returns:
        SkeletonMesh
    """
    cfg = get_solver_config()
    if h <= 0:
        raise ValueError(f"mesh size must be positive, got {h}")
    if cfg["element_order"] != 2:
        raise ValueError("only quadratic elements are implemented")
    order = int(quadrature_order or cfg["quadrature_order"])
    if order < 3:
        raise ValueError("quadrature order must be at least 3")
    tol_rel = get_tolerances()["tol_knot_rel"]

    counter = 0
    knot_nodes: Dict[int, int] = {}
    for knot in skeleton.knots:
        knot_nodes[knot.id] = counter
        counter += 1

    arc_meshes = []
    clamp_nodes = set()
    for arc in skeleton.arcs:
        L = arc.length
        tol = tol_rel * max(L, 1.0)

        def wrap(a: float) -> float:
            return 0.0 if arc.closed and abs(a - L) <= tol else a

        marks = [0.0, L]
        marks += [wrap(a) for _, a in skeleton.knots_on(arc.id)]
        marks += [wrap(a) for i, a in skeleton.clamped if i == arc.id]
        breaks: List[float] = []
        for m in sorted(marks):
            if not breaks or m - breaks[-1] > tol:
                breaks.append(m)
        breaks[-1] = L
        vertices = [breaks[0]]
        for a, b in zip(breaks[:-1], breaks[1:]):
            n = max(1, int(math.ceil((b - a) / h - 1e-9)))
            vertices.extend(np.linspace(a, b, n + 1)[1:])
        vertices_arr = np.asarray(vertices)

        vertex_ids = np.empty(len(vertices_arr), dtype=int)
        for idx, v in enumerate(vertices_arr):
            node = None
            for knot, a in skeleton.knots_on(arc.id):
                if abs(wrap(a) - v) <= tol or (arc.closed and idx == len(vertices_arr) - 1
                                               and abs(wrap(a)) <= tol):
                    node = knot_nodes[knot.id]
                    break
            if node is None and arc.closed and idx == len(vertices_arr) - 1:
                node = int(vertex_ids[0])
            if node is None:
                node = counter
                counter += 1
            vertex_ids[idx] = node

        n_el = len(vertices_arr) - 1
        mids = np.arange(counter, counter + n_el)
        counter += n_el
        elements = np.stack([vertex_ids[:-1], mids, vertex_ids[1:]], axis=1)
        am = ArcMesh(arc.id, vertices_arr, elements)
        arc_meshes.append(am)
        for arc_id, a in skeleton.clamped:
            if arc_id == arc.id:
                clamp_nodes.add(int(vertex_ids[int(np.argmin(np.abs(vertices_arr - wrap(a))))]))

    mesh = SkeletonMesh(
        skeleton=skeleton,
        h=float(h),
        arc_meshes=tuple(arc_meshes),
        n_nodes=counter,
        knot_nodes=knot_nodes,
        clamped_nodes=np.array(sorted(clamp_nodes), dtype=int),
        quadrature_order=order,
    )
    log_event(
        "mesh_built",
        h=h,
        elements=mesh.n_elements,
        dofs=mesh.n_dofs,
        free_dofs=int(mesh.free_dofs.size),
    )
    return mesh


def _build_quadrature(mesh: SkeletonMesh) -> QuadratureData:
    xg, wg = np.polynomial.legendre.leggauss(mesh.quadrature_order)
    xi_ref, w_ref = 0.5 * (xg + 1.0), 0.5 * wg
    N_ref, dN_ref = quadratic_shape(xi_ref)
    nq = len(xi_ref)
    cols: Dict[str, List[np.ndarray]] = {
        k: [] for k in ("arc_id", "element", "xi", "s", "weight", "nodes", "shape", "dshape",
                        "T", "N", "B", "c", "tau", "x")
    }
    offset = 0
    for am in mesh.arc_meshes:
        arc = mesh.skeleton.arc(am.arc_id)
        v = am.vertices
        le = np.diff(v)
        n_el = len(le)
        s_q = (v[:-1, None] + le[:, None] * xi_ref[None, :]).ravel()
        frames = arc.frames(s_q)
        cols["arc_id"].append(np.full(n_el * nq, am.arc_id))
        cols["element"].append(np.repeat(np.arange(offset, offset + n_el), nq))
        cols["xi"].append(np.tile(xi_ref, n_el))
        cols["s"].append(s_q)
        cols["weight"].append((le[:, None] * w_ref[None, :]).ravel())
        cols["nodes"].append(np.repeat(am.elements, nq, axis=0))
        cols["shape"].append(np.tile(N_ref, (n_el, 1)))
        cols["dshape"].append((dN_ref[None, :, :] / le[:, None, None]).reshape(-1, 3))
        for key in ("T", "N", "B", "c", "tau", "x"):
            cols[key].append(frames[key])
        offset += n_el
    return QuadratureData(**{k: np.concatenate(v) for k, v in cols.items()})


def _sampler(quad: QuadratureData, n_dofs: int, basis: np.ndarray, direction: np.ndarray):
    """Operator U -> sum_a basis[q, a] (U_a . direction[q]) at every quadrature point."""
    nq = quad.size
    rows = np.repeat(np.arange(nq), 9)
    cols = (3 * quad.nodes[:, :, None] + np.arange(3)[None, None, :]).reshape(-1)
    vals = (basis[:, :, None] * direction[:, None, :]).reshape(-1)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nq, n_dofs))


def _build_operators(mesh: SkeletonMesh) -> SpaceOperators:
    q = mesh.quadrature
    n = mesh.n_dofs
    eye = np.eye(3)
    value = tuple(_sampler(q, n, q.shape, np.broadcast_to(eye[i], (q.size, 3))) for i in range(3))
    deriv = tuple(_sampler(q, n, q.dshape, np.broadcast_to(eye[i], (q.size, 3))) for i in range(3))
    W = sp.diags(q.weight)
    stiffness = sum((D.T @ W @ D for D in deriv), sp.csr_matrix((n, n))).tocsr()
    mass = sum((V.T @ W @ V for V in value), sp.csr_matrix((n, n))).tocsr()
    return SpaceOperators(
        weights=q.weight,
        value=value,
        derivative=deriv,
        tangential=_sampler(q, n, q.dshape, q.T),
        normal_derivative=_sampler(q, n, q.dshape, q.N),
        binormal_derivative=_sampler(q, n, q.dshape, q.B),
        stiffness=stiffness,
        mass=mass,
    )


def _build_pair_operators(mesh: SkeletonMesh):
    """
    Constraint blocks for V' = A x T tested with discontinuous linear multipliers.

    Row (e, k, i) integrates psi_k (V'_i - (A x T)_i) over element e, where
    psi_0 = 1 and psi_1 = 2 xi - 1.
    """
    q = mesh.quadrature
    psi = np.stack([np.ones_like(q.xi), 2.0 * q.xi - 1.0], axis=1)
    base = (q.element[:, None] * 2 + np.arange(2)[None, :]) * 3
    comp = np.arange(3)
    n_rows = 6 * mesh.n_elements

    rows = base[:, :, None, None] + comp[None, None, None, :]
    cols = 3 * q.nodes[:, None, :, None] + comp[None, None, None, :]
    vals = q.weight[:, None, None, None] * psi[:, :, None, None] * q.dshape[:, None, :, None]
    rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
    G_U = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n_rows, mesh.n_dofs))

    C = -_skew(q.T)  # (A x T)_i = C[i, j] A_j
    rows = base[:, :, None, None, None] + comp[None, None, None, :, None]
    cols = 3 * q.nodes[:, None, :, None, None] + comp[None, None, None, None, :]
    vals = -(
        q.weight[:, None, None, None, None]
        * psi[:, :, None, None, None]
        * q.shape[:, None, :, None, None]
        * C[:, None, None, :, :]
    )
    rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
    G_R = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n_rows, mesh.n_dofs))

    lengths = np.concatenate([np.diff(am.vertices) for am in mesh.arc_meshes])
    row_norms = np.repeat(np.stack([lengths, lengths / 3.0], axis=1).reshape(-1), 3)
    return G_U, G_R, row_norms


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SkeletonField:
    """Knot-continuous quadratic field; dofs indexed 3 * node + component."""

    mesh: SkeletonMesh
    dofs: np.ndarray

    @classmethod
    def zeros(cls, mesh: SkeletonMesh) -> "SkeletonField":
        return cls(mesh, np.zeros(mesh.n_dofs))

    @classmethod
    def from_free(cls, mesh: SkeletonMesh, free_values: np.ndarray) -> "SkeletonField":
        dofs = np.zeros(mesh.n_dofs)
        dofs[mesh.free_dofs] = free_values
        return cls(mesh, dofs)

    @classmethod
    def from_function(
        cls, mesh: SkeletonMesh, fn: FieldFunction, clamp: bool = True
    ) -> "SkeletonField":
        """Nodal interpolation of fn(arc, s) -> (n, 3); clamped nodes zeroed when clamp."""
        values = np.zeros((mesh.n_nodes, 3))
        for am in mesh.arc_meshes:
            s, ids = am.node_abscissae()
            values[ids] = np.asarray(fn(mesh.skeleton.arc(am.arc_id), s), dtype=float).reshape(-1, 3)
        if clamp and mesh.is_clamped:
            values[mesh.clamped_nodes] = 0.0
        return cls(mesh, values.reshape(-1))

    @property
    def nodal(self) -> np.ndarray:
        return self.dofs.reshape(-1, 3)

    @property
    def free(self) -> np.ndarray:
        return self.dofs[self.mesh.free_dofs]

    def _evaluate(self, arc_id: int, s, side: str, derivative: bool) -> np.ndarray:
        am = self.mesh.arc_mesh(arc_id)
        e, xi = am.locate(s, side)
        N, dN = quadratic_shape(xi)
        basis = dN / np.diff(am.vertices)[e][:, None] if derivative else N
        return np.einsum("na,nac->nc", basis, self.nodal[am.elements[e]])

    def values(self, arc_id: int, s) -> np.ndarray:
        return self._evaluate(arc_id, s, "right", derivative=False)

    def derivative(self, arc_id: int, s, side: str = "right") -> np.ndarray:
        """dV/ds; at a vertex, side selects the element to the left or right."""
        return self._evaluate(arc_id, s, side, derivative=True)

    def at_quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        q = self.mesh.quadrature
        local = self.nodal[q.nodes]
        return (
            np.einsum("na,nac->nc", q.shape, local),
            np.einsum("na,nac->nc", q.dshape, local),
        )

    def arc_table(self, arc_id: int) -> Tuple[np.ndarray, np.ndarray]:
        """Nodal abscissae and values along one arc."""
        s, ids = self.mesh.arc_mesh(arc_id).node_abscissae()
        return s, self.nodal[ids]

    def _check(self, other: "SkeletonField"):
        if other.mesh is not self.mesh:
            raise ValueError("fields live on different meshes")

    def __add__(self, other: "SkeletonField") -> "SkeletonField":
        self._check(other)
        return SkeletonField(self.mesh, self.dofs + other.dofs)

    def __sub__(self, other: "SkeletonField") -> "SkeletonField":
        self._check(other)
        return SkeletonField(self.mesh, self.dofs - other.dofs)

    def __mul__(self, factor: float) -> "SkeletonField":
        return SkeletonField(self.mesh, float(factor) * self.dofs)

    __rmul__ = __mul__

    def __neg__(self) -> "SkeletonField":
        return SkeletonField(self.mesh, -self.dofs)


def interpolate(mesh: SkeletonMesh, fn: FieldFunction, clamp: bool = True) -> SkeletonField:
    return SkeletonField.from_function(mesh, fn, clamp)


@dataclass(frozen=True)
class KinematicPair:
    """Displacement V with rotation field A; constrained when V' = A x T."""

    displacement: SkeletonField
    rotation: SkeletonField

    @property
    def mesh(self) -> SkeletonMesh:
        return self.displacement.mesh

    def torsion(self, arc_id: int, s) -> np.ndarray:
        """Torsion angle Theta = A . T along one arc."""
        T = self.mesh.skeleton.arc(arc_id).frames(s)["T"]
        return np.einsum("nc,nc->n", self.rotation.values(arc_id, s), T)

    def norm(self) -> float:
        """sqrt(sum_i ||dA_i/ds||^2), the natural norm on constrained pairs."""
        _, dA = self.rotation.at_quadrature()
        return float(np.sqrt(np.sum(self.mesh.quadrature.weight * np.sum(dA**2, axis=1))))


# ---------------------------------------------------------------------------
# Inner products and the tangential constraint
# ---------------------------------------------------------------------------


def gram_matrix(mesh: SkeletonMesh, require_clamped: bool = True) -> sp.csr_matrix:
    """
    Matrix of <U, V> = sum_i int dU_i/ds . dV_i/ds on the free dofs.

    Raises:
        NotClamped: without clamps K is singular and not a norm
    """
    if require_clamped and not mesh.is_clamped:
        raise NotClamped("gram matrix is singular on an unclamped skeleton")
    free = mesh.free_dofs
    return mesh.operators.stiffness[free][:, free].tocsr()


def inner(U: SkeletonField, V: SkeletonField) -> float:
    return float(U.dofs @ (U.mesh.operators.stiffness @ V.dofs))


def tangential_constraint(mesh: SkeletonMesh) -> sp.csr_matrix:
    """Operator V -> dV_i/ds . T_i at every quadrature point."""
    return mesh.operators.tangential


def extensional_norm(U: SkeletonField) -> float:
    BU = U.mesh.operators.tangential @ U.dofs
    return float(np.sqrt(np.sum(U.mesh.operators.weights * BU**2)))


class InextensionalProjector:
    """
    K-orthogonal projection onto ker B through a regularized saddle system.

    The multiplier block carries -eps I so that redundant constraint rows
    (straight arcs, loops, clamps on knots) keep the factorization regular;
    iterative refinement against the unregularized system removes the bias.
    """

    def __init__(self, mesh: SkeletonMesh):
        if not mesh.is_clamped:
            raise NotClamped("inextensional projection needs clamped ends")
        cfg = get_solver_config()
        self.mesh = mesh
        self._refine = int(cfg["refinement_steps"])
        ops = mesh.operators
        free = mesh.free_dofs
        self.K = ops.stiffness[free][:, free].tocsr()
        self.Bw = (sp.diags(np.sqrt(ops.weights)) @ ops.tangential)[:, free].tocsr()
        n, m = self.K.shape[0], self.Bw.shape[0]
        k_scale = float(abs(self.K).max())
        b_scale = float(np.max(np.asarray(self.Bw.multiply(self.Bw).sum(axis=0)))) or 1.0
        self.eps = cfg["saddle_regularization"] * b_scale / k_scale
        self._b_scale = b_scale
        self._exact = sp.bmat([[self.K, self.Bw.T], [self.Bw, sp.csr_matrix((m, m))]]).tocsr()
        regular = sp.bmat([[self.K, self.Bw.T], [self.Bw, -self.eps * sp.identity(m)]]).tocsc()
        try:
            self._lu = splu(regular)
        except RuntimeError as e:
            raise SolverFailure(f"projection saddle factorization failed: {e}") from e
        self._n = n

    def solve(self, rhs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Minimizer Z of 0.5 Z'KZ - rhs'Z subject to B Z = 0, with multipliers."""
        b = np.concatenate([rhs, np.zeros(self.Bw.shape[0])])
        x = self._lu.solve(b)
        for _ in range(self._refine):
            x = x + self._lu.solve(b - self._exact @ x)
        return x[: self._n], x[self._n:]

    def project(self, U: SkeletonField) -> Tuple[SkeletonField, SkeletonField]:
        tol = get_tolerances()["tol_constraint"]
        Uf = U.free
        KU = self.K @ Uf
        Z, lam = self.solve(KU)
        stationarity = np.linalg.norm(self.K @ Z + self.Bw.T @ lam - KU)
        violation = np.linalg.norm(self.Bw @ Z)
        scale = np.linalg.norm(KU)
        if stationarity > tol * max(scale, 1e-300) or violation > tol * math.sqrt(
            self._b_scale
        ) * max(np.linalg.norm(Z), np.linalg.norm(Uf), 1e-300):
            raise SolverFailure(
                f"projection residuals too large (stationarity {stationarity:.3e}, "
                f"constraint {violation:.3e})"
            )
        U_I = SkeletonField.from_free(self.mesh, Z)
        return U_I, U - U_I


def project_DI(U: SkeletonField) -> Tuple[SkeletonField, SkeletonField]:
    """
    Split U = U_I + U_E with B U_I = 0 and U_E K-orthogonal to ker B.

    Returns:
        (U_I, U_E)
    """
    return U.mesh.projector.project(U)


def _extensional_basis(mesh: SkeletonMesh, norm: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the norm-orthogonal complement of ker B (dense)."""
    free = mesh.free_dofs
    Bw = (sp.diags(np.sqrt(mesh.operators.weights)) @ mesh.operators.tangential)[:, free].toarray()
    kernel = sla.null_space(Bw)
    if kernel.shape[1] == 0:
        return np.eye(len(free))
    # complement of ker B in the given inner product
    return sla.null_space(kernel.T @ norm)


def norm_equivalence(mesh: SkeletonMesh) -> Dict[str, float]:
    """
    Extremal ratios ||U||_E / ||U||_K over the discrete extensional space.

    Returns:
        {"lower": min ratio, "upper": max ratio, "dimension": dim D_E^h}
    """
    K = gram_matrix(mesh).toarray()
    G = mesh.operators.weighted_gram(mesh.operators.tangential)
    G = G[mesh.free_dofs][:, mesh.free_dofs].toarray()
    Q = _extensional_basis(mesh, K)
    eig = sla.eigh(Q.T @ G @ Q, Q.T @ K @ Q, eigvals_only=True)
    eig = np.clip(eig, 0.0, None)
    return {
        "lower": float(np.sqrt(eig[0])),
        "upper": float(np.sqrt(eig[-1])),
        "dimension": int(Q.shape[1]),
    }


# ---------------------------------------------------------------------------
# Constrained pairs
# ---------------------------------------------------------------------------


def pair_constraint_residual(pair: KinematicPair, projected: bool = False) -> float:
    """
    L2 norm of dV/ds - A x T over the skeleton.

    With projected=True only the part seen by the piecewise-linear
    multipliers is measured; that part vanishes for discrete constrained pairs.
    """
    mesh = pair.mesh
    if projected:
        G_U, G_R, row_norms = mesh.pair_operators
        p = G_U @ pair.displacement.dofs + G_R @ pair.rotation.dofs
        return float(np.sqrt(np.sum(p**2 / row_norms)))
    q = mesh.quadrature
    A, _ = pair.rotation.at_quadrature()
    _, dV = pair.displacement.at_quadrature()
    g = dV - np.cross(A, q.T)
    return float(np.sqrt(np.sum(q.weight * np.sum(g**2, axis=1))))


def constrained_pair(rotation: SkeletonField) -> KinematicPair:
    """
    Displacement whose derivative is the multiplier-space projection of A x T.

    On a tree-shaped skeleton with one clamp per component the system is
    square; otherwise the least-squares solution is returned and the
    residual reports the loop-closure defect.
    """
    mesh = rotation.mesh
    if not mesh.is_clamped:
        raise NotClamped("constrained pairs are built from a clamped end")
    G_U, G_R, _ = mesh.pair_operators
    free = mesh.free_dofs
    A = G_U[:, free].tocsc()
    rhs = -(G_R @ rotation.dofs)
    if A.shape[0] == A.shape[1]:
        V = splu(A).solve(rhs)
    else:
        V = lsqr(A, rhs, atol=1e-15, btol=1e-15, iter_lim=20 * A.shape[1])[0]
    return KinematicPair(SkeletonField.from_free(mesh, V), rotation)


def reduction_identity_defects(pair: KinematicPair) -> Dict[str, float]:
    """
    Max defects at element midpoints of the identities
    V''.N = A'.B,  V''.B - c Theta = -A'.N,  Theta' + c V'.B = A'.T.
    """
    mid = pair.mesh.midpoints
    le = mid["length"][:, None]
    V = pair.displacement.nodal[mid["nodes"]]
    A = pair.rotation.nodal[mid["nodes"]]
    d2V = (4 * V[:, 0] - 8 * V[:, 1] + 4 * V[:, 2]) / le**2
    dV = (V[:, 2] - V[:, 0]) / le
    dA = (A[:, 2] - A[:, 0]) / le
    A_mid = A[:, 1]
    T, N, B, c = mid["T"], mid["N"], mid["B"], mid["c"]

    def dot(a, b):
        return np.einsum("nc,nc->n", a, b)

    theta = dot(A_mid, T)
    dtheta = dot(dA, T) + c * dot(A_mid, N)
    defects = {
        "bending_normal": dot(d2V, N) - dot(dA, B),
        "bending_binormal": dot(d2V, B) - c * theta + dot(dA, N),
        "torsion": dtheta + c * dot(dV, B) - dot(dA, T),
    }
    return {k: float(np.max(np.abs(v))) if v.size else 0.0 for k, v in defects.items()}


# ---------------------------------------------------------------------------
# Debug exports
# ---------------------------------------------------------------------------


def operator_triplets(matrix: sp.spmatrix) -> str:
    """Coordinate (row, col, value) text, one entry per line."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    lines += [f"{int(coo.row[k])} {int(coo.col[k])} {float(coo.data[k])!r}" for k in order]
    return "\n".join(lines) + "\n"


def export_operator(matrix: sp.spmatrix, path: str) -> Dict[str, object]:
    return atomic_write_text(path, operator_triplets(matrix))
