"""Skeleton meshes, quadratic fields, the inextensional split and constrained pairs."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import segment
from rods.errors import KnotNotMeshNode, NotClamped
from rods.geometry import Skeleton
from rods.spaces import (
    InextensionalProjector,
    KinematicPair,
    SkeletonField,
    build_mesh,
    constrained_pair,
    export_operator,
    extensional_norm,
    gram_matrix,
    inner,
    norm_equivalence,
    operator_triplets,
    pair_constraint_residual,
    project_DI,
    reduction_identity_defects,
)


def smooth(arc, s):
    """Arbitrary smooth field, nonzero in every component."""
    return np.stack([np.sin(2 * s) + arc.id, s**2, np.cos(s) * arc.id], axis=1)


class TestMesh:
    def test_single_element_stiffness(self, cantilever):
        mesh = build_mesh(cantilever, 1.0)
        assert mesh.n_elements == 1
        end = mesh.vertex_node(1, 1.0)
        mid = int(mesh.arc_mesh(1).elements[0, 1])
        free = list(mesh.free_dofs)
        K = gram_matrix(mesh).toarray()
        for comp in range(3):
            idx = [free.index(3 * mid + comp), free.index(3 * end + comp)]
            np.testing.assert_allclose(K[np.ix_(idx, idx)], [[16 / 3, -8 / 3], [-8 / 3, 7 / 3]], atol=1e-12)

    def test_knot_node_shared(self, l_frame):
        mesh = build_mesh(l_frame, 0.25)
        assert mesh.vertex_node(1, 1.0) == mesh.vertex_node(2, 0.0) == mesh.knot_nodes[1]
        assert mesh.n_elements == 8
        assert mesh.n_nodes == 2 * mesh.n_elements + 1

    def test_vertex_lookup_off_grid(self, cantilever):
        mesh = build_mesh(cantilever, 0.25)
        with pytest.raises(KnotNotMeshNode):
            mesh.vertex_node(1, 0.33)

    def test_mesh_size_must_be_positive(self, cantilever):
        with pytest.raises(ValueError):
            build_mesh(cantilever, 0.0)


class TestFields:
    def test_quadratics_interpolated_exactly(self, cantilever):
        mesh = build_mesh(cantilever, 0.25)
        field = SkeletonField.from_function(
            mesh, lambda arc, s: np.stack([s**2, 1 - s, 3 * s**2 - s], axis=1), clamp=False
        )
        s = np.array([0.1, 0.37, 0.5, 0.93])
        expected = np.stack([s**2, 1 - s, 3 * s**2 - s], axis=1)
        np.testing.assert_allclose(field.values(1, s), expected, atol=1e-13)
        np.testing.assert_allclose(
            field.derivative(1, s), np.stack([2 * s, -np.ones_like(s), 6 * s - 1], axis=1), atol=1e-12
        )

    def test_clamped_nodes_zeroed(self, cantilever):
        mesh = build_mesh(cantilever, 0.25)
        field = SkeletonField.from_function(mesh, lambda arc, s: np.ones((len(s), 3)))
        assert np.all(field.nodal[mesh.clamped_nodes] == 0.0)
        assert np.all(field.values(1, [1.0]) == 1.0)

    def test_arithmetic_needs_one_mesh(self, cantilever):
        a = SkeletonField.zeros(build_mesh(cantilever, 0.5))
        b = SkeletonField.zeros(build_mesh(cantilever, 0.5))
        with pytest.raises(ValueError):
            a + b

    def test_gram_matrix_needs_clamps(self):
        mesh = build_mesh(Skeleton((segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),)), 0.5)
        with pytest.raises(NotClamped):
            gram_matrix(mesh)
        with pytest.raises(NotClamped):
            InextensionalProjector(mesh)


class TestInextensionalSplit:
    @pytest.fixture
    def split(self, l_frame):
        mesh = build_mesh(l_frame, 0.125)
        U = SkeletonField.from_function(mesh, smooth)
        U_I, U_E = project_DI(U)
        return U, U_I, U_E

    def test_parts_sum_to_field(self, split):
        U, U_I, U_E = split
        np.testing.assert_allclose((U_I + U_E).dofs, U.dofs, atol=1e-12)

    def test_inextensional_part_in_kernel(self, split):
        U, U_I, _ = split
        assert extensional_norm(U_I) <= 1e-10 * extensional_norm(U)

    def test_parts_orthogonal(self, split):
        U, U_I, U_E = split
        assert abs(inner(U_I, U_E)) <= 1e-10 * inner(U, U)

    def test_projection_idempotent(self, split):
        _, U_I, _ = split
        again, rest = project_DI(U_I)
        np.testing.assert_allclose(again.dofs, U_I.dofs, atol=1e-10 * np.max(np.abs(U_I.dofs)))
        assert np.sqrt(inner(rest, rest)) <= 1e-10 * np.sqrt(inner(U_I, U_I))

    def test_axial_stretch_is_extensional(self, cantilever):
        mesh = build_mesh(cantilever, 0.125)
        U = SkeletonField.from_function(mesh, lambda arc, s: s[:, None] * arc.frames(s)["T"])
        U_I, U_E = project_DI(U)
        assert np.max(np.abs(U_I.dofs)) <= 1e-12
        np.testing.assert_allclose(U_E.dofs, U.dofs, atol=1e-12)

    def test_straight_rod_norm_equivalence(self, cantilever):
        result = norm_equivalence(build_mesh(cantilever, 0.25))
        assert result["dimension"] == 8
        assert result["lower"] == pytest.approx(1.0, abs=1e-8)
        assert result["upper"] == pytest.approx(1.0, abs=1e-8)


class TestConstrainedPairs:
    def test_linear_rotation_on_straight_rod(self, cantilever):
        mesh = build_mesh(cantilever, 0.25)
        rotation = SkeletonField.from_function(
            mesh, lambda arc, s: np.stack([0 * s, 0 * s, s], axis=1)
        )
        pair = constrained_pair(rotation)
        np.testing.assert_allclose(pair.displacement.values(1, [1.0])[0], [0.0, 0.5, 0.0], atol=1e-12)
        assert pair_constraint_residual(pair) < 1e-12
        defects = reduction_identity_defects(pair)
        assert max(defects.values()) < 1e-10
        assert pair.norm() == pytest.approx(1.0)

    def test_projected_residual_vanishes_on_frame(self, l_frame):
        mesh = build_mesh(l_frame, 0.125)
        pair = constrained_pair(SkeletonField.from_function(mesh, smooth))
        assert pair_constraint_residual(pair, projected=True) <= 1e-10 * pair.norm()

    def test_torsion_is_rotation_along_tangent(self, cantilever):
        mesh = build_mesh(cantilever, 0.5)
        rotation = SkeletonField.from_function(mesh, lambda arc, s: np.stack([s, 0 * s, 0 * s], axis=1))
        pair = KinematicPair(SkeletonField.zeros(mesh), rotation)
        np.testing.assert_allclose(pair.torsion(1, np.array([0.25, 1.0])), [0.25, 1.0], atol=1e-14)

    def test_unclamped_skeleton(self):
        mesh = build_mesh(Skeleton((segment(1, [0, 0, 0], [1, 0, 0], [0, 1, 0]),)), 0.5)
        with pytest.raises(NotClamped):
            constrained_pair(SkeletonField.zeros(mesh))


def test_operator_export(tmp_path):
    matrix = sp.csr_matrix(np.array([[0.0, 2.0], [1.5, 0.0]]))
    assert operator_triplets(matrix) == "2 2 2\n0 1 2.0\n1 0 1.5\n"
    result = export_operator(matrix, str(tmp_path / "K.txt"))
    assert result["success"]
    assert (tmp_path / "K.txt").read_text() == operator_triplets(matrix)
