"""Mesh, operator, and norm primitives against hand-computable cases."""

import numpy as np
import numpy.testing as npt
import pytest

from parastab.errors import MeshMismatchError, SingularShiftError
from parastab.mesh import (SpatialMesh, Field, assemble_operator,
                           inner_product, norm, l2_norm_values,
                           h1_norm_values, solve_shifted, leading_eigenvalue,
                           random_smooth_field, riesz_h1)


def test_dirichlet_three_nodes_unit_h():
    # h = length / (n + 1), so length 4 gives h = 1
    mesh = SpatialMesh(1, 3, bc="dirichlet", length=4.0)
    assert mesh.h == pytest.approx(1.0)
    op = assemble_operator(mesh, 0.0)
    npt.assert_allclose(op.apply(np.ones(3)), [-1.0, 0.0, -1.0], atol=1e-14)


def test_neumann_constant_kernel():
    for n in (2, 5, 33):
        op = assemble_operator(SpatialMesh(1, n, bc="neumann"), 0.0)
        npt.assert_allclose(op.apply(np.ones(n)), 0.0, atol=1e-12)


def test_neumann_constant_kernel_2d():
    op = assemble_operator(SpatialMesh(2, 7, bc="neumann"), 0.0)
    npt.assert_allclose(op.apply(np.ones(49)), 0.0, atol=1e-12)


def test_dirichlet_leading_eigenvalue_near_pi_squared():
    op = assemble_operator(SpatialMesh(1, 63, bc="dirichlet"), 0.0)
    lam = leading_eigenvalue(op)
    assert abs(lam + np.pi ** 2) <= 1e-3 * np.pi ** 2


def test_leading_eigenvalue_neumann_shift():
    op0 = assemble_operator(SpatialMesh(1, 17, bc="neumann"), 0.0)
    assert abs(leading_eigenvalue(op0)) <= 1e-7
    op2 = assemble_operator(SpatialMesh(1, 17, bc="neumann"), 2.0)
    assert leading_eigenvalue(op2) == pytest.approx(2.0, abs=1e-7)


def test_operator_self_adjoint_under_mass_weights():
    rng = np.random.default_rng(0)
    for mesh in (SpatialMesh(1, 31, bc="neumann"),
                 SpatialMesh(1, 30, bc="dirichlet"),
                 SpatialMesh(2, 9, bc="neumann"),
                 SpatialMesh(2, 8, bc="dirichlet")):
        op = assemble_operator(mesh, 0.7)
        w = mesh.mass_weights()
        for _ in range(5):
            u = rng.standard_normal(mesh.node_count)
            v = rng.standard_normal(mesh.node_count)
            left = float(w @ (op.apply(u) * v))
            right = float(w @ (u * op.apply(v)))
            assert abs(left - right) <= 1e-12 * max(1.0, abs(left))


def test_dirichlet_coercivity_bound():
    mesh = SpatialMesh(1, 24, bc="dirichlet")
    op = assemble_operator(mesh, -0.5)
    rng = np.random.default_rng(1)
    for _ in range(100):
        v = rng.standard_normal(mesh.node_count)
        f = Field(v, mesh)
        quad = -inner_product(f, Field(op.apply(v), mesh), "l2")
        h1sq = h1_norm_values(v, mesh) ** 2
        l2sq = l2_norm_values(v, mesh) ** 2
        assert quad >= op.theta * h1sq - op.rho * l2sq - 1e-10


def test_inner_product_constants_and_zero():
    mesh = SpatialMesh(1, 41, bc="neumann")
    op = assemble_operator(mesh, 0.0)
    one = Field(np.ones(41), mesh)
    zero = Field(np.zeros(41), mesh)
    assert inner_product(one, one, "l2") == pytest.approx(1.0)
    for which in ("l2", "h1", "da"):
        assert inner_product(zero, zero, which, op=op) == 0.0


def test_h1_seminorm_of_linear_field():
    mesh = SpatialMesh(1, 101, bc="neumann")
    x = mesh.axis_coords()
    f = Field(x.copy(), mesh)
    semisq = inner_product(f, f, "h1") - inner_product(f, f, "l2")
    assert semisq == pytest.approx(1.0, abs=1e-4)


def test_inner_product_mesh_mismatch():
    a = Field(np.ones(5), SpatialMesh(1, 5, bc="neumann"))
    b = Field(np.ones(6), SpatialMesh(1, 6, bc="neumann"))
    with pytest.raises(MeshMismatchError):
        inner_product(a, b, "l2")


def test_solve_shifted_constant_and_zero_rhs():
    mesh = SpatialMesh(1, 20, bc="neumann")
    op = assemble_operator(mesh, 0.0)
    rhs = Field(np.full(20, 3.0), mesh)
    out = solve_shifted(op, 1.0, rhs)
    npt.assert_allclose(out.values, 3.0, rtol=1e-12)
    zero = solve_shifted(op, 1.0, Field(np.zeros(20), mesh))
    npt.assert_allclose(zero.values, 0.0, atol=1e-14)


def test_solve_shifted_inverts_dirichlet_example():
    # (0*I - A) x = rhs, so the ones vector answers rhs = -A @ ones
    mesh = SpatialMesh(1, 3, bc="dirichlet", length=4.0)
    op = assemble_operator(mesh, 0.0)
    out = solve_shifted(op, 0.0, Field(np.array([1.0, 0.0, 1.0]), mesh))
    npt.assert_allclose(out.values, 1.0, rtol=1e-12)


def test_solve_shifted_roundtrip_property():
    rng = np.random.default_rng(2)
    for mesh in (SpatialMesh(1, 37, bc="neumann"),
                 SpatialMesh(2, 11, bc="dirichlet")):
        op = assemble_operator(mesh, 0.4)
        rhs_vals = rng.standard_normal(mesh.node_count)
        out = solve_shifted(op, 2.5, Field(rhs_vals, mesh))
        back = 2.5 * out.values - op.apply(out.values)
        assert np.linalg.norm(back - rhs_vals) <= \
            1e-10 * np.linalg.norm(rhs_vals)


def test_solve_shifted_singular_shift():
    # sigma = 0 hits the Neumann kernel exactly
    mesh = SpatialMesh(1, 10, bc="neumann")
    op = assemble_operator(mesh, 0.0)
    with pytest.raises(SingularShiftError):
        solve_shifted(op, 0.0, Field(np.ones(10), mesh))


def test_random_smooth_field_norm_and_determinism():
    mesh = SpatialMesh(1, 28, bc="neumann")
    a = random_smooth_field(np.random.default_rng(5), mesh, h1_norm=0.3)
    b = random_smooth_field(np.random.default_rng(5), mesh, h1_norm=0.3)
    assert h1_norm_values(a.values, mesh) == pytest.approx(0.3, rel=1e-9)
    npt.assert_array_equal(a.values, b.values)


def test_riesz_h1_pairing_identity():
    mesh = SpatialMesh(1, 26, bc="neumann")
    rng = np.random.default_rng(3)
    f = Field(rng.standard_normal(26), mesh)
    r = riesz_h1(f)
    for _ in range(4):
        v = Field(rng.standard_normal(26), mesh)
        assert inner_product(r, v, "h1") == \
            pytest.approx(inner_product(f, v, "l2"), rel=1e-8, abs=1e-12)


def test_norm_wrapper_matches_inner_product():
    mesh = SpatialMesh(2, 6, bc="neumann")
    v = Field(np.random.default_rng(4).standard_normal(36), mesh)
    assert norm(v, "l2") == pytest.approx(
        np.sqrt(inner_product(v, v, "l2")), rel=1e-14)
