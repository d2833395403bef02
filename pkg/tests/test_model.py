"""Nonlinearity variants, control operator, admissible set, problem record."""

import numpy as np
import numpy.testing as npt
import pytest

from parastab.mesh import SpatialMesh, Field, assemble_operator, \
    leading_eigenvalue
from parastab.model import (Nonlinearity, ControlOperator, AdmissibleSet,
                            ProblemSpec, f_eval, f_derivatives,
                            linear_coefficient, project_ball)


def test_schlogl_full_reaction_values():
    nl = Nonlinearity.schlogl(-1.0, -1.0, 2.0)
    # R(y) = a*y*(y - xi1)*(y - xi2)
    assert nl.full_reaction(0.0) == 0.0
    assert nl.full_reaction(1.0) == pytest.approx(2.0)
    assert f_eval(nl, 0.0) == 0.0


def test_schlogl_linear_coefficient_sign():
    assert linear_coefficient(Nonlinearity.schlogl(-1.0, -1.0, 2.0)) == \
        pytest.approx(2.0)
    assert linear_coefficient(Nonlinearity.schlogl(-1.0, 1.0, 2.0)) == \
        pytest.approx(-2.0)
    assert linear_coefficient(Nonlinearity.quartic(3.0)) == 0.0


def test_schlogl_unstable_origin_when_roots_straddle():
    # xi1*xi2 < 0 with a < 0 makes the origin linearly unstable
    nl = Nonlinearity.schlogl(-1.0, -0.6, 0.5)
    c = linear_coefficient(nl)
    assert c > 0
    op = assemble_operator(SpatialMesh(1, 21, bc="neumann"), c)
    assert leading_eigenvalue(op) == pytest.approx(c, abs=1e-7)


def test_normalized_reaction_and_split():
    # f_eval excludes the linear part; adding it back recovers R
    nl = Nonlinearity.schlogl(-1.0, -0.6, 0.5)
    c = linear_coefficient(nl)
    y = np.linspace(-2.0, 2.0, 41)
    npt.assert_allclose(f_eval(nl, y) + c * y, nl.full_reaction(y),
                        rtol=1e-13, atol=1e-13)


def test_quartic_values_and_derivatives():
    nl = Nonlinearity.quartic(1.0)
    assert f_eval(nl, 2.0) == pytest.approx(16.0)
    fp, fpp = f_derivatives(nl, 1.0)
    assert (fp, fpp) == (pytest.approx(4.0), pytest.approx(12.0))


def test_normalization_exact_at_zero():
    variants = [Nonlinearity.schlogl(-1.0, -0.6, 0.5),
                Nonlinearity.quartic(-1.0),
                Nonlinearity.custom_square(),
                Nonlinearity.custom_c2(lambda y: y * y, lambda y: 2.0 * y,
                                       lambda y: 2.0 + 0.0 * y, 0.0)]
    for nl in variants:
        assert f_eval(nl, 0.0) == 0.0
        assert f_derivatives(nl, 0.0)[0] == 0.0


def test_derivatives_match_finite_differences():
    eps = 1e-5
    for nl in (Nonlinearity.schlogl(-1.0, -0.6, 0.5),
               Nonlinearity.quartic(-0.5),
               Nonlinearity.custom_square()):
        for y in np.linspace(-5.0, 5.0, 21):
            fp, _ = f_derivatives(nl, y)
            fd = (f_eval(nl, y + eps) - f_eval(nl, y - eps)) / (2 * eps)
            assert abs(fp - fd) <= 1e-6 * (1.0 + abs(fp))


def test_custom_square_matches_generic_c2():
    fast = Nonlinearity.custom_square()
    generic = Nonlinearity.custom_c2(lambda y: y * y, lambda y: 2.0 * y,
                                     lambda y: 2.0 + 0.0 * y, 0.0)
    y = np.linspace(-3.0, 3.0, 13)
    npt.assert_allclose(f_eval(fast, y), f_eval(generic, y), rtol=1e-14)
    npt.assert_allclose(f_derivatives(fast, y)[1],
                        f_derivatives(generic, y)[1], rtol=1e-14)


def test_schlogl_requires_negative_a():
    with pytest.raises(ValueError):
        Nonlinearity.schlogl(1.0, -1.0, 2.0)


def test_project_ball_examples():
    ball = AdmissibleSet(1.0)
    npt.assert_allclose(project_ball(ball, np.array([3.0, 4.0])), [0.6, 0.8])
    npt.assert_allclose(project_ball(ball, np.array([0.3, 0.0])), [0.3, 0.0])
    npt.assert_allclose(project_ball(ball, np.zeros(2)), 0.0)


def test_project_ball_idempotent_and_contractive():
    ball = AdmissibleSet(0.7)
    rng = np.random.default_rng(9)
    for _ in range(1000):
        v = rng.standard_normal(3) * 2.0
        w = rng.standard_normal(3) * 2.0
        pv, pw = project_ball(ball, v), project_ball(ball, w)
        npt.assert_allclose(project_ball(ball, pv), pv, rtol=1e-14)
        assert np.linalg.norm(pv - pw) <= np.linalg.norm(v - w) + 1e-12


def test_admissible_radius_nonnegative():
    with pytest.raises(ValueError):
        AdmissibleSet(-1.0)
    assert not AdmissibleSet(np.inf).bounded
    # radius 0 is legal and pins the control
    npt.assert_allclose(project_ball(AdmissibleSet(0.0),
                                     np.array([2.0, -3.0])), 0.0)


def test_control_columns_unit_l2():
    mesh = SpatialMesh(1, 40, bc="neumann")
    B = ControlOperator.from_supports(mesh, [(0.1, 0.4), (0.5, 0.95)])
    w = mesh.mass_weights()
    for j in range(B.m):
        col = B.matrix[:, j]
        assert float(w @ (col * col)) == pytest.approx(1.0, rel=1e-12)


def test_control_adjoint_is_weighted_transpose():
    mesh = SpatialMesh(1, 25, bc="neumann")
    B = ControlOperator.from_supports(mesh, [(0.2, 0.5), (0.55, 0.8)])
    rng = np.random.default_rng(11)
    w = mesh.mass_weights()
    for _ in range(5):
        u = rng.standard_normal(B.m)
        v = rng.standard_normal(mesh.node_count)
        lhs = float(w @ (B.apply(u) * v))
        rhs = float(u @ B.adjoint_apply(v))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


def test_control_2d_supports():
    mesh = SpatialMesh(2, 12, bc="neumann")
    B = ControlOperator.from_supports(mesh, [((0.1, 0.5), (0.2, 0.6))])
    w = mesh.mass_weights()
    col = B.matrix[:, 0]
    assert float(w @ (col * col)) == pytest.approx(1.0, rel=1e-12)


def test_problem_spec_validation():
    mesh = SpatialMesh(1, 8, bc="neumann")
    nl = Nonlinearity.quartic(0.0)
    ctrl = ControlOperator.from_supports(mesh, [(0.2, 0.8)])
    y0 = Field(np.zeros(8), mesh)
    ok = dict(mesh=mesh, nonlinearity=nl, control=ctrl,
              admissible=AdmissibleSet(1.0), y0=y0, alpha=0.1,
              horizon=1.0, dt=0.1)
    ProblemSpec(**ok)
    with pytest.raises(ValueError):
        ProblemSpec(**{**ok, "alpha": 0.0})
    with pytest.raises(ValueError):
        ProblemSpec(**{**ok, "dt": 0.3})
    with pytest.raises(ValueError):
        ProblemSpec(**{**ok, "scheme": "rk4"})
    other = Field(np.zeros(9), SpatialMesh(1, 9, bc="neumann"))
    with pytest.raises(ValueError):
        ProblemSpec(**{**ok, "y0": other})


def test_spec_operator_shift_defaults_to_linear_coefficient():
    mesh = SpatialMesh(1, 8, bc="neumann")
    nl = Nonlinearity.schlogl(-1.0, -0.6, 0.5)
    ctrl = ControlOperator.from_supports(mesh, [(0.2, 0.8)])
    spec = ProblemSpec(mesh=mesh, nonlinearity=nl, control=ctrl,
                       admissible=AdmissibleSet(1.0),
                       y0=Field(np.zeros(8), mesh), alpha=0.1,
                       horizon=1.0, dt=0.1)
    assert spec.operator_shift == pytest.approx(linear_coefficient(nl))
    assert spec.n_steps == 10
