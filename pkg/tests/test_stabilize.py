"""Riccati synthesis, closed-loop margins, admissible-radius constants."""

import numpy as np
import numpy.testing as npt
import pytest
import scipy.linalg as sla

from conftest import make_spec

from parastab.errors import CapExceededError, NotStabilizableError
from parastab.forward import simulate_feedback, tail_check
from parastab.mesh import SpatialMesh, assemble_operator
from parastab.model import Nonlinearity, ControlOperator
from parastab.stabilize import (riccati_matrix, riccati_gain,
                                stability_margin, lifted_riccati_gain,
                                gain_l2_norm, smallness_estimates)


def test_scalar_closed_forms():
    # a=0, b=1, alpha=1: P = 1, K = 1, margin -1
    P, K, margin, _ = riccati_matrix(np.array([[0.0]]), np.array([[1.0]]),
                                     np.array([1.0]), 1.0)
    assert abs(P[0, 0] - 1.0) <= 1e-10
    assert abs(K[0, 0] - 1.0) <= 1e-10
    assert margin == pytest.approx(-1.0, abs=1e-10)

    # stable uncontrolled mode: Lyapunov value P = 1/(2|a|)
    P2, K2, margin2, _ = riccati_matrix(np.array([[-1.0]]),
                                        np.array([[0.0]]),
                                        np.array([1.0]), 1.0)
    assert abs(P2[0, 0] - 0.5) <= 1e-10
    assert abs(K2[0, 0]) <= 1e-10
    assert margin2 == pytest.approx(-1.0, abs=1e-10)


def test_scalar_margin_monotone_in_alpha():
    # closed form: margin = -sqrt(a^2 + 1/alpha)
    margins = []
    for alpha in (1.0, 0.25, 0.04):
        _, _, margin, _ = riccati_matrix(np.array([[0.0]]),
                                         np.array([[1.0]]),
                                         np.array([1.0]), alpha)
        margins.append(margin)
        assert margin == pytest.approx(-np.sqrt(1.0 / alpha), rel=1e-9)
    assert margins[0] > margins[1] > margins[2]


def test_riccati_matches_care_solver():
    spec = make_spec(n=12)
    A = spec.operator().matrix.toarray()
    B = spec.control.matrix
    w = spec.mesh.mass_weights()
    P, K, margin, _ = riccati_matrix(A, B, w, spec.alpha)
    P_ref = sla.solve_continuous_are(A, B, np.diag(w),
                                     spec.alpha * np.eye(B.shape[1]))
    npt.assert_allclose(P, P_ref, rtol=1e-6, atol=1e-9)
    assert margin < 0


def test_riccati_residual_bound():
    spec = make_spec(n=10)
    A = spec.operator().matrix.toarray()
    B = spec.control.matrix
    w = spec.mesh.mass_weights()
    P, _, _, _ = riccati_matrix(A, B, w, spec.alpha)
    Md = np.diag(w)
    resid = A.T @ P + P @ A - (P @ B) @ (B.T @ P) / spec.alpha + Md
    assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(Md)


def test_stability_margin_open_loop():
    mesh = SpatialMesh(1, 21, bc="neumann")
    ctrl = ControlOperator.from_supports(mesh, [(0.2, 0.8)])
    K0 = np.zeros((1, 21))
    assert stability_margin(assemble_operator(mesh, -1.0), ctrl, K0) == \
        pytest.approx(-1.0, abs=1e-9)
    assert stability_margin(assemble_operator(mesh, 1.0), ctrl, K0) == \
        pytest.approx(1.0, abs=1e-9)


def test_unstabilizable_reports():
    with pytest.raises(NotStabilizableError):
        riccati_matrix(np.array([[1.0]]), np.array([[0.0]]),
                       np.array([1.0]), 1.0)


def test_riccati_gain_cap():
    spec = make_spec(n=40)
    with pytest.raises(CapExceededError):
        riccati_gain(spec.operator(), spec.control, spec.alpha,
                     dense_cap=32)


def test_lifted_gain_passthrough_below_cap():
    spec = make_spec(n=16)
    direct = riccati_gain(spec.operator(), spec.control, spec.alpha)
    lifted = lifted_riccati_gain(spec)
    npt.assert_array_equal(direct.matrix, lifted.matrix)


def test_lifted_gain_above_cap():
    spec = make_spec(n=64)
    gain = lifted_riccati_gain(spec, dense_cap=32)
    assert gain.matrix.shape == (spec.control.m, 64)
    assert gain.margin < 0


def test_lifted_gain_2d_smoke():
    spec = make_spec(n=12, dim=2)
    gain = lifted_riccati_gain(spec, dense_cap=64)
    assert gain.matrix.shape == (spec.control.m, 144)
    assert gain.margin < 0


def test_smallness_constants_structure():
    spec = make_spec(n=16)
    gain = lifted_riccati_gain(spec)
    est = smallness_estimates(spec, gain, samples=16)
    for key in ("m_k", "contraction", "embedding", "gain_l2_norm",
                "margin", "eta", "curvature_term", "eta_term", "delta1"):
        assert key in est
    assert est["m_k"] > 0
    assert est["contraction"] > 0
    assert est["delta1"] > 0
    assert est["delta1"] == pytest.approx(
        min(est["curvature_term"], est["eta_term"]))


def test_smallness_linear_model_drops_curvature_term():
    spec = make_spec(n=16, nl=Nonlinearity.quartic(0.0),
                     operator_shift=0.3)
    gain = lifted_riccati_gain(spec)
    est = smallness_estimates(spec, gain, samples=16)
    assert est["contraction"] == 0.0
    assert est["curvature_term"] is None
    assert est["delta1"] == pytest.approx(est["eta_term"])


def test_smallness_unbounded_control_drops_eta_term():
    spec = make_spec(n=16, eta=np.inf)
    gain = lifted_riccati_gain(spec)
    est = smallness_estimates(spec, gain, samples=16)
    assert est["eta"] is None and est["eta_term"] is None
    assert est["delta1"] == pytest.approx(est["curvature_term"])


def test_smallness_seed_stability():
    spec = make_spec(n=16)
    gain = lifted_riccati_gain(spec)
    a = smallness_estimates(spec, gain, samples=32, seed=1)
    b = smallness_estimates(spec, gain, samples=32, seed=2)
    assert abs(a["m_k"] - b["m_k"]) <= 0.2 * max(a["m_k"], b["m_k"])


def test_gain_norm_positive():
    spec = make_spec(n=16)
    gain = lifted_riccati_gain(spec)
    assert gain_l2_norm(gain, spec.mesh) > 0


def test_closed_loop_feedback_decays():
    spec = make_spec(n=24, T=4.0, dt=0.02, eta=np.inf)
    gain = lifted_riccati_gain(spec)
    traj, control = simulate_feedback(spec, gain)
    w = spec.mesh.mass_weights()
    n0 = np.sqrt((traj.values[0] ** 2) @ w)
    nT = np.sqrt((traj.values[-1] ** 2) @ w)
    assert nT < 0.1 * n0
    assert tail_check(traj, 0.2)["passed"]
    assert np.isfinite(control.values).all()
