"""Verification experiments: reports, FD checks, HJB scan, receding horizon."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import make_spec

from parastab.mesh import Field
from parastab.optimize import solve_ocp
from parastab.verify import (ExperimentReport, spec_fingerprint,
                             gradient_fd_check, hjb_residual,
                             feedback_closed_loop, lipschitz_probe,
                             second_order_check, inactivity_time,
                             brute_force_value, _lanczos_smallest)


@pytest.fixture(scope="module")
def cheap_unconstrained():
    return make_spec(n=8, T=0.4, dt=0.02, eta=np.inf, tol=1e-6,
                     max_iter=2000)


@pytest.fixture(scope="module")
def cheap_constrained():
    spec = make_spec(n=8, T=0.4, dt=0.02, eta=0.157, tol=1e-5,
                     max_iter=2000, tail_tol=0.9)
    return spec, solve_ocp(spec)


def test_fingerprint_stable_and_sensitive():
    a = make_spec(n=10)
    b = make_spec(n=10)
    assert spec_fingerprint(a) == spec_fingerprint(b)
    assert spec_fingerprint(a) != spec_fingerprint(make_spec(n=10, dt=0.01))
    shifted = make_spec(n=10)
    shifted.y0.values[3] += 1e-12
    assert spec_fingerprint(a) != spec_fingerprint(shifted)


def test_report_verdicts_and_serialization():
    rep = ExperimentReport(tag="t", fingerprint="f" * 16)
    rep.add_verdict("first", True, 0.5, 1.0)
    assert rep.passed
    rep.add_verdict("second", False, 2.0, 1.0, note="why")
    assert not rep.passed
    d = rep.to_dict()
    assert d["passed"] is False
    assert d["verdicts"][1]["note"] == "why"
    assert "FAIL" in rep.summary_text()

    rep.probes.append({"probe": 1, "x": 2.0})
    rep.probes.append({"probe": 0, "x": 1.0, "y": 3.0})
    rows = rep.csv_rows()
    assert rows[0] == ["probe", "x", "y"]
    assert rows[1][0] == 0  # sorted by probe index


def test_gradient_fd_check_passes(cheap_unconstrained):
    rep = gradient_fd_check(cheap_unconstrained)
    assert rep.passed
    names = [v["name"] for v in rep.verdicts]
    assert "richardson_dir0" in names and "all_directions_probed" in names
    # central differences are second order: the eps-decade ratio sits near 100
    rich = [v for v in rep.verdicts if v["name"].startswith("richardson")]
    for v in rich:
        assert 50.0 <= v["value"] <= 200.0


def test_hjb_residual_zero_state(cheap_unconstrained):
    spec = cheap_unconstrained
    rep = hjb_residual(spec, [Field(np.zeros(8), spec.mesh)])
    assert rep.passed
    assert abs(rep.probes[0]["normalized"]) <= 1e-12


def test_hjb_residual_small_states(cheap_unconstrained):
    # the stationary identity carries the horizon-truncation floor, so the
    # scan bar comes from a tol sized to that floor, not the solver tol
    spec = make_spec(n=8, T=0.4, dt=0.02, eta=np.inf, tol=1e-3,
                     max_iter=2000)
    res = solve_ocp(cheap_unconstrained)
    states = [Field(res.ybar.values[k].copy(), spec.mesh) for k in (2, 10)]
    rep = hjb_residual(spec, states)
    assert rep.passed
    assert rep.metrics["states_checked"] == 2
    assert rep.metrics["worst_normalized"] <= 5.0 * spec.tol


def test_feedback_full_window_reproduces_open_loop(cheap_constrained):
    spec, base = cheap_constrained
    traj, rep = feedback_closed_loop(spec, spec.n_steps)
    npt.assert_array_equal(traj.values, base.ybar.values)
    by_name = {v["name"]: v for v in rep.verdicts}
    assert by_name["completed"]["passed"]
    assert by_name["cost_gap"]["passed"]
    assert rep.metrics["cost_gap"] == pytest.approx(0.0, abs=1e-12)


def test_feedback_resolve_every_bounds(cheap_constrained):
    spec, _ = cheap_constrained
    with pytest.raises(ValueError):
        feedback_closed_loop(spec, 0)
    with pytest.raises(ValueError):
        feedback_closed_loop(spec, spec.n_steps + 1)


def test_lipschitz_probe_smoke(cheap_constrained):
    spec, _ = cheap_constrained
    rep = lipschitz_probe(spec, pair_count=2)
    assert rep.passed
    assert rep.metrics["mu_spread"] <= 2.0
    assert rep.metrics["pairs_kept_0.01"] == 2


def test_second_order_check_verdicts(cheap_constrained):
    spec, base = cheap_constrained
    rep = second_order_check(spec, base)
    by_name = {v["name"]: v for v in rep.verdicts}
    assert by_name["kappa_positive"]["passed"]
    assert by_name["symmetry"]["value"] <= 1e-8
    assert by_name["hvp_fd"]["passed"]
    assert rep.metrics["kappa_hat"] >= spec.alpha - 1e-9


def test_inactivity_time_edges(cheap_constrained):
    spec, base = cheap_constrained
    unconstrained = make_spec(n=8, T=0.4, dt=0.02, eta=np.inf)
    assert inactivity_time(base, unconstrained) == 0.0

    quiet = solve_ocp(spec)
    quiet.pbar.pbar[:] = 0.0
    assert inactivity_time(quiet, spec) == 0.0

    loud = solve_ocp(spec)
    loud.pbar.pbar[:] = 50.0
    assert inactivity_time(loud, spec) is None

    partial = solve_ocp(spec)
    partial.pbar.pbar[:] = 0.0
    partial.pbar.pbar[:4] = 50.0
    assert inactivity_time(partial, spec) == pytest.approx(4 * spec.dt)


def test_brute_force_matches_solver(cheap_constrained):
    spec, base = cheap_constrained
    bf = brute_force_value(spec, restarts=3)
    assert bf == pytest.approx(base.cost, abs=1e-6)


def test_brute_force_size_guard():
    spec = make_spec(n=24, T=2.0, dt=0.02)
    with pytest.raises(ValueError):
        brute_force_value(spec)


def test_lanczos_on_diagonal_surrogate():
    dt = 0.1
    diag = np.array([0.0, 3.0, 1.5, 0.2, 2.0, 0.9])  # row 0 never enters

    class DiagOp:
        def matvec(self, v):
            out = diag[:, None] * v
            out[0] = 0.0
            return out

        def inner(self, a, b):
            return float(dt * np.sum(a[1:] * b[1:]))

    out = _lanczos_smallest(DiagOp(), (6, 1), 12, seed=0)
    assert out is not None
    ritz, steps = out
    assert ritz == pytest.approx(0.2, abs=1e-9)
    assert steps >= 1
