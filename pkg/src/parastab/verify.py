"""Verification harness for the solved control problems.

Each check probes one structural identity of the discrete problem: the
value-gradient identity against central differences, the stationary
Hamilton-Jacobi-Bellman residual at sampled states, the receding-horizon
realization of the feedback law, Lipschitz stability of the solution map,
the second-order condition via Lanczos on the reduced Hessian, control
inactivity times, and a dense brute-force oracle for tiny instances.

Every probe is an independent OCP solve; failures skip the probe and are
recorded in the report rather than aborting the run.  All randomness is
seeded from the instance seed with fixed offsets, so a report is a pure
function of the configuration.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .adjoint import value_gradient_field
from .errors import BlowUpError, ConvergenceError
from .forward import (ControlTrajectory, Stepper, Trajectory, cost,
                      tail_check, trajectory_norms)
from .mesh import (Field, h1_norm_values, random_smooth_field, riesz_h1)
from .model import f_eval, project_ball
from .optimize import (ReducedHessian, reduced_gradient, refine_on_face,
                       solve_ocp)

PROBE_TOL = 1e-6
PROBE_TOL_FD = 1e-8
STALL_ACCEPT_FACTOR = 100.0
LANCZOS_MAX_RESTARTS = 3


@dataclass
class ExperimentReport:
    """Machine-readable outcome of one verification experiment."""

    tag: str
    fingerprint: str
    metrics: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)

    def add_verdict(self, name, passed, value, tolerance, note=None):
        entry = {"name": name, "passed": bool(passed),
                 "value": None if value is None else float(value),
                 "tolerance": float(tolerance)}
        if note is not None:
            entry["note"] = note
        self.verdicts.append(entry)

    @property
    def passed(self):
        return all(v["passed"] for v in self.verdicts)

    def to_dict(self):
        return {
            "tag": self.tag,
            "fingerprint": self.fingerprint,
            "passed": self.passed,
            "metrics": self.metrics,
            "verdicts": self.verdicts,
            "provenance": self.provenance,
            "probes": self.probes,
        }

    def summary_text(self):
        lines = ["experiment %s  fingerprint %s" % (self.tag, self.fingerprint)]
        for v in self.verdicts:
            value = "-" if v["value"] is None else "%.6e" % v["value"]
            lines.append("  %-28s %-4s  value %-13s tol %.3e%s" % (
                v["name"], "PASS" if v["passed"] else "FAIL", value,
                v["tolerance"],
                "  (%s)" % v["note"] if "note" in v else ""))
        lines.append("  overall %s" % ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)

    def csv_rows(self):
        """Per-probe rows with a header, sorted by probe index."""
        if not self.probes:
            return []
        keys = sorted({k for row in self.probes for k in row})
        ordered = sorted(self.probes,
                         key=lambda r: (r.get("probe", 0), str(sorted(r))))
        rows = [keys]
        for row in ordered:
            rows.append([row.get(k, "") for k in keys])
        return rows


def spec_fingerprint(spec):
    """Short stable hash of the defining numbers of an instance."""
    nl = spec.nonlinearity
    radius = spec.admissible.radius
    payload = {
        "dimension": spec.mesh.dimension,
        "nodes_per_axis": spec.mesh.nodes_per_axis,
        "bc": spec.mesh.bc,
        "length": spec.mesh.length,
        "nonlinearity": [nl.kind, nl.linear, nl.poly, list(nl.params),
                         nl.lipschitz_l],
        "actuators": spec.control.m,
        "control_sha": hashlib.sha256(
            np.ascontiguousarray(spec.control.matrix).tobytes()).hexdigest()[:12],
        "radius": "inf" if not np.isfinite(radius) else radius,
        "y0_sha": hashlib.sha256(
            np.ascontiguousarray(spec.y0.values).tobytes()).hexdigest()[:12],
        "alpha": spec.alpha,
        "horizon": spec.horizon,
        "dt": spec.dt,
        "scheme": spec.scheme,
        "operator_shift": spec.operator_shift,
        "tol": spec.tol,
        "tail_tol": spec.tail_tol,
        "seed": spec.seed,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _provenance(spec, warm_start=None, seed=None):
    return {
        "grid": "%dd n=%d %s" % (spec.mesh.dimension,
                                 spec.mesh.nodes_per_axis, spec.mesh.bc),
        "dt": float(spec.dt),
        "scheme": spec.scheme,
        "warm_start": spec.warm_start if warm_start is None else warm_start,
        "seed": int(spec.seed if seed is None else seed),
    }


def _converged(spec, **kwargs):
    result = solve_ocp(spec, **kwargs)
    if not result.converged:
        raise ConvergenceError(
            "optimizer stalled at residual %.3e" % result.residual,
            residual=result.residual)
    return result


def _probe_solve(spec, **kwargs):
    """Probe-grade solve: a stall near the tolerance still yields a usable
    value, since the cost is accurate to the square of the residual."""
    result = solve_ocp(spec, **kwargs)
    if result.converged:
        return result
    if result.residual <= STALL_ACCEPT_FACTOR * spec.tol:
        return result
    raise ConvergenceError(
        "probe stalled at residual %.3e" % result.residual,
        residual=result.residual)


def value_gradient(spec, result=None):
    """Gradient of the value function at y0, as the nodal field -p(0).

    The nodal vector pairs against lumped-L2 perturbations of the initial
    state; reports additionally export the H1 Riesz representative
    (``riesz_h1`` of this field) for reading against the H1 geometry.
    """
    if result is None:
        result = _converged(spec)
    return value_gradient_field(result.pbar)


def value_gradient_forms(spec, result=None):
    """(nodal gradient, H1 Riesz representative) pair for export."""
    nodal = value_gradient(spec, result)
    return nodal, riesz_h1(nodal)


def gradient_fd_check(spec, directions=None, eps_list=(1e-2, 1e-3),
                      direction_count=3, rel_tol=1e-3, tag="grad-check"):
    """Central-difference check of the value gradient.

    For each direction v and step eps the probe compares
    (V(y0+eps v) - V(y0-eps v)) / (2 eps) with the lumped-L2 pairing
    <-p(0), v>, and estimates the O(eps^2) slope from consecutive eps
    levels.  A failed probe solve skips the direction with a note.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    probe_tol = min(spec.tol, PROBE_TOL_FD)
    probe_iter = max(spec.max_iter, 4000)
    tight = spec.with_y0(spec.y0, tol=probe_tol, max_iter=probe_iter)
    base = refine_on_face(tight, _probe_solve(tight))
    report = ExperimentReport(tag=tag, fingerprint=spec_fingerprint(spec),
                              provenance=_provenance(spec, base.warm_start))
    report.provenance["probe_tol"] = probe_tol
    g0 = value_gradient_field(base.pbar)
    w = spec.mesh.mass_weights()
    if directions is None:
        rng = np.random.default_rng(spec.seed + 11)
        directions = [random_smooth_field(rng, spec.mesh, h1_norm=1.0)
                      for _ in range(direction_count)]
    probe = 0
    per_direction = []
    for d_id, v in enumerate(directions):
        pairing = float(w @ (g0.values * v.values))
        errors = {}
        note = None
        for eps in eps_list:
            try:
                jp = _probe_solve(tight.with_y0(
                    Field(spec.y0.values + eps * v.values, spec.mesh)),
                    u0=base.ubar.values).cost
                jm = _probe_solve(tight.with_y0(
                    Field(spec.y0.values - eps * v.values, spec.mesh)),
                    u0=base.ubar.values).cost
            except (BlowUpError, ConvergenceError) as exc:
                note = "direction skipped: %s" % exc
                break
            fd = (jp - jm) / (2.0 * eps)
            rel = abs(fd - pairing) / max(abs(pairing), 1e-30)
            errors[eps] = abs(fd - pairing)
            report.probes.append({"probe": probe, "direction_id": d_id,
                                  "eps": eps, "fd": fd, "pairing": pairing,
                                  "rel_error": rel})
            probe += 1
        if note is not None:
            report.probes.append({"probe": probe, "direction_id": d_id,
                                  "eps": "", "fd": "", "pairing": pairing,
                                  "rel_error": "", "note": note})
            probe += 1
            continue
        finest = eps_list[-1]
        rel_fine = abs(errors[finest] - 0.0) / max(abs(pairing), 1e-30)
        report.add_verdict("rel_error_dir%d" % d_id,
                           rel_fine <= rel_tol, rel_fine, rel_tol)
        floor = 1e-9 * max(abs(pairing), 1e-30)
        for hi, lo in zip(eps_list, eps_list[1:]):
            expected = (hi / lo) ** 2
            ratio = errors[hi] / max(errors[lo], 1e-300)
            report.metrics["richardson_dir%d_%g_%g" % (d_id, hi, lo)] = ratio
            if errors[hi] <= floor and errors[lo] <= floor:
                report.add_verdict("richardson_dir%d" % d_id, True,
                                   ratio, expected * 2.0,
                                   note="FD error at roundoff floor")
            else:
                report.add_verdict(
                    "richardson_dir%d" % d_id,
                    expected / 2.0 <= ratio <= expected * 2.0,
                    ratio, expected * 2.0,
                    note="expected ~%.0f" % expected)
        per_direction.append(rel_fine)
    report.metrics["directions_checked"] = len(per_direction)
    report.metrics["directions_requested"] = len(directions)
    report.add_verdict("all_directions_probed",
                       len(per_direction) == len(directions),
                       float(len(per_direction)), float(len(directions)))
    return report


def hjb_residual(spec, states, rel_factor=5.0, tag="hjb-scan"):
    """Stationary HJB residual at the given states.

    Each state gets a fresh OCP solve from that initial datum; the residual
    assembles the drift pairing, running cost, control energy, and feedback
    pairing with the projected minimizer.  Failed states are skipped.
    """
    report = ExperimentReport(tag=tag, fingerprint=spec_fingerprint(spec),
                              provenance=_provenance(spec))
    op = spec.operator()
    w = spec.mesh.mass_weights()
    B = spec.control.matrix
    alpha = spec.alpha
    tol = rel_factor * spec.tol
    probe_tol = min(spec.tol, PROBE_TOL)
    probe_iter = max(spec.max_iter, 4000)
    report.provenance["probe_tol"] = probe_tol
    worst = 0.0
    checked = 0
    for idx, y in enumerate(states):
        try:
            res = _probe_solve(spec.with_y0(y, tol=probe_tol,
                                            max_iter=probe_iter))
        except (BlowUpError, ConvergenceError) as exc:
            report.probes.append({"probe": idx, "state_id": idx,
                                  "skipped": str(exc)})
            continue
        g = -res.pbar.pbar[0]
        yv = y.values
        drift = op.apply(yv) + f_eval(spec.nonlinearity, yv)
        bstar = B.T @ (w * g)
        ustar = project_ball(spec.admissible, -bstar / alpha)
        ysq = float(w @ (yv * yv))
        t1 = float(w @ (g * drift))
        t2 = 0.5 * ysq
        t3 = 0.5 * alpha * float(ustar @ ustar)
        t4 = float(bstar @ ustar)
        residual = t1 + t2 + t3 + t4
        normalized = residual / (1.0 + ysq)
        worst = max(worst, abs(normalized))
        checked += 1
        report.probes.append({"probe": idx, "state_id": idx,
                              "residual": residual, "normalized": normalized,
                              "drift_term": t1, "state_term": t2,
                              "control_term": t3, "pairing_term": t4})
        report.add_verdict("normalized_state%d" % idx,
                           abs(normalized) <= tol, abs(normalized), tol)
    report.metrics["states_checked"] = checked
    report.metrics["states_requested"] = len(states)
    report.metrics["worst_normalized"] = worst
    report.add_verdict("all_states_probed", checked == len(states),
                       float(checked), float(len(states)))
    return report


def feedback_closed_loop(spec, resolve_every, cost_gap_tol=0.05,
                         tag="feedback-sim"):
    """Receding-horizon realization of the optimal feedback.

    Every ``resolve_every`` steps the OCP is re-solved from the current
    state over a full fresh horizon and its optimal control is applied for
    the window.  An optimizer failure mid-loop truncates the trajectory and
    marks the report.  Returns (trajectory, report).
    """
    N = spec.n_steps
    if not 1 <= resolve_every <= N:
        raise ValueError("resolve_every must be in [1, n_steps]")
    open_loop = _converged(spec)
    report = ExperimentReport(tag=tag, fingerprint=spec_fingerprint(spec),
                              provenance=_provenance(spec, open_loop.warm_start))
    report.provenance["resolve_every"] = int(resolve_every)
    mesh = spec.mesh
    st = Stepper(spec)
    m = spec.control.m
    Y = np.zeros((N + 1, mesh.node_count))
    U = np.zeros((N + 1, m))
    Y[0] = spec.y0.values
    k0 = 0
    failure = None
    warm = None
    while k0 < N:
        take = min(resolve_every, N - k0)
        try:
            if k0 == 0:
                res = open_loop
            else:
                res = _converged(spec.with_y0(Field(Y[k0], mesh)), u0=warm)
            window = res.ubar.values[1:take + 1]
            seg = st.run(Y[k0], np.vstack([np.zeros((1, m)), window]),
                         step_offset=k0)
        except (BlowUpError, ConvergenceError) as exc:
            failure = {"step": k0, "time": k0 * spec.dt, "reason": str(exc)}
            break
        U[k0 + 1:k0 + take + 1] = window
        Y[k0 + 1:k0 + take + 1] = seg.values[1:take + 1]
        warm = np.vstack([res.ubar.values[take:],
                          np.zeros((take, m))])
        warm[0] = 0.0
        k0 += take
    if failure is not None:
        traj = Trajectory(Y[:failure["step"] + 1].copy(), mesh, spec.dt)
        report.metrics["failure"] = failure
        report.metrics["open_cost"] = open_loop.cost
        report.add_verdict("completed", False, float(failure["step"]),
                           float(N), note=failure["reason"])
        return traj, report
    traj = Trajectory(Y, mesh, spec.dt)
    control = ControlTrajectory(U, spec.dt)
    closed_cost = cost(spec, traj, control)
    gap = (closed_cost - open_loop.cost) / max(abs(open_loop.cost), 1e-30)
    tail = tail_check(traj, spec.tail_tol)
    report.metrics["open_cost"] = open_loop.cost
    report.metrics["closed_cost"] = closed_cost
    report.metrics["cost_gap"] = gap
    report.metrics["resolves"] = int(math.ceil(N / resolve_every))
    report.metrics["terminal_h1"] = tail["terminal_h1"]
    report.add_verdict("completed", True, float(N), float(N))
    report.add_verdict("cost_gap", gap <= cost_gap_tol, gap, cost_gap_tol)
    report.add_verdict("tail_check", tail["passed"], tail["terminal_h1"],
                       tail["threshold"])
    return traj, report


def lipschitz_probe(spec, pair_count=4, eps_list=(1e-2, 1e-3),
                    stability_factor=2.0, tag="lipschitz"):
    """Lipschitz constant of the data-to-solution map from sampled pairs.

    For each eps, ``pair_count`` pairs of perturbed initial data are solved
    and the ratio (|dy|_W + |dp|_W + max_t |du|) / |dy0|_H1 recorded; the
    per-eps maximum is the estimate.  Failed pairs are dropped.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    probe_tol = min(spec.tol, PROBE_TOL_FD)
    probe_iter = max(spec.max_iter, 4000)
    tight = spec.with_y0(spec.y0, tol=probe_tol, max_iter=probe_iter)
    base = refine_on_face(tight, _probe_solve(tight))
    report = ExperimentReport(tag=tag, fingerprint=spec_fingerprint(spec),
                              provenance=_provenance(spec, base.warm_start))
    mesh = spec.mesh
    op = spec.operator()
    report.provenance["probe_tol"] = probe_tol
    rng = np.random.default_rng(spec.seed + 101)
    pairs = []
    for _ in range(pair_count):
        d1 = random_smooth_field(rng, mesh, h1_norm=1.0)
        d2 = random_smooth_field(rng, mesh, h1_norm=1.0)
        while h1_norm_values(d1.values - d2.values, mesh) < 1e-8:
            d2 = random_smooth_field(rng, mesh, h1_norm=1.0)
        pairs.append((d1, d2))
    mu_hat = {}
    probe = 0
    # the same directions at every eps, so the spread isolates eps-dependence
    for eps in eps_list:
        ratios = []
        for pair, (d1, d2) in enumerate(pairs):
            ya = Field(spec.y0.values + eps * d1.values, mesh)
            yb = Field(spec.y0.values + eps * d2.values, mesh)
            try:
                ra = _probe_solve(tight.with_y0(ya), u0=base.ubar.values)
                rb = _probe_solve(tight.with_y0(yb), u0=base.ubar.values)
            except (BlowUpError, ConvergenceError) as exc:
                report.probes.append({"probe": probe, "eps": eps,
                                      "pair": pair, "dropped": str(exc)})
                probe += 1
                continue
            dy0 = h1_norm_values(ya.values - yb.values, mesh)
            dy = trajectory_norms(
                Trajectory(ra.ybar.values - rb.ybar.values, mesh, spec.dt),
                op)["w_norm"]
            dp = trajectory_norms(
                Trajectory(ra.pbar.pbar - rb.pbar.pbar, mesh, spec.dt),
                op)["w_norm"]
            du = float(np.max(np.linalg.norm(
                ra.ubar.values - rb.ubar.values, axis=1)))
            ratio = (dy + dp + du) / dy0
            ratios.append(ratio)
            report.probes.append({"probe": probe, "eps": eps, "pair": pair,
                                  "dy0_h1": dy0, "dy_w": dy, "dp_w": dp,
                                  "du_max": du, "ratio": ratio})
            probe += 1
        if ratios:
            mu_hat[eps] = max(ratios)
            report.metrics["mu_hat_%g" % eps] = mu_hat[eps]
        report.metrics["pairs_kept_%g" % eps] = len(ratios)
    values = list(mu_hat.values())
    if values:
        spread = max(values) / max(min(values), 1e-300)
        report.metrics["mu_spread"] = spread
        report.add_verdict("mu_finite", all(np.isfinite(values)),
                           max(values), float("inf"))
        report.add_verdict("mu_stable", spread <= stability_factor,
                           spread, stability_factor)
    else:
        report.add_verdict("mu_finite", False, None, float("inf"),
                           note="all pairs dropped")
    return report


def _lanczos_smallest(H, shape, krylov_dim, seed):
    """Smallest Ritz value of the reduced Hessian, with full
    reorthogonalization.  Returns (ritz_min, steps) or None on breakdown."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v[0] = 0.0
    nrm = math.sqrt(H.inner(v, v))
    if nrm == 0.0:
        return None
    v /= nrm
    basis = [v]
    alphas = []
    betas = []
    for j in range(krylov_dim):
        hv = H.matvec(basis[-1])
        a = H.inner(hv, basis[-1])
        alphas.append(a)
        hv = hv - a * basis[-1]
        if len(basis) > 1:
            hv = hv - betas[-1] * basis[-2]
        for q in basis:
            hv = hv - H.inner(hv, q) * q
        b = math.sqrt(max(H.inner(hv, hv), 0.0))
        if b <= 1e-12 * (1.0 + abs(a)):
            if j == 0:
                return None
            break
        if j < krylov_dim - 1:
            betas.append(b)
            basis.append(hv / b)
    ritz = sla.eigvalsh_tridiagonal(np.array(alphas),
                                    np.array(betas[:len(alphas) - 1]))
    return float(ritz[0]), len(alphas)


def second_order_check(spec, base, krylov_dim=12, symmetry_tol=1e-8,
                       fd_eps=1e-4, tag="second-order"):
    """Second-order condition at a converged point.

    Estimates the smallest reduced-Hessian eigenvalue by Lanczos (restarting
    on breakdown, at most three times), checks Hessian symmetry on a random
    pair, and compares one Hessian-vector product against central
    differences of the reduced gradient.
    """
    if not base.converged:
        raise ConvergenceError("second-order check needs a converged base")
    report = ExperimentReport(tag=tag, fingerprint=spec_fingerprint(spec),
                              provenance=_provenance(spec, base.warm_start))
    H = ReducedHessian(spec, base.ybar, base.pbar)
    shape = base.ubar.values.shape
    kappa = None
    steps = 0
    restarts = 0
    for attempt in range(LANCZOS_MAX_RESTARTS + 1):
        out = _lanczos_smallest(H, shape, krylov_dim,
                                spec.seed + 13 * (attempt + 1))
        if out is not None:
            kappa, steps = out
            break
        restarts += 1
    if kappa is None:
        raise ConvergenceError("Lanczos broke down %d times" % restarts)
    report.metrics["kappa_hat"] = kappa
    report.metrics["lanczos_steps"] = steps
    report.metrics["lanczos_restarts"] = restarts
    report.add_verdict("kappa_positive", kappa > 0.0, kappa, 0.0)

    rng = np.random.default_rng(spec.seed + 17)
    d1 = rng.standard_normal(shape)
    d2 = rng.standard_normal(shape)
    d1[0] = 0.0
    d2[0] = 0.0
    h1v = H.matvec(d1)
    h2v = H.matvec(d2)
    s12 = H.inner(h1v, d2)
    s21 = H.inner(d1, h2v)
    scale = math.sqrt(H.inner(h1v, h1v) * H.inner(d2, d2)) + \
        math.sqrt(H.inner(d1, d1) * H.inner(h2v, h2v))
    sym = abs(s12 - s21) / max(scale, 1e-300)
    report.metrics["symmetry_defect"] = sym
    report.add_verdict("symmetry", sym <= symmetry_tol, sym, symmetry_tol)

    d = d1 / max(np.max(np.linalg.norm(d1, axis=1)), 1e-300) * 0.02
    hv = H.matvec(d)
    st = Stepper(spec)
    U0 = base.ubar.values
    gp, _, _ = reduced_gradient(
        spec, ControlTrajectory(U0 + fd_eps * d, spec.dt), st)
    gm, _, _ = reduced_gradient(
        spec, ControlTrajectory(U0 - fd_eps * d, spec.dt), st)
    fd = (gp - gm) / (2.0 * fd_eps)
    hv_rel = float(np.linalg.norm(fd - hv) /
                   max(np.linalg.norm(hv), 1e-300))
    fd_tol = 100.0 * fd_eps ** 2
    report.metrics["hvp_fd_rel"] = hv_rel
    report.add_verdict("hvp_fd", hv_rel <= fd_tol, hv_rel, fd_tol,
                       note="eps=%g" % fd_eps)
    report.probes.append({"probe": 0, "kappa_hat": kappa,
                          "symmetry_defect": sym, "hvp_fd_rel": hv_rel})
    return report


def inactivity_time(result, spec):
    """First grid time after which the feedback demand stays under 3 eta/4.

    The demand is |(1/alpha) B* pbar(t)|; returns 0.0 when it never exceeds
    the threshold and None when it still does at the final time.
    """
    eta = spec.admissible.radius
    if not np.isfinite(eta):
        return 0.0
    w = spec.mesh.mass_weights()
    D = (result.pbar.pbar * w[None, :]) @ spec.control.matrix / spec.alpha
    demand = np.linalg.norm(D, axis=1)
    above = demand > 0.75 * eta
    if not above.any():
        return 0.0
    last = int(np.nonzero(above)[0].max())
    if last >= spec.n_steps:
        return None
    return float((last + 1) * spec.dt)


def brute_force_value(spec, restarts=6, tol=1e-10, max_iter=5000):
    """Best cost found by dense projected gradient over the stacked controls.

    Independent of the production optimizer: plain monotone projected
    gradient with step halving, restarted from zero and from random feasible
    controls.  Only sized for tiny instances.
    """
    N = spec.n_steps
    m = spec.control.m
    if m * N > 64 or spec.mesh.node_count > 16:
        raise ValueError("brute force needs m*N <= 64 and <= 16 nodes")
    st = Stepper(spec)
    project = spec.admissible.project_rows
    rng = np.random.default_rng(spec.seed + 29)
    radius = spec.admissible.radius
    scale = 1.0 if not np.isfinite(radius) else radius

    def evaluate(U):
        control = ControlTrajectory(U, spec.dt)
        g, traj, _ = reduced_gradient(spec, control, st)
        return cost(spec, traj, control), g

    best = math.inf
    for start in range(restarts + 1):
        if start == 0:
            U = np.zeros((N + 1, m))
        else:
            U = project(scale * rng.standard_normal((N + 1, m)))
            U[0] = 0.0
        try:
            J, g = evaluate(U)
        except (BlowUpError, ConvergenceError):
            continue
        gamma = 1.0 / spec.alpha
        for _ in range(max_iter):
            step = project(U - g)
            step[0] = 0.0
            resid = math.sqrt(spec.dt * float(np.sum((U - step) ** 2)))
            if resid <= tol * (1.0 + math.sqrt(
                    spec.dt * float(np.sum(U * U)))):
                break
            accepted = False
            g_try = gamma
            for _ in range(60):
                Ut = project(U - g_try * g)
                Ut[0] = 0.0
                try:
                    Jt, gt = evaluate(Ut)
                except (BlowUpError, ConvergenceError):
                    g_try *= 0.5
                    continue
                if Jt < J:
                    U, J, g = Ut, Jt, gt
                    gamma = min(g_try * 1.5, 10.0 / spec.alpha)
                    accepted = True
                    break
                g_try *= 0.5
            if not accepted:
                break
        best = min(best, J)
    return best
