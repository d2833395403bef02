"""Projected-gradient solution of the norm-constrained control problem.

The reduced cost J(u) is minimized over controls whose pointwise Euclidean
magnitude stays inside the admissible ball.  Steps are Barzilai-Borwein
trials projected onto the ball and safeguarded by an Armijo backtracking
line search, so the cost decreases monotonically.  Convergence requires two
certificates at once: the projected-gradient residual

    |u - P(u - g)|_U <= tol * (1 + |u|_U)

and the pointwise fixed-point identity u_k = P((1/alpha) B* pbar_k) within
10*tol at every time sample.

The quadratic subproblem around a converged point linearizes the dynamics,
keeps the exact curvature term through the bent multiplier, and reuses the
same projected-gradient loop; its optimality system is the perturbed one,
with sources beta1 (state equation), beta2 (control inclusion), beta3
(adjoint equation), and beta4 (initial state).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import (AdjointSolution, control_pairing, curvature_source,
                      gradient_samples, solve_adjoint, solve_linearized_state)
from .errors import BlowUpError, CapExceededError, ConvergenceError
from .forward import (ControlTrajectory, Stepper, Trajectory, cost,
                      pointwise_derivatives, simulate_feedback)
from .mesh import Field

ARMIJO_C = 1e-4
ARMIJO_FACTOR = 0.5
ARMIJO_MAX_BACKTRACKS = 40
ACTIVE_SET_TOL = 1e-8
STEP_CLIP = (1e-10, 1e10)


@dataclass
class OptimalityResult:
    """Converged (or stalled) state of one projected-gradient run."""

    ybar: Trajectory
    ubar: ControlTrajectory
    pbar: AdjointSolution
    cost: float
    residual: float
    fixed_point_defect: float
    iterations: int
    converged: bool
    active_fraction: float
    warm_start: str
    log: list = field(repr=False, default_factory=list)

    def to_dict(self):
        return {
            "cost": float(self.cost),
            "residual": float(self.residual),
            "fixed_point_defect": float(self.fixed_point_defect),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "active_fraction": float(self.active_fraction),
            "warm_start": self.warm_start,
        }


@dataclass
class Perturbation:
    """Sources of the perturbed linearized optimality system.

    beta1 perturbs the state equation, beta2 the control inclusion, beta3
    the adjoint equation, beta4 the initial state.  Any component may be
    None.  When the control ball is bounded, probes must keep the pointwise
    magnitude of beta2 at or below alpha*eta/2.
    """

    beta1: np.ndarray = None
    beta2: np.ndarray = None
    beta3: np.ndarray = None
    beta4: Field = None

    def validate(self, spec):
        N, n, m = spec.n_steps, spec.mesh.node_count, spec.control.m
        for name, arr, shape in (("beta1", self.beta1, (N + 1, n)),
                                 ("beta2", self.beta2, (N + 1, m)),
                                 ("beta3", self.beta3, (N + 1, n))):
            if arr is not None and np.asarray(arr).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
        if self.beta4 is not None and self.beta4.mesh != spec.mesh:
            raise ValueError("beta4 lives on a different mesh")
        if self.beta2 is not None and spec.admissible.bounded:
            bound = 0.5 * spec.alpha * spec.admissible.radius
            peak = float(np.linalg.norm(np.asarray(self.beta2), axis=1).max())
            if peak > bound * (1.0 + 1e-9) + 1e-300:
                raise ValueError(
                    f"beta2 peak {peak:.3e} exceeds alpha*eta/2 = {bound:.3e}")


def _u_norm(U, dt):
    return float(np.sqrt(dt * np.sum(U[1:] ** 2)))


def _active_fraction(U, admissible):
    if U.shape[0] <= 1:
        return 0.0
    if not admissible.bounded:
        return 0.0
    nrms = np.linalg.norm(U[1:], axis=1)
    return float(np.mean(np.abs(nrms - admissible.radius) <= ACTIVE_SET_TOL))


def reduced_gradient(spec, control, stepper=None):
    """Gradient rows alpha*u_k - B* pbar_k with the pieces that built them.

    Returns (g, trajectory, adjoint_solution).
    """
    st = Stepper(spec) if stepper is None else stepper
    U = control.values if isinstance(control, ControlTrajectory) \
        else np.asarray(control, dtype=float)
    traj = st.run(spec.y0.values, U)
    adj = solve_adjoint(spec, traj, stepper=st)
    return gradient_samples(spec, U, adj), traj, adj


def warm_start_control(spec, gain=None):
    """Clipped feedback sweep as the initial control; zeros as fallback."""
    if spec.warm_start == "zero":
        return np.zeros((spec.n_steps + 1, spec.control.m)), "zero"
    if gain is None:
        from .stabilize import riccati_gain
        try:
            gain = riccati_gain(spec.operator(), spec.control, spec.alpha,
                                dense_cap=spec.riccati_cap)
        except CapExceededError:
            from .stabilize import lifted_riccati_gain
            gain = lifted_riccati_gain(spec)
    try:
        _, ufb = simulate_feedback(spec, gain, clip=True)
        return ufb.values, "riccati"
    except (BlowUpError, ConvergenceError):
        return np.zeros((spec.n_steps + 1, spec.control.m)), \
            "zero (feedback diverged)"


def _projected_gradient(evaluate, project, U0, dt, tol, max_iter, fp_target,
                        gamma0=1.0):
    """Shared PG loop.

    ``evaluate(U)`` returns (cost, gradient, payload); ``project`` maps a
    control array onto the feasible set row-wise; ``fp_target(payload)``
    returns the pointwise fixed-point map evaluated at the current iterate.
    Returns a dict with the final iterate and certificates.
    """
    U = project(U0.copy())
    U[0] = 0.0
    J, g, payload = evaluate(U)
    log = []
    gamma = None
    U_prev = None
    g_prev = None
    converged = False
    stalled = False
    it = 0
    for it in range(1, max_iter + 1):
        resid = _u_norm(U - project(U - g), dt) / (1.0 + _u_norm(U, dt))
        target = fp_target(payload)
        defect = float(np.linalg.norm(U[1:] - target[1:], axis=1).max()) \
            if U.shape[0] > 1 else 0.0
        if resid <= tol and defect <= 10.0 * tol:
            converged = True
            break
        if U_prev is not None:
            dU = U - U_prev
            dg = g - g_prev
            num = dt * np.sum(dU[1:] ** 2)
            den = dt * np.sum(dU[1:] * dg[1:])
            gamma = num / den if den > 0 and np.isfinite(den) else None
        if gamma is None or not np.isfinite(gamma):
            gamma = gamma0
        gamma = float(np.clip(gamma, *STEP_CLIP))
        accepted = False
        step = gamma
        for _ in range(ARMIJO_MAX_BACKTRACKS):
            U_try = project(U - step * g)
            U_try[0] = 0.0
            slope = dt * np.sum(g[1:] * (U_try - U)[1:])
            try:
                J_try, g_try, payload_try = evaluate(U_try)
            except (BlowUpError, ConvergenceError):
                step *= ARMIJO_FACTOR
                continue
            if J_try <= J + ARMIJO_C * slope:
                accepted = True
                break
            step *= ARMIJO_FACTOR
        if not accepted:
            stalled = True
            break
        U_prev, g_prev = U, g
        U, g, J, payload = U_try, g_try, J_try, payload_try
        log.append({"iteration": it, "cost": float(J),
                    "residual": float(resid), "step": float(step)})
    resid = _u_norm(U - project(U - g), dt) / (1.0 + _u_norm(U, dt))
    target = fp_target(payload)
    defect = float(np.linalg.norm(U[1:] - target[1:], axis=1).max()) \
        if U.shape[0] > 1 else 0.0
    if not converged and resid <= tol and defect <= 10.0 * tol:
        converged = True
    return {"U": U, "cost": J, "gradient": g, "payload": payload,
            "residual": resid, "defect": defect, "iterations": it,
            "converged": converged, "stalled": stalled, "log": log}


def solve_ocp(spec, u0=None, gain=None, tol=None, max_iter=None):
    """Minimize the reduced cost over admissible controls.

    The warm start is the clipped feedback sweep unless ``u0`` is given or
    the spec's policy says zero.  The result is converged only when both
    stopping certificates hold; hitting the iteration cap returns the last
    iterate with ``converged=False``.
    """
    tol = spec.tol if tol is None else tol
    max_iter = spec.max_iter if max_iter is None else max_iter
    st = Stepper(spec)
    if u0 is not None:
        U0 = u0.values if isinstance(u0, ControlTrajectory) \
            else np.asarray(u0, dtype=float)
        label = "given"
    else:
        U0, label = warm_start_control(spec, gain=gain)
    inv_alpha = 1.0 / spec.alpha

    def evaluate(U):
        traj = st.run(spec.y0.values, U)
        adj = solve_adjoint(spec, traj, stepper=st)
        g = gradient_samples(spec, U, adj)
        return cost(spec, traj, U), g, (traj, adj)

    def fp_target(payload):
        _, adj = payload
        return spec.admissible.project_rows(
            inv_alpha * control_pairing(spec, adj.pbar))

    out = _projected_gradient(evaluate, spec.admissible.project_rows,
                              U0, spec.dt, tol, max_iter, fp_target,
                              gamma0=inv_alpha)
    traj, adj = out["payload"]
    U = out["U"]
    return OptimalityResult(
        ybar=traj,
        ubar=ControlTrajectory(U, spec.dt),
        pbar=adj,
        cost=out["cost"],
        residual=out["residual"],
        fixed_point_defect=out["defect"],
        iterations=out["iterations"],
        converged=out["converged"],
        active_fraction=_active_fraction(U, spec.admissible),
        warm_start=label,
        log=out["log"])


def value(spec, u0=None, gain=None):
    """Optimal cost from the converged projected-gradient run."""
    result = solve_ocp(spec, u0=u0, gain=gain)
    if not result.converged:
        raise ConvergenceError(
            f"value query did not converge: residual {result.residual:.3e}",
            residual=result.residual)
    return result.cost


class ReducedHessian:
    """Exact second derivative of the reduced cost as a matvec.

    Each product runs one linearized forward sweep and one backward sweep
    whose source carries the running weight plus the bent-multiplier
    curvature; the operator is symmetric in the control inner product by
    construction.
    """

    def __init__(self, spec, traj, adj, stepper=None):
        self.spec = spec
        self.traj = traj
        self.adj = adj
        self.stepper = Stepper(spec) if stepper is None else stepper
        self.fp, self.fpp = pointwise_derivatives(spec, traj)

    def matvec(self, dU):
        dU = np.asarray(dU, dtype=float)
        dY = solve_linearized_state(self.spec, self.traj, control=dU,
                                    stepper=self.stepper, fp=self.fp)
        src = curvature_source(dY, self.adj.weights, self.fpp)
        Q2, _ = self.stepper.adjoint_sweep(src, self.fp)
        out = self.spec.alpha * dU + control_pairing(self.spec, Q2)
        out[0] = 0.0
        return out

    def inner(self, A, B):
        return float(self.spec.dt * np.sum(A[1:] * B[1:]))

    def rayleigh(self, dU):
        return self.inner(self.matvec(dU), dU) / self.inner(dU, dU)


def solve_perturbed_lq(spec, base, pert, tol=None, max_iter=None):
    """Quadratic subproblem around a converged base point.

    Dynamics are linearized at the base trajectory, the cost keeps the
    exact curvature term, and the sources enter the state equation (beta1),
    the control inclusion (beta2), the adjoint equation (beta3), and the
    initial state (beta4).  The returned result is in absolute variables;
    its cost field is the quadratic model value.  A line-search failure on
    this quadratic is reported as a second-order condition violation.
    """
    if not base.converged:
        raise ValueError("perturbed solve needs a converged base point")
    pert.validate(spec)
    tol = spec.tol if tol is None else tol
    max_iter = spec.max_iter if max_iter is None else max_iter
    st = Stepper(spec)
    fp, fpp = pointwise_derivatives(spec, base.ybar)
    Ubar = base.ubar.values
    ybar = base.ybar.values
    W = base.pbar.weights
    dt = spec.dt
    w = spec.mesh.mass_weights()
    sw = np.full(spec.n_steps + 1, dt)
    sw[-1] = 0.0
    b1 = None if pert.beta1 is None else np.asarray(pert.beta1, dtype=float)
    b2 = None if pert.beta2 is None else np.asarray(pert.beta2, dtype=float)
    b3 = None if pert.beta3 is None else np.asarray(pert.beta3, dtype=float)
    dy0 = None if pert.beta4 is None else pert.beta4
    inv_alpha = 1.0 / spec.alpha

    def evaluate(U):
        dY = solve_linearized_state(spec, base.ybar, control=U - Ubar,
                                    dy0=dy0, rsource=b1, stepper=st, fp=fp)
        Yt = ybar + dY
        J = 0.5 * float(sw @ ((Yt * Yt) @ w)) \
            + 0.5 * spec.alpha * dt * float(np.sum(U[1:] ** 2)) \
            + 0.5 * dt * float(np.sum((fpp * W * dY * dY) @ w))
        track = Yt if b3 is None else Yt - b3
        src = track.copy()
        src[-1] = 0.0
        curv = fpp * W * dY
        curv[0] = 0.0
        Q2, W2 = st.adjoint_sweep(src + curv, fp)
        g = spec.alpha * U + control_pairing(spec, Q2)
        if b2 is not None:
            J -= dt * float(np.sum(b2[1:] * U[1:]))
            g = g - b2
        if b3 is not None:
            J -= float(sw @ ((b3 * dY) @ w))
        g[0] = 0.0
        return J, g, (Q2, W2)

    def fp_target(payload):
        Q2, _ = payload
        t = -control_pairing(spec, Q2)
        if b2 is not None:
            t = t + b2
        return spec.admissible.project_rows(inv_alpha * t)

    out = _projected_gradient(evaluate, spec.admissible.project_rows,
                              Ubar.copy(), dt, tol, max_iter, fp_target,
                              gamma0=inv_alpha)
    if out["stalled"] and not out["converged"]:
        raise ConvergenceError(
            "line search failed to decrease the quadratic model; "
            "second-order condition violated",
            residual=out["residual"])
    U = out["U"]
    dY = solve_linearized_state(spec, base.ybar, control=U - Ubar, dy0=dy0,
                                rsource=b1, stepper=st, fp=fp)
    Q2, W2 = out["payload"]
    adj = AdjointSolution(pbar=-Q2, weights=W2, mesh=spec.mesh, dt=dt)
    return OptimalityResult(
        ybar=Trajectory(ybar + dY, spec.mesh, dt),
        ubar=ControlTrajectory(U, dt),
        pbar=adj,
        cost=out["cost"],
        residual=out["residual"],
        fixed_point_defect=out["defect"],
        iterations=out["iterations"],
        converged=out["converged"],
        active_fraction=_active_fraction(U, spec.admissible),
        warm_start="base",
        log=out["log"])


def refine_on_face(spec, result, rounds=2, cg_iter=40, cg_tol=1e-3):
    """Newton-CG polish of a near-stationary point on its active face.

    Projected gradient stalls once the step the line search would need
    drops to the cost's roundoff floor; the leftover control error shows up
    as a constant offset in finite-difference comparisons of the value.
    This refinement freezes the rows clipped to the ball boundary, solves
    the quadratic model on the free rows by conjugate gradients, and
    re-certifies through ``solve_ocp``.  Falls back to the input when a
    round stops improving the residual.
    """
    st = Stepper(spec)
    best = result
    eta = spec.admissible.radius
    for _ in range(rounds):
        U = best.ubar.values
        g, traj, adj = reduced_gradient(
            spec, ControlTrajectory(U, spec.dt), st)
        H = ReducedHessian(spec, traj, adj, st)
        free = np.ones(U.shape[0], dtype=bool)
        free[0] = False
        if spec.admissible.bounded:
            rows = np.linalg.norm(U, axis=1)
            free &= np.abs(rows - eta) > ACTIVE_SET_TOL * (1.0 + eta)
        mask = free[:, None].astype(float)
        r = -g * mask
        x = np.zeros_like(U)
        p = r.copy()
        rs = H.inner(r, r)
        if rs == 0.0:
            break
        g_norm = math.sqrt(rs)
        for _ in range(cg_iter):
            hp = H.matvec(p) * mask
            denom = H.inner(p, hp)
            if denom <= 0.0:
                break
            a = rs / denom
            x += a * p
            r -= a * hp
            rs_new = H.inner(r, r)
            if math.sqrt(rs_new) <= cg_tol * g_norm:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        if float(np.max(np.abs(x))) == 0.0:
            break
        cand_u0 = spec.admissible.project_rows(U + x)
        cand_u0[0] = 0.0
        try:
            cand = solve_ocp(spec, u0=cand_u0)
        except (BlowUpError, ConvergenceError):
            break
        if cand.residual >= best.residual and cand.cost >= best.cost:
            break
        best = cand
    return best
