"""Forward sweeps of the controlled semilinear dynamics.

Each step splits the update: a theta-scheme solve in the linear operator
(backward Euler or the trapezoid variant), then a pointwise implicit solve of
z = v + dt*F(z) by scalar Newton.  The control is held constant on
(t_{k-1}, t_k]; row k of a control array is the value on that window, and
row 0 is never read by the dynamics.

The running cost pairs left rectangles in the state with right rectangles in
the control,

    V_T(u) = 1/2 sum_{k<N} dt <y_k, y_k>  +  alpha/2 sum_{k>=1} dt |u_k|^2,

so the backward sweep in the adjoint module is the literal transpose of the
linearized step map and the terminal multiplier vanishes identically.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import kernels
from .errors import BlowUpError, ConvergenceError
from .mesh import (Field, SpatialMesh, h1_norm_values, h1_norms_rows,
                   l2_norm_values)

GUARD_FACTOR = 1e6


@dataclass
class ControlTrajectory:
    """Piecewise-constant control samples, shape (n_steps + 1, m)."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("control samples must be a 2d array")
        self.values = v

    @property
    def n_steps(self):
        return self.values.shape[0] - 1

    @property
    def m(self):
        return self.values.shape[1]

    @classmethod
    def zeros(cls, n_steps, m, dt):
        return cls(np.zeros((n_steps + 1, m)), dt)

    def norm(self):
        """Right-rectangle time-L2 norm; row 0 does not contribute."""
        return float(np.sqrt(self.dt * np.sum(self.values[1:] ** 2)))

    def max_magnitude(self):
        """Largest pointwise-in-time Euclidean magnitude over the windows."""
        if self.n_steps == 0:
            return 0.0
        return float(np.linalg.norm(self.values[1:], axis=1).max())

    def copy(self):
        return ControlTrajectory(self.values.copy(), self.dt)


@dataclass
class Trajectory:
    """Nodal state samples y_0 .. y_N, shape (n_steps + 1, node_count)."""

    values: np.ndarray
    mesh: SpatialMesh
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.mesh.node_count:
            raise ValueError("trajectory shape does not match the mesh")
        self.values = v

    @property
    def n_steps(self):
        return self.values.shape[0] - 1

    def state(self, k):
        return Field(self.values[k].copy(), self.mesh)

    @property
    def terminal(self):
        return Field(self.values[-1].copy(), self.mesh)

    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


def state_weights(n_steps, dt):
    """Left-rectangle time weights of the state cost (terminal weight 0)."""
    w = np.full(n_steps + 1, dt)
    w[-1] = 0.0
    return w


def _newton_funcs(v, dt, fval, fder):
    z = v.copy()
    for _ in range(kernels.NEWTON_MAXIT):
        gp = 1.0 - dt * np.asarray(fder(z), dtype=float)
        if np.any(gp == 0.0):
            return z, False
        dz = (z - dt * np.asarray(fval(z), dtype=float) - v) / gp
        z = z - dz
        if np.all(np.abs(dz) <= kernels.NEWTON_TOL * (1.0 + np.abs(z))):
            return z, True
    return z, False


class Stepper:
    """Kernel arguments for one problem instance, reusable across sweeps."""

    def __init__(self, spec):
        self.spec = spec
        self.mesh = spec.mesh
        self.op = spec.operator()
        self.dt = float(spec.dt)
        self.use_cn = spec.scheme == "cn"
        self.theta = 0.5 if self.use_cn else 1.0
        self.Bmat = np.ascontiguousarray(spec.control.matrix)
        self.w = self.mesh.mass_weights()
        nl = spec.nonlinearity
        self.poly = None if nl.poly is None else tuple(float(c) for c in nl.poly)
        self.funcs = nl.funcs
        dt, th = self.dt, self.theta
        if self.mesh.dimension == 1:
            dl, d, du = self.op.bands[0]
            self.solve_bands = (-th * dt * dl, 1.0 - th * dt * d, -th * dt * du)
            self.apply_bands = (0.5 * dt * dl, 1.0 + 0.5 * dt * d, 0.5 * dt * du)
            sdl, sd, sdu = self.solve_bands
            ab = np.zeros((3, sd.shape[0]))
            ab[0, 1:] = sdu[:-1]
            ab[1, :] = sd
            ab[2, :-1] = sdl[1:]
            self._ab = ab
        else:
            self.txb, self.tyb, self.cshift = self.op.bands
            n = self.mesh.nodes_per_axis
            self.w2 = np.ascontiguousarray(self.w.reshape(n, n))

    def guard_limit(self, y0_values):
        r = GUARD_FACTOR * (1.0 + l2_norm_values(y0_values, self.mesh))
        return r * r

    def sweep(self, y0_values, U, guard_limit=None):
        """Raw kernel sweep; returns (Y, status, kbad)."""
        y0 = np.ascontiguousarray(y0_values, dtype=float)
        U = np.ascontiguousarray(U, dtype=float)
        glim = self.guard_limit(y0) if guard_limit is None else guard_limit
        if self.poly is None:
            return self._sweep_generic(y0, U, glim)
        c2, c3, c4 = self.poly
        if self.mesh.dimension == 1:
            sdl, sd, sdu = self.solve_bands
            adl, ad, adu = self.apply_bands
            return kernels.forward_poly_1d(y0, U, self.Bmat, sdl, sd, sdu,
                                           adl, ad, adu, self.use_cn,
                                           c2, c3, c4, self.dt, glim, self.w)
        txdl, txd, txdu = self.txb
        tydl, tyd, tydu = self.tyb
        return kernels.forward_poly_2d(y0, U, self.Bmat, txdl, txd, txdu,
                                       tydl, tyd, tydu, self.cshift,
                                       self.use_cn, c2, c3, c4, self.dt,
                                       glim, self.w2, self.spec.lin_tol)

    def _sweep_generic(self, y0, U, glim):
        nsteps = U.shape[0] - 1
        n = self.mesh.node_count
        Y = np.zeros((nsteps + 1, n))
        Y[0] = y0
        dt = self.dt
        fval, fder = self.funcs[0], self.funcs[1]
        if self.mesh.dimension == 2:
            nn = self.mesh.nodes_per_axis
            z2 = y0.reshape(nn, nn).copy()
            txdl, txd, txdu = self.txb
            tydl, tyd, tydu = self.tyb
        for k in range(1, nsteps + 1):
            yprev = Y[k - 1]
            if self.use_cn:
                rhs = yprev + 0.5 * dt * self.op.apply(yprev)
            else:
                rhs = yprev.copy()
            rhs += dt * (self.Bmat @ U[k])
            if self.mesh.dimension == 1:
                v = solve_banded((1, 1), self._ab, rhs)
            else:
                _, ok = kernels.cg_shift_2d(
                    1.0, -self.theta * dt, txdl, txd, txdu, tydl, tyd, tydu,
                    self.cshift, rhs.reshape(nn, nn).copy(), self.w2, z2,
                    self.spec.lin_tol, 40 * n)
                if not ok:
                    return Y, 3, k
                v = z2.ravel().copy()
            z, ok = _newton_funcs(v, dt, fval, fder)
            if not ok:
                return Y, 2, k
            Y[k] = z
            nrm2 = float(self.w @ (z * z))
            if not np.isfinite(nrm2) or nrm2 > glim:
                return Y, 1, k
            if self.mesh.dimension == 2:
                z2 = z.reshape(nn, nn).copy()
        return Y, 0, -1

    def adjoint_sweep(self, src, fp):
        """Backward transpose sweep; src rows are per-unit-time densities.

        Returns (Q, W): Q[k] is the smoothed sample S D_k phi_k for k >= 1
        and the initial-time multiplier at k = 0; W[k] is the pre-smoothing
        product D_k phi_k reused as the curvature weight.
        """
        src = np.ascontiguousarray(src, dtype=float)
        fp = np.ascontiguousarray(fp, dtype=float)
        if self.mesh.dimension == 1:
            sdl, sd, sdu = self.solve_bands
            adl, ad, adu = self.apply_bands
            return kernels.adjoint_1d(src, fp, sdl, sd, sdu, adl, ad, adu,
                                      self.use_cn, self.dt)
        txdl, txd, txdu = self.txb
        tydl, tyd, tydu = self.tyb
        Q, W, ok = kernels.adjoint_2d(src, fp, txdl, txd, txdu,
                                      tydl, tyd, tydu, self.cshift,
                                      self.use_cn, self.dt, self.w2,
                                      self.spec.lin_tol)
        if not ok:
            raise ConvergenceError(
                "inner linear solve stalled in the backward sweep")
        return Q, W

    def linearized_sweep(self, dy0, dU, rsrc, fp):
        """Forward sweep of the dynamics linearized around a frozen path."""
        dy0 = np.ascontiguousarray(dy0, dtype=float)
        dU = np.ascontiguousarray(dU, dtype=float)
        rsrc = np.ascontiguousarray(rsrc, dtype=float)
        fp = np.ascontiguousarray(fp, dtype=float)
        if self.mesh.dimension == 1:
            sdl, sd, sdu = self.solve_bands
            adl, ad, adu = self.apply_bands
            return kernels.linforward_1d(dy0, dU, rsrc, fp, self.Bmat,
                                         sdl, sd, sdu, adl, ad, adu,
                                         self.use_cn, self.dt)
        txdl, txd, txdu = self.txb
        tydl, tyd, tydu = self.tyb
        dY, ok = kernels.linforward_2d(dy0, dU, rsrc, fp, self.Bmat,
                                       txdl, txd, txdu, tydl, tyd, tydu,
                                       self.cshift, self.use_cn, self.dt,
                                       self.w2, self.spec.lin_tol)
        if not ok:
            raise ConvergenceError(
                "inner linear solve stalled in the linearized sweep")
        return dY

    def run(self, y0_values, U, guard_limit=None, step_offset=0):
        """Sweep that raises on failure and wraps the result."""
        glim = self.guard_limit(y0_values) if guard_limit is None else guard_limit
        Y, status, kbad = self.sweep(y0_values, U, glim)
        _raise_on_status(self, Y, status, kbad, step_offset, glim)
        return Trajectory(Y, self.mesh, self.dt)


def _raise_on_status(stepper, Y, status, kbad, step_offset, glim):
    if status == 0:
        return
    k = kbad + step_offset
    t = k * stepper.dt
    if status == 1:
        nrm = l2_norm_values(Y[kbad], stepper.mesh)
        raise BlowUpError(
            f"state norm exceeded the blow-up guard at t={t:.6g}",
            step=k, t=t, norm=nrm, limit=float(np.sqrt(glim)))
    if status == 2:
        raise ConvergenceError(
            f"pointwise implicit solve failed to converge at step {k}")
    raise ConvergenceError(f"inner linear solve stalled at step {k}")


def solve_state(spec, control=None, y0=None):
    """Integrate the controlled system over the full horizon.

    ``control`` may be a ControlTrajectory, a raw (n_steps + 1, m) array, or
    None for the uncontrolled flow; ``y0`` overrides the spec's initial state.
    """
    stepper = Stepper(spec)
    if control is None:
        U = np.zeros((spec.n_steps + 1, spec.control.m))
    elif isinstance(control, ControlTrajectory):
        U = control.values
    else:
        U = np.asarray(control, dtype=float)
    if U.shape != (spec.n_steps + 1, spec.control.m):
        raise ValueError(f"control shape {U.shape} does not match "
                         f"({spec.n_steps + 1}, {spec.control.m})")
    start = spec.y0 if y0 is None else y0
    return stepper.run(start.values, U)


def simulate_feedback(spec, gain, clip=True):
    """Closed-loop sample-and-hold sweep of u = -K y.

    ``gain`` is an (m, node_count) matrix or anything carrying one as
    ``.matrix``.  With ``clip`` the input is projected onto the admissible
    ball before being applied.
    """
    K = np.asarray(getattr(gain, "matrix", gain), dtype=float)
    stepper = Stepper(spec)
    N = spec.n_steps
    Y = np.zeros((N + 1, spec.mesh.node_count))
    U = np.zeros((N + 1, spec.control.m))
    Y[0] = spec.y0.values
    glim = stepper.guard_limit(Y[0])
    for k in range(1, N + 1):
        u = -(K @ Y[k - 1])
        if clip:
            u = spec.admissible.project(u)
        U[k] = u
        Yk, status, kb = stepper.sweep(Y[k - 1], U[k - 1:k + 1], glim)
        _raise_on_status(stepper, Yk, status, kb, k - 1, glim)
        Y[k] = Yk[1]
    return Trajectory(Y, spec.mesh, spec.dt), ControlTrajectory(U, spec.dt)


def cost(spec, traj, control):
    """Discrete running cost of a state/control pair."""
    w = spec.mesh.mass_weights()
    Y = traj.values
    state = 0.5 * spec.dt * float(((Y[:-1] ** 2) @ w).sum())
    U = control.values if isinstance(control, ControlTrajectory) \
        else np.asarray(control, dtype=float)
    ctrl = 0.5 * spec.alpha * spec.dt * float(np.sum(U[1:] ** 2))
    return state + ctrl


def pointwise_derivatives(spec, traj):
    """(f', f'') of the normalized reaction frozen along a trajectory."""
    fp, fpp = spec.nonlinearity.derivatives(traj.values)
    shape = traj.values.shape
    fp = np.ascontiguousarray(np.broadcast_to(np.asarray(fp, float), shape))
    fpp = np.ascontiguousarray(np.broadcast_to(np.asarray(fpp, float), shape))
    return fp, fpp


def trajectory_norms(traj, op):
    """Space-time norms feeding the tail test and the smallness constants.

    Time quadrature is trapezoid for the L2 and operator terms and midpoint
    for the difference-quotient term.
    """
    mesh = traj.mesh
    w = mesh.mass_weights()
    Y = traj.values
    dt = traj.dt
    tw = np.full(Y.shape[0], dt)
    tw[0] *= 0.5
    tw[-1] *= 0.5
    l2sq = (Y * Y) @ w
    AY = op.apply(Y)
    dasq = (AY * AY) @ w
    dq = np.diff(Y, axis=0) / dt
    int_l2 = float(tw @ l2sq)
    int_da = float(tw @ dasq)
    int_dq = float(dt * ((dq * dq) @ w).sum())
    h1s = h1_norms_rows(Y, mesh)
    return {
        "int_l2_sq": int_l2,
        "int_da_sq": int_da,
        "int_dtime_sq": int_dq,
        "w_norm": float(np.sqrt(int_l2 + int_da + int_dq)),
        "sup_h1": float(h1s.max()),
        "terminal_h1": float(h1s[-1]),
        "terminal_l2": float(np.sqrt(max(l2sq[-1], 0.0))),
    }


def tail_check(traj, tail_tol):
    """Horizon-truncation test: the terminal state must be H1-small.

    The threshold scales with the initial H1 norm; the decay factor compares
    the terminal norm against the value three quarters of the way in.
    """
    mesh = traj.mesh
    h1_end = h1_norm_values(traj.values[-1], mesh)
    h1_start = h1_norm_values(traj.values[0], mesh)
    k34 = (3 * traj.n_steps) // 4
    h1_34 = h1_norm_values(traj.values[k34], mesh)
    threshold = tail_tol * (1.0 + h1_start)
    return {
        "passed": bool(h1_end <= threshold),
        "terminal_h1": h1_end,
        "threshold": threshold,
        "decay_factor": float(h1_end / h1_34) if h1_34 > 0 else 0.0,
    }
