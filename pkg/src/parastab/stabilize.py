"""Feedback synthesis for the linearization and smallness-radius estimates.

The gain solves the algebraic Riccati equation

    A_h' P + P A_h - (1/alpha) P B B' P + M = 0,      K = (1/alpha) B' P,

with M the lumped mass diagonal, by Newton-Kleinman iteration.  The initial
stabilizing gain shifts the unstable part of the spectrum: the mass-weighted
symmetrization of A_h is diagonalized, the unstable invariant block is moved
to -shift through the actuators, and the stable complement is left untouched,
which keeps the closed loop block-triangular and certifiably stable.

Estimated constants (closed-loop growth bound M_K, contraction constant of
the reaction term, embedding norm) are Monte-Carlo fits inflated by 10%; the
admissible radius combines them as

    delta1 = min( 1/(4*C*M_K^2), eta/(2*M_K*|K|*|I|) ).
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapExceededError, ConvergenceError, NotStabilizableError
from .forward import Trajectory, trajectory_norms
from .mesh import (SpatialMesh, assemble_operator, h1_norm_values,
                   random_smooth_field)

FIT_INFLATION = 1.1
NK_MAX_ITER = 60
NK_TOL = 1e-13
RESIDUAL_REL_TOL = 1e-8


@dataclass
class FeedbackGain:
    """Stabilizing feedback u = -K y with its Riccati certificate."""

    matrix: np.ndarray
    p_matrix: np.ndarray
    margin: float
    alpha: float
    iterations: int
    m_k: float = None

    @property
    def m(self):
        return self.matrix.shape[0]

    @property
    def node_count(self):
        return self.matrix.shape[1]

    def to_dict(self):
        P = self.p_matrix
        return {
            "matrix": self.matrix.tolist(),
            "margin": float(self.margin),
            "alpha": float(self.alpha),
            "iterations": int(self.iterations),
            "m_k": None if self.m_k is None else float(self.m_k),
            "p_trace": float(np.trace(P)),
            "p_fro_norm": float(np.linalg.norm(P)),
            "node_count": int(self.node_count),
            "actuators": int(self.m),
        }


def _spectral_shift_gain(A, B, mass_diag, shift):
    """Initial gain moving every nonnegative eigenvalue to -shift."""
    s = np.sqrt(mass_diag)
    At = (s[:, None] * A) / s[None, :]
    At = 0.5 * (At + At.T)
    lam, V = np.linalg.eigh(At)
    unstable = lam >= -1e-12
    r = int(unstable.sum())
    if r == 0:
        return np.zeros((B.shape[1], A.shape[0]))
    Vr = V[:, unstable]
    Br = Vr.T @ (s[:, None] * B)
    if np.linalg.matrix_rank(Br, tol=1e-10) < r:
        raise NotStabilizableError(
            f"{r} nonnegative modes but the actuators reach fewer; "
            "the unstable subspace is not controllable")
    Kr = np.linalg.pinv(Br) @ (np.diag(lam[unstable]) + shift * np.eye(r))
    return (Kr @ Vr.T) * s[None, :]


def riccati_matrix(A, B, mass_diag, alpha, shift=1.0):
    """Newton-Kleinman solve at the matrix level.

    Returns (P, K, margin, iterations).  The scalar cases collapse to the
    closed forms of the one-dimensional Riccati equation.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    mass_diag = np.asarray(mass_diag, dtype=float)
    n = A.shape[0]
    Md = np.diag(mass_diag)
    K = _spectral_shift_gain(A, B, mass_diag, shift)
    margin0 = float(np.linalg.eigvals(A - B @ K).real.max())
    if margin0 >= 0.0:
        raise NotStabilizableError(
            f"initial shift gain leaves margin {margin0:.3e}; "
            "not stabilizable at this discretization")
    P = np.zeros((n, n))
    iterations = 0
    for it in range(1, NK_MAX_ITER + 1):
        Acl = A - B @ K
        rhs = -(Md + alpha * (K.T @ K))
        P_new = sla.solve_continuous_lyapunov(Acl.T, rhs)
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            raise NotStabilizableError(
                "Lyapunov solve diverged; not stabilizable at this "
                "discretization")
        K = (B.T @ P_new) / alpha
        delta = np.linalg.norm(P_new - P) / max(1.0, np.linalg.norm(P_new))
        P = P_new
        iterations = it
        if delta <= NK_TOL:
            break
    resid = A.T @ P + P @ A - (P @ B) @ (B.T @ P) / alpha + Md
    rel = np.linalg.norm(resid) / np.linalg.norm(Md)
    if rel > RESIDUAL_REL_TOL:
        raise ConvergenceError(
            f"Riccati residual {rel:.3e} above {RESIDUAL_REL_TOL:.0e}",
            residual=rel)
    if np.linalg.eigvalsh(P).min() < -1e-10 * max(1.0, np.linalg.norm(P)):
        raise NotStabilizableError("Riccati matrix is not positive"
                                   " semidefinite")
    margin = float(np.linalg.eigvals(A - B @ K).real.max())
    if margin >= 0.0:
        raise NotStabilizableError(
            f"closed-loop margin {margin:.3e} is not negative; "
            "not stabilizable at this discretization")
    return P, K, margin, iterations


def riccati_gain(op, control, alpha, dense_cap=256, shift=1.0):
    """Stabilizing Riccati gain for the discrete linearization."""
    n = op.mesh.node_count
    if n > dense_cap:
        raise CapExceededError(
            f"dense Riccati needs node count <= {dense_cap}, got {n}")
    A = op.matrix.toarray()
    B = control.matrix
    P, K, margin, iterations = riccati_matrix(A, B, op.mesh.mass_weights(),
                                              alpha, shift=shift)
    return FeedbackGain(matrix=K, p_matrix=P, margin=margin, alpha=alpha,
                        iterations=iterations)


def _margin_power(op, Bm, K, h=0.02, substeps=50, max_sweeps=300, tol=1e-6):
    """Growth rate of the closed-loop propagator above the dense cap.

    Power iteration on q backward-Euler substeps of I - h(A - BK); the
    low-rank feedback part is folded in by the Woodbury identity.
    """
    n = op.mesh.node_count
    w = op.mesh.mass_weights()
    S = sp.eye(n, format="csc") - h * op.matrix
    lu = spla.splu(S)
    SU = lu.solve(h * Bm)
    m = Bm.shape[1]
    Cm = np.linalg.inv(np.eye(m) + K @ SU)

    def prop(z):
        for _ in range(substeps):
            t = lu.solve(z)
            z = t - SU @ (Cm @ (K @ t))
        return z

    rng = np.random.default_rng(54321)
    z = rng.standard_normal(n)
    z /= np.sqrt(w @ (z * z))
    tau = h * substeps
    g_prev = None
    for _ in range(max_sweeps):
        z = prop(z)
        nrm = float(np.sqrt(w @ (z * z)))
        if nrm == 0.0:
            return -math.inf
        g = math.log(nrm) / tau
        z /= nrm
        if g_prev is not None and abs(g - g_prev) <= tol * (1.0 + abs(g)):
            # invert the substep spectral map g = -ln(1 - h*lam)/h
            return (1.0 - math.exp(-g * h)) / h
        g_prev = g
    raise ConvergenceError("propagator power iteration did not settle",
                           residual=abs(g - g_prev))


def stability_margin(op, control, gain, dense_cap=256):
    """Largest real part of the closed-loop spectrum of A_h - B K."""
    K = np.asarray(getattr(gain, "matrix", gain), dtype=float)
    Bm = getattr(control, "matrix", control)
    Bm = np.asarray(Bm, dtype=float)
    if op.mesh.node_count <= dense_cap:
        A = op.matrix.toarray()
        return float(np.linalg.eigvals(A - Bm @ K).real.max())
    return float(_margin_power(op, Bm, K))


def _axis_injection(coarse, fine):
    """Rows sampling a fine axis grid at the coarse node positions."""
    R = np.zeros((coarse.size, fine.size))
    for i, xc in enumerate(coarse):
        j = int(np.searchsorted(fine, xc))
        if j <= 0:
            R[i, 0] = 1.0
        elif j >= fine.size:
            R[i, -1] = 1.0
        else:
            t = (xc - fine[j - 1]) / (fine[j] - fine[j - 1])
            R[i, j - 1] = 1.0 - t
            R[i, j] = t
    return R


def lifted_riccati_gain(spec, dense_cap=None):
    """Riccati gain synthesized on a coarse grid and injected onto the fine one.

    Above the dense cap the equation is solved on a coarse mesh with the same
    boundary condition, reaction shift, and actuator supports; the fine gain
    composes K_coarse with linear sampling of the fine state at the coarse
    nodes.  The margin is re-certified on the fine closed loop.
    """
    cap = spec.riccati_cap if dense_cap is None else dense_cap
    mesh = spec.mesh
    if mesh.node_count <= cap:
        return riccati_gain(spec.operator(), spec.control, spec.alpha,
                            dense_cap=cap)
    n_c = max(2, int(math.floor(cap ** (1.0 / mesh.dimension))))
    coarse = SpatialMesh(mesh.dimension, n_c, bc=mesh.bc, length=mesh.length)
    op_c = assemble_operator(coarse, spec.operator_shift)
    if spec.control.supports is not None:
        from .model import ControlOperator
        sup = [s[0] if mesh.dimension == 1 else s
               for s in spec.control.supports]
        control_c = ControlOperator.from_supports(coarse, sup)
    else:
        R1 = _axis_injection(coarse.axis_coords(), mesh.axis_coords())
        R = R1 if mesh.dimension == 1 else np.kron(R1, R1)
        cols = R @ spec.control.matrix
        w_c = coarse.mass_weights()
        norms = np.sqrt(w_c @ (cols * cols))
        if np.any(norms <= 0.0):
            raise NotStabilizableError(
                "actuator column vanishes on the coarse grid")
        from .model import ControlOperator
        control_c = ControlOperator(cols / norms[None, :], coarse)
    gain_c = riccati_gain(op_c, control_c, spec.alpha, dense_cap=cap)
    R1 = _axis_injection(coarse.axis_coords(), mesh.axis_coords())
    R = R1 if mesh.dimension == 1 else np.kron(R1, R1)
    K_f = gain_c.matrix @ R
    margin = stability_margin(spec.operator(), spec.control, K_f,
                              dense_cap=cap)
    if margin >= 0.0:
        raise NotStabilizableError(
            f"lifted gain leaves the fine closed loop unstable "
            f"(margin {margin:.3e})")
    return FeedbackGain(matrix=K_f, p_matrix=gain_c.p_matrix, margin=margin,
                        alpha=spec.alpha, iterations=gain_c.iterations)


def gain_l2_norm(gain, mesh):
    """Operator norm of K from the lumped-L2 geometry to R^m."""
    K = np.asarray(getattr(gain, "matrix", gain), dtype=float)
    w = mesh.mass_weights()
    return float(np.linalg.svd(K / np.sqrt(w)[None, :], compute_uv=False)[0])


class _ClosedLoopSim:
    """Dense sample-and-hold stepping of the linear closed loop.

    Matches the kernel discretization exactly: the feedback is frozen at the
    left endpoint of each window and enters through the theta solve.
    """

    def __init__(self, spec, gain):
        op = spec.operator()
        self.n = spec.mesh.node_count
        A = op.matrix.toarray()
        dt = spec.dt
        theta = 0.5 if spec.scheme == "cn" else 1.0
        eye = np.eye(self.n)
        self.lu = sla.lu_factor(eye - theta * dt * A)
        R = eye + 0.5 * dt * A if spec.scheme == "cn" else eye
        K = np.asarray(getattr(gain, "matrix", gain), dtype=float)
        self.E = R - dt * (spec.control.matrix @ K)
        self.dt = dt
        self.n_steps = spec.n_steps

    def run(self, y0_cols, forcing=None):
        """Batched sweep; y0_cols is (n, s), forcing maps k -> (n, s)."""
        s = y0_cols.shape[1]
        Y = np.zeros((self.n_steps + 1, self.n, s))
        Y[0] = y0_cols
        cur = y0_cols.copy()
        for k in range(1, self.n_steps + 1):
            rhs = self.E @ cur
            if forcing is not None:
                rhs = rhs + self.dt * forcing(k)
            cur = sla.lu_solve(self.lu, rhs)
            Y[k] = cur
        return Y


def _w_norm(values, mesh, dt, op):
    traj = Trajectory(values, mesh, dt)
    return trajectory_norms(traj, op)["w_norm"]


def smallness_estimates(spec, gain, samples=64, seed=None, data_scale=1e-2):
    """Monte-Carlo fit of the admissible-radius constants.

    Fits the closed-loop growth bound |y|_W <= M_K (|y0|_H1 + |f|) on the
    linear loop, the quadratic contraction constant of the reaction term on
    pairs of small trajectories, and the L2-in-H1 embedding norm; each fit is
    the sampled maximum inflated by 10%.
    """
    if gain.margin >= 0.0:
        raise NotStabilizableError("gain is not certified stable")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    mesh = spec.mesh
    op = spec.operator()
    w = mesh.mass_weights()
    sim = _ClosedLoopSim(spec, gain)
    dt, N = spec.dt, spec.n_steps

    n_state = samples // 2
    n_force = samples - n_state
    ratios = []
    embed_ratios = []

    y0_cols = np.column_stack([
        random_smooth_field(rng, mesh, h1_norm=data_scale).values
        for _ in range(n_state)])
    Ys = sim.run(y0_cols)
    for j in range(n_state):
        h1 = h1_norm_values(y0_cols[:, j], mesh)
        ratios.append(_w_norm(Ys[:, :, j], mesh, dt, op) / h1)

    g_cols = np.column_stack([
        random_smooth_field(rng, mesh, h1_norm=data_scale).values
        for _ in range(n_force)])
    profiles = rng.standard_normal((N + 1, n_force))
    profiles[0] = 0.0
    Yf = sim.run(np.zeros((mesh.node_count, n_force)),
                 forcing=lambda k: g_cols * profiles[k][None, :])
    for j in range(n_force):
        g_l2 = float(np.sqrt(w @ (g_cols[:, j] ** 2)))
        f_norm = g_l2 * float(np.sqrt(dt * np.sum(profiles[1:, j] ** 2)))
        ratios.append(_w_norm(Yf[:, :, j], mesh, dt, op) / f_norm)
    m_k = FIT_INFLATION * max(ratios)

    nl = spec.nonlinearity
    tw = np.full(N + 1, dt)
    tw[0] *= 0.5
    tw[-1] *= 0.5
    c_ratios = []
    pair_cols = np.column_stack([
        random_smooth_field(rng, mesh, h1_norm=data_scale).values
        for _ in range(2 * samples)])
    Yp = sim.run(pair_cols)
    for j in range(samples):
        Y1 = Yp[:, :, 2 * j]
        Y2 = Yp[:, :, 2 * j + 1]
        dF = nl.value(Y1) - nl.value(Y2)
        num = float(np.sqrt(tw @ ((dF * dF) @ w)))
        w1 = _w_norm(Y1, mesh, dt, op)
        w2 = _w_norm(Y2, mesh, dt, op)
        dw = _w_norm(Y1 - Y2, mesh, dt, op)
        den = max(w1, w2) * dw
        if den > 0.0:
            c_ratios.append(num / den)
    if not c_ratios:
        raise ConvergenceError("contraction fit degenerate: all sampled "
                               "pairs coincide")
    c_f = FIT_INFLATION * max(c_ratios)

    for j in range(pair_cols.shape[1]):
        v = pair_cols[:, j]
        embed_ratios.append(float(np.sqrt(w @ (v * v))) /
                            h1_norm_values(v, mesh))
    embed = FIT_INFLATION * max(embed_ratios)

    k_norm = gain_l2_norm(gain, mesh)
    eta = spec.admissible.radius
    first = math.inf if c_f == 0.0 else 1.0 / (4.0 * c_f * m_k * m_k)
    denom = 2.0 * m_k * k_norm * embed
    eta_term = math.inf if math.isinf(eta) else (
        eta / denom if denom > 0 else math.inf)
    delta1 = min(first, eta_term)
    gain.m_k = m_k
    return {
        "m_k": float(m_k),
        "contraction": float(c_f),
        "embedding": float(embed),
        "gain_l2_norm": float(k_norm),
        "margin": float(gain.margin),
        "eta": None if math.isinf(eta) else float(eta),
        "curvature_term": None if math.isinf(first) else float(first),
        "eta_term": None if math.isinf(eta_term) else float(eta_term),
        "delta1": None if math.isinf(delta1) else float(delta1),
        "samples": int(samples),
        "data_scale": float(data_scale),
    }
