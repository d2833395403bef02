"""Multiplier sweeps: exact transposes of the linearized forward step.

Around a frozen trajectory ybar the linearized step map is

    dy_k = D_k S (R dy_{k-1} + dt B du_k),    D_k = (1 - dt f'(ybar_k))^{-1},

with S = (I - theta dt A)^{-1} and R = I (backward Euler) or I + dt/2 A
(trapezoid).  All three factors are self-adjoint in the lumped mass inner
product, so transporting the running-cost weights backwards through them
yields machine-exact identities rather than order-dt ones:

* the control gradient is g_k = alpha u_k - B* pbar_k,
* the value gradient is V'(y0) = -pbar_0,

where pbar carries the sign of the optimality system (pbar = -Q for the
kernel output Q).  The terminal multiplier vanishes identically because the
state quadrature puts no weight on the final sample.
"""

from dataclasses import dataclass

import numpy as np

from .forward import Stepper, pointwise_derivatives
from .mesh import Field, SpatialMesh


@dataclass
class AdjointSolution:
    """Multiplier samples along a trajectory.

    Rows 1..N of ``pbar`` are the in-window samples; row 0 is the
    initial-time multiplier.  ``weights`` holds the pre-smoothing products
    from the sweep, which double as the curvature weights in second-order
    sweeps (kernel sign, not the pbar sign).
    """

    pbar: np.ndarray
    weights: np.ndarray
    mesh: SpatialMesh
    dt: float

    def initial(self):
        return Field(self.pbar[0].copy(), self.mesh)

    def sample(self, k):
        return Field(self.pbar[k].copy(), self.mesh)


def cost_source(traj):
    """Running-cost density: the state itself, terminal row zeroed."""
    src = traj.values.copy()
    src[-1] = 0.0
    return src


def solve_adjoint(spec, traj, stepper=None, fp=None):
    """Backward sweep for the running cost along ``traj``."""
    st = Stepper(spec) if stepper is None else stepper
    if fp is None:
        fp = pointwise_derivatives(spec, traj)[0]
    Q, W = st.adjoint_sweep(cost_source(traj), fp)
    return AdjointSolution(pbar=-Q, weights=W, mesh=spec.mesh, dt=spec.dt)


def adjoint_with_source(spec, traj, source, stepper=None, fp=None):
    """Raw backward sweep for an arbitrary density; returns (Q, W)."""
    st = Stepper(spec) if stepper is None else stepper
    if fp is None:
        fp = pointwise_derivatives(spec, traj)[0]
    return st.adjoint_sweep(np.asarray(source, dtype=float), fp)


def curvature_source(dY, weights, fpp):
    """Second-order density: running weight plus the bent-multiplier term.

    Row 0 of the curvature part is dropped; no step produces the initial
    state, so its weight row is not a D-smoothed product.
    """
    src = dY.copy()
    src[-1] = 0.0
    curv = fpp * weights * dY
    curv[0] = 0.0
    return src + curv


def solve_linearized_state(spec, traj, control=None, dy0=None, rsource=None,
                           stepper=None, fp=None):
    """Sweep of the linearized dynamics; returns the raw (N+1, n) array.

    ``control`` is an (N+1, m) array (row 0 unused), ``dy0`` a Field or flat
    array, ``rsource`` an extra per-unit-time density entering each window.
    """
    st = Stepper(spec) if stepper is None else stepper
    if fp is None:
        fp = pointwise_derivatives(spec, traj)[0]
    N = spec.n_steps
    n = spec.mesh.node_count
    m = spec.control.m
    dU = np.zeros((N + 1, m)) if control is None \
        else np.asarray(control, dtype=float)
    if dy0 is None:
        dy0v = np.zeros(n)
    elif isinstance(dy0, Field):
        dy0v = dy0.values
    else:
        dy0v = np.asarray(dy0, dtype=float)
    rsrc = np.zeros((N + 1, n)) if rsource is None \
        else np.asarray(rsource, dtype=float)
    return st.linearized_sweep(dy0v, dU, rsrc, fp)


def control_pairing(spec, rows):
    """B* applied to each row; row 0 of the result is forced to zero."""
    out = spec.control.adjoint_apply(rows)
    out[0] = 0.0
    return out


def gradient_samples(spec, control_values, adj):
    """Reduced cost gradient in the control space, g_k = alpha u_k - B* pbar_k."""
    U = np.asarray(control_values, dtype=float)
    g = spec.alpha * U - control_pairing(spec, adj.pbar)
    g[0] = 0.0
    return g


def value_gradient_field(adj):
    """Riesz representative of V'(y0) in the mass inner product."""
    return Field(-adj.pbar[0].copy(), adj.mesh)


def adjoint_decay_check(adj, window=0.25):
    """Backward-smallness diagnostic near the horizon end.

    Compares the largest multiplier magnitude over the trailing window with
    the overall peak; a small ratio supports the vanishing terminal
    surrogate on this horizon.
    """
    w = adj.mesh.mass_weights()
    P = adj.pbar
    nrms = np.sqrt(np.maximum((P * P) @ w, 0.0))
    N = P.shape[0] - 1
    k0 = max(1, int(np.ceil((1.0 - window) * N)))
    peak = float(nrms[1:].max()) if N >= 1 else 0.0
    tail = float(nrms[k0:].max()) if N >= 1 else 0.0
    ratio = tail / peak if peak > 0 else 0.0
    return {"sup": peak, "tail_sup": tail, "ratio": ratio}
