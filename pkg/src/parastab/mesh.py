"""Uniform tensor meshes, nodal fields, and the discrete elliptic operator.

Discretization notes
--------------------
The operator is A_h = Laplacian_h + c*I on a uniform grid over a box, by
second-order centered differences.

* Neumann: nodes include the boundary, spacing h = L/(n-1).  The boundary row
  uses the reflected ghost value (u_{-1} = u_1), which keeps grid cosines as
  exact eigenvectors.  That row is not transpose-symmetric, but the operator
  is exactly self-adjoint under the trapezoid lumped-mass inner product used
  throughout, which is what every adjoint in the package relies on.
* Dirichlet: interior nodes only, spacing h = L/(n+1), plain symmetric
  tridiagonal stencil, uniform mass weights.

Inner products are lumped: <u, v> = sum_i w_i u_i v_i with w the (h-scaled)
trapezoid weights.  The H1 form adds one-sided differences at the boundary
and central differences inside; Dirichlet grids difference against the zero
boundary values.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, MeshMismatchError, SingularShiftError
from . import kernels

NEUMANN = "neumann"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform grid on a box in 1 or 2 dimensions."""

    dimension: int
    nodes_per_axis: int
    bc: str = NEUMANN
    length: float = 1.0

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.nodes_per_axis < 2:
            raise ValueError("need at least 2 nodes per axis")
        if self.bc not in (NEUMANN, DIRICHLET):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if not (self.length > 0):
            raise ValueError("axis length must be positive")

    @property
    def h(self):
        if self.bc == NEUMANN:
            return self.length / (self.nodes_per_axis - 1)
        return self.length / (self.nodes_per_axis + 1)

    @property
    def node_count(self):
        return self.nodes_per_axis ** self.dimension

    def axis_coords(self):
        n, h = self.nodes_per_axis, self.h
        if self.bc == NEUMANN:
            return np.linspace(0.0, self.length, n)
        return h * np.arange(1, n + 1)

    def coords(self):
        """Node coordinates, shape (node_count, dimension), row-major."""
        x = self.axis_coords()
        if self.dimension == 1:
            return x[:, None]
        xx, yy = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def axis_weights(self):
        w = np.ones(self.nodes_per_axis)
        if self.bc == NEUMANN:
            w[0] = w[-1] = 0.5
        return w * self.h

    def mass_weights(self):
        """Lumped mass diagonal, shape (node_count,)."""
        w1 = self.axis_weights()
        if self.dimension == 1:
            return w1
        return np.outer(w1, w1).ravel()


@dataclass
class Field:
    """A nodal spatial vector tied to its mesh."""

    values: np.ndarray
    mesh: SpatialMesh

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape[0] != self.mesh.node_count:
            raise ValueError(
                f"field length {v.shape[0]} != node count {self.mesh.node_count}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field entries must be finite")
        self.values = v

    def copy(self):
        return Field(self.values.copy(), self.mesh)


def _check_same_mesh(a, b):
    if a != b:
        raise MeshMismatchError(f"mesh mismatch: {a} vs {b}")


def _bands_1d(mesh, c):
    """Band triplet of A_h on one axis (c folded into the diagonal)."""
    n, h = mesh.nodes_per_axis, mesh.h
    ih2 = 1.0 / (h * h)
    dl = np.full(n, ih2)
    d = np.full(n, -2.0 * ih2 + c)
    du = np.full(n, ih2)
    if mesh.bc == NEUMANN:
        du[0] = 2.0 * ih2
        dl[-1] = 2.0 * ih2
    dl[0] = 0.0
    du[-1] = 0.0
    return dl, d, du


@dataclass
class EllipticOperator:
    """Discrete A_h with its coercivity data and raw band payload."""

    mesh: SpatialMesh
    c: float
    matrix: sp.csr_matrix
    rho: float
    theta: float
    bands: tuple = field(repr=False, default=None)

    def apply(self, values):
        """A_h @ values for a flat array or a batch of rows."""
        v = np.asarray(values)
        if v.ndim == 1:
            return self.matrix @ v
        return (self.matrix @ v.T).T

    def axis_bands(self):
        """Per-axis band triplets with the shift carried separately (2d)."""
        return self.bands


def assemble_operator(mesh, c=0.0):
    """Build A_h = Laplacian_h + c*I on the mesh."""
    dl, d, du = _bands_1d(mesh, 0.0)
    n = mesh.nodes_per_axis
    T1 = sp.diags([dl[1:], d, du[:-1]], offsets=[-1, 0, 1], format="csr")
    if mesh.dimension == 1:
        A = T1 + c * sp.eye(n, format="csr")
        bands = (_bands_1d(mesh, c),)
    else:
        eye = sp.eye(n, format="csr")
        A = sp.kron(T1, eye) + sp.kron(eye, T1) + c * sp.eye(n * n)
        bands = ((dl, d, du), (dl, d, du), c)
    rho = max(0.0, c) + 1.0
    theta = 0.5
    return EllipticOperator(mesh=mesh, c=c, matrix=sp.csr_matrix(A),
                            rho=rho, theta=theta, bands=bands)


def _gradient_axis_1d(values, mesh):
    h = mesh.h
    g = np.empty_like(values)
    if mesh.bc == NEUMANN:
        g[0] = (values[1] - values[0]) / h
        g[-1] = (values[-1] - values[-2]) / h
        g[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
    else:
        padded = np.concatenate([[0.0], values, [0.0]])
        g = (padded[2:] - padded[:-2]) / (2.0 * h)
    return g


def gradient_fields(values, mesh):
    """Per-axis discrete gradients of a flat nodal array."""
    if mesh.dimension == 1:
        return [_gradient_axis_1d(values, mesh)]
    n = mesh.nodes_per_axis
    v2 = values.reshape(n, n)
    gx = np.empty_like(v2)
    gy = np.empty_like(v2)
    for j in range(n):
        gx[:, j] = _gradient_axis_1d(v2[:, j], mesh)
    for i in range(n):
        gy[i, :] = _gradient_axis_1d(v2[i, :], mesh)
    return [gx.ravel(), gy.ravel()]


def inner_product(u, v, which="l2", op=None):
    """Lumped inner product of two fields: "l2", "h1", or "da".

    "da" needs the elliptic operator and is <Au, Av> + <u, v>.
    """
    _check_same_mesh(u.mesh, v.mesh)
    w = u.mesh.mass_weights()
    l2 = float(w @ (u.values * v.values))
    if which == "l2":
        return l2
    if which == "h1":
        acc = l2
        for gu, gv in zip(gradient_fields(u.values, u.mesh),
                          gradient_fields(v.values, v.mesh)):
            acc += float(w @ (gu * gv))
        return acc
    if which == "da":
        if op is None:
            raise ValueError("the da inner product needs the operator")
        au = op.apply(u.values)
        av = op.apply(v.values)
        return float(w @ (au * av)) + l2
    raise ValueError(f"unknown inner product {which!r}")


def norm(u, which="l2", op=None):
    return float(np.sqrt(max(inner_product(u, u, which, op=op), 0.0)))


def l2_norm_values(values, mesh):
    w = mesh.mass_weights()
    return float(np.sqrt(max(w @ (values * values), 0.0)))


def h1_norm_values(values, mesh):
    w = mesh.mass_weights()
    acc = float(w @ (values * values))
    for g in gradient_fields(values, mesh):
        acc += float(w @ (g * g))
    return float(np.sqrt(max(acc, 0.0)))


def _gradient_axis_rows(V, h, bc):
    """Row-batched 1d gradient along the last axis of V."""
    G = np.empty_like(V)
    if bc == NEUMANN:
        G[..., 0] = (V[..., 1] - V[..., 0]) / h
        G[..., -1] = (V[..., -1] - V[..., -2]) / h
        G[..., 1:-1] = (V[..., 2:] - V[..., :-2]) / (2.0 * h)
    else:
        G[..., 0] = V[..., 1] / (2.0 * h)
        G[..., -1] = -V[..., -2] / (2.0 * h)
        G[..., 1:-1] = (V[..., 2:] - V[..., :-2]) / (2.0 * h)
    return G


def h1_norms_rows(Y, mesh):
    """H1 norm of every row of a (rows, node_count) array at once."""
    w = mesh.mass_weights()
    acc = (Y * Y) @ w
    if mesh.dimension == 1:
        G = _gradient_axis_rows(Y, mesh.h, mesh.bc)
        acc = acc + (G * G) @ w
    else:
        n = mesh.nodes_per_axis
        V = Y.reshape(Y.shape[0], n, n)
        Gy = _gradient_axis_rows(V, mesh.h, mesh.bc)
        Gx = _gradient_axis_rows(V.transpose(0, 2, 1), mesh.h, mesh.bc)
        acc = acc + (Gy.reshape(Y.shape[0], -1) ** 2) @ w
        acc = acc + (Gx.transpose(0, 2, 1).reshape(Y.shape[0], -1) ** 2) @ w
    return np.sqrt(np.maximum(acc, 0.0))


def random_smooth_field(rng, mesh, h1_norm=1.0, modes=4):
    """Random low-frequency modal combination scaled to a target H1 norm.

    Mode amplitudes decay quadratically in the wavenumber, so draws stay
    resolved on coarse grids.
    """
    x = mesh.axis_coords() / mesh.length
    if mesh.bc == NEUMANN:
        basis = [np.cos(k * np.pi * x) for k in range(modes + 1)]
        decay = [1.0 / (1.0 + k * k) for k in range(modes + 1)]
    else:
        basis = [np.sin(k * np.pi * x) for k in range(1, modes + 1)]
        decay = [1.0 / (1.0 + k * k) for k in range(1, modes + 1)]
    for _ in range(100):
        if mesh.dimension == 1:
            v = np.zeros(mesh.node_count)
            for b, s in zip(basis, decay):
                v += s * rng.standard_normal() * b
        else:
            v2 = np.zeros((mesh.nodes_per_axis, mesh.nodes_per_axis))
            for bi, si in zip(basis, decay):
                for bj, sj in zip(basis, decay):
                    v2 += si * sj * rng.standard_normal() * np.outer(bi, bj)
            v = v2.ravel()
        nrm = h1_norm_values(v, mesh)
        if nrm > 0.0:
            return Field(v * (h1_norm / nrm), mesh)
    raise ValueError("could not draw a nonzero field")


def solve_shifted(op, sigma, rhs, tol=1e-12, x0=None):
    """Solve (sigma*I - A_h) x = rhs.

    1d goes through direct banded elimination, 2d through conjugate gradients
    in the mass inner product with relative tolerance ``tol``.
    """
    _check_same_mesh(op.mesh, rhs.mesh)
    mesh = op.mesh
    b = rhs.values
    if mesh.dimension == 1:
        from scipy.linalg import solve_banded
        (dl, d, du), = op.bands
        ab = np.zeros((3, d.shape[0]))
        ab[0, 1:] = -du[:-1]
        ab[1, :] = sigma - d
        ab[2, :-1] = -dl[1:]
        try:
            x = solve_banded((1, 1), ab, b)
        except Exception as exc:
            raise SingularShiftError(
                f"banded solve failed at sigma={sigma}: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SingularShiftError(f"shifted solve produced non-finite values "
                                     f"at sigma={sigma}")
        resid = (sigma * x - op.apply(x)) - b
        scale = l2_norm_values(b, mesh) + 1e-300
        if l2_norm_values(resid, mesh) > 1e-8 * scale + 1e-13:
            raise SingularShiftError(
                f"sigma={sigma} is singular or near-singular for this operator")
        return Field(x, mesh)
    (txb, tyb, c) = op.bands
    n = mesh.nodes_per_axis
    w2 = mesh.mass_weights().reshape(n, n)
    x2 = np.zeros((n, n)) if x0 is None else x0.values.reshape(n, n).copy()
    _, ok = kernels.cg_shift_2d(sigma, -1.0, txb[0], txb[1], txb[2],
                                tyb[0], tyb[1], tyb[2], c,
                                b.reshape(n, n).copy(), w2, x2, tol,
                                40 * mesh.node_count)
    if not ok:
        raise SingularShiftError(
            f"conjugate gradients stalled at sigma={sigma}; "
            "the shift is singular or indefinite")
    return Field(x2.ravel(), mesh)


def leading_eigenvalue(op, tol=1e-8, maxiter=500_000):
    """Largest (rightmost) eigenvalue of A_h by shifted power iteration.

    The shift is a diagonal-dominance bound making A_h + s*I positive
    semidefinite, so the dominant mode of the shifted operator is the
    rightmost mode of A_h.
    """
    A = op.matrix
    w = op.mesh.mass_weights()
    s = float(np.abs(A).sum(axis=1).max()) + 1.0
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(op.mesh.node_count)
    v /= np.sqrt(w @ (v * v))
    lam = np.inf
    delta_prev = np.inf
    for it in range(maxiter):
        av = A @ v + s * v
        nrm = np.sqrt(w @ (av * av))
        if nrm == 0.0:
            return -s
        v_new = av / nrm
        lam_new = float(w @ (v_new * (A @ v_new)))
        delta = abs(lam_new - lam)
        scale = tol * (1.0 + abs(lam_new))
        if it > 2 and delta <= scale:
            # linear convergence: bound the remaining tail geometrically
            ratio = delta / delta_prev if delta_prev > 0 else 0.0
            tail = delta * ratio / (1.0 - ratio) if ratio < 1.0 else np.inf
            if tail <= scale or delta <= 1e-15 * (1.0 + abs(lam_new)):
                return lam_new
        delta_prev = delta
        lam = lam_new
        v = v_new
    raise ConvergenceError(
        f"power iteration did not settle within {maxiter} iterations",
        residual=abs(lam_new - lam))


def _h1_form_matrix(mesh):
    """Sparse matrix of the discrete H1 inner product."""
    n = mesh.nodes_per_axis
    h = mesh.h
    entries = []
    if mesh.bc == NEUMANN:
        entries += [(0, 0, -1.0 / h), (0, 1, 1.0 / h),
                    (n - 1, n - 2, -1.0 / h), (n - 1, n - 1, 1.0 / h)]
        for i in range(1, n - 1):
            entries += [(i, i - 1, -0.5 / h), (i, i + 1, 0.5 / h)]
    else:
        for i in range(n):
            if i > 0:
                entries.append((i, i - 1, -0.5 / h))
            if i < n - 1:
                entries.append((i, i + 1, 0.5 / h))
    G1 = sp.csr_matrix(
        ([e[2] for e in entries],
         ([e[0] for e in entries], [e[1] for e in entries])),
        shape=(n, n))
    if mesh.dimension == 1:
        W = sp.diags(mesh.mass_weights())
        return (W + G1.T @ W @ G1).tocsr()
    eye = sp.eye(n, format="csr")
    Gx = sp.kron(G1, eye)
    Gy = sp.kron(eye, G1)
    W = sp.diags(mesh.mass_weights())
    return (W + Gx.T @ W @ Gx + Gy.T @ W @ Gy).tocsr()


def riesz_h1(f):
    """H1 representative of the L2 pairing with ``f``.

    Solves <r, v>_H1 = <f, v>_L2 for all v; used when a gradient field
    should be read against the H1 geometry instead of the lumped L2 one.
    """
    mesh = f.mesh
    H = _h1_form_matrix(mesh)
    rhs = mesh.mass_weights() * f.values
    r = spla.spsolve(H.tocsc(), rhs)
    return Field(r, mesh)
