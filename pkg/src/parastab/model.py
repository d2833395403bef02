"""Problem data: reaction terms, actuators, control constraints, instances.

Reaction terms are stored in normalized form F with F(0) = 0 and F'(0) = 0;
the linear part of the reaction is exported separately so it can be folded
into the operator shift.  For the cubic bistable term a*y*(y-xi1)*(y-xi2)
that means

    F(y) = a*y^3 - a*(xi1+xi2)*y^2,      linear coefficient c = a*xi1*xi2,

obtained by expanding the factored form.  The instance is unstable around 0
exactly when xi1*xi2 < 0 (then c > 0 for a < 0).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import Field, SpatialMesh

SCHLOGL = "schlogl"
QUARTIC = "quartic"
CUSTOM_C2 = "custom_c2"


@dataclass(frozen=True)
class Nonlinearity:
    """Normalized pointwise reaction term.

    Polynomial variants carry power-basis coefficients (c2, c3, c4) for
    c2*y^2 + c3*y^3 + c4*y^4 so the jit kernels can evaluate them; the
    generic twice-differentiable variant carries callables instead and is
    served by the fallback stepping path.
    """

    kind: str
    linear: float = 0.0
    poly: tuple = None
    funcs: tuple = field(default=None, repr=False)
    lipschitz_l: float = None
    params: tuple = ()

    @classmethod
    def schlogl(cls, a, xi1, xi2):
        if not a < 0:
            raise ValueError("the cubic coefficient a must be negative")
        c2 = -a * (xi1 + xi2)
        return cls(kind=SCHLOGL, linear=a * xi1 * xi2, poly=(c2, a, 0.0),
                   params=(a, xi1, xi2))

    @classmethod
    def quartic(cls, k):
        return cls(kind=QUARTIC, linear=0.0, poly=(0.0, 0.0, k), params=(k,))

    @classmethod
    def custom_c2(cls, f, fp, fpp, lipschitz_l):
        """Generic C^2 term with globally Lipschitz second derivative.

        The stored term is f shifted so that F(0) = 0 and F'(0) = 0; the
        removed slope f'(0) is exported as the linear coefficient.
        """
        f0 = float(f(0.0))
        fp0 = float(fp(0.0))
        funcs = (lambda y: f(y) - f0 - fp0 * y,
                 lambda y: fp(y) - fp0,
                 fpp)
        return cls(kind=CUSTOM_C2, linear=fp0, funcs=funcs,
                   lipschitz_l=float(lipschitz_l))

    @classmethod
    def custom_square(cls):
        """Reference generic instance f(y) = y^2 (so f'' is constant)."""
        return cls(kind=CUSTOM_C2, linear=0.0, poly=(1.0, 0.0, 0.0),
                   lipschitz_l=0.0, params=())

    def value(self, y):
        y = np.asarray(y, dtype=float)
        if self.poly is not None:
            c2, c3, c4 = self.poly
            return c2 * y ** 2 + c3 * y ** 3 + c4 * y ** 4
        return np.asarray(self.funcs[0](y), dtype=float)

    def derivatives(self, y):
        """(f'(y), f''(y)) of the normalized term, elementwise."""
        y = np.asarray(y, dtype=float)
        if self.poly is not None:
            c2, c3, c4 = self.poly
            fp = 2 * c2 * y + 3 * c3 * y ** 2 + 4 * c4 * y ** 3
            fpp = 2 * c2 + 6 * c3 * y + 12 * c4 * y ** 2
            return fp, fpp
        fp = np.asarray(self.funcs[1](y), dtype=float)
        fpp = np.asarray(self.funcs[2](y), dtype=float)
        return fp, np.broadcast_to(fpp, y.shape).astype(float)

    def full_reaction(self, y):
        """Un-normalized reaction F(y) + c*y."""
        return self.value(y) + self.linear * np.asarray(y, dtype=float)


def f_eval(nl, y):
    """Pointwise lift of the normalized term onto a field or array."""
    if isinstance(y, Field):
        return Field(nl.value(y.values), y.mesh)
    return nl.value(y)


def f_derivatives(nl, y):
    if isinstance(y, Field):
        fp, fpp = nl.derivatives(y.values)
        return Field(fp, y.mesh), Field(np.broadcast_to(fpp, y.values.shape).copy(), y.mesh)
    return nl.derivatives(y)


def linear_coefficient(nl):
    """Slope removed by the F'(0) = 0 normalization (goes into the shift)."""
    return nl.linear


@dataclass
class ControlOperator:
    """Input map B: R^m -> fields.  Columns have unit L2 norm.

    The adjoint B* pairs fields in the lumped mass inner product, so
    B* v = B^T (w * v).
    """

    matrix: np.ndarray
    mesh: SpatialMesh
    supports: tuple = None

    def __post_init__(self):
        B = np.asarray(self.matrix, dtype=float)
        if B.ndim != 2 or B.shape[0] != self.mesh.node_count:
            raise ValueError("control matrix must be (node_count, m)")
        self.matrix = B

    @property
    def m(self):
        return self.matrix.shape[1]

    @classmethod
    def from_supports(cls, mesh, supports, shape="indicator"):
        """Build actuators from axis-aligned support boxes.

        1d supports are (lo, hi); 2d supports are ((lox, hix), (loy, hiy)).
        "indicator" columns are flat, "bump" columns vanish smoothly at the
        support edges.
        """
        coords = mesh.coords()
        w = mesh.mass_weights()
        cols = []
        norm_supports = []
        for s in supports:
            if mesh.dimension == 1:
                boxes = (tuple(s),)
            else:
                boxes = tuple(tuple(b) for b in s)
            norm_supports.append(boxes)
            mask = np.ones(mesh.node_count, dtype=bool)
            profile = np.ones(mesh.node_count)
            for axis, (lo, hi) in enumerate(boxes):
                if not hi > lo:
                    raise ValueError(f"empty actuator support {boxes}")
                x = coords[:, axis]
                mask &= (x >= lo - 1e-12) & (x <= hi + 1e-12)
                if shape == "bump":
                    t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
                    profile = profile * np.sin(np.pi * t) ** 2
            col = np.where(mask, profile if shape == "bump" else 1.0, 0.0)
            nrm = np.sqrt(w @ (col * col))
            if nrm == 0.0:
                raise ValueError(f"actuator support {boxes} contains no nodes")
            cols.append(col / nrm)
        return cls(matrix=np.column_stack(cols), mesh=mesh,
                   supports=tuple(norm_supports))

    def apply(self, u):
        """B u as flat nodal values; u has shape (m,)."""
        return self.matrix @ np.asarray(u, dtype=float)

    def adjoint_apply(self, values):
        """B* v in R^m for flat nodal values (or batches of rows)."""
        w = self.mesh.mass_weights()
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            return self.matrix.T @ (w * v)
        return (w * v) @ self.matrix


@dataclass(frozen=True)
class AdmissibleSet:
    """Pointwise-in-time control constraint {u : |u| <= radius}.

    radius may be math.inf (constraint disabled); the degenerate radius 0
    pins the control to zero.
    """

    radius: float

    def __post_init__(self):
        if not (self.radius >= 0):
            raise ValueError("admissible radius must be nonnegative")

    @property
    def bounded(self):
        return math.isfinite(self.radius)

    def project(self, v):
        v = np.asarray(v, dtype=float)
        if not self.bounded:
            return v.copy()
        nrm = float(np.linalg.norm(v))
        if nrm <= self.radius:
            return v.copy()
        return v * (self.radius / nrm)

    def project_rows(self, U):
        """Row-wise projection of an (N+1, m) control array."""
        U = np.asarray(U, dtype=float)
        if not self.bounded:
            return U.copy()
        nrms = np.linalg.norm(U, axis=1)
        scale = np.ones_like(nrms)
        over = nrms > self.radius
        scale[over] = self.radius / nrms[over]
        return U * scale[:, None]


def project_ball(aset, v):
    """Euclidean projection onto the control ball (boundary included)."""
    return aset.project(v)


@dataclass
class ProblemSpec:
    """One fully resolved stabilization instance.

    operator_shift is the total c in A_h = Laplacian + c*I, i.e. the model's
    linear coefficient plus any extra shift from the configuration.
    """

    mesh: SpatialMesh
    nonlinearity: Nonlinearity
    control: ControlOperator
    admissible: AdmissibleSet
    y0: Field
    alpha: float
    horizon: float
    dt: float
    operator_shift: float = None
    tol: float = 1e-8
    max_iter: int = 500
    tail_tol: float = 1e-3
    lin_tol: float = 1e-12
    scheme: str = "cn"
    warm_start: str = "riccati"
    riccati_cap: int = 256
    seed: int = 0
    _op: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.operator_shift is None:
            self.operator_shift = linear_coefficient(self.nonlinearity)
        if not (self.alpha > 0):
            raise ValueError("control cost weight alpha must be positive")
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("horizon and dt must be positive")
        ratio = self.horizon / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("horizon must be an integral number of steps")
        if self.scheme not in ("ie", "cn"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.warm_start not in ("riccati", "zero"):
            raise ValueError(f"unknown warm start policy {self.warm_start!r}")
        if self.y0.mesh != self.mesh:
            raise ValueError("initial state lives on a different mesh")
        if self.control.mesh != self.mesh:
            raise ValueError("control operator lives on a different mesh")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    def operator(self):
        from .mesh import assemble_operator
        if self._op is None or self._op.c != self.operator_shift:
            self._op = assemble_operator(self.mesh, self.operator_shift)
        return self._op

    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def with_y0(self, y0, **overrides):
        """Copy of the spec with a new initial state (and optional fields)."""
        kw = dict(y0=y0, _op=self._op)
        kw.update(overrides)
        return replace(self, **kw)

