"""Backend dispatch for the time-stepping kernels."""

from .backend import NUMBA_ENABLED, backend_name  # noqa: F401

if NUMBA_ENABLED:
    from . import _kernels_numba as _impl
else:
    from . import _kernels_numpy as _impl

NEWTON_TOL = _impl.NEWTON_TOL
NEWTON_MAXIT = _impl.NEWTON_MAXIT
forward_poly_1d = _impl.forward_poly_1d
adjoint_1d = _impl.adjoint_1d
linforward_1d = _impl.linforward_1d
forward_poly_2d = _impl.forward_poly_2d
adjoint_2d = _impl.adjoint_2d
linforward_2d = _impl.linforward_2d
cg_shift_2d = _impl.cg_shift_2d
