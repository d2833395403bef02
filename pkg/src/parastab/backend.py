"""Kernel backend selection.

The hot loops (time stepping, banded solves, conjugate gradients) exist twice:
once jit-compiled with numba and once in pure numpy.  The environment variable
PARASTAB_NUMBA picks the path:

    "auto" (default)  use numba when it imports, numpy otherwise
    "1"/"true"/"yes"  require numba (ImportError if missing)
    "0"/"false"/"no"  force the numpy fallbacks

Results are deterministic per backend; the two paths agree to roundoff but not
bit-for-bit (different elimination orders inside the banded solves).
"""

import os

_flag = os.environ.get("PARASTAB_NUMBA", "auto").strip().lower()

if _flag in ("0", "false", "no"):
    NUMBA_ENABLED = False
elif _flag in ("1", "true", "yes"):
    import numba  # noqa: F401

    NUMBA_ENABLED = True
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def backend_name():
    """Name of the active kernel backend, recorded in report provenance."""
    return "numba" if NUMBA_ENABLED else "numpy"
