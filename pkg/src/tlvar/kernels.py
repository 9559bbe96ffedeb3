"""Hot-loop kernels, compiled when available.

The Cython extension ``tlvar._kernels`` is used if it imports; otherwise the
pure-Python twins in ``tlvar._kernels_py`` are used.  Setting the environment
variable ``TLVAR_PURE_PYTHON=1`` before import forces the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("TLVAR_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
var_recursion = _impl.var_recursion
lasso_fista = _impl.lasso_fista


def backends():
    """Return ``{name: module}`` for every backend importable in this process."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["compiled"] = _kernels
    return out
