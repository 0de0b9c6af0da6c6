"""Kernel backend selection.

The compiled extension is used when importable; set
``DRIVESTYLE_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("DRIVESTYLE_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
    else:
        BACKEND = "cython"

forward_loglik = _impl.forward_loglik
backward_messages = _impl.backward_messages
sample_forward = _impl.sample_forward
crt_counts = _impl.crt_counts


def available_backends():
    """Mapping of backend name to kernel module, for comparison and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
