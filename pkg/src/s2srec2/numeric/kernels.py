"""Kernel backend selection.

The compiled kernels are used when the extension imports cleanly and
``S2S_PURE_PYTHON`` is unset; otherwise the numpy versions are used.
Both expose the same four functions over C-contiguous 2-D float64 rows.
"""
import os

from . import _pykernels

try:
    if os.environ.get("S2S_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "numpy"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd


def available_backends():
    """Return ``{name: module}`` for every backend importable here."""
    out = {"numpy": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
