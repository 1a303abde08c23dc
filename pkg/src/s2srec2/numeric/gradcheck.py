"""Central finite differences, used as the independent gradient oracle."""
import numpy as np


def finite_difference_gradient(f, x, h=1e-5):
    """Return d f / d x by central differences.

    ``x`` is a Tensor (perturbed in place through ``x.data``, then restored)
    or an ndarray.  ``f`` takes no arguments and reads ``x`` itself when a
    Tensor is passed; for an ndarray it is called as ``f(x)``.
    """
    arr = x.data if hasattr(x, "data") and not isinstance(x, np.ndarray) else x
    call = (lambda: f()) if arr is not x else (lambda: f(arr))
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(np.asarray(call()).reshape(-1)[0])
        flat[i] = orig - h
        fm = float(np.asarray(call()).reshape(-1)[0])
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    """Max elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
