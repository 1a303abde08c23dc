"""Pure-numpy versions of the row kernels in ``_ckernels.pyx``."""
import numpy as np

MASK_FILL = -1e9


def softmax_fwd(x, mask):
    if mask.shape[0] == 0:
        z = x
    else:
        keep = mask.astype(bool)
        dead = ~keep.any(axis=1)
        if dead.any():
            raise ValueError(f"softmax row {int(np.flatnonzero(dead)[0])} is fully masked")
        z = np.where(keep, x, x + MASK_FILL)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    if mask.shape[0] != 0:
        e[~keep] = 0.0
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    d = x - mean
    var = (d * d).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = d * rstd[:, None]
    return xhat * gamma + beta, xhat, rstd


def layernorm_bwd(gy, xhat, rstd, gamma):
    g = gy * gamma
    n = gy.shape[1]
    mg = g.sum(axis=1, keepdims=True) / n
    mgx = (g * xhat).sum(axis=1, keepdims=True) / n
    gx = rstd[:, None] * (g - mg - xhat * mgx)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)
