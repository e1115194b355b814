"""Numpy reference implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Inputs are C-contiguous float64 arrays; the dispatcher in ``kernels`` takes
care of that.
"""

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)


def layer_norm_forward(x, gain, bias, eps):
    """Normalize rows of ``x`` [R, d]. Returns (y, xhat, rstd)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_backward(dy, xhat, rstd, gain):
    d = xhat.shape[1]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    g = dy * gain
    dx = (g - g.mean(axis=1, keepdims=True)
          - xhat * (g * xhat).sum(axis=1, keepdims=True) / d) * rstd[:, None]
    return dx, dgain, dbias


def masked_softmax_forward(scores, mask):
    """Row softmax of ``scores`` [B, R, K] over keys where ``mask`` [B, K] is nonzero."""
    keep = mask.astype(bool)[:, None, :]
    s = np.where(keep, scores, -np.inf)
    s = s - s.max(axis=2, keepdims=True)
    e = np.where(keep, np.exp(s), 0.0)
    return e / e.sum(axis=2, keepdims=True)


def masked_softmax_backward(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def gelu_forward(x):
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(dy, x):
    x2 = x * x
    th = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)
