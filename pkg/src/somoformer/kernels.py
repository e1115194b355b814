"""Backend dispatch for the hot kernels.

The compiled Cython module is used when it was built and
``SOMOFORMER_PURE_PYTHON`` is unset; otherwise the numpy versions run.
Both backends agree to round-off (checked in the test suite), but only runs
on the same backend are bit-reproducible.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_impl = _pykernels
BACKEND = "python"


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def set_backend(name: str) -> None:
    global _impl, BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not available; reinstall with Cython and a C compiler")
        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


@contextlib.contextmanager
def backend(name: str):
    previous = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


if _ckernels is not None and not os.environ.get("SOMOFORMER_PURE_PYTHON"):
    set_backend("cython")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def layer_norm_forward(x2d, gain, bias, eps):
    return _impl.layer_norm_forward(_c(x2d), _c(gain), _c(bias), float(eps))


def layer_norm_backward(dy2d, xhat, rstd, gain):
    return _impl.layer_norm_backward(_c(dy2d), _c(xhat), _c(rstd), _c(gain))


def masked_softmax_forward(scores3d, mask2d):
    return _impl.masked_softmax_forward(_c(scores3d), np.ascontiguousarray(mask2d, dtype=np.uint8))


def masked_softmax_backward(dp2d, p2d):
    return _impl.masked_softmax_backward(_c(dp2d), _c(p2d))


def gelu_forward(x):
    flat = _c(x).reshape(-1)
    return _impl.gelu_forward(flat).reshape(np.shape(x))


def gelu_backward(dy, x):
    return _impl.gelu_backward(_c(dy).reshape(-1), _c(x).reshape(-1)).reshape(np.shape(x))
