"""Orthonormal DCT-II / DCT-III pair over the last axis of a trajectory array."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


class DctBasis:
    """Dense orthonormal DCT matrix for sequences of a fixed length.

    Row ``l`` (frequency) and column ``k`` (frame), both 0-based, hold
    ``sqrt(2/n) * cos(pi/(2n) * (2k+1) * l)``, with row 0 further divided by
    sqrt(2). Forward is ``matrix @ x`` and inverse is ``matrix.T @ c``.
    """

    def __init__(self, length: int):
        if length < 1:
            raise ValueError(f"DCT length must be positive, got {length}")
        self.length = length
        frame = np.arange(length)[None, :]
        freq = np.arange(length)[:, None]
        m = np.sqrt(2.0 / length) * np.cos(np.pi / (2 * length) * (2 * frame + 1) * freq)
        m[0] /= np.sqrt(2.0)
        m.setflags(write=False)
        self.matrix = m

    def _check(self, a: np.ndarray) -> None:
        if a.shape[-1] != self.length:
            raise ValueError(f"last axis has length {a.shape[-1]}, DCT basis has length {self.length}")

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return x @ self.matrix.T

    def inverse(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        self._check(c)
        return c @ self.matrix

    def __repr__(self) -> str:
        return f"DctBasis(length={self.length})"


@lru_cache(maxsize=64)
def get_basis(length: int) -> DctBasis:
    return DctBasis(length)


def dct_forward(x, basis: DctBasis | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (basis or get_basis(x.shape[-1])).forward(x)


def dct_inverse(c, basis: DctBasis | None = None) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return (basis or get_basis(c.shape[-1])).inverse(c)
