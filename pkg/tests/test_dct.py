import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from somoformer.dct import DctBasis, dct_forward, dct_inverse


def summed_coefficients(x):
    """Coefficients by direct 1-indexed summation, one term at a time."""
    n = len(x)
    out = []
    for l in range(1, n + 1):
        s = 0.0
        for t in range(1, n + 1):
            s += x[t - 1] / math.sqrt(1 + (l == 1)) * math.cos(math.pi / (2 * n) * (2 * t - 1) * (l - 1))
        out.append(math.sqrt(2.0 / n) * s)
    return out


def summed_inverse(c):
    n = len(c)
    out = []
    for t in range(1, n + 1):
        s = 0.0
        for l in range(1, n + 1):
            s += c[l - 1] / math.sqrt(1 + (l == 1)) * math.cos(math.pi / (2 * n) * (2 * t - 1) * (l - 1))
        out.append(math.sqrt(2.0 / n) * s)
    return out


def test_constant_sequence():
    np.testing.assert_allclose(dct_forward([1.0, 1.0, 1.0, 1.0]), [2.0, 0.0, 0.0, 0.0], atol=1e-15)


def test_length_two_impulse():
    # direct summation: C1 = sqrt(2/2)*1/sqrt2, C2 = sqrt(2/2)*cos(pi/4)
    np.testing.assert_allclose(dct_forward([1.0, 0.0]), [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-15)


def test_inverse_of_constant():
    n, k = 7, 2.5
    c = np.zeros(n)
    c[0] = math.sqrt(n) * k
    np.testing.assert_allclose(dct_inverse(c), np.full(n, k), atol=1e-14)


def test_second_basis_vector_matches_summation():
    n = 9
    e2 = np.zeros(n)
    e2[1] = 1.0
    np.testing.assert_allclose(dct_inverse(e2), summed_inverse(list(e2)), atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 5, 16, 30, 60])
def test_forward_matches_summation(n):
    x = np.random.default_rng(n).normal(size=n)
    np.testing.assert_allclose(dct_forward(x), summed_coefficients(list(x)), atol=1e-12)


def test_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        DctBasis(4).forward(np.zeros(5))
    with pytest.raises(ValueError):
        DctBasis(4).inverse(np.zeros((2, 3)))


def test_basis_is_read_only():
    with pytest.raises(ValueError):
        DctBasis(3).matrix[0, 0] = 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_roundtrip_orthonormality_parseval_linearity(n, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, n))
    a, b = rng.normal(size=2)
    D = DctBasis(n)
    assert np.abs(D.inverse(D.forward(x)) - x).max() < 1e-9
    assert np.abs(D.matrix.T @ D.matrix - np.eye(n)).max() < 1e-9
    assert abs(np.linalg.norm(D.forward(x)) - np.linalg.norm(x)) < 1e-9
    assert np.abs(D.forward(a * x + b * y) - (a * D.forward(x) + b * D.forward(y))).max() < 1e-9


def test_batched_last_axis():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 10))
    c = dct_forward(x)
    np.testing.assert_allclose(c[1, 2, 3], dct_forward(x[1, 2, 3]), atol=1e-15)
