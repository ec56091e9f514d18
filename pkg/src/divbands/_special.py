"""Scaled upper incomplete gamma function for complex arguments.

Only what the shifted Pareto transforms need: ``exp(z) * Gamma(a, z)`` for
``Re(z) > 0`` and real ``a`` (typically negative).
"""

from __future__ import annotations

import numpy as np
from scipy import special

_CF_SWITCH = 2.0
_TINY = 1e-300


def _continued_fraction(a: float, z: np.ndarray, max_iter: int = 2000, tol: float = 1e-16) -> np.ndarray:
    # Legendre continued fraction, modified Lentz; returns exp(z) * Gamma(a, z).
    b = z + 1.0 - a
    c = np.full_like(z, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(z.shape, dtype=bool)
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b = b + 2.0
        d_new = an * d + b
        d_new = np.where(np.abs(d_new) < _TINY, _TINY, d_new)
        c_new = b + an / c
        c_new = np.where(np.abs(c_new) < _TINY, _TINY, c_new)
        d_new = 1.0 / d_new
        delta = d_new * c_new
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > tol
        if not active.any():
            break
    return np.exp(a * np.log(z)) * h


def _series(a: float, z: np.ndarray, terms: int = 80) -> np.ndarray:
    # exp(z) * (Gamma(a) - gamma(a, z)) with the lower gamma as a power series
    term = np.ones_like(z) / a
    total = term.copy()
    for n in range(1, terms):
        term = term * z / (a + n)
        total = total + term
    za = np.exp(a * np.log(z))
    return np.exp(z) * special.gamma(a) - za * total


def _integer_order(a: int, z: np.ndarray) -> np.ndarray:
    # upward recurrence from exp(z) E1(z) = exp(z) Gamma(0, z)
    g = np.exp(z) * special.exp1(z)
    for k in range(0, a, -1):
        # Gamma(k - 1, z) = (Gamma(k, z) - z**(k-1) exp(-z)) / (k - 1)
        g = (g - np.exp((k - 1) * np.log(z))) / (k - 1)
    return g


def scaled_upper_gamma(a: float, z) -> np.ndarray:
    """Return ``exp(z) * Gamma(a, z)`` for complex ``z`` with positive real part."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape, dtype=complex)
    big = np.abs(z) >= _CF_SWITCH
    if big.any():
        out[big] = _continued_fraction(a, z[big])
    small = ~big
    if small.any():
        if float(a).is_integer() and a <= 0:
            out[small] = _integer_order(int(a), z[small])
        else:
            out[small] = _series(a, z[small])
    return out
