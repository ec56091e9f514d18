"""Numerical Laplace-transform inversion by the de Hoog-Knight-Stokes method.

The transform is sampled on the Bromwich contour and the Fourier series is
summed through a continued fraction built with the quotient-difference
algorithm. Points are grouped so that each group spans at most a factor of
two in ``t``; every group shares one set of transform samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

# the bundled TBB is too old for numba; skip it instead of warning on first use
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from divbands.errors import InversionError


@dataclass(frozen=True)
class InversionConfig:
    """Tuning of the inversion.

    Attributes
    ----------
    terms : int
        Number ``M`` of quotient-difference levels; ``2M + 1`` transform samples per group.
    tol : float
        Target relative accuracy, sets the contour shift.
    check : float
        Allowed gap between the result and the one from ``M - 4`` levels,
        relative to the largest value of the group, before failing.
    """

    terms: int = 24
    tol: float = 1e-12
    check: float = 1e-5

    def __post_init__(self):
        if self.terms < 5:
            raise InversionError("at least 5 quotient-difference levels are needed")


def invert(F: Callable[[np.ndarray], np.ndarray], t, abscissa: float,
           config: InversionConfig = InversionConfig()) -> np.ndarray:
    """Invert ``F`` at the positive times ``t``.

    Parameters
    ----------
    F : callable
        Maps a 1-d complex array ``s`` of shape ``(K,)`` to values of shape ``(K, *S)``.
        Extra trailing axes let one call invert a family of transforms.
    t : array_like
        Positive evaluation points.
    abscissa : float
        Real part beyond which ``F`` is analytic.

    Returns
    -------
    ndarray of shape ``t.shape + S``.
    """
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    if flat.size == 0:
        raise InversionError("no evaluation points")
    if np.any(~(flat > 0)) or not np.all(np.isfinite(flat)):
        raise InversionError("inversion points must be positive and finite")
    order = np.argsort(flat)
    ts = flat[order]
    out = None
    hi = len(ts)
    while hi > 0:
        tmax = ts[hi - 1]
        lo = int(np.searchsorted(ts, tmax / 2.0, side="right"))
        vals = _invert_group(F, ts[lo:hi], tmax, abscissa, config)
        if out is None:
            out = np.empty((len(ts),) + vals.shape[1:])
        out[lo:hi] = vals
        hi = lo
    res = np.empty_like(out)
    res[order] = out
    return res.reshape(t.shape + out.shape[1:])


def _invert_group(F, t, tmax, abscissa, cfg):
    M = cfg.terms
    T = 2.0 * tmax
    gamma = abscissa - math.log(cfg.tol) / (2.0 * T)
    if not gamma > abscissa:
        raise InversionError("contour must lie to the right of every singularity")
    k = np.arange(2 * M + 1)
    p = gamma + 1j * math.pi * k / T
    a = np.asarray(F(p), dtype=complex)
    if a.shape[0] != 2 * M + 1:
        raise InversionError("transform returned the wrong number of samples")
    if not np.all(np.isfinite(a)):
        raise InversionError("transform is not finite on the inversion contour")
    a = a.copy()
    a[0] = a[0] / 2.0
    extra = a.shape[1:]

    # quotient-difference table, one column per level
    d = np.empty((2 * M + 1,) + extra, dtype=complex)
    d[0] = a[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = a[1:] / a[:-1]
        e = np.zeros((2 * M,) + extra, dtype=complex)
        d[1] = -q[0]
        for r in range(1, M + 1):
            e = q[1:] - q[:-1] + e[1:len(q)]
            d[2 * r] = -e[0]
            if r < M:
                q = q[1:-1] * e[1:] / e[:-1]
                d[2 * r + 1] = -q[0]
    if not np.all(np.isfinite(d)):
        raise InversionError("quotient-difference table broke down")

    z = np.exp(1j * math.pi * t / T)
    flat_d = np.ascontiguousarray(d.reshape(2 * M + 1, -1))
    f_fin, f_chk = _fraction(flat_d, z, M - 4)
    f_fin = f_fin.reshape((len(t),) + extra)
    f_chk = f_chk.reshape((len(t),) + extra)
    z = z.reshape((-1,) + (1,) * len(extra))
    scale = np.exp(gamma * t).reshape(z.shape) / T
    val = scale * f_fin.real
    chk = scale * f_chk.real
    if not np.all(np.isfinite(val)):
        raise InversionError("continued fraction produced non-finite values")
    # errors of the series are absolute on the scale of the group's largest value
    ref = max(float(np.max(np.abs(val))), 1e-300)
    gap = np.abs(val - chk) / ref
    if np.any(gap > cfg.check):
        raise InversionError(f"inversion did not settle (relative gap {float(np.max(gap)):.2e})")
    return val


@numba.njit(cache=True, parallel=True)
def _fraction(d, z, low):
    """Continued fraction at every ``z`` for every column of ``d``, with improved tails.

    Returns the full-order value and the value truncated after ``low`` levels.
    """
    n_terms, n_col = d.shape
    M = (n_terms - 1) // 2
    out = np.empty((z.size, n_col), dtype=np.complex128)
    chk = np.empty((z.size, n_col), dtype=np.complex128)
    for i in numba.prange(z.size):
        zi = z[i]
        for j in range(n_col):
            a_prev, a = 0j, d[0, j]
            b_prev, b = 1 + 0j, 1 + 0j
            for n in range(1, 2 * M):
                a, a_prev = a + d[n, j] * zi * a_prev, a
                b, b_prev = b + d[n, j] * zi * b_prev, b
                if n == 2 * low - 1:
                    chk[i, j] = _tail(a, a_prev, b, b_prev, d[n, j], d[n + 1, j], zi)
            out[i, j] = _tail(a, a_prev, b, b_prev, d[2 * M - 1, j], d[2 * M, j], zi)
    return out, chk


@numba.njit(cache=True)
def _tail(a, a_prev, b, b_prev, d_odd, d_even, z):
    h = 0.5 * (1.0 + (d_odd - d_even) * z)
    r = -h * (1.0 - np.sqrt(1.0 + d_even * z / (h * h)))
    return (a + r * a_prev) / (b + r * b_prev)
