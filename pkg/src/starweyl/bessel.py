"""Spherical Bessel functions of the first kind for complex arguments.

All orders ``0..kmax`` are produced at once, which is what the series
evaluators need.  Three regimes:

* ``|z| < 1``: ascending power series;
* ``|z| > kmax``: upward recurrence from the closed forms of j0, j1
  (stable while the order stays below ``|z|``);
* otherwise: Miller backward recurrence normalised by j0 or j1,
  whichever is larger in modulus at that point.
"""

from __future__ import annotations

import numpy as np

SERIES_RADIUS = 1.0
MAX_ABS_Z = 1.0e5
# exp(|Im z|) must stay representable
MAX_ABS_IMAG = 700.0


class BesselOverflowError(ArithmeticError):
    pass


def _series(z, kmax):
    """Ascending series, accurate for |z| < 1 and any order."""
    out = np.empty(z.shape + (kmax + 1,), dtype=complex)
    w = -0.5 * z * z
    zk = np.ones_like(z)
    dfact = 1.0
    for k in range(kmax + 1):
        if k > 0:
            zk = zk * z
            dfact *= 2 * k + 1
        term = np.ones_like(z)
        total = np.ones_like(z)
        for m in range(1, 40):
            term = term * w / (m * (2 * k + 2 * m + 1))
            total = total + term
            if np.all(np.abs(term) < 1e-18 * np.abs(total)):
                break
        out[..., k] = zk / dfact * total
    return out


def _j0_j1(z):
    s = np.sin(z)
    c = np.cos(z)
    j0 = s / z
    j1 = s / (z * z) - c / z
    return j0, j1


def _upward(z, kmax):
    out = np.empty(z.shape + (kmax + 1,), dtype=complex)
    j0, j1 = _j0_j1(z)
    out[..., 0] = j0
    if kmax >= 1:
        out[..., 1] = j1
    for k in range(1, kmax):
        out[..., k + 1] = (2 * k + 1) / z * out[..., k] - out[..., k - 1]
    return out


def _miller(z, kmax):
    az = np.abs(z)
    top = max(kmax, int(np.ceil(az.max())))
    start = top + 30 + int(np.ceil(np.sqrt(40.0 * top)))
    out = np.zeros(z.shape + (kmax + 1,), dtype=complex)
    f_hi = np.zeros_like(z)
    f = np.full_like(z, 1e-30)
    for k in range(start, 0, -1):
        f_lo = (2 * k + 1) / z * f - f_hi
        f_hi, f = f, f_lo
        if k - 1 <= kmax:
            out[..., k - 1] = f
        if k <= kmax:
            out[..., k] = f_hi
        big = np.abs(f) > 1e200
        if np.any(big):
            scale = np.where(big, 1e-200, 1.0)
            f = f * scale
            f_hi = f_hi * scale
            out *= scale[..., None]
    j0, j1 = _j0_j1(z)
    if kmax >= 1:
        use0 = np.abs(j0) >= np.abs(j1)
        norm = np.where(use0, j0, j1) / np.where(use0, out[..., 0], out[..., 1])
    else:
        norm = j0 / out[..., 0]
    return out * norm[..., None]


def spherical_j_all(kmax, z):
    """Return j_0(z), ..., j_kmax(z) stacked along a new last axis."""
    z = np.asarray(z, dtype=complex)
    if kmax < 0:
        raise ValueError("kmax must be non-negative")
    if z.size and np.max(np.abs(z)) > MAX_ABS_Z:
        raise BesselOverflowError(f"|z| = {np.max(np.abs(z)):.3g} exceeds {MAX_ABS_Z:g}")
    if z.size and np.max(np.abs(z.imag)) > MAX_ABS_IMAG:
        raise BesselOverflowError("imaginary part of z too large; j_k overflows")
    shape = z.shape
    zf = z.ravel()
    out = np.empty((zf.size, kmax + 1), dtype=complex)
    az = np.abs(zf)
    small = az < SERIES_RADIUS
    large = az > kmax + 1
    mid = ~(small | large)
    if np.any(small):
        zs = zf[small]
        res = _series(np.where(zs == 0, 1.0, zs), kmax)
        zero = zs == 0
        if np.any(zero):
            res[zero] = 0.0
            res[zero, 0] = 1.0
        out[small] = res
    if np.any(large):
        out[large] = _upward(zf[large], kmax)
    if np.any(mid):
        out[mid] = _miller(zf[mid], kmax)
    if not np.all(np.isfinite(out)):
        raise BesselOverflowError("non-finite spherical Bessel value")
    return out.reshape(shape + (kmax + 1,))


def spherical_j(k, z):
    """Spherical Bessel function j_k(z); scalar or array ``z``."""
    res = spherical_j_all(k, z)[..., k]
    return res[()] if np.ndim(res) == 0 else res
