"""Initial-value integration of -y'' + q(x) y = rho^2 y on a single edge.

The integrator is the fourth-order Magnus scheme (two Gauss nodes) applied
to the first-order system Y' = [[0, 1], [q - rho^2, 0]] Y.  For this
traceless 2x2 generator the exponential has a closed form, and the scheme
is exact whenever q is constant on a step, so large |rho| costs nothing
beyond the step bound ``min(h_grid, 1/(4|rho|))``.  Every result is
Richardson-extrapolated from step sizes h and h/2.

q is the piecewise-linear interpolant of the edge samples; steps never
straddle a grid node.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .graph_model import Edge

RHO_LIMIT = 1.0e4
_G1 = 0.5 - math.sqrt(3.0) / 6.0
_G2 = 0.5 + math.sqrt(3.0) / 6.0
_C3 = math.sqrt(3.0) / 12.0


class OdeError(RuntimeError):
    pass


@njit(cache=True, nogil=True)
def _march(nodes, qn, rho2, nsub, out_idx):
    """Propagate the fundamental matrix through ``nodes`` for each rho^2.

    Returns an array (len(rho2), len(out_idx), 4) holding Y00, Y01, Y10, Y11.
    """
    nr = rho2.shape[0]
    nout = out_idx.shape[0]
    res = np.empty((nr, nout, 4), dtype=np.complex128)
    for r in range(nr):
        lam = rho2[r]
        y00 = 1.0 + 0.0j
        y01 = 0.0 + 0.0j
        y10 = 0.0 + 0.0j
        y11 = 1.0 + 0.0j
        o = 0
        while o < nout and out_idx[o] == 0:
            res[r, o, 0] = y00
            res[r, o, 1] = y01
            res[r, o, 2] = y10
            res[r, o, 3] = y11
            o += 1
        for k in range(nodes.shape[0] - 1):
            H = nodes[k + 1] - nodes[k]
            h = H / nsub
            qa = qn[k]
            dq = qn[k + 1] - qn[k]
            for s in range(nsub):
                q1 = qa + dq * (s + _G1) / nsub
                q2 = qa + dq * (s + _G2) / nsub
                a = _C3 * h * h * (q1 - q2)
                c = 0.5 * (q1 + q2) - lam
                th2 = a * a + h * h * c
                if abs(th2) < 1e-8:
                    ch = 1.0 + th2 / 2.0 + th2 * th2 / 24.0
                    sh = 1.0 + th2 / 6.0 + th2 * th2 / 120.0
                else:
                    th = cmath.sqrt(th2)
                    ep = cmath.exp(th)
                    em = 1.0 / ep
                    ch = 0.5 * (ep + em)
                    sh = 0.5 * (ep - em) / th
                e00 = ch + sh * a
                e01 = sh * h
                e10 = sh * h * c
                e11 = ch - sh * a
                n00 = e00 * y00 + e01 * y10
                n01 = e00 * y01 + e01 * y11
                n10 = e10 * y00 + e11 * y10
                n11 = e10 * y01 + e11 * y11
                y00 = n00
                y01 = n01
                y10 = n10
                y11 = n11
            while o < nout and out_idx[o] == k + 1:
                res[r, o, 0] = y00
                res[r, o, 1] = y01
                res[r, o, 2] = y10
                res[r, o, 3] = y11
                o += 1
    return res


def _substeps(edge: Edge, rho: np.ndarray, refine: int) -> np.ndarray:
    step = np.minimum(edge.h, 1.0 / (4.0 * np.maximum(np.abs(rho), 1e-300)))
    return refine * np.maximum(1, np.ceil(edge.h / step - 1e-9)).astype(np.int64)


def fundamental(edge: Edge, rho, x, *, direction: str = "forward", refine: int = 1,
                richardson: bool = True, rho_limit: float = RHO_LIMIT) -> np.ndarray:
    """Fundamental matrix Y(rho, x) with Y = I at the starting end.

    ``direction="forward"`` starts at x = 0, ``"backward"`` at x = L.
    Returns shape ``rho.shape + x.shape + (2, 2)``; column 0 is the solution
    with initial data (1, 0), column 1 the one with (0, 1).
    """
    rho = np.asarray(rho, dtype=complex)
    x = np.asarray(x, dtype=float)
    if rho.size and np.max(np.abs(rho)) > rho_limit:
        raise OdeError(f"|rho| = {np.max(np.abs(rho)):.4g} exceeds the scan maximum {rho_limit:g}")
    if x.size and (x.min() < -1e-12 or x.max() > edge.length * (1 + 1e-12)):
        raise OdeError(f"x outside [0, {edge.length}] on edge {edge.index}")
    xf = np.clip(x.ravel(), 0.0, edge.length)
    ux, inv = np.unique(xf, return_inverse=True)
    nodes = np.union1d(edge.x, ux)
    qn = edge.q_at(nodes)
    if direction == "backward":
        nodes = nodes[::-1].copy()
        qn = qn[::-1].copy()
        ux = ux[::-1]
        inv = ux.size - 1 - inv
    elif direction != "forward":
        raise ValueError(f"direction must be 'forward' or 'backward', not {direction!r}")
    out_idx = np.searchsorted(nodes, ux) if direction == "forward" else (
        nodes.size - 1 - np.searchsorted(nodes[::-1], ux[::-1])[::-1])
    out_idx = np.ascontiguousarray(out_idx, dtype=np.int64)

    rf = rho.ravel()
    lam = rf * rf
    nsub = _substeps(edge, rf, refine)
    res = np.empty((rf.size, ux.size, 4), dtype=complex)
    for n in np.unique(nsub):
        sel = nsub == n
        coarse = _march(nodes, qn, lam[sel], int(n), out_idx)
        if richardson:
            fine = _march(nodes, qn, lam[sel], int(2 * n), out_idx)
            res[sel] = fine + (fine - coarse) / 15.0
        else:
            res[sel] = coarse
    res = res[:, inv, :].reshape(rho.shape + x.shape + (2, 2))
    return res


@dataclass(frozen=True)
class SolutionSample:
    rho: complex
    x: float
    value: complex
    derivative: complex


def solve_ivp(edge: Edge, rho: complex, init=(1.0, 0.0), at_x=None, direction: str = "forward",
              **kw) -> list[SolutionSample]:
    """Solve with ``(y, y')`` = ``init`` at x = 0 (forward) or x = L (backward)."""
    at_x = [edge.length] if at_x is None else list(at_x)
    Y = fundamental(edge, complex(rho), np.array(at_x, dtype=float), direction=direction, **kw)
    y0, d0 = init
    vals = Y[..., 0, 0] * y0 + Y[..., 0, 1] * d0
    ders = Y[..., 1, 0] * y0 + Y[..., 1, 1] * d0
    return [SolutionSample(complex(rho), float(xx), complex(v), complex(d))
            for xx, v, d in zip(at_x, vals, ders)]


def phi(edge: Edge, rho, x, **kw):
    """phi(rho, x) and phi'(rho, x): phi(0) = 1, phi'(0) = 0."""
    Y = fundamental(edge, rho, x, **kw)
    return Y[..., 0, 0], Y[..., 1, 0]


def S(edge: Edge, rho, x, **kw):
    """S(rho, x) and S'(rho, x): S(0) = 0, S'(0) = 1."""
    Y = fundamental(edge, rho, x, **kw)
    return Y[..., 0, 1], Y[..., 1, 1]


def T(edge: Edge, rho, x, **kw):
    """T(rho, x) and T'(rho, x): T(L) = 0, T'(L) = 1, integrated backward."""
    Y = fundamental(edge, rho, x, direction="backward", **kw)
    return Y[..., 0, 1], Y[..., 1, 1]


def endpoint_values(edge: Edge, rho, **kw):
    """(phi, phi', S, S') at x = L, vectorised over rho."""
    Y = fundamental(edge, rho, edge.length, **kw)
    return Y[..., 0, 0], Y[..., 1, 0], Y[..., 0, 1], Y[..., 1, 1]


def wronskian(edge: Edge, rho, x, **kw):
    """phi S' - phi' S; identically 1 for the exact solutions."""
    Y = fundamental(edge, rho, x, **kw)
    return Y[..., 0, 0] * Y[..., 1, 1] - Y[..., 1, 0] * Y[..., 0, 1]


def eigen_roots(edge: Edge, kind: str, count: int, *, scan_step: float | None = None,
                tol: float = 1e-12, **kw) -> np.ndarray:
    """First ``count`` positive square-root eigenvalues by scan and bracketing.

    ``kind="dirichlet"``: zeros of S(rho, L) (y(0) = y(L) = 0);
    ``kind="neumann"``: zeros of phi(rho, L) (y'(0) = 0, y(L) = 0).
    Sign changes on a grid of step ``scan_step`` (default pi/(4L), a quarter
    of the asymptotic root spacing) are refined together by the Illinois
    variant of regula falsi, one vectorised integration per sweep.
    """
    if kind == "dirichlet":
        col = 1
    elif kind == "neumann":
        col = 0
    else:
        raise ValueError(f"kind must be 'dirichlet' or 'neumann', not {kind!r}")
    L = edge.length
    step = math.pi / (4 * L) if scan_step is None else scan_step

    def f(r):
        return fundamental(edge, np.asarray(r, dtype=float), L, **kw)[..., 0, col].real

    hi = (count + 2) * math.pi / L + 4 * step
    while True:
        grid = np.arange(step / 2, hi + step, step)
        v = f(grid)
        k = np.flatnonzero(np.sign(v[:-1]) != np.sign(v[1:]))
        if k.size >= count:
            break
        hi *= 1.5
        if hi > RHO_LIMIT:
            raise OdeError(f"found only {k.size} of {count} roots below |rho| = {RHO_LIMIT:g}")
    k = k[:count]
    a, b = grid[k], grid[k + 1]
    fa, fb = v[k], v[k + 1]
    side = np.zeros(k.size, dtype=int)
    for _ in range(200):
        c = (a * fb - b * fa) / (fb - fa)
        c = np.where((c > a) & (c < b), c, 0.5 * (a + b))
        done = (b - a) <= tol * np.maximum(1.0, b)
        fc = f(c)
        hit = fc == 0
        left = (np.sign(fc) == np.sign(fa)) & ~hit
        right = ~left & ~hit
        # Illinois: halve the stale endpoint value when the same side is kept twice
        fb = np.where(left & (side == 1), 0.5 * fb, fb)
        fa = np.where(right & (side == -1), 0.5 * fa, fa)
        a = np.where(left | hit, c, a)
        fa = np.where(left | hit, fc, fa)
        b = np.where(right | hit, c, b)
        fb = np.where(right | hit, fc, fb)
        side = np.where(left, 1, np.where(right, -1, 0))
        if np.all(done | hit | (np.abs(b - a) <= tol * np.maximum(1.0, b))):
            break
        if np.all(np.abs(fc) <= 1e-15 * np.maximum(1.0, np.abs(v).max())):
            break
    return np.where(np.abs(fa) < np.abs(fb), a, b)
