"""Truncated Neumann series of Bessel functions (NSBF) for phi, S and T.

    phi(rho, x) = cos(rho x) + sum_n (-1)^n g_n(x) j_{2n}(rho x)
    S(rho, x)   = [sin(rho x) + sum_n (-1)^n s_n(x) j_{2n+1}(rho x)] / rho
    T(rho, x)   = [sin(rho (x-L)) + sum_n (-1)^n t_n(x) j_{2n+1}(rho (x-L))] / rho

plus the derivative series with coefficients gamma_n, sigma_n.  The
coefficients are obtained by least-squares projection of ODE solutions
sampled on a Chebyshev grid of real rho.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import IO, Iterable

import numpy as np

from . import ode
from .bessel import spherical_j_all
from .graph_model import Edge
from .linalg import DEFAULT_SVD_THRESHOLD, tsvd_lstsq

FAMILIES = ("g", "s", "gamma", "sigma", "t")
# series family holding the coefficients for each evaluable function
_SERIES = {"phi": "g", "S": "s", "dphi": "gamma", "dS": "sigma", "T": "t"}


class NsbfError(ValueError):
    pass


@dataclass
class NsbfCoeffSet:
    """Coefficients of one edge at one or several locations x.

    Each family array has shape ``(len(x), N + 1)``.
    """

    edge: int
    N: int
    length: float
    x: np.ndarray
    g: np.ndarray | None = None
    s: np.ndarray | None = None
    gamma: np.ndarray | None = None
    sigma: np.ndarray | None = None
    t: np.ndarray | None = None
    q_integral: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def location(self) -> str:
        return "endpoint" if self.x.size == 1 and np.isclose(self.x[0], self.length) else "x-grid"

    def family(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        if arr is None:
            raise NsbfError(f"coefficient family {name!r} not present for edge {self.edge}")
        return arr

    @classmethod
    def endpoint(cls, edge: int, length: float, **families) -> "NsbfCoeffSet":
        """Endpoint set built from 1-D coefficient vectors."""
        arrs = {k: None if v is None else np.atleast_2d(np.asarray(v, dtype=float))
                for k, v in families.items()}
        sizes = {a.shape[1] for k, a in arrs.items() if a is not None and k in FAMILIES}
        if len(sizes) != 1:
            raise NsbfError("endpoint coefficient vectors must have equal length")
        N = sizes.pop() - 1
        return cls(edge, N, float(length), np.array([float(length)]), **arrs)

    def merge(self, other: "NsbfCoeffSet") -> "NsbfCoeffSet":
        if other.N != self.N or not np.array_equal(other.x, self.x):
            raise NsbfError("can only merge coefficient sets with equal N and locations")
        upd = {k: getattr(other, k) for k in FAMILIES + ("q_integral",) if getattr(other, k) is not None}
        return replace(self, **upd, diagnostics={**self.diagnostics, **other.diagnostics})


def signed_bessel(kmax: int, z) -> np.ndarray:
    """j_0..j_kmax at real or complex z, using parity for Re z < 0.

    j_k(-z) = (-1)^k j_k(z); evaluating at the mirrored argument keeps the
    square root inside j_k on its principal branch.
    """
    z = np.asarray(z, dtype=complex)
    neg = z.real < 0
    jz = spherical_j_all(kmax, np.where(neg, -z, z))
    if np.any(neg):
        sign = (-1.0) ** np.arange(kmax + 1)
        jz = np.where(neg[..., None], jz * sign, jz)
    return jz


def _even_basis(N, z):
    """Columns (-1)^n j_{2n}(z), n = 0..N."""
    j = signed_bessel(2 * N + 1, z)
    return j[..., 0::2][..., : N + 1] * (-1.0) ** np.arange(N + 1)


def _odd_basis(N, z):
    """Columns (-1)^n j_{2n+1}(z), n = 0..N."""
    j = signed_bessel(2 * N + 1, z)
    return j[..., 1::2][..., : N + 1] * (-1.0) ** np.arange(N + 1)


def _odd_over_rho(N, rho, x):
    """(-1)^n j_{2n+1}(rho x) / rho, finite at rho = 0."""
    rho = np.asarray(rho, dtype=complex)
    zero = rho == 0
    safe = np.where(zero, 1.0, rho)
    out = _odd_basis(N, safe * x) / safe[..., None]
    if np.any(zero):
        lim = np.zeros(N + 1)
        lim[0] = x / 3.0
        out = np.where(zero[..., None], lim, out)
    return out


def _sin_over_rho(rho, x):
    rho = np.asarray(rho, dtype=complex)
    safe = np.where(rho == 0, 1.0, rho)
    return np.where(rho == 0, x, np.sin(safe * x) / safe)


def _loc_index(coeffs: NsbfCoeffSet, x) -> int:
    if x is None:
        if coeffs.x.size != 1:
            raise NsbfError("x must be given for a multi-location coefficient set")
        return 0
    k = int(np.argmin(np.abs(coeffs.x - x)))
    if not np.isclose(coeffs.x[k], x, rtol=0, atol=1e-12 * max(1.0, coeffs.length)):
        raise NsbfError(f"no coefficients stored at x = {x}")
    return k


def eval_truncated(coeffs: NsbfCoeffSet, which: str, rho, x=None):
    """Evaluate a truncated series (phi, S, dphi, dS or T) at ``rho``."""
    if which not in _SERIES:
        raise NsbfError(f"unknown series {which!r}; expected one of {sorted(_SERIES)}")
    c = coeffs.family(_SERIES[which])[_loc_index(coeffs, x)]
    xv = float(coeffs.x[_loc_index(coeffs, x)])
    N = c.size - 1
    rho = np.asarray(rho, dtype=complex)
    if which == "phi":
        return np.cos(rho * xv) + _even_basis(N, rho * xv) @ c
    if which == "S":
        return _sin_over_rho(rho, xv) + _odd_over_rho(N, rho, xv) @ c
    if which == "T":
        d = xv - coeffs.length
        return _sin_over_rho(rho, d) + _odd_over_rho(N, rho, d) @ c
    if coeffs.q_integral is None:
        raise NsbfError("derivative series need the running potential integral")
    Q = coeffs.q_integral[_loc_index(coeffs, x)]
    if which == "dphi":
        return -rho * np.sin(rho * xv) + 0.5 * Q * np.cos(rho * xv) + _even_basis(N, rho * xv) @ c
    return np.cos(rho * xv) + 0.5 * Q * _sin_over_rho(rho, xv) + _odd_over_rho(N, rho, xv) @ c


def training_grid(N: int, rho_max: float = 100.0, rho_min: float = 0.1, count: int | None = None):
    """Chebyshev points on [rho_min, rho_max]; 4(N+1) of them by default."""
    n = 4 * (N + 1) if count is None else int(count)
    k = np.arange(n)
    t = np.cos((2 * k + 1) * np.pi / (2 * n))[::-1]
    return 0.5 * (rho_min + rho_max) + 0.5 * (rho_max - rho_min) * t


def fit_coefficients(edge: Edge, N: int, which: str, x, *, derivatives: bool = False,
                     rho_train=None, rho_max: float = 100.0,
                     threshold: float = DEFAULT_SVD_THRESHOLD, max_cond: float = 1e14) -> NsbfCoeffSet:
    """Project ODE solutions onto the truncated series at location(s) ``x``.

    ``which`` is "phi" (g, optionally gamma), "S" (s, optionally sigma) or
    "T" (t).
    """
    if which not in ("phi", "S", "T"):
        raise NsbfError(f"cannot fit family for {which!r}")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if which == "T":
        if np.any((xs < 0) | (xs >= edge.length)):
            raise NsbfError(f"T coefficients need x in [0, L) on edge {edge.index}")
    elif np.any((xs <= 0) | (xs > edge.length * (1 + 1e-12))):
        raise NsbfError(f"fit location must lie in (0, L] for edge {edge.index}")
    rho = training_grid(N, rho_max) if rho_train is None else np.asarray(rho_train, dtype=float)
    if rho.size < N + 1:
        raise NsbfError(f"training grid of {rho.size} points cannot determine {N + 1} coefficients")

    if which == "T":
        Y = ode.fundamental(edge, rho, xs, direction="backward")
        val, der = Y[..., 0, 1].real, Y[..., 1, 1].real
    elif which == "phi":
        Y = ode.fundamental(edge, rho, xs)
        val, der = Y[..., 0, 0].real, Y[..., 1, 0].real
    else:
        Y = ode.fundamental(edge, rho, xs)
        val, der = Y[..., 0, 1].real, Y[..., 1, 1].real
    Q = edge.q_integral(xs)

    out = {k: np.empty((xs.size, N + 1)) for k in
           (["g", "gamma"] if which == "phi" else ["s", "sigma"] if which == "S" else ["t"])}
    conds = []
    for m, xm in enumerate(xs):
        r = rho
        if which == "phi":
            z = r * xm
            A = _even_basis(N, z).real
            systems = {"g": val[:, m] - np.cos(z)}
            if derivatives:
                systems["gamma"] = der[:, m] + r * np.sin(z) - 0.5 * Q[m] * np.cos(z)
        elif which == "S":
            z = r * xm
            A = _odd_basis(N, z).real
            systems = {"s": r * val[:, m] - np.sin(z)}
            if derivatives:
                systems["sigma"] = r * der[:, m] - r * np.cos(z) - 0.5 * Q[m] * np.sin(z)
        else:
            z = r * (xm - edge.length)
            A = _odd_basis(N, z).real
            systems = {"t": r * val[:, m] - np.sin(z)}
        for name, rhs in systems.items():
            c, info = tsvd_lstsq(A, rhs, threshold)
            if info.cond > max_cond and info.rank < N + 1:
                raise NsbfError(
                    f"ill-conditioned NSBF fit on edge {edge.index} at x = {xm:.6g}: "
                    f"cond = {info.cond:.3g}, rank {info.rank}/{N + 1}")
            out[name][m] = c
            conds.append(info.cond)
    kept = {k: v for k, v in out.items() if k in ("g", "s", "t") or derivatives}
    return NsbfCoeffSet(edge.index, N, edge.length, xs, q_integral=Q,
                        diagnostics={"max_cond": float(max(conds))}, **kept)


def write_csv(sets: Iterable[NsbfCoeffSet], fh: IO[str]) -> None:
    """Write coefficient sets as rows (edge, family, n, x, value)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["edge", "family", "n", "x", "value"])
    for cs in sets:
        for fam in FAMILIES:
            arr = getattr(cs, fam)
            if arr is None:
                continue
            for m, xm in enumerate(cs.x):
                for n, v in enumerate(arr[m]):
                    w.writerow([cs.edge, fam, n, repr(float(xm)), repr(float(v))])


def read_csv(fh: IO[str], lengths: dict[int, float]) -> list[NsbfCoeffSet]:
    rows: dict[int, dict[str, dict[float, dict[int, float]]]] = {}
    for row in csv.DictReader(fh):
        e = int(row["edge"])
        rows.setdefault(e, {}).setdefault(row["family"], {}).setdefault(float(row["x"]), {})[
            int(row["n"])] = float(row["value"])
    out = []
    for e, fams in sorted(rows.items()):
        xs = sorted({x for f in fams.values() for x in f})
        N = max(n for f in fams.values() for d in f.values() for n in d)
        arrs = {}
        for fam, byx in fams.items():
            a = np.zeros((len(xs), N + 1))
            for m, xm in enumerate(xs):
                for n, v in byx.get(xm, {}).items():
                    a[m, n] = v
            arrs[fam] = a
        out.append(NsbfCoeffSet(e, N, lengths[e], np.array(xs), **arrs))
    return out
