"""Weyl matrix of a star graph and synthetic Weyl data.

Row i of M(rho^2) solves A(rho) m_i = r_i where A has the bidiagonal
continuity rows S_j(L_j), -S_{j+1}(L_{j+1}) and a final Kirchhoff row of
S_j'(L_j); the right-hand side carries phi_i(L_i) and phi_i'(L_i).
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np
import scipy.linalg

from . import ode
from .graph_model import SpectralSamplingPlan, StarGraph, sample_rho, succ

log = logging.getLogger(__name__)

NEAR_SPECTRUM_COND = 1e12
RESIDUAL_TOL = 1e-8
CSV_HEADER = ["k", "re_rho", "im_rho", "i", "j", "re_m", "im_m"]


class NearSpectrumError(ArithmeticError):
    def __init__(self, rho, cond):
        super().__init__(f"rho = {rho:.6g}: A(rho) numerically singular (cond = {cond:.3g}); "
                         "rho^2 is too close to a graph eigenvalue")
        self.rho = rho
        self.cond = cond


class DirectError(ValueError):
    pass


@dataclass(eq=False)
class WeylSample:
    """Weyl matrix (or a subset of its entries) at one spectral point.

    ``mask[i-1, j-1]`` says whether entry (i, j) was measured; unmeasured
    entries hold NaN and are refused by :meth:`entry`.
    """

    rho: complex
    entries: np.ndarray
    mask: np.ndarray
    cond: float = float("nan")
    residual: float = float("nan")

    def __post_init__(self):
        if not complex(self.rho).imag > 0:
            raise DirectError(f"Weyl sample needs Im rho > 0, got {self.rho}")
        self.entries = np.where(self.mask, self.entries, np.nan + 0j)

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    def has(self, i: int, j: int) -> bool:
        return bool(self.mask[i - 1, j - 1])

    def entry(self, i: int, j: int) -> complex:
        if not self.mask[i - 1, j - 1]:
            raise KeyError(f"Weyl entry ({i}, {j}) not present at rho = {self.rho}")
        return complex(self.entries[i - 1, j - 1])


def diag_plus_successor_mask(M: int) -> np.ndarray:
    mask = np.eye(M, dtype=bool)
    for i in range(1, M + 1):
        mask[i - 1, succ(i, M) - 1] = True
    return mask


def make_mask(M: int, policy: str) -> np.ndarray:
    if policy == "full":
        return np.ones((M, M), dtype=bool)
    if policy == "diag-plus-successor":
        return diag_plus_successor_mask(M)
    raise DirectError(f"unknown mask policy {policy!r}")


# --- endpoint values ------------------------------------------------------


def endpoint_table(graph: StarGraph, rho, source: str = "ode", nsbf_sets=None, threads: int = 1,
                   **ode_kw):
    """Arrays (M, len(rho)) of phi, phi', S, S' at the central vertex.

    ``source="nsbf"`` evaluates truncated series from ``nsbf_sets`` (one
    endpoint :class:`~starweyl.nsbf.NsbfCoeffSet` per edge carrying g, s,
    gamma, sigma) instead of integrating.  With ``threads > 1`` the edges
    are integrated concurrently; the result does not depend on it.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=complex))
    out = np.empty((4, graph.M, rho.size), dtype=complex)
    if source == "ode":
        def one(e):
            out[:, e.index - 1] = ode.endpoint_values(e, rho, **ode_kw)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(one, graph.edges))
        else:
            for e in graph.edges:
                one(e)
    elif source == "nsbf":
        from .nsbf import eval_truncated
        if nsbf_sets is None:
            raise DirectError("source='nsbf' needs coefficient sets")
        for e, cs in zip(graph.edges, nsbf_sets):
            out[0, e.index - 1] = eval_truncated(cs, "phi", rho)
            out[1, e.index - 1] = eval_truncated(cs, "dphi", rho)
            out[2, e.index - 1] = eval_truncated(cs, "S", rho)
            out[3, e.index - 1] = eval_truncated(cs, "dS", rho)
    else:
        raise DirectError(f"unknown endpoint source {source!r}")
    return out


def _A_from(S_, dS):
    M = S_.size
    A = np.zeros((M, M), dtype=complex)
    for j in range(M - 1):
        A[j, j] = S_[j]
        A[j, j + 1] = -S_[j + 1]
    A[M - 1] = dS
    return A


def _rhs_from(i, M, phi_i, dphi_i):
    r = np.zeros(M, dtype=complex)
    if i >= 2:
        r[i - 2] = phi_i
    if i <= M - 1:
        r[i - 1] = -phi_i
    r[M - 1] = -dphi_i
    return r


def assemble_A(graph: StarGraph, rho: complex, **kw) -> np.ndarray:
    """The matrix A(rho) shared by all row systems."""
    tab = endpoint_table(graph, [rho], **kw)
    return _A_from(tab[2, :, 0], tab[3, :, 0])


def _solve_all_rows(tab, rho, near_cond=NEAR_SPECTRUM_COND):
    """Full Weyl matrix from endpoint values of one rho; returns (W, cond, residual)."""
    phi_, dphi, S_, dS = tab
    M = S_.size
    A = _A_from(S_, dS)
    R = np.column_stack([_rhs_from(i, M, phi_[i - 1], dphi[i - 1]) for i in range(1, M + 1)])
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > near_cond:
        raise NearSpectrumError(rho, cond)
    lu = scipy.linalg.lu_factor(A)
    X = scipy.linalg.lu_solve(lu, R)
    res = np.linalg.norm(A @ X - R, axis=0) / np.maximum(np.linalg.norm(R, axis=0), 1e-300)
    return X.T.copy(), cond, float(res.max())


def weyl_matrix(graph: StarGraph, rho: complex, near_cond=NEAR_SPECTRUM_COND, **kw) -> np.ndarray:
    rho = complex(rho)
    if abs((rho * rho).imag) <= 1e-12:
        raise DirectError(f"rho^2 = {rho * rho} is real; the Weyl matrix needs rho^2 off the real axis")
    tab = endpoint_table(graph, [rho], **kw)[..., 0]
    W, _, _ = _solve_all_rows(tab, rho, near_cond)
    return W


def weyl_row(graph: StarGraph, i: int, rho: complex, near_cond=NEAR_SPECTRUM_COND, **kw) -> np.ndarray:
    """Row (M_i1, ..., M_iM) of the Weyl matrix."""
    if not 1 <= i <= graph.M:
        raise DirectError(f"edge index {i} outside 1..{graph.M}")
    rho = complex(rho)
    if abs((rho * rho).imag) <= 1e-12:
        raise DirectError(f"rho^2 = {rho * rho} is real")
    tab = endpoint_table(graph, [rho], **kw)[..., 0]
    phi_, dphi, S_, dS = tab
    A = _A_from(S_, dS)
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > near_cond:
        raise NearSpectrumError(rho, cond)
    return np.linalg.solve(A, _rhs_from(i, graph.M, phi_[i - 1], dphi[i - 1]))


def defining_residuals(graph: StarGraph, W: np.ndarray, rho: complex, **kw):
    """Max residuals of the continuity and Kirchhoff identities for each row."""
    phi_, dphi, S_, dS = endpoint_table(graph, [rho], **kw)[..., 0]
    M = graph.M
    cont = np.zeros(M)
    kirch = np.zeros(M)
    for i in range(1, M + 1):
        row = W[i - 1]
        vals = row * S_
        vals[i - 1] += phi_[i - 1]
        scale = max(np.abs(vals).max(), 1e-300)
        cont[i - 1] = np.abs(vals - vals[i - 1]).max() / scale
        kn = dphi[i - 1] + np.sum(row * dS)
        kirch[i - 1] = abs(kn) / max(abs(dphi[i - 1]) + np.abs(row * dS).sum(), 1e-300)
    return cont, kirch


def synthesize_weyl_data(graph: StarGraph, plan: SpectralSamplingPlan | Sequence[complex],
                         mask_policy: str = "diag-plus-successor", near_cond=NEAR_SPECTRUM_COND,
                         threads: int = 1, **kw) -> list[WeylSample]:
    """Weyl samples at every rho of ``plan``; near-spectrum points are dropped."""
    rho = sample_rho(plan) if isinstance(plan, SpectralSamplingPlan) else np.asarray(plan, dtype=complex)
    mask = make_mask(graph.M, mask_policy)
    tab = endpoint_table(graph, rho, threads=threads, **kw)
    samples = []
    for k, r in enumerate(rho):
        try:
            W, cond, res = _solve_all_rows(tab[..., k], r, near_cond)
        except NearSpectrumError as exc:
            log.warning("dropping sample k=%d: %s", k + 1, exc)
            continue
        if res > RESIDUAL_TOL:
            log.warning("sample k=%d: linear-system residual %.2e above %.0e", k + 1, res, RESIDUAL_TOL)
        samples.append(WeylSample(complex(r), W, mask.copy(), cond, res))
    return samples


def zero_potential_weyl(lengths, rho) -> np.ndarray:
    """Closed-form Weyl matrix for q = 0 on every edge.

    With c = 1 / (sin(rho L_i) sum_j cot(rho L_j)) the common vertex value
    of row i, M_ij = rho c / sin(rho L_j) for j != i and
    M_ii = rho (c - cos(rho L_i)) / sin(rho L_i).
    """
    L = np.asarray(lengths, dtype=float)
    rho = complex(rho)
    sn = np.sin(rho * L)
    cs = np.cos(rho * L)
    c = 1.0 / (sn * np.sum(cs / sn))
    W = rho * c[:, None] / sn[None, :]
    np.fill_diagonal(W, rho * (c - cs) / sn)
    return W


# --- CSV interchange --------------------------------------------------------


def write_csv(samples: Iterable[WeylSample], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k, s in enumerate(samples, start=1):
        r = complex(s.rho)
        for i, j in zip(*np.nonzero(s.mask)):
            v = complex(s.entries[i, j])
            w.writerow([k, repr(r.real), repr(r.imag), i + 1, j + 1, repr(v.real), repr(v.imag)])


def read_csv(fh: IO[str], M: int | None = None) -> list[WeylSample]:
    reader = csv.DictReader(fh)
    missing = set(CSV_HEADER) - set(reader.fieldnames or [])
    if missing:
        raise DirectError(f"Weyl CSV lacks columns {sorted(missing)}")
    by_k: dict[int, tuple[complex, list]] = {}
    maxij = 0
    for lineno, row in enumerate(reader, start=2):
        try:
            k = int(row["k"])
            rho = complex(float(row["re_rho"]), float(row["im_rho"]))
            i, j = int(row["i"]), int(row["j"])
            v = complex(float(row["re_m"]), float(row["im_m"]))
        except (TypeError, ValueError) as exc:
            raise DirectError(f"Weyl CSV line {lineno}: {exc}") from None
        if k in by_k and by_k[k][0] != rho:
            raise DirectError(f"Weyl CSV line {lineno}: inconsistent rho for k = {k}")
        by_k.setdefault(k, (rho, []))[1].append((i, j, v))
        maxij = max(maxij, i, j)
    M = maxij if M is None else M
    out = []
    for k in sorted(by_k):
        rho, items = by_k[k]
        W = np.full((M, M), np.nan + 0j)
        mask = np.zeros((M, M), dtype=bool)
        for i, j, v in items:
            if not (1 <= i <= M and 1 <= j <= M):
                raise DirectError(f"Weyl CSV: index ({i}, {j}) outside 1..{M}")
            W[i - 1, j - 1] = v
            mask[i - 1, j - 1] = True
        out.append(WeylSample(rho, W, mask))
    return out
