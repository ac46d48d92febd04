"""Truncated-SVD least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_SVD_THRESHOLD = 1e-10


@dataclass
class LstsqInfo:
    rank: int
    n_unknowns: int
    cond: float
    residual: float
    rel_residual: float


def tsvd_lstsq(A, b, threshold: float = DEFAULT_SVD_THRESHOLD, scale_columns: bool = False):
    """Solve min ||A x - b|| keeping singular values above ``threshold * s_max``.

    With ``scale_columns`` the columns are normalised first so that the
    threshold acts on the shape of the system rather than on column norms.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    if scale_columns:
        norms = np.linalg.norm(A, axis=0)
        norms[norms == 0] = 1.0
        As = A / norms
    else:
        norms = None
        As = A
    U, s, Vh = np.linalg.svd(As, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        x = np.zeros(A.shape[1], dtype=np.result_type(A, b))
        return x, LstsqInfo(0, A.shape[1], np.inf, float(np.linalg.norm(b)), 1.0)
    keep = s > threshold * s[0]
    rank = int(keep.sum())
    coef = (U[:, keep].conj().T @ b) / s[keep]
    x = Vh[keep].conj().T @ coef
    if norms is not None:
        x = x / norms
    r = float(np.linalg.norm(A @ x - b))
    bn = float(np.linalg.norm(b))
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    return x, LstsqInfo(rank, A.shape[1], cond, r, r / bn if bn > 0 else r)
