"""Small symmetric-matrix helpers shared by the fim, nkf, pcrb and sdp modules.

The matrices in this package mix physical units (rad, s, Hz, m, m/s and
link-coefficient amplitudes around 1e-7), so raw diagonals span twenty or more
orders of magnitude. Every inverse and factorization here is therefore done on
the Jacobi-equilibrated matrix ``D^-1/2 A D^-1/2`` and scaled back; relative
cutoffs and jitter refer to that unit-diagonal form.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg

PINV_CUTOFF = 1e-10


class NumericalError(RuntimeError):
    """A factorization failed even after jitter escalation."""

    def __init__(self, message: str, condition: float = float("nan")):
        super().__init__(message)
        self.condition = condition


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _scales(a: np.ndarray) -> np.ndarray:
    d = np.abs(np.diag(a)).astype(float)
    positive = d > 0
    s = np.ones_like(d)
    s[positive] = 1.0 / np.sqrt(d[positive])
    return s


def equilibrate(a: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with zero-diagonal rows left unscaled."""
    a = sym(np.asarray(a, dtype=float))
    s = _scales(a)
    return a * np.outer(s, s)


def singular_ratio(a: np.ndarray) -> float:
    """``sigma_min / sigma_max`` of the equilibrated matrix."""
    s = np.linalg.svd(equilibrate(a), compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def equilibrated_inverse(a: np.ndarray, cutoff: float = PINV_CUTOFF) -> tuple[np.ndarray, bool]:
    """Inverse of a symmetric PSD matrix, falling back to a pseudo-inverse.

    Returns ``(inverse, singular)``. Eigenvalues of the equilibrated matrix
    below ``cutoff * max_eig`` are dropped; ``singular`` reports whether any
    were (or whether a diagonal entry was exactly zero).
    """
    a = sym(np.asarray(a, dtype=float))
    n = a.shape[0]
    if n == 0:
        return a.copy(), False
    s = _scales(a)
    zero_diag = np.diag(a) <= 0
    scaled = a * np.outer(s, s)
    w, v = np.linalg.eigh(scaled)
    top = w.max() if w.size else 0.0
    if top <= 0:
        return np.zeros_like(a), True
    keep = w > cutoff * top
    inv_w = np.zeros_like(w)
    inv_w[keep] = 1.0 / w[keep]
    inv = (v * inv_w) @ v.T
    inv = inv * np.outer(s, s)
    inv[zero_diag, :] = 0.0
    inv[:, zero_diag] = 0.0
    return sym(inv), bool((~keep).any() or zero_diag.any())


def condition_number(a: np.ndarray) -> float:
    """Condition number of the equilibrated symmetric matrix."""
    a = sym(np.asarray(a, dtype=float))
    s = _scales(a)
    w = np.linalg.eigvalsh(a * np.outer(s, s))
    if w.min() <= 0:
        return float("inf")
    return float(w.max() / w.min())


def spd_cholesky(a: np.ndarray, jitter: float = 1e-12, attempts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor of the equilibrated matrix with jitter escalation.

    Returns ``(L, s)`` with ``diag(s) A diag(s) (+ jitter) = L L^T``. Jitter
    starts at ``jitter * trace`` of the equilibrated matrix and grows x10 up
    to ``attempts`` times before :class:`NumericalError` is raised.
    """
    a = sym(np.asarray(a, dtype=float))
    s = _scales(a)
    scaled = a * np.outer(s, s)
    eye = np.eye(a.shape[0])
    try:
        return linalg.cholesky(scaled, lower=True), s
    except linalg.LinAlgError:
        pass
    eps = jitter * np.trace(scaled)
    for _ in range(attempts):
        try:
            return linalg.cholesky(scaled + eps * eye, lower=True), s
        except linalg.LinAlgError:
            eps *= 10.0
    raise NumericalError("matrix is not positive definite after jitter escalation", condition_number(a))


def spd_solve(a: np.ndarray, b: np.ndarray, **kwargs) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A``."""
    chol, s = spd_cholesky(a, **kwargs)
    b = np.asarray(b, dtype=float)
    rhs = b * (s[:, None] if b.ndim == 2 else s)
    y = linalg.cho_solve((chol, True), rhs)
    return y * (s[:, None] if b.ndim == 2 else s)


def psd_factor(a: np.ndarray) -> np.ndarray:
    """Symmetric square-root factor ``F`` with ``F F^T = A`` (negative eigenvalues clipped)."""
    a = sym(np.asarray(a, dtype=float))
    s = _scales(a)
    w, v = np.linalg.eigh(a * np.outer(s, s))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) / s[:, None]


def min_eig_ratio(a: np.ndarray) -> float:
    """Smallest eigenvalue divided by the trace (0 for a zero matrix)."""
    a = 0.5 * (a + a.conj().T)
    tr = np.trace(a).real
    if tr == 0:
        return 0.0
    return float(np.linalg.eigvalsh(a).min() / tr)
