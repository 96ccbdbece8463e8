"""Dense least-squares and pseudo-inverse kernels with explicit rank truncation.

All solvers work in float64. Singular values (or eigenvalues for the
symmetric positive semidefinite path) below ``rcond`` times the largest one
are treated as zero, which yields the minimum-norm solution of the truncated
problem.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptySystemError,
    NonFiniteError,
    NotPositiveSemidefiniteError,
    NotSymmetricError,
    PrecisionError,
)

DEFAULT_RCOND = 1e-6
SYMMETRY_TOL = 1e-8
PSD_TOL = 1e-10

METHODS = ("svd_truncated", "normal_equations")


@dataclass(frozen=True)
class LstsqOptions:
    rcond: float = DEFAULT_RCOND
    method: str = "svd_truncated"

    def __post_init__(self):
        if not (0.0 < self.rcond < 1.0):
            raise ValueError(f"rcond must lie in (0, 1), got {self.rcond}")
        if self.method not in METHODS:
            raise ValueError(f"unknown lstsq method {self.method!r}")


def _as_f64(x, name):
    arr = np.asarray(x)
    if arr.dtype.kind == "f" and arr.dtype.itemsize < 8:
        raise PrecisionError(f"{name} has dtype {arr.dtype}; float64 is required")
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def _check_system(A, b):
    A = _as_f64(A, "A")
    b = _as_f64(b, "b")
    if A.ndim != 2:
        raise ValueError(f"A must be 2-D, got shape {A.shape}")
    if A.shape[0] == 0 or A.shape[1] == 0:
        raise EmptySystemError(f"empty system of shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"b has {b.shape[0]} rows, A has {A.shape[0]}")
    return A, b


@dataclass(frozen=True)
class TruncatedSVD:
    """Thin SVD of a matrix with the singular triplets below the cutoff dropped.

    Keeping the factorization around lets callers apply the pseudo-inverse to
    many right-hand sides at the cost of two matrix-vector products each.
    """

    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray
    rank: int
    sigma_max: float

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        coef = self.U.T @ b
        if coef.ndim == 1:
            coef = coef / self.s
        else:
            coef = coef / self.s[:, None]
        return self.Vt.T @ coef


def truncated_svd(A, rcond: float = DEFAULT_RCOND) -> TruncatedSVD:
    A = _as_f64(A, "A")
    if A.ndim != 2 or 0 in A.shape:
        raise EmptySystemError(f"empty system of shape {A.shape}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    sigma_max = float(s[0]) if s.size else 0.0
    keep = s > rcond * sigma_max if sigma_max > 0 else np.zeros_like(s, dtype=bool)
    r = int(np.count_nonzero(keep))
    return TruncatedSVD(U[:, :r], s[:r], Vt[:r], r, sigma_max)


def lstsq_svd(A, b, opts: LstsqOptions | None = None) -> np.ndarray:
    """Minimum-norm least-squares solution of ``A x = b``.

    Parameters
    ----------
    A : array_like, shape (n, l)
    b : array_like, shape (n,) or (n, k)
    opts : LstsqOptions
        ``rcond`` is the relative singular-value cutoff. With
        ``method="normal_equations"`` the system ``A^T A x = A^T b`` is solved
        through :func:`solve_psd` instead (squares the condition number).

    Returns
    -------
    x : ndarray, shape (l,) or (l, k)
    """
    opts = opts or LstsqOptions()
    A, b = _check_system(A, b)
    if opts.method == "normal_equations":
        return solve_psd(A.T @ A, A.T @ b, opts)
    return truncated_svd(A, opts.rcond).solve(b)


def _symmetrized(G, name="G"):
    G = _as_f64(G, name)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"{name} must be square, got shape {G.shape}")
    if G.shape[0] == 0:
        raise EmptySystemError(f"{name} is empty")
    scale = np.max(np.abs(G))
    asym = np.max(np.abs(G - G.T))
    if asym > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
        raise NotSymmetricError(f"{name} asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:g} relative")
    return 0.5 * (G + G.T)


def psd_pinv_factors(G, rcond: float = DEFAULT_RCOND):
    """Eigen-factors ``(Q, lam)`` of the truncated pseudo-inverse of a PSD matrix."""
    G = _symmetrized(G)
    lam, Q = np.linalg.eigh(G)
    lam_max = float(lam[-1])
    if lam_max <= 0.0:
        return Q[:, :0], lam[:0]
    if lam[0] < -PSD_TOL * lam_max:
        raise NotPositiveSemidefiniteError(
            f"smallest eigenvalue {lam[0]:.3e} is below -{PSD_TOL:g} * lambda_max"
        )
    keep = lam > rcond * lam_max
    return Q[:, keep], lam[keep]


def solve_psd(G, p, opts: LstsqOptions | None = None) -> np.ndarray:
    """Return ``G^+ p`` for a symmetric positive semidefinite ``G``.

    ``G`` is symmetrized before factorization; eigenvalues below
    ``rcond * lambda_max`` are dropped.
    """
    opts = opts or LstsqOptions()
    p = _as_f64(p, "p")
    Q, lam = psd_pinv_factors(G, opts.rcond)
    if p.shape[0] != Q.shape[0]:
        raise ValueError(f"p has {p.shape[0]} rows, G is {Q.shape[0]}x{Q.shape[0]}")
    coef = Q.T @ p
    coef = coef / lam if coef.ndim == 1 else coef / lam[:, None]
    return Q @ coef


def generalized_halfstep(G, A, s, opts: LstsqOptions | None = None) -> np.ndarray:
    """Return ``[G + A/2]^+ [G - A/2] s``.

    This is one step of the implicit trapezoidal rule in a Galerkin basis with
    mass matrix ``G`` and stiffness matrix ``A`` (the step size is expected to
    be folded into ``A``).
    """
    G = _symmetrized(G, "G")
    A = _symmetrized(A, "A")
    s = _as_f64(s, "s")
    return solve_psd(G + 0.5 * A, (G - 0.5 * A) @ s, opts)
