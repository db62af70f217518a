"""Continuous macro-block scales.

GEO mode is data-free: with <b1, b2> = 0 the 2x2 normal equations
decouple into two scalar projections. REF mode solves a tiny ridge
regression per block against calibration activations, using the
closed-form 2x2 inverse. Activations enter REF unquantized; quantization
noise is deliberately kept out of the design matrix.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError

DEFAULT_LAMBDA = 1e-4
COND_LIMIT = 1e12


@dataclass(frozen=True)
class ScalePair:
    c1: float
    c2: float
    mode: str

    def __post_init__(self):
        if not (np.isfinite(self.c1) and np.isfinite(self.c2)):
            raise NumericError("scale solve produced non-finite coefficients")


@dataclass(frozen=True)
class RefDesign:
    """Per-block ridge design: columns of A are X b1 and X b2, Y is X w."""

    A: np.ndarray
    Y: np.ndarray
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if A.ndim != 2 or A.shape[1] != 2:
            raise DataError(f"A must be [n x 2], got {A.shape}")
        if Y.shape != (A.shape[0],):
            raise DataError("Y length must match A rows")
        if A.shape[0] < 1:
            raise DataError("REF design needs at least one calibration row")
        if not (np.isfinite(A).all() and np.isfinite(Y).all()):
            raise DataError("REF design contains NaN or infinite values")
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)


def _projection(w, basis):
    nsq = float((basis * basis).sum())
    if nsq == 0.0:
        return 0.0
    return float((w * basis).sum()) / nsq


def solve_geo(w_proc, b1, b2=None):
    """Decoupled scalar projections c_k = <w, b_k> / ||b_k||^2.

    Valid because b1 and b2 are exactly orthogonal; a zero basis gets
    coefficient 0.
    """
    w = np.asarray(w_proc, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64)
    c1 = _projection(w, b1)
    c2 = 0.0 if b2 is None else _projection(w, np.asarray(b2, dtype=np.float64))
    return ScalePair(c1, c2, "geo")


def solve_geo_batch(W, B1, B2=None):
    """Row-wise solve_geo over [M x n] stacks. Returns (c1, c2) arrays."""

    def proj(basis):
        nsq = (basis * basis).sum(axis=1)
        dot = (W * basis).sum(axis=1)
        return np.where(nsq > 0, dot / np.where(nsq > 0, nsq, 1.0), 0.0)

    c1 = proj(B1)
    c2 = np.zeros_like(c1) if B2 is None else proj(B2)
    return c1, c2


def _solve_2x2(a, b, d, e1, e2, lam):
    """Closed-form solve of [[a+lam, b], [b, d+lam]] c = (e1, e2)."""
    a = a + lam
    d = d + lam
    det = a * d - b * b
    c1 = (d * e1 - b * e2) / det
    c2 = (a * e2 - b * e1) / det
    return c1, c2, det


def cond_2x2(a, b, d, lam=0.0):
    """Condition number of the symmetric 2x2 system matrix."""
    a = a + lam
    d = d + lam
    tr = a + d
    det = a * d - b * b
    disc = max(tr * tr - 4.0 * det, 0.0)
    lo = (tr - np.sqrt(disc)) / 2.0
    hi = (tr + np.sqrt(disc)) / 2.0
    if lo <= 0.0:
        return np.inf
    return hi / lo


def solve_ref(design):
    """Ridge solve c = (A'A + lam I)^-1 A'Y via the explicit 2x2 inverse."""
    A, Y, lam = design.A, design.Y, design.lam
    a = float(A[:, 0] @ A[:, 0])
    b = float(A[:, 0] @ A[:, 1])
    d = float(A[:, 1] @ A[:, 1])
    e1 = float(A[:, 0] @ Y)
    e2 = float(A[:, 1] @ Y)
    if lam == 0.0 and cond_2x2(a, b, d) == np.inf:
        warnings.warn(
            "singular REF design with lambda=0; falling back to lambda=1e-4",
            RuntimeWarning,
            stacklevel=2,
        )
        lam = DEFAULT_LAMBDA
    c1, c2, _ = _solve_2x2(a, b, d, e1, e2, lam)
    return ScalePair(float(c1), float(c2), "ref")


def solve_ref_batch(G1, G2, Yb, lam, geo_c1, geo_c2, cond_limit=COND_LIMIT):
    """Vectorized per-column ridge solves.

    G1, G2, Yb: [n_cal x M] stacks of A-columns and targets for M blocks.
    Ill-conditioned blocks (cond > cond_limit) fall back to the supplied
    GEO coefficients. Returns (c1, c2, n_fallback).
    """
    a = (G1 * G1).sum(axis=0)
    b = (G1 * G2).sum(axis=0)
    d = (G2 * G2).sum(axis=0)
    e1 = (G1 * Yb).sum(axis=0)
    e2 = (G2 * Yb).sum(axis=0)
    tr = (a + lam) + (d + lam)
    det = (a + lam) * (d + lam) - b * b
    disc = np.maximum(tr * tr - 4.0 * det, 0.0)
    lo = (tr - np.sqrt(disc)) / 2.0
    hi = (tr + np.sqrt(disc)) / 2.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        cond = np.where(lo > 0, hi / np.maximum(lo, np.finfo(np.float64).tiny),
                        np.inf)
        c1 = ((d + lam) * e1 - b * e2) / det
        c2 = ((a + lam) * e2 - b * e1) / det
    bad = ~np.isfinite(c1) | ~np.isfinite(c2) | (cond > cond_limit)
    c1 = np.where(bad, geo_c1, c1)
    c2 = np.where(bad, geo_c2, c2)
    return c1, c2, int(bad.sum())


def reconstruction(b1, b2, scales):
    """The continuous reconstruction c1*b1 + c2*b2."""
    b1 = np.asarray(b1, dtype=np.float64)
    out = scales.c1 * b1
    if b2 is not None:
        out = out + scales.c2 * np.asarray(b2, dtype=np.float64)
    return out
