"""Channel-wise smoothing between activations and weights.

The smoothing vector shifts quantization difficulty from activations into
weight columns before projection: activations are divided by s_vec, the
weight matrix is multiplied column-wise, and the product X W is preserved
exactly. Data-free runs use the identity vector.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .validation import as_float_matrix, as_float_vector, check_same_length

STAT_KINDS = ("maxabs", "rms")


@dataclass(frozen=True)
class CalibStats:
    """Per-input-channel activation statistics.

    col_absmax is always recorded alongside the selected statistic so the
    activation scale can be derived in the smoothed space later; samples
    retains the raw calibration rows for the activation-refined solver.
    """

    a_stat: np.ndarray
    stat_kind: str
    n_samples: int
    x_absmax: float
    col_absmax: np.ndarray
    samples: np.ndarray | None = None

    @property
    def d_in(self):
        return len(self.a_stat)


@dataclass(frozen=True)
class SmoothingVector:
    s_vec: np.ndarray
    alpha: float

    def __post_init__(self):
        sv = np.asarray(self.s_vec, dtype=np.float64)
        if not (np.isfinite(sv).all() and (sv > 0).all()):
            raise DataError("s_vec must be positive and finite")
        object.__setattr__(self, "s_vec", sv)


def collect_stats(samples, kind="maxabs", keep_samples=True):
    """Aggregate per-column statistics over a sequence of [n x d_in] batches."""
    if kind not in STAT_KINDS:
        raise DataError(f"stat kind must be one of {STAT_KINDS}, got {kind!r}")
    batches = [as_float_matrix(s, name="calibration batch") for s in samples]
    if not batches:
        raise DataError("collect_stats needs at least one calibration batch")
    d_in = batches[0].shape[1]
    for b in batches:
        if b.shape[1] != d_in:
            raise DataError("calibration batches disagree on d_in")
    X = np.concatenate(batches, axis=0)
    col_absmax = np.abs(X).max(axis=0)
    if kind == "maxabs":
        a_stat = col_absmax.copy()
    else:
        a_stat = np.sqrt((X * X).mean(axis=0))
    return CalibStats(
        a_stat=a_stat,
        stat_kind=kind,
        n_samples=X.shape[0],
        x_absmax=float(col_absmax.max()),
        col_absmax=col_absmax,
        samples=X if keep_samples else None,
    )


def smoothing_vector(stats, w_max, alpha=0.5):
    """s_vec[j] = a_stat[j]^alpha / w_max[j]^(1-alpha).

    Channels with zero statistic or zero weight column get s_vec = 1 so
    dead channels pass through untouched.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha must be in [0, 1], got {alpha}")
    w_max = as_float_vector(w_max, name="w_max")
    if (w_max < 0).any():
        raise DataError("w_max must be non-negative")
    a_stat = as_float_vector(stats.a_stat, name="a_stat")
    check_same_length(a_stat, w_max, "a_stat", "w_max")
    degenerate = (a_stat == 0) | (w_max == 0)
    safe_a = np.where(degenerate, 1.0, a_stat)
    safe_w = np.where(degenerate, 1.0, w_max)
    s_vec = safe_a**alpha / safe_w ** (1.0 - alpha)
    s_vec[degenerate] = 1.0
    return SmoothingVector(s_vec, float(alpha))


def identity_smoothing(d_in, alpha=0.5):
    return SmoothingVector(np.ones(d_in), float(alpha))


def apply_smoothing(W, sv):
    """Column-scaled weights W_proc[i, j] = W[i, j] * s_vec[j]."""
    W = as_float_matrix(W, name="W")
    if W.shape[1] != len(sv.s_vec):
        raise DataError(
            f"W has {W.shape[1]} input channels but s_vec has {len(sv.s_vec)}"
        )
    return W * sv.s_vec[None, :]


def compensate_activations(X, sv):
    """The exact inverse on the activation side: X / s_vec."""
    X = as_float_matrix(X, name="X")
    if X.shape[1] != len(sv.s_vec):
        raise DataError(
            f"X has {X.shape[1]} channels but s_vec has {len(sv.s_vec)}"
        )
    return X / sv.s_vec[None, :]
