"""Bit-exact integer inference.

The contraction over d_in uses only shifts and adds: every nonzero weight
is +-2^e after integerization, so each macro-block partial sum is built by
masked accumulation per exponent followed by one left shift. The single
integer multiply per (row, macro-block, basis) applies the quantized block
scale to the finished partial sum, and floats appear only in the final
global scaling. Counters account for the datapath operations; an optional
audit re-computes every partial sum with plain integer multiplies and
demands exact equality.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError
from .lattice import round_half_away
from .quantizer import dequantize, macro_spans
from .validation import as_float_matrix

DEFAULT_ACC_BITS = 32


@dataclass(frozen=True)
class QuantizedActivations:
    x_int: np.ndarray
    s_x: float
    b_a: int


@dataclass
class OpCounters:
    shifts: int = 0
    adds: int = 0
    int_muls: int = 0
    skipped_zeros: int = 0

    def merge(self, other):
        self.shifts += other.shifts
        self.adds += other.adds
        self.int_muls += other.int_muls
        self.skipped_zeros += other.skipped_zeros
        return self


def quantize_activations(X, s_vec=None, b_a=8, source="dynamic", stats=None):
    """Compensate by s_vec, then symmetric per-tensor integer quantization.

    source "dynamic" derives the scale from this batch; "calib" derives it
    from recorded calibration statistics mapped into the compensated space.
    An all-zero input quantizes to zeros with s_x = 1.
    """
    if b_a not in (4, 6, 8, 16):
        raise DataError(f"bits_act must be one of (4, 6, 8, 16), got {b_a}")
    X = as_float_matrix(X, name="X")
    if s_vec is None:
        s_vec = np.ones(X.shape[1])
    s_vec = np.asarray(s_vec, dtype=np.float64)
    if X.shape[1] != len(s_vec):
        raise DataError("X and s_vec disagree on d_in")
    X_comp = X / s_vec[None, :]
    qmax = 2 ** (b_a - 1) - 1
    if source == "calib":
        if stats is None:
            raise DataError("calib scale source requires CalibStats")
        peak = float((stats.col_absmax / s_vec).max())
    elif source == "dynamic":
        peak = float(np.abs(X_comp).max())
    else:
        raise DataError(f"unknown scale source {source!r}")
    if peak == 0.0:
        return QuantizedActivations(
            np.zeros(X.shape, dtype=np.int32), 1.0, b_a
        )
    s_x = peak / qmax
    x_int = np.clip(round_half_away(X_comp / s_x), -qmax, qmax).astype(np.int32)
    return QuantizedActivations(x_int, float(s_x), b_a)


def check_accumulator(cfg, d_in, acc_bits=DEFAULT_ACC_BITS):
    """Worst-case overflow analysis, in exact integer arithmetic.

    Stage 1: one macro-block partial sum before diagonal scaling must fit
    the signed accumulator. Stage 2: the diagonal-scaled running total
    across all macro-blocks must fit 64 bits.
    """
    spec = cfg.lattice
    qmax_x = 2 ** (cfg.bits_act - 1) - 1
    lam = int(spec.lambda_factor)
    width = min(cfg.macro, d_in)
    stage1 = qmax_x * lam * width
    if stage1 > 2 ** (acc_bits - 1) - 1:
        raise NumericError(
            f"macro-block partial sum can reach {stage1}, exceeding the "
            f"{acc_bits}-bit signed accumulator; reduce bits_act, macro, "
            "or the lattice width"
        )
    qmax_c = 2 ** (cfg.bits_scale - 1) - 1
    n_mac = len(macro_spans(d_in, cfg.macro))
    stage2 = stage1 * qmax_c * n_mac * cfg.k
    if stage2 > 2**63 - 1:
        raise NumericError(
            f"diag-scaled total can reach {stage2}, exceeding 64 bits"
        )
    return stage1, stage2


def _pot_exponents(spec):
    mags = np.unique(np.abs(spec.int_values[spec.int_values != 0]))
    return [int(m).bit_length() - 1 for m in mags]


def _accumulate_block(Xb, sub, exponents, counters, n_rows):
    """Shift-add partial sums for one (macro-block, basis) pass.

    sub is the integerized weight slab [d_out, width]; each exponent's
    columns are folded in by +-1 masked accumulation, then shifted.
    """
    partial = np.zeros((Xb.shape[0], sub.shape[0]), dtype=np.int32)
    for e in exponents:
        mask = np.sign(sub).astype(np.int32) * (np.abs(sub) == (1 << e))
        if not mask.any():
            continue
        contrib = Xb @ mask.T.astype(np.int32)
        partial += np.left_shift(contrib, e)
    nnz = int((sub != 0).sum())
    counters.shifts += n_rows * nnz
    counters.adds += n_rows * nnz
    counters.skipped_zeros += n_rows * (sub.size - nnz)
    return partial


def shiftadd_gemm(qa, qt, counters=None, acc_bits=DEFAULT_ACC_BITS, audit=True):
    """Y_hat = (s_x s_c1 / L) (X B1') diag(ct1) + (s_x s_c2 / L) (X B2') diag(ct2).

    All contraction arithmetic is integer; audit=True re-derives every
    macro-block partial sum with 64-bit integer multiplies and requires
    exact equality.
    """
    cfg = qt.config
    if cfg.topology != "pot":
        raise DataError("the shift kernel requires a pot lattice")
    x_int = np.asarray(qa.x_int)
    if x_int.ndim != 2 or x_int.shape[1] != qt.d_in:
        raise DataError(
            f"activations have d_in={x_int.shape[-1]}, weights {qt.d_in}"
        )
    check_accumulator(cfg, qt.d_in, acc_bits=acc_bits)
    if counters is None:
        counters = OpCounters()
    spec = cfg.lattice
    exponents = _pot_exponents(spec)
    n = x_int.shape[0]

    passes = [(qt.b1_ints(), qt.ct1, float(qt.s_c1))]
    if cfg.k == 2:
        passes.append((qt.b2_ints(), qt.ct2, float(qt.s_c2)))

    out = np.zeros((n, qt.d_out))
    for B, ct, s_c in passes:
        total = np.zeros((n, qt.d_out), dtype=np.int64)
        for m, (a, b) in enumerate(macro_spans(qt.d_in, cfg.macro)):
            Xb = x_int[:, a:b].astype(np.int32)
            sub = B[:, a:b]
            partial = _accumulate_block(Xb, sub, exponents, counters, n)
            if audit:
                ref = Xb.astype(np.int64) @ sub.astype(np.int64).T
                if not np.array_equal(partial.astype(np.int64), ref):
                    raise NumericError(
                        "shift-add accumulation diverged from the integer "
                        "multiply reference"
                    )
            scaled = partial.astype(np.int64) * ct[:, m].astype(np.int64)[None, :]
            total += scaled
            counters.int_muls += n * qt.d_out
            counters.adds += n * qt.d_out
        out += total.astype(np.float64) * (qa.s_x * s_c / spec.lambda_factor)
    return out


def reference_gemm(X, weights):
    """Plain float matmul against original or dequantized weights."""
    X = as_float_matrix(X, name="X")
    W = weights if isinstance(weights, np.ndarray) else dequantize(weights)
    if X.shape[1] != W.shape[1]:
        raise DataError("X and weights disagree on d_in")
    return X @ W.T


def report_counters(counters, n_rows, d_out, d_in, cfg):
    """Derived ratios for the multiplier-free accounting claim."""
    n_out = n_rows * d_out
    n_mac = len(macro_spans(d_in, cfg.macro))
    per_out = counters.int_muls / n_out if n_out else 0.0
    return {
        "shifts": counters.shifts,
        "adds": counters.adds,
        "int_muls": counters.int_muls,
        "skipped_zeros": counters.skipped_zeros,
        "int_muls_per_output": per_out,
        "expected_int_muls_per_output": cfg.k * n_mac,
        "mac_baseline_per_output": d_in,
        "mul_reduction_ratio": d_in / per_out if per_out else float("inf"),
    }
