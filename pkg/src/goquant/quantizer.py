"""Per-tensor pipeline orchestration.

precondition -> per-row normalization -> macro/micro blocking -> primary
projection -> orthogonal residual -> strided dual-exchange secondary basis
-> continuous scale solve -> symmetric integer quantization of the scales.

The normalization scalar s_norm only steers the nearest-lattice projection
into [-1, 1]; the continuous block scales absorb it, so reconstruction
never multiplies by s_norm again.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import geometry, solver
from .errors import DataError
from .lattice import get_lattice, round_half_away
from .precondition import (
    apply_smoothing,
    compensate_activations,
    identity_smoothing,
    smoothing_vector,
)
from .validation import as_float_matrix, check_in_choices

TOPOLOGIES = ("pot", "linear")
MODES = ("geo", "ref")
NORM_SCOPES = ("channel", "macroblock")
ACT_BITS = (4, 6, 8, 16)
REF_MAX_CALIB_ROWS = 512


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 3
    topology: str = "pot"
    mode: str = "geo"
    k: int = 2
    macro: int = 128
    micro: int = 32
    alpha: float = 0.5
    lam: float = 1e-4
    bits_scale: int = 8
    bits_act: int = 8
    norm_scope: str = "channel"

    def __post_init__(self):
        check_in_choices(self.bits, {3, 4}, "bits")
        check_in_choices(self.topology, set(TOPOLOGIES), "topology")
        check_in_choices(self.mode, set(MODES), "mode")
        check_in_choices(self.k, {1, 2}, "k")
        check_in_choices(self.bits_act, set(ACT_BITS), "bits_act")
        check_in_choices(self.norm_scope, set(NORM_SCOPES), "norm_scope")
        if not 2 <= self.micro <= 32:
            raise DataError(f"micro must be in [2, 32], got {self.micro}")
        if self.macro < self.micro or self.macro % self.micro != 0:
            raise DataError(
                f"micro {self.micro} must divide macro {self.macro}"
            )
        if not 2 <= self.bits_scale <= 8:
            raise DataError(f"bits_scale must be in [2, 8], got {self.bits_scale}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        # f32 normalization keeps serialization roundtrips bit-exact.
        object.__setattr__(self, "alpha", float(np.float32(self.alpha)))
        object.__setattr__(self, "lam", float(np.float32(self.lam)))

    @property
    def lattice(self):
        return get_lattice(self.topology, self.bits)


def macro_spans(d_in, N):
    return [(a, min(a + N, d_in)) for a in range(0, d_in, N)]


def micro_layout(d_in, N, G):
    """Micro-block widths per macro span, flattened in serialization order."""
    widths = []
    for a, b in macro_spans(d_in, N):
        widths.extend(gb - ga for ga, gb in geometry.micro_slices(b - a, G))
    return widths


@dataclass
class QuantizedTensor:
    d_out: int
    d_in: int
    config: QuantConfig
    s_norm: np.ndarray           # f32, [d_out] or [d_out, n_macro]
    s_vec: np.ndarray            # f32, [d_in]
    b1_codes: np.ndarray         # u8, [d_out, d_in]
    strides: np.ndarray | None   # u8, [d_out, n_micro]; None for K=1
    sign_bits: np.ndarray | None  # u8 0/1, [d_out, n_micro, micro//2]
    ct1: np.ndarray              # i8, [d_out, n_macro]
    ct2: np.ndarray              # i8, [d_out, n_macro]
    s_c1: float
    s_c2: float
    ref_fallbacks: int = 0

    @property
    def n_macro(self):
        return len(macro_spans(self.d_in, self.config.macro))

    @property
    def n_micro(self):
        return len(micro_layout(self.d_in, self.config.macro, self.config.micro))

    def b1_values(self):
        return self.config.lattice.values[self.b1_codes]

    def b1_ints(self):
        return self.config.lattice.int_values[self.b1_codes].astype(np.int32)

    def _b2_like(self, b1):
        if self.config.k == 1:
            return np.zeros_like(b1)
        G = self.config.micro
        out = np.zeros_like(b1)
        mi = 0
        for a, b in macro_spans(self.d_in, self.config.macro):
            for ga, gb in geometry.micro_slices(b - a, G):
                out[:, a + ga:a + gb] = geometry.apply_exchange_batch(
                    b1[:, a + ga:a + gb],
                    self.strides[:, mi],
                    self.sign_bits[:, mi, :],
                )
                mi += 1
        return out

    def b2_values(self):
        return self._b2_like(self.b1_values())

    def b2_ints(self):
        return self._b2_like(self.b1_ints())


def _norm_slab(W_proc, spans, scope):
    """Normalization scalars per row (channel scope) or per row x macro."""
    if scope == "channel":
        s = np.abs(W_proc).max(axis=1)
        s[s == 0] = 1.0
        return s.astype(np.float32)
    cols = [np.abs(W_proc[:, a:b]).max(axis=1) for a, b in spans]
    s = np.stack(cols, axis=1)
    s[s == 0] = 1.0
    return s.astype(np.float32)


def quantize_tensor(W, stats=None, cfg=QuantConfig()):
    """Run the full pipeline on one weight matrix."""
    W = as_float_matrix(W, name="W")
    d_out, d_in = W.shape
    if cfg.mode == "ref":
        if stats is None or stats.samples is None:
            raise DataError("ref mode requires calibration stats with raw samples")
        if stats.samples.shape[1] != d_in:
            raise DataError("calibration d_in does not match weights")

    if stats is not None:
        w_max = np.abs(W).max(axis=0)
        sv = smoothing_vector(stats, w_max, cfg.alpha)
    else:
        sv = identity_smoothing(d_in, cfg.alpha)
    s_vec32 = sv.s_vec.astype(np.float32)
    W_proc = W * s_vec32.astype(np.float64)[None, :]

    spec = cfg.lattice
    spans = macro_spans(d_in, cfg.macro)
    n_mac = len(spans)
    s_norm = _norm_slab(W_proc, spans, cfg.norm_scope)

    X_cal = None
    if cfg.mode == "ref":
        X_cal = compensate_activations(stats.samples, sv)
        n = X_cal.shape[0]
        if n > REF_MAX_CALIB_ROWS:
            idx = (np.arange(REF_MAX_CALIB_ROWS) * n) // REF_MAX_CALIB_ROWS
            X_cal = X_cal[idx]

    G = cfg.micro
    codes = np.empty((d_out, d_in), dtype=np.uint8)
    n_micro = len(micro_layout(d_in, cfg.macro, G))
    strides = np.ones((d_out, n_micro), dtype=np.uint8) if cfg.k == 2 else None
    sign_bits = (
        np.zeros((d_out, n_micro, G // 2), dtype=np.uint8) if cfg.k == 2 else None
    )
    c1 = np.empty((d_out, n_mac))
    c2 = np.zeros((d_out, n_mac))
    ref_fallbacks = 0

    mi = 0
    for m, (a, b) in enumerate(spans):
        wb = W_proc[:, a:b]
        norm = s_norm if s_norm.ndim == 1 else s_norm[:, m]
        slab_codes = spec.nearest_codes(wb / norm.astype(np.float64)[:, None])
        codes[:, a:b] = slab_codes
        b1 = spec.values[slab_codes]

        nsq1 = (b1 * b1).sum(axis=1)
        dot1 = (wb * b1).sum(axis=1)
        geo_c1 = np.where(nsq1 > 0, dot1 / np.where(nsq1 > 0, nsq1, 1.0), 0.0)
        b2 = None
        if cfg.k == 2:
            r = wb - geo_c1[:, None] * b1
            b2 = np.zeros_like(b1)
            for ga, gb in geometry.micro_slices(b - a, G):
                st, eta, chunk = geometry.search_micro_batch(
                    b1[:, ga:gb], r[:, ga:gb]
                )
                b2[:, ga:gb] = chunk
                strides[:, mi] = st
                sign_bits[:, mi, : eta.shape[1]] = (eta < 0).astype(np.uint8)
                mi += 1
        geo_c2 = np.zeros(d_out)
        if b2 is not None:
            nsq2 = (b2 * b2).sum(axis=1)
            dot2 = (wb * b2).sum(axis=1)
            geo_c2 = np.where(nsq2 > 0, dot2 / np.where(nsq2 > 0, nsq2, 1.0), 0.0)

        if cfg.mode == "ref":
            Xb = X_cal[:, a:b]
            G1 = Xb @ b1.T
            Yb = Xb @ wb.T
            if cfg.k == 2:
                G2 = Xb @ b2.T
                rc1, rc2, n_bad = solver.solve_ref_batch(
                    G1, G2, Yb, cfg.lam, geo_c1, geo_c2
                )
                c1[:, m], c2[:, m] = rc1, rc2
                ref_fallbacks += n_bad
            else:
                aa = (G1 * G1).sum(axis=0) + cfg.lam
                e1 = (G1 * Yb).sum(axis=0)
                c1[:, m] = np.where(aa > 0, e1 / np.where(aa > 0, aa, 1.0), 0.0)
        else:
            c1[:, m] = geo_c1
            c2[:, m] = geo_c2

    qmax = 2 ** (cfg.bits_scale - 1) - 1

    def int_scales(c):
        peak = float(np.abs(c).max()) if c.size else 0.0
        s = float(np.float32(peak / qmax)) if peak > 0 else 1.0
        ct = np.clip(round_half_away(c / s), -qmax, qmax).astype(np.int8)
        return s, ct

    s_c1, ct1 = int_scales(c1)
    if cfg.k == 2:
        s_c2, ct2 = int_scales(c2)
    else:
        s_c2, ct2 = 1.0, np.zeros((d_out, n_mac), dtype=np.int8)

    return QuantizedTensor(
        d_out=d_out,
        d_in=d_in,
        config=cfg,
        s_norm=s_norm,
        s_vec=s_vec32,
        b1_codes=codes,
        strides=strides,
        sign_bits=sign_bits,
        ct1=ct1,
        ct2=ct2,
        s_c1=s_c1,
        s_c2=s_c2,
        ref_fallbacks=ref_fallbacks,
    )


def dequantize(qt):
    """Reconstruction in the original weight space: (c1 b1 + c2 b2) / s_vec."""
    b1 = qt.b1_values()
    out = np.zeros((qt.d_out, qt.d_in))
    b2 = qt.b2_values() if qt.config.k == 2 else None
    for m, (a, b) in enumerate(macro_spans(qt.d_in, qt.config.macro)):
        slab = qt.s_c1 * qt.ct1[:, m:m + 1].astype(np.float64) * b1[:, a:b]
        if b2 is not None:
            slab = slab + qt.s_c2 * qt.ct2[:, m:m + 1].astype(np.float64) * b2[:, a:b]
        out[:, a:b] = slab
    return out / qt.s_vec.astype(np.float64)[None, :]


def error_report(W, qt):
    """Deterministic reconstruction metrics in the original weight space."""
    W = as_float_matrix(W, name="W")
    if W.shape != (qt.d_out, qt.d_in):
        raise DataError("weight shape does not match quantized tensor")
    What = dequantize(qt)
    diff = W - What
    denom = np.linalg.norm(W)
    frob = float(np.linalg.norm(diff) / denom) if denom > 0 else 0.0

    wn = np.linalg.norm(W, axis=1)
    hn = np.linalg.norm(What, axis=1)
    ok = (wn > 0) & (hn > 0)
    cosines = (W[ok] * What[ok]).sum(axis=1) / (wn[ok] * hn[ok])
    per_block = np.stack(
        [
            (diff[:, a:b] ** 2).mean(axis=1)
            for a, b in macro_spans(qt.d_in, qt.config.macro)
        ],
        axis=1,
    )
    return {
        "frobenius_rel": frob,
        "mean_cosine": float(cosines.mean()) if ok.any() else 0.0,
        "per_block_mse": per_block,
        "skipped_rows": int((~ok).sum()),
    }


def storage_accounting(d_out, d_in, cfg):
    """Exact payload accounting mirrored by the serializer.

    Codes pack row-major padded to a byte per row; each micro-block spends
    4 stride bits plus micro/2 sign bits, packed per row and byte-padded;
    every macro-block stores two signed scale integers.
    """
    n_mac = len(macro_spans(d_in, cfg.macro))
    n_micro = len(micro_layout(d_in, cfg.macro, cfg.micro))
    code_row_bytes = (d_in * cfg.bits + 7) // 8
    micro_row_bytes = (n_micro * (4 + cfg.micro // 2) + 7) // 8
    norm_entries = d_out if cfg.norm_scope == "channel" else d_out * n_mac
    payload = {
        "code_bytes": d_out * code_row_bytes,
        "micro_meta_bytes": d_out * micro_row_bytes,
        "scale_bytes": 2 * d_out * n_mac,
        "norm_bytes": 4 * norm_entries,
        "svec_bytes": 4 * d_in,
    }
    n_weights = d_out * d_in
    payload["bits_per_weight"] = (
        8.0
        * (payload["code_bytes"] + payload["micro_meta_bytes"] + payload["scale_bytes"])
        / n_weights
    )
    return payload


def with_config(cfg, **overrides):
    """A copy of cfg with the given fields replaced (re-validated)."""
    return replace(cfg, **overrides)
