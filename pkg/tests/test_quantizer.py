"""
The end-to-end weight pipeline: block layout, dual-basis construction,
scale integerization, reconstruction, and storage accounting.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goquant.errors import DataError
from goquant.precondition import collect_stats
from goquant.quantizer import (QuantConfig, dequantize, error_report,
                               macro_spans, micro_layout, quantize_tensor,
                               storage_accounting, with_config)

GAUSS = np.random.default_rng(2024).standard_normal((24, 256))


# ---------------------------------------------------------------------------
# Config and layout
# ---------------------------------------------------------------------------


class TestQuantConfig:
    def test_defaults(self):
        cfg = QuantConfig()
        assert (cfg.bits, cfg.topology, cfg.mode, cfg.k) == (3, "pot", "geo", 2)
        assert (cfg.macro, cfg.micro) == (128, 32)

    def test_lattice_property(self):
        assert QuantConfig(bits=4).lattice.n_codes == 16

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(bits=5),
            dict(topology="log"),
            dict(mode="gptq"),
            dict(k=3),
            dict(micro=33),  # must divide macro
            dict(micro=1),
            dict(micro=64),  # exceeds the metadata field width
            dict(macro=0),
            dict(bits_scale=9),
            dict(bits_act=5),
            dict(alpha=2.0),
            dict(lam=-1.0),
            dict(norm_scope="tensor"),
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(DataError):
            QuantConfig(**kwargs)

    def test_scalars_snap_to_f32(self):
        cfg = QuantConfig(alpha=0.1, lam=1e-4)
        assert cfg.alpha == float(np.float32(0.1))
        assert cfg.lam == float(np.float32(1e-4))

    def test_with_config_overrides(self):
        cfg = with_config(QuantConfig(), bits=4, k=1)
        assert (cfg.bits, cfg.k) == (4, 1)
        assert cfg.macro == 128  # untouched fields carried over


class TestBlockLayout:
    def test_macro_spans_exact(self):
        assert macro_spans(256, 128) == [(0, 128), (128, 256)]

    def test_macro_spans_ragged(self):
        assert macro_spans(300, 128) == [(0, 128), (128, 256), (256, 300)]

    def test_micro_layout_flattens_macros(self):
        # 128 -> 4 micro blocks of 32; the 44-wide tail -> 32 + 12
        assert micro_layout(172, 128, 32) == [32, 32, 32, 32, 32, 12]

    def test_single_short_block(self):
        assert macro_spans(5, 128) == [(0, 5)]
        assert micro_layout(5, 128, 32) == [5]


# ---------------------------------------------------------------------------
# Pipeline output contracts
# ---------------------------------------------------------------------------


class TestQuantizeTensor:
    def test_shapes_and_dtypes(self):
        qt = quantize_tensor(GAUSS, None, QuantConfig())
        assert qt.b1_codes.shape == (24, 256)
        assert qt.b1_codes.dtype == np.uint8
        assert qt.s_norm.shape == (24,)
        assert qt.s_norm.dtype == np.float32
        assert qt.s_vec.shape == (256,)
        assert qt.strides.shape == (24, 8)
        assert qt.sign_bits.shape == (24, 8, 16)
        assert qt.ct1.shape == (24, 2)
        assert qt.ct1.dtype == np.int8
        assert qt.n_macro == 2 and qt.n_micro == 8

    def test_deterministic(self):
        a = quantize_tensor(GAUSS, None, QuantConfig())
        b = quantize_tensor(GAUSS, None, QuantConfig())
        for field in ("b1_codes", "strides", "sign_bits", "ct1", "ct2",
                      "s_norm", "s_vec"):
            assert np.array_equal(getattr(a, field), getattr(b, field))
        assert (a.s_c1, a.s_c2) == (b.s_c1, b.s_c2)

    def test_k1_has_no_secondary(self):
        qt = quantize_tensor(GAUSS, None, QuantConfig(k=1))
        assert qt.strides is None and qt.sign_bits is None
        assert (qt.ct2 == 0).all()
        assert qt.s_c2 == 1.0
        assert np.array_equal(qt.b2_values(), np.zeros_like(qt.b2_values()))

    @pytest.mark.parametrize("d_in", [5, 31, 32, 100, 129, 257])
    def test_exact_orthogonality_every_macro(self, d_in):
        rng = np.random.default_rng(d_in)
        W = rng.standard_normal((7, d_in))
        qt = quantize_tensor(W, None, QuantConfig())
        b1, b2 = qt.b1_ints().astype(np.int64), qt.b2_ints().astype(np.int64)
        for a, b in macro_spans(d_in, 128):
            assert (np.sum(b1[:, a:b] * b2[:, a:b], axis=1) == 0).all()

    def test_codes_cover_normalized_range(self):
        qt = quantize_tensor(GAUSS, None, QuantConfig())
        vals = qt.config.lattice.values[qt.b1_codes]
        assert np.abs(vals).max() <= 1.0
        # per-row peak hits the top lattice level under channel norm
        assert (np.abs(vals).max(axis=1) == 1.0).all()

    def test_scale_codes_within_budget(self):
        for bits_scale in (2, 4, 8):
            qt = quantize_tensor(GAUSS, None, QuantConfig(bits_scale=bits_scale))
            qmax = 2 ** (bits_scale - 1) - 1
            assert np.abs(qt.ct1).max() <= qmax
            assert np.abs(qt.ct2).max() <= qmax

    def test_scale_rounding_bound(self):
        # |c - ct * s_c| <= s_c / 2 wherever ct is not clipped
        rng = np.random.default_rng(77)
        W = rng.standard_normal((16, 128))
        qt = quantize_tensor(W, None, QuantConfig())
        b1 = qt.b1_values()
        c1 = np.array(
            [
                (W[i] * b1[i]).sum() / (b1[i] * b1[i]).sum()
                for i in range(16)
            ]
        )
        ct = qt.ct1[:, 0].astype(np.float64)
        qmax = 127
        inner = np.abs(ct) < qmax
        assert (np.abs(c1 - ct * qt.s_c1)[inner] <= qt.s_c1 / 2 + 1e-12).all()

    def test_macroblock_norm_scope(self):
        qt = quantize_tensor(GAUSS, None, QuantConfig(norm_scope="macroblock"))
        assert qt.s_norm.shape == (24, 2)
        vals = qt.config.lattice.values[qt.b1_codes]
        for m, (a, b) in enumerate(macro_spans(256, 128)):
            assert (np.abs(vals[:, a:b]).max(axis=1) == 1.0).all()

    def test_zero_matrix(self):
        qt = quantize_tensor(np.zeros((3, 64)), None, QuantConfig())
        assert (qt.b1_codes == qt.config.lattice.nearest_codes(0.0)).all()
        assert (qt.s_norm == 1.0).all()
        assert np.array_equal(dequantize(qt), np.zeros((3, 64)))

    def test_single_row_single_block(self):
        qt = quantize_tensor(np.array([[0.5, -1.0, 0.25]]), None, QuantConfig())
        assert qt.n_macro == 1
        assert dequantize(qt).shape == (1, 3)

    def test_nan_rejected(self):
        with pytest.raises(DataError):
            quantize_tensor(np.array([[np.nan, 1.0]]), None, QuantConfig())

    def test_ref_needs_samples(self):
        with pytest.raises(DataError):
            quantize_tensor(GAUSS, None, QuantConfig(mode="ref"))
        stats = collect_stats([np.ones((4, 256))], keep_samples=False)
        with pytest.raises(DataError):
            quantize_tensor(GAUSS, stats, QuantConfig(mode="ref"))

    def test_ref_calib_shape_checked(self):
        stats = collect_stats([np.ones((4, 100))])
        with pytest.raises(DataError):
            quantize_tensor(GAUSS, stats, QuantConfig(mode="ref"))

    def test_ref_runs_with_calibration(self):
        rng = np.random.default_rng(8)
        stats = collect_stats([rng.standard_normal((64, 256))])
        qt = quantize_tensor(GAUSS, stats, QuantConfig(mode="ref"))
        assert qt.ref_fallbacks == 0
        assert np.isfinite(dequantize(qt)).all()

    def test_ref_degenerate_calib_falls_back(self):
        # rank-1 calibration makes X b1 and X b2 collinear in every block
        ones = np.ones((8, 64))
        stats = collect_stats([ones])
        W = np.random.default_rng(9).standard_normal((4, 64))
        qt = quantize_tensor(W, stats, QuantConfig(mode="ref", lam=0.0))
        assert qt.ref_fallbacks > 0

    def test_smoothing_folds_into_s_vec(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((32, 256)) * (1 + 9 * rng.random(256))
        stats = collect_stats([X])
        qt = quantize_tensor(GAUSS, stats, QuantConfig())
        assert not np.allclose(qt.s_vec, 1.0)
        qt_plain = quantize_tensor(GAUSS, None, QuantConfig())
        assert np.allclose(qt_plain.s_vec, 1.0)

    @pytest.mark.parametrize("topology,bits", [("pot", 3), ("pot", 4),
                                               ("linear", 3), ("linear", 4)])
    def test_all_lattices_roundtrip(self, topology, bits):
        cfg = QuantConfig(topology=topology, bits=bits)
        qt = quantize_tensor(GAUSS, None, cfg)
        rel = np.linalg.norm(GAUSS - dequantize(qt)) / np.linalg.norm(GAUSS)
        assert rel < 0.5


# ---------------------------------------------------------------------------
# Reconstruction and reporting
# ---------------------------------------------------------------------------


class TestDequantize:
    def test_matches_manual_formula(self):
        qt = quantize_tensor(GAUSS, None, QuantConfig())
        b1 = qt.b1_values()
        b2 = qt.b2_values()
        want = np.zeros_like(GAUSS)
        for m, (a, b) in enumerate(macro_spans(256, 128)):
            c1 = qt.s_c1 * qt.ct1[:, m].astype(np.float64)
            c2 = qt.s_c2 * qt.ct2[:, m].astype(np.float64)
            want[:, a:b] = c1[:, None] * b1[:, a:b] + c2[:, None] * b2[:, a:b]
        want /= qt.s_vec.astype(np.float64)[None, :]
        assert np.allclose(dequantize(qt), want, rtol=0, atol=1e-15)

    def test_k2_beats_k1(self):
        e2 = error_report(GAUSS, quantize_tensor(GAUSS, None, QuantConfig()))
        e1 = error_report(GAUSS, quantize_tensor(GAUSS, None, QuantConfig(k=1)))
        assert e2["frobenius_rel"] < e1["frobenius_rel"]
        assert e2["mean_cosine"] > e1["mean_cosine"]

    def test_pot4_beats_pot3(self):
        e4 = error_report(
            GAUSS, quantize_tensor(GAUSS, None, QuantConfig(bits=4))
        )
        e3 = error_report(GAUSS, quantize_tensor(GAUSS, None, QuantConfig()))
        assert e4["frobenius_rel"] < e3["frobenius_rel"]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_error_bounded_on_gaussians(self, seed):
        W = np.random.default_rng(seed).standard_normal((4, 64))
        rep = error_report(W, quantize_tensor(W, None, QuantConfig()))
        assert 0.0 < rep["frobenius_rel"] < 0.6
        assert rep["mean_cosine"] > 0.8


class TestErrorReport:
    def test_keys_and_shapes(self):
        qt = quantize_tensor(GAUSS, None, QuantConfig())
        rep = error_report(GAUSS, qt)
        assert rep["per_block_mse"].shape == (24, 2)
        assert rep["skipped_rows"] == 0
        assert 0 < rep["frobenius_rel"] < 1
        assert 0 < rep["mean_cosine"] <= 1

    def test_zero_rows_skipped_in_cosine(self):
        W = np.vstack([np.zeros(64), np.random.default_rng(1).standard_normal(64)])
        qt = quantize_tensor(W, None, QuantConfig())
        rep = error_report(W, qt)
        assert rep["skipped_rows"] == 1
        assert np.isfinite(rep["mean_cosine"])


class TestStorageAccounting:
    def test_pot3_default_layout(self):
        acct = storage_accounting(16, 256, QuantConfig())
        assert acct["code_bytes"] == 16 * 96  # 256 * 3 bits, padded per row
        # 8 micro blocks x (4 stride bits + 16 sign bits) = 160 bits = 20 B
        assert acct["micro_meta_bytes"] == 16 * 20
        assert acct["scale_bytes"] == 16 * 2 * 2  # ct1 + ct2, int8 each
        assert acct["norm_bytes"] == 16 * 4
        assert acct["svec_bytes"] == 256 * 4

    def test_k1_layout_stays_uniform(self):
        # K=1 still reserves the metadata fields (written as zeros) so the
        # record layout does not depend on K
        acct = storage_accounting(16, 256, QuantConfig(k=1))
        assert acct["micro_meta_bytes"] == 16 * 20
        assert acct["scale_bytes"] == 16 * 2 * 2

    def test_bits_per_weight_close_to_nominal(self):
        acct = storage_accounting(4096, 4096, QuantConfig())
        assert 3.0 < acct["bits_per_weight"] < 4.3

    def test_row_padding(self):
        # 10 codes x 3 bits = 30 bits -> 4 bytes per row
        acct = storage_accounting(1, 10, QuantConfig())
        assert acct["code_bytes"] == 4
