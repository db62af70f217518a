"""Scikit-learn style front end for the quantization pipeline."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .kernel import OpCounters, quantize_activations, shiftadd_gemm
from .precondition import collect_stats
from .quantizer import QuantConfig, dequantize, error_report, quantize_tensor
from .validation import as_float_matrix


class GoQuantizer(BaseEstimator):
    """Quantize a weight matrix, then run inputs through the integer kernel.

    fit() takes the weight matrix (and, for the regression scale mode,
    calibration activations); transform() maps activation batches through
    the quantized layer with the shift-and-add kernel.  Parameters mirror
    QuantConfig.

    >>> est = GoQuantizer(bits=3, k=2).fit(W)
    >>> y = est.transform(x)
    """

    def __init__(self, bits=3, topology="pot", mode="geo", k=2, macro=128,
                 micro=32, alpha=0.5, lam=1e-4, bits_scale=8, bits_act=8,
                 norm_scope="channel", stat_kind="maxabs",
                 scale_source="dynamic", audit=True):
        self.bits = bits
        self.topology = topology
        self.mode = mode
        self.k = k
        self.macro = macro
        self.micro = micro
        self.alpha = alpha
        self.lam = lam
        self.bits_scale = bits_scale
        self.bits_act = bits_act
        self.norm_scope = norm_scope
        self.stat_kind = stat_kind
        self.scale_source = scale_source
        self.audit = audit

    def _make_config(self):
        return QuantConfig(
            bits=self.bits, topology=self.topology, mode=self.mode,
            k=self.k, macro=self.macro, micro=self.micro, alpha=self.alpha,
            lam=self.lam, bits_scale=self.bits_scale,
            bits_act=self.bits_act, norm_scope=self.norm_scope)

    def fit(self, W, activations=None):
        """Quantize the weight matrix W [d_out, d_in].

        activations: optional [n, d_in] calibration batch.  Required when
        mode="ref" or scale_source="calib"; otherwise it only sharpens the
        smoothing vector.
        """
        W = as_float_matrix(W, "W")
        cfg = self._make_config()
        stats = None
        if activations is not None:
            activations = as_float_matrix(activations, "activations")
            stats = collect_stats([activations], kind=self.stat_kind)
        self.weight_ = W
        self.stats_ = stats
        self.quantized_ = quantize_tensor(W, stats, cfg)
        self.counters_ = OpCounters()
        self.n_features_in_ = W.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "quantized_"):
            raise NotFittedError(
                "this GoQuantizer is not fitted yet; call fit() first")

    def transform(self, X):
        """Integer-kernel forward pass: X [n, d_in] -> [n, d_out]."""
        self._check_fitted()
        X = as_float_matrix(X, "X")
        qa = quantize_activations(
            X, self.quantized_.s_vec, b_a=self.bits_act,
            source=self.scale_source, stats=self.stats_)
        return shiftadd_gemm(qa, self.quantized_, counters=self.counters_,
                             audit=self.audit)

    def reconstruct(self):
        """Dequantized weight matrix [d_out, d_in]."""
        self._check_fitted()
        return dequantize(self.quantized_)

    def score(self, X=None, y=None):
        """Negative relative Frobenius reconstruction error (higher is
        better, 0.0 is exact).  X and y are accepted for API compatibility
        and ignored."""
        self._check_fitted()
        return -error_report(self.weight_, self.quantized_)["frobenius_rel"]

    def report(self):
        """Reconstruction error summary for the fitted weights."""
        self._check_fitted()
        rep = error_report(self.weight_, self.quantized_)
        rep["per_block_mse"] = np.asarray(rep["per_block_mse"])
        return rep
