"""goquant: post-training power-of-two quantization with a dual basis.

Weights are projected onto a shift-friendly lattice, a second orthogonal
basis captures the projection residual, and inference runs multiplier-free
over the packed codes.
"""

from .errors import DataError, FormatError, GoQuantError, NumericError
from .estimator import GoQuantizer
from .fileformat import (ModelFile, expected_file_size, load_file,
                         load_tensor_file, save_file, save_tensor_file)
from .kernel import (OpCounters, QuantizedActivations, check_accumulator,
                     quantize_activations, reference_gemm, report_counters,
                     shiftadd_gemm)
from .lattice import LatticeSpec, get_lattice
from .precondition import (CalibStats, collect_stats, compensate_activations,
                           identity_smoothing, smoothing_vector)
from .quantizer import (QuantConfig, QuantizedTensor, dequantize,
                        error_report, quantize_tensor, storage_accounting,
                        with_config)

__version__ = "0.1.0"

__all__ = [
    "CalibStats",
    "DataError",
    "FormatError",
    "GoQuantError",
    "GoQuantizer",
    "LatticeSpec",
    "ModelFile",
    "NumericError",
    "OpCounters",
    "QuantConfig",
    "QuantizedActivations",
    "QuantizedTensor",
    "check_accumulator",
    "collect_stats",
    "compensate_activations",
    "dequantize",
    "error_report",
    "expected_file_size",
    "get_lattice",
    "identity_smoothing",
    "load_file",
    "load_tensor_file",
    "quantize_activations",
    "quantize_tensor",
    "reference_gemm",
    "report_counters",
    "save_file",
    "save_tensor_file",
    "shiftadd_gemm",
    "smoothing_vector",
    "storage_accounting",
    "with_config",
    "__version__",
]
