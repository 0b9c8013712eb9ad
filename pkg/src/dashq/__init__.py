"""Diagonal-Hessian post-training weight quantization.

Quantizers (``quantize_layer_dashq``, ``quantize_rtn``, ``quantize_gptq``)
share one packed layer format and dequantizer; ``calibration`` builds the
importance statistics they consume and ``analysis`` holds the Hessian
stability diagnostics.
"""

from .baselines import GptqConfig, quantize_gptq, quantize_rtn
from .calibration import (
    ActivationBatch,
    DiagImportance,
    HessianEstimate,
    Layer,
    LayerStack,
    accumulate_diag,
    accumulate_full,
    propagate,
)
from .container import TensorBundle, bundle_read, bundle_write
from .errors import DashQError, FormatError, NumericalError, ValidationError
from .packing import pack_codes, unpack_codes
from .solver import (
    SolveTrace,
    init_params,
    quantize_layer_dashq,
    refine_codes,
    regress_params,
    solve_group,
    weighted_moments,
)
from .types import GroupParams, QuantizedLayer, QuantSpec, WeightedMoments, dequantize_layer

__version__ = "0.1.0"

__all__ = [
    "GptqConfig",
    "quantize_gptq",
    "quantize_rtn",
    "ActivationBatch",
    "DiagImportance",
    "HessianEstimate",
    "Layer",
    "LayerStack",
    "accumulate_diag",
    "accumulate_full",
    "propagate",
    "TensorBundle",
    "bundle_read",
    "bundle_write",
    "DashQError",
    "FormatError",
    "NumericalError",
    "ValidationError",
    "pack_codes",
    "unpack_codes",
    "SolveTrace",
    "init_params",
    "quantize_layer_dashq",
    "refine_codes",
    "regress_params",
    "solve_group",
    "weighted_moments",
    "GroupParams",
    "QuantizedLayer",
    "QuantSpec",
    "WeightedMoments",
    "dequantize_layer",
]
