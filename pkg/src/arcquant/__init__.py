"""Dual-stage NVFP4 quantization with augmented residual channels."""

from .analysis import BoundCheck, ErrorReport, bound_arc, bound_mxfp8, empirical_report
from .arc_pipeline import (
    augment,
    from_interleaved,
    quantize_activation_arc,
    quantize_weight_arc,
    simulate_linear_layer,
    to_interleaved,
)
from .blockquant import FORMATS, FormatSpec, Layout, QuantizedTensor, dequantize, get_format, quantize_tensor
from .calibration import CalibrationProfile, build_profile, load_profile, override_s, save_profile
from .minifloat import Encoding, decode, encode_nearest
from .refgemm import GemmShape, cost_model, gemm_dequant, gemm_two_term

__version__ = "0.1.0"
