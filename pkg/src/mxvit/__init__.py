"""Bit-exact emulator for shared-exponent block-integer (MXInt) ViT datapaths."""

from .errors import (
    AccumulatorOverflowError,
    ConfigError,
    DomainError,
    ManifestError,
    MXIntError,
)
from .formats import (
    AlignedGroup,
    MXIntBlock,
    MXIntTensor,
    QuantConfig,
    align_blocks,
    dequantize_block,
    quantize_block,
    quantize_tensor,
    to_minifloat,
)
from .linalg import (
    Accumulator,
    LinearParams,
    mxint_dot,
    mxint_linear,
    mxint_matmul,
    residual_add,
)
from .luts import (
    LutTable,
    build_gelu_lut,
    build_inv_sqrt_lut,
    build_pow2_lut,
    exp_decompose,
    inv_sqrt,
    mxint_divide,
)
from .nonlinear import NonlinearConfig, gelu_mxint, layernorm_mxint, softmax_mxint
from .model import (
    BlockWeights,
    ModelManifest,
    evaluate,
    load_dataset,
    load_manifest,
    run_model,
)
from .dse import SweepSpec, cost_report, greedy_search, sweep

__version__ = "0.1.0"
