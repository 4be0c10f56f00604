"""Integer-only MXInt dot products, matrix multiplies, and affine layers.

The datapath mirrors a blocked hardware unit: mantissas are multiplied and
summed as exact integers, exponents are added once per block, and cross-block
partial sums are aligned to the maximum partial exponent by arithmetic right
shift before the final integer addition.  Outputs are re-quantized per output
block.

The accumulator register stores a normalized mantissa of
``accumulator_mantissa_bits`` plus reduction-headroom guard bits.  Results
whose significant span fits that register come out bit-exact (the "lossless
addition" regime); wider results are renormalized into the register, the
exponent absorbing the shift and the truncated low bits being discarded, the
same way the shared exponent absorbs overflow in the hardware unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AccumulatorOverflowError, ConfigError
from .formats import (
    MXIntBlock,
    MXIntTensor,
    QuantConfig,
    quantize_block,
    quantize_tensor,
)


def _guard_bits(n_terms: int) -> int:
    return max(0, math.ceil(math.log2(max(n_terms, 1))))


def accumulator_width(cfg: QuantConfig, n_terms: int) -> int:
    """Effective register width for an n-term reduction: stored mantissa
    bits plus reduction headroom."""
    return cfg.accumulator_mantissa_bits + _guard_bits(n_terms)


@dataclass
class Accumulator:
    """Wide signed integer register with an explicit capacity check.

    Used by the scalar operator API; overflow here is an error rather than
    wraparound so that misconfigured widths surface immediately.
    """

    width: int
    value: int = 0
    scale_exponent: int = 0

    def add(self, term: int, context: str = "") -> None:
        self.value += int(term)
        if abs(self.value) >= 1 << 62:
            where = f" ({context})" if context else ""
            raise AccumulatorOverflowError(f"accumulator exceeded 63 bits{where}")

    def normalize(self) -> tuple[int, int]:
        """Renormalize into the sized register: keep the top ``width``
        significant bits, the scale exponent absorbing the shift."""
        v = self.value
        shift = max(0, v.bit_length() + 1 - self.width)
        return v >> shift, self.scale_exponent + shift


def _bit_length(v: np.ndarray) -> np.ndarray:
    av = np.abs(v).astype(np.float64)
    _, e = np.frexp(av)  # |v| = f * 2**e with f in [0.5, 1) => bit_length == e
    return np.where(v == 0, 0, e.astype(np.int64))


def _normalize_into(mant: np.ndarray, exp: np.ndarray, width: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    shift = np.maximum(0, _bit_length(mant) + 1 - width)
    return mant >> shift, exp + shift


def mxint_dot(x: MXIntBlock, w: MXIntBlock, cfg: QuantConfig) -> tuple[int, int]:
    """Integer dot product of two blocks: (mantissa, exponent).

    Exactly one exponent addition happens per block pair.  The mantissa is
    ``sum(x_m * w_m)`` whenever that sum fits the accumulator register
    (``sum |x_m * w_m| < 2**(width-1)``); otherwise the sum is renormalized
    into the register and the exponent rises accordingly.
    """
    if x.block_size != w.block_size:
        raise ConfigError(
            f"dot operand lengths differ: {x.block_size} vs {w.block_size}")
    width = accumulator_width(cfg, x.block_size)
    acc = Accumulator(width=width, scale_exponent=x.shared_exponent + w.shared_exponent)
    acc.value = int(np.sum(x.mantissas * w.mantissas))
    return acc.normalize()


def _segments(k: int, ba: int, bb: int) -> list[tuple[int, int]]:
    cuts = sorted({c for c in list(range(0, k, ba)) + list(range(0, k, bb)) + [k]})
    return list(zip(cuts[:-1], cuts[1:]))


def matmul_nt(a: MXIntTensor, bt: MXIntTensor, cfg: QuantConfig
              ) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate ``a @ bt.T`` where both operands are blocked along the last axis.

    ``a`` has shape (..., n, k) and ``bt`` either (p, k) or matching leading
    dims (..., p, k).  Returns (mantissa, exponent) int64 arrays of shape
    (..., n, p): the aligned integer accumulation before any output
    re-quantization.  Block partials and the final sum pass through the
    sized accumulator register.
    """
    if a.block_axis != len(a.shape) - 1 or bt.block_axis != len(bt.shape) - 1:
        raise ConfigError("matmul operands must be blocked along their last axis")
    k = a.shape[-1]
    if bt.shape[-1] != k:
        raise ConfigError(f"inner dimensions differ: {k} vs {bt.shape[-1]}")
    batched = len(bt.shape) > 2
    ein = "...nk,...pk->...np" if batched else "...nk,pk->...np"

    segs = _segments(k, a.block_size, bt.block_size)
    mants, exps = [], []
    for lo, hi in segs:
        width = accumulator_width(cfg, hi - lo)
        mant = np.einsum(ein, a.mantissas[..., lo:hi], bt.mantissas[..., lo:hi],
                         dtype=np.int64)
        ea = a.exponents[..., lo // a.block_size][..., None]
        eb = bt.exponents[..., lo // bt.block_size][..., None, :] if batched \
            else bt.exponents[:, lo // bt.block_size][None, :]
        mant, exp = _normalize_into(mant, ea + eb, width)
        mants.append(mant)
        exps.append(exp)
    mant = np.stack(mants)           # (S, ..., n, p)
    exp = np.stack(exps)
    emax = exp.max(axis=0)
    shifted = mant >> np.minimum(emax[None] - exp, 63)
    total = shifted.sum(axis=0)
    return _normalize_into(total, emax, accumulator_width(cfg, k))


def requantize_raw(mant: np.ndarray, exp: np.ndarray, cfg: QuantConfig,
                   klass: str = "activation", block_axis: int = -1) -> MXIntTensor:
    """Round accumulated (mantissa, exponent) pairs onto a fresh block grid."""
    vals = np.ldexp(mant.astype(np.float64), exp.astype(np.int32))
    return quantize_tensor(vals, cfg, klass, block_axis=block_axis)


def requantize(t: MXIntTensor, cfg: QuantConfig, klass: str = "activation",
               block_axis: int = -1) -> MXIntTensor:
    """Re-tile a tensor onto a (possibly different) block axis and precision."""
    return quantize_tensor(t.dequantize(), cfg, klass, block_axis=block_axis)


def mxint_matmul(a: MXIntTensor, b: MXIntTensor, cfg: QuantConfig,
                 out_block_axis: int = -1) -> MXIntTensor:
    """Blocked matrix multiply ``a (.., n, k) @ b (.., k, p)`` with the output
    re-quantized to activation precision.

    ``b`` must be blocked along its reduction (second-to-last) axis.
    """
    mant, exp = matmul_nt(a, b.transpose(), cfg)
    return requantize_raw(mant, exp, cfg, "activation", out_block_axis)


@dataclass
class LinearParams:
    """Affine layer parameters: weights (out x in, blocked along in) + bias."""

    weights: MXIntTensor
    bias: Optional[MXIntTensor] = None

    def __post_init__(self):
        if self.weights.block_axis != len(self.weights.shape) - 1:
            raise ConfigError("weights must be blocked along in_features")
        if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
            raise ConfigError("bias length must match out_features")


def mxint_linear(x: MXIntTensor, p: LinearParams, cfg: QuantConfig,
                 out_block_axis: int = -1) -> MXIntTensor:
    """``x @ W.T (+ bias)`` with the bias added in the aligned-exponent
    integer domain before output re-quantization."""
    mant, exp = matmul_nt(x, p.weights, cfg)
    if p.bias is not None:
        be = np.repeat(p.bias.exponents, p.bias.block_size)[: p.bias.shape[0]]
        bm = p.bias.mantissas[: p.bias.shape[0]]
        emax = np.maximum(exp, be)
        mant = (mant >> np.minimum(emax - exp, 63)) + (bm >> np.minimum(emax - be, 63))
        exp = emax
    return requantize_raw(mant, exp, cfg, "activation", out_block_axis)


def residual_add(a: MXIntTensor, b: MXIntTensor, cfg: QuantConfig) -> MXIntTensor:
    """Per-block exponent alignment, exact mantissa addition, re-quantization."""
    if a.shape != b.shape or a.block_axis != b.block_axis or a.block_size != b.block_size:
        raise ConfigError("residual_add operands must share shape and block layout")
    emax = np.maximum(a.exponents, b.exponents)
    sa = np.minimum(np.repeat(emax - a.exponents, a.block_size, axis=a.block_axis), 63)
    sb = np.minimum(np.repeat(emax - b.exponents, b.block_size, axis=b.block_axis), 63)
    total = (a.mantissas >> sa) + (b.mantissas >> sb)
    exp_full = np.repeat(emax, a.block_size, axis=a.block_axis)
    vals = np.ldexp(total.astype(np.float64), exp_full.astype(np.int32))
    sl = [slice(None)] * len(a.shape)
    sl[a.block_axis] = slice(0, a.shape[a.block_axis])
    return quantize_tensor(vals[tuple(sl)], cfg, "activation", block_axis=a.block_axis)


def scale_attention_scores(t: MXIntTensor, d_k: int, cfg: QuantConfig) -> MXIntTensor:
    """Apply the 1/sqrt(d_k) attention scaling.

    When d_k is a power of four the scale is a pure exponent subtraction and
    the mantissas are untouched; otherwise one extra mantissa multiply by a
    quantized constant is performed, followed by re-quantization.
    """
    log2d = math.log2(d_k)
    if log2d.is_integer() and int(log2d) % 2 == 0:
        return MXIntTensor(
            shape=t.shape, block_axis=t.block_axis,
            mantissa_bits=t.mantissa_bits, block_size=t.block_size,
            exponent_bits=t.exponent_bits, klass=t.klass,
            mantissas=t.mantissas, exponents=t.exponents - int(log2d) // 2,
        )
    const = quantize_block(np.array([1.0 / math.sqrt(d_k)]),
                           cfg.weight_mantissa_bits)
    cm = int(const.mantissas[0])
    ce = const.shared_exponent
    exp_full = np.repeat(t.exponents, t.block_size, axis=t.block_axis) + ce
    vals = np.ldexp((t.mantissas * cm).astype(np.float64), exp_full.astype(np.int32))
    sl = [slice(None)] * len(t.shape)
    sl[t.block_axis] = slice(0, t.shape[t.block_axis])
    return quantize_tensor(vals[tuple(sl)], cfg, "activation", block_axis=t.block_axis)
