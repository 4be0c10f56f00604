"""MXInt-optimized non-linear datapaths: LayerNorm, GELU, Softmax.

All three operators work on the integer mantissa domain after cross-block
alignment.  LayerNorm exploits the cancellation of the common scale in
numerator and denominator, so the shared exponent never enters the integer
pipeline; GELU forwards the block exponent unchanged and only table-looks-up
the non-linear region; Softmax decomposes each e**x into a shifted pow2
table entry so the final division is a mantissa ratio plus an exponent
subtraction.

The ``*_batch`` functions are the vectorized cores used by the model runner;
the public single-row/single-block wrappers match the operator contracts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .formats import (
    MXIntBlock,
    MXIntTensor,
    QuantConfig,
    quantize_tensor,
    rne_div,
)
from .luts import LOG2_E, LutTable, build_gelu_lut, build_inv_sqrt_lut, build_pow2_lut


@dataclass(frozen=True)
class NonlinearConfig:
    """Bit widths and constants of the three LUT-backed operators."""

    layernorm_lut_bits: int = 5
    gelu_lut_bits: int = 5
    gelu_domain: float = 3.0
    softmax_r_bits: int = 2
    epsilon: float = 0.0          # elided inside the datapath
    softmax_t_frac_bits: Optional[int] = None
    gamma: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("layernorm_lut_bits", "gelu_lut_bits", "softmax_r_bits"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.gelu_domain <= 0:
            raise ConfigError("gelu_domain must be positive")

    def t_frac_bits(self, qcfg: QuantConfig) -> int:
        """Fractional bits of t = x*log2(e) inside the exp decomposition."""
        if self.softmax_t_frac_bits is not None:
            return self.softmax_t_frac_bits
        return qcfg.activation_mantissa_bits + self.softmax_r_bits + 2

    def variance_m_bits(self) -> int:
        """Mantissa precision of the variance minifloat ahead of the LUT."""
        return self.layernorm_lut_bits + 2


def build_luts(ncfg: NonlinearConfig) -> dict[str, LutTable]:
    return {
        "inv_sqrt": build_inv_sqrt_lut(ncfg.layernorm_lut_bits),
        "gelu": build_gelu_lut(ncfg.gelu_lut_bits, ncfg.gelu_domain),
        "pow2": build_pow2_lut(ncfg.softmax_r_bits),
    }


# ---------------------------------------------------------------------------
# alignment helper

def _align_rows(mant: np.ndarray, exp: np.ndarray, n_valid: int
                ) -> tuple[np.ndarray, np.ndarray]:
    """Align each row's blocks to its max exponent; return (R, n) ints."""
    emax = exp.max(axis=1)
    shift = np.minimum(emax[:, None] - exp, 63)
    xm = (mant >> shift[:, :, None]).reshape(mant.shape[0], -1)[:, :n_valid]
    return xm, emax


# ---------------------------------------------------------------------------
# LayerNorm

def layernorm_batch(mant: np.ndarray, exp: np.ndarray, n_valid: int,
                    gamma_vals: np.ndarray, beta_vals: np.ndarray,
                    qcfg: QuantConfig, ncfg: NonlinearConfig,
                    lut: LutTable) -> MXIntTensor:
    """Normalize R rows given as (R, nblocks, B) mantissas + (R, nblocks) exps.

    The pipeline is integer-only in the mantissa domain: alignment, integer
    mean and variance (round-to-nearest division), variance minifloat cast,
    LUT inverse sqrt with the even/odd exponent branch, then the quantized
    gamma/beta affine.  The shared exponent cancels, so the output is
    invariant to any common shift of the input exponents.
    """
    if n_valid < 2:
        raise DomainError("layernorm needs a row of length >= 2")
    xm, _ = _align_rows(mant, exp, n_valid)
    mu = rne_div(xm.sum(axis=1), n_valid)
    d = xm - mu[:, None]
    var = rne_div((d * d).sum(axis=1), n_valid)

    nz = var > 0
    var_safe = np.where(nz, var, 1)
    f, e2 = np.frexp(var_safe.astype(np.float64))
    vm = 2.0 * f
    ve = e2.astype(np.int64) - 1
    tb = ncfg.variance_m_bits()
    vm = np.rint(vm * (1 << tb)) / (1 << tb)
    bump = vm >= 2.0
    vm = np.where(bump, vm / 2.0, vm)
    ve = np.where(bump, ve + 1, ve)

    even = ve % 2 == 0
    query = np.where(even, vm, vm / 2.0)
    entry = lut.values[lut.index_of(query)]
    se = np.where(even, -(ve // 2), -((ve + 1) // 2))
    s = np.ldexp(entry, se.astype(np.int32))

    y = d * s[:, None] * gamma_vals[None, :] + beta_vals[None, :]
    y = np.where(nz[:, None], y, beta_vals[None, :])
    return quantize_tensor(y, qcfg, "activation", block_axis=-1)


def layernorm_mxint(row: Sequence[MXIntBlock], gamma: np.ndarray,
                    beta: np.ndarray, qcfg: QuantConfig, ncfg: NonlinearConfig,
                    lut: Optional[LutTable] = None) -> MXIntTensor:
    """LayerNorm one normalization row given as a list of blocks.

    ``gamma``/``beta`` are real vectors; they are quantized to weight
    precision before entering the elementwise affine.
    """
    blocks = list(row)
    if not blocks:
        raise DomainError("layernorm needs at least one block")
    lut = lut or build_inv_sqrt_lut(ncfg.layernorm_lut_bits)
    mant = np.stack([blk.mantissas for blk in blocks])[None, :, :]
    exp = np.array([[blk.shared_exponent for blk in blocks]], dtype=np.int64)
    n = len(gamma)
    g = quantize_tensor(np.asarray(gamma, dtype=np.float64), qcfg, "weight").dequantize()
    bq = quantize_tensor(np.asarray(beta, dtype=np.float64), qcfg, "weight").dequantize()
    return layernorm_batch(mant, exp, n, g, bq, qcfg, ncfg, lut)


# ---------------------------------------------------------------------------
# GELU

def gelu_tensor(t: MXIntTensor, lut: LutTable, a: float,
                qcfg: QuantConfig) -> MXIntTensor:
    """Three-region GELU over every element of a tensor.

    v >= a passes the mantissa through untouched, v <= -a zeroes it, and the
    inner region is served by the table; the block exponent is forwarded
    unchanged and table outputs are rounded back onto that exponent's grid.
    """
    exp_full = np.repeat(t.exponents, t.block_size, axis=t.block_axis)
    v = np.ldexp(t.mantissas.astype(np.float64), exp_full.astype(np.int32))
    inner = lut.values[lut.index_of(v)]
    y = np.where(v >= a, v, np.where(v <= -a, 0.0, inner))
    ym = np.rint(np.ldexp(y, -exp_full.astype(np.int32)))
    top = 1 << (t.mantissa_bits - 1)
    ym = np.clip(ym, -top, top - 1).astype(np.int64)
    return MXIntTensor(
        shape=t.shape, block_axis=t.block_axis, mantissa_bits=t.mantissa_bits,
        block_size=t.block_size, exponent_bits=t.exponent_bits, klass=t.klass,
        mantissas=ym, exponents=t.exponents.copy(),
    )


def gelu_mxint(x: MXIntBlock, lut: LutTable, a: float,
               qcfg: QuantConfig) -> MXIntBlock:
    """GELU over a single block; exponent forwarded unchanged."""
    t = MXIntTensor(
        shape=(x.block_size,), block_axis=0, mantissa_bits=x.mantissa_width,
        block_size=x.block_size, exponent_bits=qcfg.exponent_bits,
        klass="activation", mantissas=x.mantissas.copy(),
        exponents=np.array([x.shared_exponent], dtype=np.int64),
    )
    out = gelu_tensor(t, lut, a, qcfg)
    return MXIntBlock(int(out.exponents[0]), out.mantissas,
                      x.mantissa_width, x.block_size)


# ---------------------------------------------------------------------------
# Softmax

def softmax_batch(mant: np.ndarray, exp: np.ndarray, n_valid: int,
                  qcfg: QuantConfig, ncfg: NonlinearConfig,
                  lut_pow2: LutTable) -> MXIntTensor:
    """Softmax over R rows given as (R, nblocks, B) mantissas + exponents.

    Each aligned element is decomposed as e**x = 2**n * pow2_table(r); the
    pairs are summed by exponent-aligned integer accumulation and divided
    component-wise (mantissa ratio at activation precision, exponent
    subtraction).  No max-subtraction: range safety comes from the n/r split.
    """
    if n_valid < 1:
        raise DomainError("softmax needs a non-empty row")
    m_bits = qcfg.activation_mantissa_bits
    xm, emax_in = _align_rows(mant, exp, n_valid)
    v = np.ldexp(xm.astype(np.float64), emax_in.astype(np.int32)[:, None])

    fb = ncfg.t_frac_bits(qcfg)
    rb = ncfg.softmax_r_bits
    t = np.rint(v * LOG2_E * (1 << fb)).astype(np.int64)
    n = t >> fb
    r_idx = (t - (n << fb)) >> (fb - rb)
    n_limit = (1 << m_bits) - 1
    n = np.clip(n, -n_limit, n_limit)

    entry = lut_pow2.entries[r_idx]                 # frac bits = rb + 4
    nmax = n.max(axis=1)
    den = (entry >> np.minimum(nmax[:, None] - n, 63)).sum(axis=1)

    f, e2 = np.frexp(entry.astype(np.float64) / den[:, None].astype(np.float64))
    mq = np.rint(2.0 * f * (1 << m_bits)) / (1 << m_bits)
    e_adj = e2.astype(np.int64) - 1
    bump = mq >= 2.0
    mq = np.where(bump, mq / 2.0, mq)
    e_adj = np.where(bump, e_adj + 1, e_adj)
    y = np.ldexp(mq, (e_adj + n - nmax[:, None]).astype(np.int32))
    return quantize_tensor(y, qcfg, "activation", block_axis=-1)


def softmax_mxint(row: Sequence[MXIntBlock], lut_pow2: LutTable,
                  qcfg: QuantConfig, ncfg: NonlinearConfig) -> MXIntTensor:
    """Softmax one row given as a list of blocks."""
    blocks = list(row)
    if not blocks:
        raise DomainError("softmax needs at least one block")
    mant = np.stack([blk.mantissas for blk in blocks])[None, :, :]
    exp = np.array([[blk.shared_exponent for blk in blocks]], dtype=np.int64)
    n = sum(blk.block_size for blk in blocks)
    return softmax_batch(mant, exp, n, qcfg, ncfg, lut_pow2)
