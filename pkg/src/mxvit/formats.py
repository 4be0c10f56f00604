"""MXInt number format: blocks of signed integer mantissas sharing one exponent.

A block stores ``value_i = mantissa_i * 2**shared_exponent`` where every
mantissa is an m-bit two's-complement integer and the exponent is a signed
power-of-two scale chosen from the block's largest magnitude.  Tensors are
tiled into such blocks along a single axis; the last block may be zero-padded.

Conventions pinned here (and relied on by every other module):

* the exponent is chosen so the max-magnitude element lands in the top
  half of the mantissa range (``|mant| >= 2**(m-2)`` unless the block is
  all-zero);
* quantization rounds to nearest, ties to even;
* cross-block alignment right-shifts mantissas arithmetically (truncation
  toward minus infinity), matching a hardware right-shifter;
* an all-zero block carries the minimum exponent (-127).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence

import numpy as np

from .errors import ConfigError, DomainError

EXPONENT_MIN = -127
EXPONENT_MAX = 127

TensorClass = Literal["weight", "activation"]


@dataclass(frozen=True)
class QuantConfig:
    """Per-tensor-class mantissa widths, block sizes, and accumulator width."""

    weight_mantissa_bits: int = 6
    activation_mantissa_bits: int = 8
    weight_block_size: int = 256
    activation_block_size: int = 16
    exponent_bits: int = 8
    accumulator_mantissa_bits: int = 12
    rounding: str = "nearest-even"

    def __post_init__(self):
        for name in ("weight_mantissa_bits", "activation_mantissa_bits",
                     "exponent_bits", "accumulator_mantissa_bits"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be >= 2, got {getattr(self, name)}")
        if self.weight_block_size < 1 or self.activation_block_size < 1:
            raise ConfigError("block sizes must be >= 1")
        if self.accumulator_mantissa_bits < max(self.weight_mantissa_bits,
                                                self.activation_mantissa_bits):
            raise ConfigError("accumulator_mantissa_bits must cover the widest "
                              "operand mantissa")
        if self.rounding != "nearest-even":
            raise ConfigError(f"unsupported rounding mode {self.rounding!r}")

    def bits_for(self, klass: TensorClass) -> tuple[int, int]:
        """Return (mantissa_bits, block_size) for a tensor class."""
        if klass == "weight":
            return self.weight_mantissa_bits, self.weight_block_size
        if klass == "activation":
            return self.activation_mantissa_bits, self.activation_block_size
        raise ConfigError(f"unknown tensor class {klass!r}")


def _rne(x: np.ndarray) -> np.ndarray:
    # np.rint rounds half to even
    return np.rint(x)


def rne_div(n: np.ndarray, d: int) -> np.ndarray:
    """Integer division rounded to nearest, ties to even. ``d`` must be > 0."""
    n = np.asarray(n, dtype=np.int64)
    q = n // d
    r = n - q * d
    twice = 2 * r
    q = np.where(twice > d, q + 1, q)
    q = np.where((twice == d) & (q % 2 != 0), q + 1, q)
    return q


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        idx = np.argwhere(~np.isfinite(values))[0]
        raise DomainError(f"non-finite input value at index {tuple(int(i) for i in idx)}")


def _quantize_rows(values: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantize float rows of shape (..., B) into int64 mantissas + exponents.

    The exponent starts at floor(log2(max|v|)) - (m - 2) and is bumped by one
    when the max element would round to +2**(m-1), so every element satisfies
    the half-step round-trip bound |v - q(v)| <= 2**(E-1).
    """
    values = np.asarray(values, dtype=np.float64)
    max_abs = np.max(np.abs(values), axis=-1)
    _, exp2 = np.frexp(max_abs)  # max_abs = f * 2**exp2 with f in [0.5, 1)
    e = exp2.astype(np.int64) - 1 - (m - 2)
    e = np.where(max_abs == 0.0, EXPONENT_MIN, e)
    e = np.clip(e, EXPONENT_MIN, EXPONENT_MAX)
    mant = _rne(np.ldexp(values, -e.astype(np.int32)[..., None]))
    top = 1 << (m - 1)
    over = np.any(mant >= top, axis=-1) & (e < EXPONENT_MAX)
    if np.any(over):
        e = np.where(over, e + 1, e)
        mant = _rne(np.ldexp(values, -e.astype(np.int32)[..., None]))
    mant = np.clip(mant, -top, top - 1)
    return mant.astype(np.int64), e.astype(np.int64)


def _dequantize_rows(mant: np.ndarray, exp: np.ndarray) -> np.ndarray:
    return np.ldexp(mant.astype(np.float64), exp.astype(np.int32)[..., None])


@dataclass(frozen=True)
class MXIntBlock:
    """One shared exponent plus a fixed-size vector of integer mantissas."""

    shared_exponent: int
    mantissas: np.ndarray
    mantissa_width: int
    block_size: int

    def __post_init__(self):
        mant = np.asarray(self.mantissas, dtype=np.int64)
        object.__setattr__(self, "mantissas", mant)
        if mant.shape != (self.block_size,):
            raise ConfigError(f"expected {self.block_size} mantissas, got {mant.shape}")
        if not 2 <= self.mantissa_width <= 16:
            raise ConfigError(f"mantissa_width must be in [2, 16], got {self.mantissa_width}")
        top = 1 << (self.mantissa_width - 1)
        if np.any(mant < -top) or np.any(mant > top - 1):
            raise ConfigError("mantissa out of two's-complement range")
        if not EXPONENT_MIN <= self.shared_exponent <= EXPONENT_MAX:
            raise ConfigError(f"shared_exponent {self.shared_exponent} out of range")
        mant.flags.writeable = False

    @property
    def is_zero(self) -> bool:
        return not np.any(self.mantissas)


@dataclass(frozen=True)
class AlignedGroup:
    """Mantissas from several blocks re-expressed at the group's max exponent."""

    common_exponent: int
    mantissas: np.ndarray


def quantize_block(values: Sequence[float] | np.ndarray, m: int) -> MXIntBlock:
    """Quantize one block of real values to an m-bit mantissa MXInt block."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise ConfigError("quantize_block expects a non-empty 1-D vector")
    _check_finite(values)
    mant, exp = _quantize_rows(values[None, :], m)
    return MXIntBlock(int(exp[0]), mant[0], m, values.size)


def dequantize_block(block: MXIntBlock) -> np.ndarray:
    """Reconstruct the real values ``mantissa_i * 2**shared_exponent``."""
    return np.ldexp(block.mantissas.astype(np.float64), block.shared_exponent)


def align_blocks(blocks: Sequence[MXIntBlock]) -> AlignedGroup:
    """Re-quantize blocks to the maximum member exponent.

    Mantissas are arithmetically right-shifted by the exponent gap; shifted-out
    bits are discarded, exactly like the hardware right-shifter.
    """
    if not blocks:
        raise ConfigError("align_blocks needs at least one block")
    widths = {b.mantissa_width for b in blocks}
    if len(widths) != 1:
        raise ConfigError(f"blocks must share one mantissa width, got {sorted(widths)}")
    emax = max(b.shared_exponent for b in blocks)
    parts = []
    for b in blocks:
        shift = min(emax - b.shared_exponent, 63)
        parts.append(b.mantissas >> shift)
    return AlignedGroup(emax, np.concatenate(parts))


def to_minifloat(value: int, exponent: int, target_m_bits: int) -> tuple[float, int]:
    """Normalize ``value * 2**exponent`` to (m', e') with m' in [1, 2).

    The normalized mantissa is rounded to nearest-even at ``target_m_bits``
    fractional bits.  Used for the variance rescaling ahead of the
    inverse-sqrt LUT, hence positive inputs only.
    """
    if value <= 0:
        raise DomainError(f"to_minifloat requires a positive value, got {value}")
    f, e2 = math.frexp(value)  # value = f * 2**e2, f in [0.5, 1)
    m = 2.0 * f
    e = e2 - 1 + exponent
    scale = 1 << target_m_bits
    mq = float(np.rint(m * scale)) / scale
    if mq >= 2.0:
        mq /= 2.0
        e += 1
    return mq, e


@dataclass
class MXIntTensor:
    """Shaped collection of MXInt blocks tiled along ``block_axis``.

    ``mantissas`` has the logical shape with the block axis zero-padded up to
    a whole number of blocks; ``exponents`` replaces that axis by the block
    count.  Padding mantissas are zero and excluded from reductions.
    """

    shape: tuple[int, ...]
    block_axis: int
    mantissa_bits: int
    block_size: int
    exponent_bits: int
    klass: str
    mantissas: np.ndarray = field(repr=False)
    exponents: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.block_axis = self.block_axis % len(self.shape)
        n = self.shape[self.block_axis]
        nblocks = -(-n // self.block_size)
        expect = list(self.shape)
        expect[self.block_axis] = nblocks * self.block_size
        if tuple(self.mantissas.shape) != tuple(expect):
            raise ConfigError(f"mantissa array shape {self.mantissas.shape} != {expect}")
        expect[self.block_axis] = nblocks
        if tuple(self.exponents.shape) != tuple(expect):
            raise ConfigError(f"exponent array shape {self.exponents.shape} != {expect}")

    # -- shape helpers ----------------------------------------------------

    @property
    def blocks_along_axis(self) -> int:
        return -(-self.shape[self.block_axis] // self.block_size)

    @property
    def num_blocks(self) -> int:
        return self.exponents.size

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.shape))

    def dequantize(self) -> np.ndarray:
        """Real-valued tensor of ``self.shape`` (padding stripped)."""
        mant = np.moveaxis(self.mantissas, self.block_axis, -1)
        exp = np.moveaxis(self.exponents, self.block_axis, -1)
        rows = mant.reshape(exp.shape + (self.block_size,))
        vals = _dequantize_rows(rows, exp)
        vals = vals.reshape(mant.shape)
        vals = np.moveaxis(vals, -1, self.block_axis)
        sl = [slice(None)] * len(self.shape)
        sl[self.block_axis] = slice(0, self.shape[self.block_axis])
        return vals[tuple(sl)]

    def blocks(self) -> Iterator[MXIntBlock]:
        """Row-major iteration over all blocks."""
        mant = np.moveaxis(self.mantissas, self.block_axis, -1)
        exp = np.moveaxis(self.exponents, self.block_axis, -1)
        rows = mant.reshape(-1, self.block_size)
        exps = exp.reshape(-1)
        for i in range(rows.shape[0]):
            yield MXIntBlock(int(exps[i]), rows[i], self.mantissa_bits, self.block_size)

    def transpose(self) -> "MXIntTensor":
        """Swap the last two axes (metadata-only)."""
        if len(self.shape) < 2:
            raise ConfigError("transpose needs at least two dimensions")
        axes = list(range(len(self.shape)))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        ba = self.block_axis
        if ba == len(self.shape) - 1:
            ba = len(self.shape) - 2
        elif ba == len(self.shape) - 2:
            ba = len(self.shape) - 1
        shape = list(self.shape)
        shape[-1], shape[-2] = shape[-2], shape[-1]
        return MXIntTensor(
            shape=tuple(shape), block_axis=ba,
            mantissa_bits=self.mantissa_bits, block_size=self.block_size,
            exponent_bits=self.exponent_bits, klass=self.klass,
            mantissas=np.transpose(self.mantissas, axes),
            exponents=np.transpose(self.exponents, axes),
        )

    # -- storage accounting ----------------------------------------------

    def stored_bits(self) -> int:
        """Total stored bits: one exponent per block plus padded mantissas."""
        padded = self.num_blocks * self.block_size
        return self.num_blocks * self.exponent_bits + padded * self.mantissa_bits

    def bits_per_element(self) -> float:
        """m + e/B for fully-populated blocks."""
        return self.mantissa_bits + self.exponent_bits / self.block_size


def quantize_tensor(values: np.ndarray, cfg: QuantConfig, klass: TensorClass,
                    block_axis: int = -1) -> MXIntTensor:
    """Tile a real tensor into blocks along ``block_axis`` and quantize each."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cannot quantize an empty tensor")
    _check_finite(values)
    m, b = cfg.bits_for(klass)
    block_axis = block_axis % values.ndim
    moved = np.moveaxis(values, block_axis, -1)
    n = moved.shape[-1]
    nblocks = -(-n // b)
    pad = nblocks * b - n
    if pad:
        widths = [(0, 0)] * (moved.ndim - 1) + [(0, pad)]
        moved = np.pad(moved, widths)
    rows = moved.reshape(moved.shape[:-1] + (nblocks, b))
    mant, exp = _quantize_rows(rows, m)
    mant = np.moveaxis(mant.reshape(moved.shape), -1, block_axis)
    exp = np.moveaxis(exp, -1, block_axis)
    return MXIntTensor(
        shape=values.shape, block_axis=block_axis, mantissa_bits=m,
        block_size=b, exponent_bits=cfg.exponent_bits, klass=klass,
        mantissas=mant, exponents=exp,
    )
