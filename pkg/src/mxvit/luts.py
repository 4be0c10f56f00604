"""Fixed-point lookup tables for inverse-sqrt, GELU, and 2**r.

Entries are stored as two's-complement integers with ``frac_bits`` fractional
bits; every entry equals the reference function at the left edge of its
bucket, rounded to entry precision.  Entry precision is index_bits + 4
fractional bits, which keeps entry rounding below the bucket error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import erf as _erf

from .errors import ConfigError, DomainError

LutKind = Literal["inv_sqrt", "gelu", "pow2"]

LOG2_E = math.log2(math.e)


def gelu_reference(x: np.ndarray | float) -> np.ndarray | float:
    """Exact GELU via the error function (double precision)."""
    if isinstance(x, np.ndarray):
        return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


@dataclass(frozen=True)
class LutTable:
    """Indexed table of fixed-point entries plus its domain descriptor."""

    kind: LutKind
    index_bits: int
    domain: tuple[float, float]
    frac_bits: int
    entries: np.ndarray          # int64, length 2**index_bits
    eval_point: str = "left-edge"

    def __post_init__(self):
        if len(self.entries) != 1 << self.index_bits:
            raise ConfigError("entry count must be 2**index_bits")
        self.entries.flags.writeable = False

    @property
    def step(self) -> float:
        lo, hi = self.domain
        return (hi - lo) / len(self.entries)

    @property
    def values(self) -> np.ndarray:
        """Entries as real numbers."""
        return self.entries.astype(np.float64) / (1 << self.frac_bits)

    def eval_points(self) -> np.ndarray:
        lo, _ = self.domain
        return lo + self.step * np.arange(len(self.entries))

    def index_of(self, x: np.ndarray | float) -> np.ndarray | int:
        """Bucket index by truncation, clipped into the table."""
        lo, _ = self.domain
        idx = np.floor((np.asarray(x, dtype=np.float64) - lo) / self.step)
        idx = np.clip(idx, 0, len(self.entries) - 1).astype(np.int64)
        return idx if idx.ndim else int(idx)

    def lookup(self, x: np.ndarray | float) -> np.ndarray | float:
        val = self.values[self.index_of(np.asarray(x))]
        return val if isinstance(x, np.ndarray) else float(val)


def _fixed(values: np.ndarray, frac_bits: int) -> np.ndarray:
    return np.rint(values * (1 << frac_bits)).astype(np.int64)


def build_inv_sqrt_lut(index_bits: int) -> LutTable:
    """Table of 1/sqrt over [0.5, 2.0) — one even and one odd exponent octave."""
    if index_bits < 1:
        raise ConfigError("index_bits must be >= 1")
    frac = index_bits + 4
    n = 1 << index_bits
    pts = 0.5 + (1.5 / n) * np.arange(n)
    return LutTable("inv_sqrt", index_bits, (0.5, 2.0), frac,
                    _fixed(1.0 / np.sqrt(pts), frac))


def build_gelu_lut(index_bits: int, a: float) -> LutTable:
    """Table of GELU over [-a, a), the non-linear region of the function."""
    if index_bits < 1:
        raise ConfigError("index_bits must be >= 1")
    if a <= 0:
        raise ConfigError("LUT domain half-width must be positive")
    frac = index_bits + 4
    n = 1 << index_bits
    pts = -a + (2.0 * a / n) * np.arange(n)
    return LutTable("gelu", index_bits, (-a, a), frac,
                    _fixed(np.asarray(gelu_reference(pts)), frac))


def build_pow2_lut(index_bits: int) -> LutTable:
    """Table of 2**r over [0, 1)."""
    if index_bits < 1:
        raise ConfigError("index_bits must be >= 1")
    frac = index_bits + 4
    n = 1 << index_bits
    pts = np.arange(n) / n
    return LutTable("pow2", index_bits, (0.0, 1.0), frac,
                    _fixed(np.exp2(pts), frac))


def build_lut(kind: LutKind, index_bits: int, gelu_domain: float = 3.0) -> LutTable:
    if kind == "inv_sqrt":
        return build_inv_sqrt_lut(index_bits)
    if kind == "gelu":
        return build_gelu_lut(index_bits, gelu_domain)
    if kind == "pow2":
        return build_pow2_lut(index_bits)
    raise ConfigError(f"unknown LUT kind {kind!r}")


def _normalize(mantissa: float, exponent: int) -> tuple[float, int]:
    while mantissa >= 2.0:
        mantissa /= 2.0
        exponent += 1
    while 0.0 < mantissa < 1.0:
        mantissa *= 2.0
        exponent -= 1
    return mantissa, exponent


def inv_sqrt(mf: tuple[float, int], lut: LutTable) -> tuple[float, int]:
    """1/sqrt of a normalized (mantissa in [1,2), exponent) pair.

    Even exponents index the table at the mantissa directly; odd exponents
    fold one factor of two into the mantissa (m/2 lands in [0.5, 1), still
    inside the table domain) so the result exponent stays an integer.
    """
    m, e = mf
    if m <= 0:
        raise DomainError("inv_sqrt requires a positive mantissa")
    if not 1.0 <= m < 2.0:
        raise DomainError(f"mantissa {m} not normalized to [1, 2)")
    if e % 2 == 0:
        val = lut.lookup(m)
        shift = -e // 2
    else:
        val = lut.lookup(m / 2.0)
        shift = -(e + 1) // 2
    return _normalize(float(val), shift)


def exp_decompose(x: float, r_bits: int, frac_bits: int,
                  n_limit: int | None = None) -> tuple[int, int]:
    """Split e**x = 2**n * 2**r into an integer n and a bucketed r in [0, 1).

    ``t = x * log2(e)`` is computed at ``frac_bits`` fractional bits
    (round-to-nearest-even); n = floor(t) models a saturating shifter when
    ``n_limit`` is given; the top ``r_bits`` of the fraction index the
    pow2 table.
    """
    if not math.isfinite(x):
        raise DomainError("exp_decompose requires finite input")
    t = int(np.rint(x * LOG2_E * (1 << frac_bits)))
    n = t >> frac_bits
    r_index = (t - (n << frac_bits)) >> (frac_bits - r_bits)
    if n_limit is not None:
        n = max(-n_limit, min(n_limit, n))
    return n, r_index


def mxint_divide(num: tuple[float, int], den: tuple[float, int],
                 out_bits: int) -> tuple[float, int]:
    """Component-wise division of (mantissa, exponent) pairs.

    The mantissa ratio is rounded to ``out_bits`` fractional bits and the
    result is renormalized so its mantissa lies in [1, 2).
    """
    nm, ne = num
    dm, de = den
    if dm == 0:
        raise DomainError("division by a zero mantissa")
    if nm == 0:
        return 0.0, 0
    ratio = nm / dm
    sign = -1.0 if ratio < 0 else 1.0
    f, e2 = math.frexp(abs(ratio))  # |ratio| = f * 2**e2, f in [0.5, 1)
    m = 2.0 * f
    e = ne - de + e2 - 1
    scale = 1 << out_bits
    mq = float(np.rint(m * scale)) / scale
    if mq >= 2.0:
        mq /= 2.0
        e += 1
    return sign * mq, e
