"""LayerNorm, GELU, and Softmax datapaths."""

import math

import numpy as np
import pytest

from mxvit.errors import ConfigError, DomainError
from mxvit.formats import MXIntBlock, QuantConfig, quantize_tensor
from mxvit.luts import gelu_reference
from mxvit.nonlinear import (
    NonlinearConfig,
    build_luts,
    gelu_mxint,
    gelu_tensor,
    layernorm_mxint,
    softmax_mxint,
)

CFG = QuantConfig()
NCFG = NonlinearConfig()
LUTS = build_luts(NCFG)


def _blocks(values):
    t = quantize_tensor(np.asarray(values, dtype=float), CFG, "activation")
    return list(t.blocks())


class TestLayerNorm:
    def test_matches_float_layernorm(self, rng):
        for _ in range(20):
            v = rng.normal(0, 1, 32)
            g = rng.uniform(0.5, 1.5, 32)
            b = rng.uniform(-0.5, 0.5, 32)
            out = layernorm_mxint(_blocks(v), g, b, CFG, NCFG, LUTS["inv_sqrt"])
            vq = quantize_tensor(v, CFG, "activation").dequantize()
            ref = (vq - vq.mean()) / math.sqrt(vq.var()) * g + b
            assert np.abs(out.dequantize().ravel() - ref).max() < 0.15

    def test_common_exponent_shift_cancels(self, rng):
        """The shared scale cancels: shifting every block exponent by the
        same amount leaves the output bit-identical."""
        for c in (-8, -3, 1, 8):
            v = rng.normal(0, 1, 32)
            g, b = np.ones(32), np.zeros(32)
            blocks = _blocks(v)
            shifted = [MXIntBlock(blk.shared_exponent + c, blk.mantissas,
                                  blk.mantissa_width, blk.block_size)
                       for blk in blocks]
            o1 = layernorm_mxint(blocks, g, b, CFG, NCFG, LUTS["inv_sqrt"])
            o2 = layernorm_mxint(shifted, g, b, CFG, NCFG, LUTS["inv_sqrt"])
            assert np.array_equal(o1.mantissas, o2.mantissas)
            assert np.array_equal(o1.exponents, o2.exponents)

    def test_constant_row_returns_beta(self):
        b = np.linspace(-1, 1, 32)
        out = layernorm_mxint(_blocks(np.full(32, 3.0)), np.ones(32), b,
                              CFG, NCFG, LUTS["inv_sqrt"])
        bq = quantize_tensor(b, CFG, "weight").dequantize()
        assert np.abs(out.dequantize().ravel() -
                      quantize_tensor(bq, CFG, "activation").dequantize()).max() \
            <= 2.0 ** -4

    def test_gamma_beta_are_quantized_to_weight_precision(self, rng):
        v = rng.normal(0, 1, 32)
        g = rng.uniform(0.9, 1.1, 32)
        out = layernorm_mxint(_blocks(v), g, np.zeros(32), CFG, NCFG,
                              LUTS["inv_sqrt"])
        assert out.mantissa_bits == CFG.activation_mantissa_bits

    def test_short_row_rejected(self):
        with pytest.raises(DomainError):
            layernorm_mxint([], np.ones(1), np.zeros(1), CFG, NCFG)


class TestGelu:
    def test_three_regions(self, rng):
        a = NCFG.gelu_domain
        t = quantize_tensor(rng.uniform(-8, 8, (4, 32)), CFG, "activation")
        out = gelu_tensor(t, LUTS["gelu"], a, CFG)
        v = t.dequantize()
        y = out.dequantize()
        assert np.array_equal(y[v >= a], v[v >= a])          # passthrough
        assert np.all(y[v <= -a] == 0.0)                     # dead region
        inner = (v > -a) & (v < a)
        ref = np.asarray(gelu_reference(v[inner]))
        assert np.abs(y[inner] - ref).max() < 0.25

    def test_exponent_forwarded_unchanged(self, rng):
        t = quantize_tensor(rng.normal(0, 1, (2, 32)), CFG, "activation")
        out = gelu_tensor(t, LUTS["gelu"], NCFG.gelu_domain, CFG)
        assert np.array_equal(out.exponents, t.exponents)

    def test_block_wrapper(self, rng):
        t = quantize_tensor(rng.normal(0, 2, 16), CFG, "activation")
        blk = next(t.blocks())
        out = gelu_mxint(blk, LUTS["gelu"], NCFG.gelu_domain, CFG)
        assert out.shared_exponent == blk.shared_exponent
        assert out.block_size == blk.block_size

    def test_larger_tables_reduce_error(self, rng):
        from mxvit.luts import build_gelu_lut
        v = rng.uniform(-2.9, 2.9, (8, 32))
        t = quantize_tensor(v, CFG, "activation")
        errs = []
        for bits in (2, 4, 6, 8):
            lut = build_gelu_lut(bits, 3.0)
            y = gelu_tensor(t, lut, 3.0, CFG).dequantize()
            ref = np.asarray(gelu_reference(t.dequantize()))
            errs.append(np.abs(y - ref).max())
        assert errs[0] > errs[-1]


class TestSoftmax:
    def test_matches_float_softmax(self, rng):
        for _ in range(20):
            v = rng.normal(0, 2, 16)
            out = softmax_mxint(_blocks(v), LUTS["pow2"], CFG, NCFG)
            vq = quantize_tensor(v, CFG, "activation").dequantize()
            ref = np.exp(vq) / np.exp(vq).sum()
            assert np.abs(out.dequantize().ravel() - ref).max() < 0.06

    def test_outputs_in_unit_interval(self, rng):
        v = rng.normal(0, 5, (50, 16))
        for row in v:
            y = softmax_mxint(_blocks(row), LUTS["pow2"], CFG, NCFG).dequantize()
            assert np.all(y >= 0.0) and np.all(y <= 1.0)

    def test_uniform_power_of_two_rows_are_exactly_equal(self):
        for n in (16, 32):
            y = softmax_mxint(_blocks(np.full(n, 1.5)), LUTS["pow2"],
                              CFG, NCFG).dequantize().ravel()
            assert np.all(y == 1.0 / n)

    def test_argmax_preserved(self, rng):
        for _ in range(100):
            v = rng.normal(0, 3, 16)
            vq = quantize_tensor(v, CFG, "activation").dequantize()
            srt = np.sort(vq)
            if srt[-1] == srt[-2]:
                continue
            y = softmax_mxint(_blocks(v), LUTS["pow2"], CFG, NCFG).dequantize().ravel()
            assert y[np.argmax(vq)] == y.max()

    def test_empty_row_rejected(self):
        with pytest.raises(DomainError):
            softmax_mxint([], LUTS["pow2"], CFG, NCFG)


class TestNonlinearConfig:
    def test_default_widths(self):
        assert (NCFG.layernorm_lut_bits, NCFG.gelu_lut_bits,
                NCFG.softmax_r_bits) == (5, 5, 2)
        assert NCFG.epsilon == 0.0

    def test_invalid_widths_rejected(self):
        with pytest.raises(ConfigError):
            NonlinearConfig(gelu_lut_bits=0)
        with pytest.raises(ConfigError):
            NonlinearConfig(gelu_domain=-1.0)

    def test_variance_minifloat_tracks_lut_bits(self):
        assert NonlinearConfig(layernorm_lut_bits=6).variance_m_bits() == 8
