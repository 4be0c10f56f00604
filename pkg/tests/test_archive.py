"""Packed tensor archive round-trips byte-exactly."""

import numpy as np
import pytest

from mxvit.archive import read_archive, write_archive
from mxvit.errors import ManifestError
from mxvit.formats import QuantConfig, quantize_tensor


def _tensors(rng):
    cfg = QuantConfig()
    return {
        "a": quantize_tensor(rng.normal(0, 1, (6, 32)), cfg, "weight"),
        "b": quantize_tensor(rng.normal(0, 1, (300,)), cfg, "weight"),
        "c": quantize_tensor(rng.normal(0, 1, (4, 20)), cfg, "activation"),
    }


class TestArchive:
    def test_round_trip(self, rng, tmp_path):
        tensors = _tensors(rng)
        write_archive(tmp_path / "t.mxar", tensors)
        back = read_archive(tmp_path / "t.mxar")
        assert set(back) == set(tensors)
        for name, t in tensors.items():
            r = back[name]
            assert r.shape == t.shape
            assert r.mantissa_bits == t.mantissa_bits
            assert r.block_size == t.block_size
            assert np.array_equal(r.mantissas, t.mantissas)
            assert np.array_equal(r.exponents, t.exponents)

    def test_requantize_idempotent_bytes(self, rng, tmp_path):
        """quantize -> dequantize -> quantize produces identical bytes."""
        cfg = QuantConfig()
        tensors = _tensors(rng)
        first = write_archive(tmp_path / "a.mxar", tensors)
        again = {name: quantize_tensor(t.dequantize(), cfg, t.klass)
                 for name, t in tensors.items()}
        second = write_archive(tmp_path / "b.mxar", again)
        assert first == second

    def test_deterministic_bytes(self, rng, tmp_path):
        tensors = _tensors(rng)
        one = write_archive(tmp_path / "1.mxar", tensors)
        two = write_archive(tmp_path / "2.mxar", tensors)
        assert one == two

    def test_wide_mantissas_use_two_bytes(self, rng, tmp_path):
        cfg = QuantConfig(weight_mantissa_bits=12,
                          activation_mantissa_bits=12)
        t = {"w": quantize_tensor(rng.normal(0, 1, 256), cfg, "weight")}
        write_archive(tmp_path / "w.mxar", t)
        back = read_archive(tmp_path / "w.mxar")
        assert np.array_equal(back["w"].mantissas, t["w"].mantissas)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "x.mxar"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ManifestError):
            read_archive(p)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ManifestError):
            read_archive(tmp_path / "absent.mxar")
