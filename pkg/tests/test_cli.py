"""Command line interface: outputs, determinism, exit codes, config layering."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from mxvit.cli import main

from conftest import ASSETS, GOLDEN

MANIFEST = str(ASSETS / "toy" / "manifest.json")
DATASET = str(ASSETS / "dataset")


@pytest.fixture()
def runner():
    return CliRunner()


class TestLutDump:
    def test_pow2_two_bits_has_four_lines(self, runner, tmp_path):
        out = tmp_path / "pow2.hex"
        res = runner.invoke(main, ["lut-dump", "--kind", "pow2", "--bits", "2",
                                   "--out", str(out)])
        assert res.exit_code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 4

    def test_first_pow2_entry_is_one(self, runner, tmp_path):
        out = tmp_path / "pow2.hex"
        runner.invoke(main, ["lut-dump", "--kind", "pow2", "--bits", "2",
                             "--out", str(out)])
        first = int(out.read_text().split("\n")[0], 16)
        assert first == 1 << 6      # 1.0 at 6 fractional bits

    def test_repeated_dumps_byte_identical(self, runner, tmp_path):
        a, b = tmp_path / "a.hex", tmp_path / "b.hex"
        for path in (a, b):
            runner.invoke(main, ["lut-dump", "--kind", "gelu", "--bits", "5",
                                 "--out", str(path)])
        assert a.read_bytes() == b.read_bytes()

    def test_matches_frozen_goldens(self, runner, tmp_path):
        cases = [
            (["--kind", "pow2", "--bits", "2"], "pow2_2.hex"),
            (["--kind", "gelu", "--bits", "5"], "gelu_5.hex"),
            (["--kind", "inv_sqrt", "--bits", "5"], "inv_sqrt_5.hex"),
        ]
        for args, golden_name in cases:
            out = tmp_path / golden_name
            res = runner.invoke(main, ["lut-dump", *args, "--out", str(out)])
            assert res.exit_code == 0
            assert out.read_bytes() == (GOLDEN / golden_name).read_bytes()

    def test_csv_format(self, runner, tmp_path):
        out = tmp_path / "t.csv"
        runner.invoke(main, ["lut-dump", "--kind", "pow2", "--bits", "2",
                             "--format", "csv", "--out", str(out)])
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "index,entry,value"
        assert len(lines) == 5


class TestEvaluate:
    def test_accuracy_and_fingerprint(self, runner, tmp_path):
        res = runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                                   "--dataset", DATASET, "--out", str(tmp_path)])
        assert res.exit_code == 0
        doc = json.loads((tmp_path / "evaluate_mxint.json").read_text())
        assert len(doc["config_fingerprint"]) == 64
        assert 0.0 <= doc["accuracy"] <= 1.0
        assert doc["agreement_rate"] >= doc["accuracy"] - 0.05

    def test_deterministic_output_bytes(self, runner, tmp_path):
        outs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                                 "--dataset", DATASET, "--out", str(d)])
            outs.append((d / "evaluate_mxint.json").read_bytes())
        assert outs[0] == outs[1]

    def test_flag_overrides_change_fingerprint(self, runner, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                             "--dataset", DATASET, "--out", str(a)])
        runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                             "--dataset", DATASET, "--out", str(b),
                             "--gelu-lut-bits", "6"])
        fa = json.loads((a / "evaluate_mxint.json").read_text())["config_fingerprint"]
        fb = json.loads((b / "evaluate_mxint.json").read_text())["config_fingerprint"]
        assert fa != fb

    def test_config_file_and_flag_precedence(self, runner, tmp_path):
        cfg = tmp_path / "exp.toml"
        cfg.write_text("[nonlinear]\ngelu_lut_bits = 2\n")
        a = tmp_path / "file_only"
        b = tmp_path / "flag_wins"
        runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                             "--dataset", DATASET, "--out", str(a),
                             "--config", str(cfg)])
        r = runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                                 "--dataset", DATASET, "--out", str(b),
                                 "--config", str(cfg), "--gelu-lut-bits", "5"])
        assert r.exit_code == 0
        fa = json.loads((a / "evaluate_mxint.json").read_text())["config_fingerprint"]
        fb = json.loads((b / "evaluate_mxint.json").read_text())["config_fingerprint"]
        assert fa != fb

    def test_unknown_config_key_is_config_error(self, runner, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[nonlinear]\nwarp_factor = 9\n")
        res = runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                                   "--dataset", DATASET, "--config", str(cfg)])
        assert res.exit_code == 2


class TestQuantize:
    def test_archive_and_stats(self, runner, tmp_path):
        res = runner.invoke(main, ["quantize", "--manifest", MANIFEST,
                                   "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert (tmp_path / "weights.mxar").is_file()
        stats = json.loads((tmp_path / "quantize_stats.json").read_text())
        assert all(t["within_half_step_bound"]
                   for t in stats["tensors"].values())

    def test_deterministic_archive_bytes(self, runner, tmp_path):
        for sub in ("a", "b"):
            runner.invoke(main, ["quantize", "--manifest", MANIFEST,
                                 "--out", str(tmp_path / sub)])
        assert (tmp_path / "a" / "weights.mxar").read_bytes() == \
            (tmp_path / "b" / "weights.mxar").read_bytes()


class TestSweepAndSearch:
    def test_sweep_deterministic_curve_bytes(self, runner, tmp_path):
        for sub in ("a", "b"):
            res = runner.invoke(main, [
                "sweep", "--manifest", MANIFEST, "--dataset", DATASET,
                "--target", "softmax_r_bits", "--values", "2,3",
                "--out", str(tmp_path / sub)])
            assert res.exit_code == 0
        assert (tmp_path / "a" / "sweep_softmax_r_bits.csv").read_bytes() == \
            (tmp_path / "b" / "sweep_softmax_r_bits.csv").read_bytes()

    def test_bad_values_is_config_error(self, runner, tmp_path):
        res = runner.invoke(main, [
            "sweep", "--manifest", MANIFEST, "--dataset", DATASET,
            "--target", "softmax_r_bits", "--values", "two,three",
            "--out", str(tmp_path)])
        assert res.exit_code == 2


class TestCompare:
    def test_high_precision_all_below_threshold(self, runner, tmp_path):
        res = runner.invoke(main, [
            "compare", "--manifest", MANIFEST, "--dataset", DATASET,
            "--threshold", "1.0", "--out", str(tmp_path),
            "--weight-mantissa-bits", "16", "--activation-mantissa-bits", "16",
            "--accumulator-mantissa-bits", "40", "--layernorm-lut-bits", "8",
            "--gelu-lut-bits", "8", "--softmax-r-bits", "8"])
        assert res.exit_code == 0
        doc = json.loads((tmp_path / "compare.json").read_text())
        assert doc["first_flagged_layer"] is None

    def test_broken_pow2_lut_flags_softmax_first(self, runner, tmp_path,
                                                 monkeypatch):
        import mxvit.nonlinear as nl
        from mxvit.luts import LutTable, build_pow2_lut

        real = build_pow2_lut

        def broken(bits):
            lut = real(bits)
            return LutTable(lut.kind, lut.index_bits, lut.domain,
                            lut.frac_bits, lut.entries[::-1].copy())

        monkeypatch.setattr(nl, "build_pow2_lut", broken)
        # High precision everywhere else so the injected fault dominates the
        # ambient quantization noise.
        res = runner.invoke(main, [
            "compare", "--manifest", MANIFEST, "--dataset", DATASET,
            "--threshold", "0.1", "--out", str(tmp_path),
            "--weight-mantissa-bits", "16", "--activation-mantissa-bits", "16",
            "--accumulator-mantissa-bits", "40", "--layernorm-lut-bits", "8",
            "--gelu-lut-bits", "8"])
        assert res.exit_code == 0
        doc = json.loads((tmp_path / "compare.json").read_text())
        assert doc["first_flagged_layer"] is not None
        assert "softmax" in doc["first_flagged_layer"]


class TestExitCodes:
    def test_missing_manifest_is_io_error(self, runner):
        res = runner.invoke(main, ["evaluate", "--manifest", "/nope.json",
                                   "--dataset", DATASET])
        assert res.exit_code == 3

    def test_invalid_width_is_config_error(self, runner):
        res = runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                                   "--dataset", DATASET,
                                   "--weight-mantissa-bits", "1"])
        assert res.exit_code == 2

    def test_empty_dataset_is_io_error(self, runner, tmp_path):
        res = runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                                   "--dataset", str(tmp_path)])
        assert res.exit_code == 3

    def test_non_finite_sample_is_numeric_error(self, runner, tmp_path):
        (tmp_path / "labels.csv").write_text("file,label\nbad.f32,0\n")
        (tmp_path / "bad.f32").write_bytes(
            np.full(256, np.nan, dtype="<f4").tobytes())
        res = runner.invoke(main, ["evaluate", "--manifest", MANIFEST,
                                   "--dataset", str(tmp_path)])
        assert res.exit_code == 4
