"""Acceptance suite: one test per release criterion.

Run with ``pytest -v tests/test_acceptance.py`` to get one pass/fail line per
criterion.  Each test is self-contained and states its tolerance inline.
"""

import json
import math
import time

import numpy as np
from click.testing import CliRunner
from scipy.special import erf

from mxvit.cli import main as cli_main
from mxvit.dse import SweepSpec, cost_report, sweep
from mxvit.formats import QuantConfig, quantize_block, quantize_tensor
from mxvit.linalg import accumulator_width, matmul_nt, mxint_dot
from mxvit.luts import (
    build_gelu_lut,
    build_inv_sqrt_lut,
    build_pow2_lut,
    gelu_reference,
    inv_sqrt,
)
from mxvit.model import evaluate
from mxvit.nonlinear import (
    NonlinearConfig,
    gelu_tensor,
    layernorm_batch,
    softmax_batch,
)

from conftest import ASSETS, GOLDEN

MANIFEST = str(ASSETS / "toy" / "manifest.json")
DATASET = str(ASSETS / "dataset")


def test_criterion_01_quantization_round_trip_bound():
    """Every element of 10,000 random blocks per (m, B) combination survives
    the round trip within half a quantization step, in under 10 seconds."""
    rng = np.random.default_rng(101)
    start = time.monotonic()
    for m in (4, 6, 8):
        for B in (16, 256):
            cfg = QuantConfig(weight_mantissa_bits=max(m, 2),
                              activation_mantissa_bits=m,
                              activation_block_size=B)
            scales = 2.0 ** rng.uniform(-12, 12, (10_000, 1))
            vals = rng.normal(0.0, 1.0, (10_000, B)) * scales
            vals[:5] = 0.0                      # all-zero blocks included
            t = quantize_tensor(vals, cfg, "activation")
            err = np.abs(t.dequantize() - vals)
            bound = np.ldexp(
                0.5, np.repeat(t.exponents, B, axis=-1).astype(np.int32))
            assert np.all(err <= bound), (m, B)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"took {elapsed:.1f}s"


def test_criterion_02_linear_exactness_under_capacity_condition():
    """dot/matmul results equal the double-precision dot of the dequantized
    operands bit-exactly whenever the accumulated magnitude fits the
    register; 1,000 random cases, zero failures."""
    rng = np.random.default_rng(202)
    cfg = QuantConfig()
    checked = held = 0

    for _ in range(700):                        # scalar dot cases
        k = int(rng.choice([4, 8, 16, 32]))
        x = quantize_block(rng.normal(0, 2.0 ** rng.uniform(-4, 4), k), 8)
        w = quantize_block(rng.normal(0, 2.0 ** rng.uniform(-4, 4), k), 6)
        width = accumulator_width(cfg, k)
        condition = int(np.sum(np.abs(x.mantissas * w.mantissas))) < 1 << (width - 1)
        mant, exp = mxint_dot(x, w, cfg)
        checked += 1
        if condition:
            held += 1
            exact = float(np.dot(np.ldexp(x.mantissas, x.shared_exponent),
                                 np.ldexp(w.mantissas, w.shared_exponent)))
            assert mant * 2.0 ** exp == exact

    for _ in range(10):                         # matmul cases, 30 entries each
        a = quantize_tensor(rng.normal(0, 1, (6, 16)), cfg, "activation")
        bt = quantize_tensor(rng.normal(0, 1, (5, 16)), cfg, "weight")
        mant, exp = matmul_nt(a, bt, cfg)
        width = accumulator_width(cfg, 16)
        oracle = a.dequantize() @ bt.dequantize().T
        for i in range(6):
            for j in range(5):
                s = int(np.sum(np.abs(a.mantissas[i] * bt.mantissas[j, :16])))
                checked += 1
                if s < 1 << (width - 1):
                    held += 1
                    got = float(mant[i, j]) * 2.0 ** int(exp[i, j])
                    assert got == oracle[i, j]

    assert checked == 1000
    assert held >= 200, f"capacity condition held in only {held} cases"


def test_criterion_03_layernorm_shift_cancellation():
    """Adding a common c in [-8, 8] to every block exponent of a row leaves
    the LayerNorm output bit-identical; 1,000 random rows, zero failures."""
    rng = np.random.default_rng(303)
    qcfg, ncfg = QuantConfig(), NonlinearConfig()
    lut = build_inv_sqrt_lut(ncfg.layernorm_lut_bits)
    n = 32
    g = quantize_tensor(rng.uniform(0.5, 1.5, n), qcfg, "weight").dequantize()
    b = quantize_tensor(rng.uniform(-0.5, 0.5, n), qcfg, "weight").dequantize()

    vals = rng.normal(0, 1, (1000, n)) * 2.0 ** rng.uniform(-3, 3, (1000, 1))
    vals[:3] = 1.0                              # constant (zero-variance) rows
    t = quantize_tensor(vals, qcfg, "activation")
    mant = t.mantissas.reshape(1000, -1, qcfg.activation_block_size)
    c = rng.integers(-8, 9, size=(1000, 1))
    out = layernorm_batch(mant, t.exponents, n, g, b, qcfg, ncfg, lut)
    shifted = layernorm_batch(mant, t.exponents + c, n, g, b, qcfg, ncfg, lut)
    assert np.array_equal(out.mantissas, shifted.mantissas)
    assert np.array_equal(out.exponents, shifted.exponents)


def test_criterion_04_inv_sqrt_branch_law():
    """inv_sqrt(4v) equals inv_sqrt(v)/2 bit-exactly: same result mantissa,
    exponent one lower — over the full index range of every table size."""
    for bits in range(1, 9):
        lut = build_inv_sqrt_lut(bits)
        for pt in lut.eval_points():
            if pt >= 1.0:
                m, e = float(pt), 0             # even-exponent branch
            else:
                m, e = float(2.0 * pt), -1      # odd-exponent branch
            m1, e1 = inv_sqrt((m, e), lut)
            m2, e2 = inv_sqrt((m, e + 2), lut)
            assert m2 == m1 and e2 == e1 - 1, (bits, pt)


def test_criterion_05_gelu_regions_and_table_bound():
    """Passthrough (v >= a) and dead (v <= -a) regions are bit-exact; inside
    (-a, a) the table error stays below the oracle bound
    bucket_width * max|GELU'| + entry rounding."""
    rng = np.random.default_rng(505)
    cfg, ncfg = QuantConfig(), NonlinearConfig()
    a = ncfg.gelu_domain
    lut = build_gelu_lut(ncfg.gelu_lut_bits, a)

    t = quantize_tensor(rng.uniform(-8, 8, (64, 32)), cfg, "activation")
    v = t.dequantize()
    y = gelu_tensor(t, lut, a, cfg).dequantize()
    assert np.array_equal(y[v >= a], v[v >= a])
    assert np.all(y[v <= -a] == 0.0)

    # Oracle bound on the raw table: max|GELU'| from the analytic derivative.
    grid = np.linspace(-a, a, 200_001)
    phi = np.exp(-0.5 * grid * grid) / math.sqrt(2.0 * math.pi)
    big_phi = 0.5 * (1.0 + erf(grid / math.sqrt(2.0)))
    max_grad = float(np.max(np.abs(big_phi + grid * phi)))
    bound = lut.step * max_grad + 2.0 ** -(lut.frac_bits + 1)

    inner = np.linspace(-a, a, 100_000, endpoint=False)
    err = np.abs(lut.lookup(inner) - np.asarray(gelu_reference(inner)))
    assert float(err.max()) <= bound


def test_criterion_06_softmax_range_argmax_uniform():
    """Softmax outputs lie in [0, 1]; the argmax survives on 10,000 random
    rows with unique maxima; uniform power-of-two-length rows come out
    exactly equal."""
    rng = np.random.default_rng(606)
    qcfg, ncfg = QuantConfig(), NonlinearConfig()
    lut = build_pow2_lut(ncfg.softmax_r_bits)

    vals = rng.normal(0, 3, (11_000, 16))
    t = quantize_tensor(vals, qcfg, "activation")
    deq = t.dequantize()
    srt = np.sort(deq, axis=1)
    unique = np.flatnonzero(srt[:, -1] > srt[:, -2])[:10_000]
    assert len(unique) == 10_000

    mant = t.mantissas.reshape(len(vals), 1, 16)
    y = softmax_batch(mant, t.exponents, 16, qcfg, ncfg, lut).dequantize()
    assert np.all(y >= 0.0) and np.all(y <= 1.0)
    rows = y[unique]
    assert np.all(rows[np.arange(len(unique)),
                       np.argmax(deq[unique], axis=1)] == rows.max(axis=1))

    for n in (2, 4, 8, 16, 32, 64):
        u = quantize_tensor(np.full((1, n), 1.5), qcfg, "activation")
        yu = softmax_batch(u.mantissas.reshape(1, -1, qcfg.activation_block_size)
                           if n >= qcfg.activation_block_size
                           else u.mantissas.reshape(1, 1, -1),
                           u.exponents, n, qcfg, ncfg, lut).dequantize().ravel()[:n]
        assert np.all(yu == 1.0 / n), n


def test_criterion_07_cost_model_constants():
    """Default configs reproduce the headline storage densities exactly
    (A: 8 + 8/16 = 8.5, W: 6 + 8/256 = 6.03125) and LUT entry reductions of
    2^9 / 2^14 / 2^8 for GELU / Softmax / LayerNorm — each at least 16x."""
    r = cost_report(QuantConfig(), NonlinearConfig())
    assert r.activation_bits_per_element == 8.5
    assert r.weight_bits_per_element == 6.03125
    red = {l.op: l.entry_reduction for l in r.luts}
    assert red == {"gelu": 2.0 ** 9, "softmax": 2.0 ** 14, "layernorm": 2.0 ** 8}
    assert all(v >= 16.0 for v in red.values())


def test_criterion_08_toy_model_ptq_loss(manifest, dataset, reference_result):
    """Default MXInt widths lose at most 1.0 percentage point top-1 accuracy
    against the double-precision reference on the bundled model + eval set,
    well inside a 5-minute budget."""
    images, labels = dataset
    start = time.monotonic()
    res = evaluate(manifest, images, labels, "mxint")
    elapsed = time.monotonic() - start
    loss_pp = (reference_result["accuracy"] - res["accuracy"]) * 100.0
    assert loss_pp <= 1.0, f"lost {loss_pp:.2f}pp"
    assert elapsed < 300.0, f"took {elapsed:.1f}s"


def test_criterion_09_lut_sweep_curves(manifest, dataset, reference_result):
    """Sweeping each LUT width over [1..8] yields non-increasing accuracy
    loss, and the loss at the chosen widths (4-5 bits for LayerNorm/GELU,
    2 bits for Softmax) stays under 1 percentage point."""
    images, labels = dataset
    ref = reference_result["accuracy"]
    chosen = {"layernorm_lut_bits": (4, 5), "gelu_lut_bits": (4, 5),
              "softmax_r_bits": (2,)}
    for target, widths in chosen.items():
        spec = SweepSpec(target=target, values=tuple(range(1, 9)))
        curve = sweep(spec, manifest, images, labels, reference_accuracy=ref)
        losses = [p.loss_pp for p in curve]
        assert all(a >= b for a, b in zip(losses, losses[1:])), (target, losses)
        for w in widths:
            assert losses[w - 1] < 1.0, (target, w, losses[w - 1])


def test_criterion_10_deterministic_artifacts(tmp_path):
    """Repeated evaluate / sweep / lut-dump invocations produce byte-identical
    artifacts, and lut-dump hex files match the frozen goldens."""
    runner = CliRunner()
    pairs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        r = runner.invoke(cli_main, ["evaluate", "--manifest", MANIFEST,
                                     "--dataset", DATASET, "--out", str(d)])
        assert r.exit_code == 0
        r = runner.invoke(cli_main, ["sweep", "--manifest", MANIFEST,
                                     "--dataset", DATASET,
                                     "--target", "gelu_lut_bits",
                                     "--values", "3,5", "--out", str(d)])
        assert r.exit_code == 0
        for kind, bits in (("pow2", 2), ("gelu", 5), ("inv_sqrt", 5)):
            r = runner.invoke(cli_main, ["lut-dump", "--kind", kind,
                                         "--bits", str(bits),
                                         "--out", str(d / f"{kind}_{bits}.hex")])
            assert r.exit_code == 0
        pairs.append(d)

    a, b = pairs
    for name in ("evaluate_mxint.json", "sweep_gelu_lut_bits.csv",
                 "sweep_gelu_lut_bits.json", "pow2_2.hex", "gelu_5.hex",
                 "inv_sqrt_5.hex"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for name in ("pow2_2.hex", "gelu_5.hex", "inv_sqrt_5.hex"):
        assert (a / name).read_bytes() == (GOLDEN / name).read_bytes(), name
