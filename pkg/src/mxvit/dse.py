"""Design-space exploration: bitwidth sweeps, greedy search, cost model.

A sweep varies exactly one knob (LUT index bits, GELU domain, or a mantissa
width) and records the accuracy-loss curve against the double-precision
reference.  The greedy search starts from maximal widths and repeatedly takes
the single reduction that stays inside the loss budget while saving the most
cost-model bits, with a fixed parameter order for deterministic tie-breaks.

The cost model counts storage only: bits/element = m + exponent_bits/B per
tensor class, plus 2**index_bits LUT entries per non-linear operator.  The
"vanilla" LUT baselines (14/16/13 index bits for GELU/Softmax/LayerNorm) are
fixed constants characterizing the unoptimized design this work improves on.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .formats import QuantConfig
from .model import ModelManifest, evaluate
from .nonlinear import NonlinearConfig

VANILLA_LUT_INDEX_BITS = {"gelu": 14, "softmax": 16, "layernorm": 13}

SWEEP_TARGETS = (
    "layernorm_lut_bits",
    "gelu_lut_bits",
    "gelu_domain",
    "softmax_r_bits",
    "weight_m",
    "activation_m",
)

# deterministic greedy order: weights, activations, layernorm, gelu, softmax
GREEDY_ORDER = (
    ("weight_m", 2),
    ("activation_m", 2),
    ("layernorm_lut_bits", 1),
    ("gelu_lut_bits", 1),
    ("softmax_r_bits", 1),
)


def apply_target(qcfg: QuantConfig, ncfg: NonlinearConfig, target: str,
                 value) -> tuple[QuantConfig, NonlinearConfig]:
    """Return configs with one sweep target replaced."""
    if target == "weight_m":
        return dataclasses.replace(qcfg, weight_mantissa_bits=int(value)), ncfg
    if target == "activation_m":
        return dataclasses.replace(qcfg, activation_mantissa_bits=int(value)), ncfg
    if target == "gelu_domain":
        return qcfg, dataclasses.replace(ncfg, gelu_domain=float(value))
    if target in ("layernorm_lut_bits", "gelu_lut_bits", "softmax_r_bits"):
        return qcfg, dataclasses.replace(ncfg, **{target: int(value)})
    raise ConfigError(f"unknown sweep target {target!r}; "
                      f"expected one of {', '.join(SWEEP_TARGETS)}")


@dataclass(frozen=True)
class SweepSpec:
    """One knob, a list of values to try, and the fixed remaining config."""

    target: str
    values: tuple
    qcfg: QuantConfig = field(default_factory=QuantConfig)
    ncfg: NonlinearConfig = field(default_factory=NonlinearConfig)

    def __post_init__(self):
        if self.target not in SWEEP_TARGETS:
            raise ConfigError(f"unknown sweep target {self.target!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        for v in self.values:
            apply_target(self.qcfg, self.ncfg, self.target, v)  # validates


@dataclass
class SweepPoint:
    value: float
    accuracy: float
    loss_pp: float


def sweep(spec: SweepSpec, manifest: ModelManifest, images: np.ndarray,
          labels: np.ndarray,
          reference_accuracy: Optional[float] = None) -> list[SweepPoint]:
    """Evaluate once per value; everything else held fixed."""
    if reference_accuracy is None:
        reference_accuracy = evaluate(manifest, images, labels, "reference")["accuracy"]
    curve = []
    for v in spec.values:
        q, n = apply_target(spec.qcfg, spec.ncfg, spec.target, v)
        acc = evaluate(manifest, images, labels, "mxint", qcfg=q, ncfg=n)["accuracy"]
        curve.append(SweepPoint(value=float(v), accuracy=acc,
                                loss_pp=(reference_accuracy - acc) * 100.0))
    return curve


def curve_to_csv(target: str, curve: list[SweepPoint]) -> str:
    buf = io.StringIO()
    buf.write(f"{target},accuracy,loss_pp\n")
    for p in curve:
        buf.write(f"{p.value:g},{p.accuracy:.10g},{p.loss_pp:.10g}\n")
    return buf.getvalue()


def curve_to_json(target: str, curve: list[SweepPoint], fingerprint: str) -> str:
    doc = {
        "target": target,
        "config_fingerprint": fingerprint,
        "points": [dataclasses.asdict(p) for p in curve],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# cost model

@dataclass
class LutCost:
    op: str
    index_bits: int
    entries: int
    vanilla_index_bits: int
    entry_reduction: float          # vanilla entries / our entries


@dataclass
class CostReport:
    luts: list[LutCost]
    weight_bits_per_element: float
    activation_bits_per_element: float
    weight_density: float
    activation_density: float
    blended_bits_per_element: float
    blended_density: float
    accuracy: Optional[float] = None
    accuracy_loss_pp: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def bits_per_element(m: int, block_size: int, exponent_bits: int) -> float:
    return m + exponent_bits / block_size


def cost_report(qcfg: QuantConfig, ncfg: NonlinearConfig,
                manifest: Optional[ModelManifest] = None) -> CostReport:
    lut_bits = {
        "layernorm": ncfg.layernorm_lut_bits,
        "gelu": ncfg.gelu_lut_bits,
        "softmax": ncfg.softmax_r_bits,
    }
    luts = []
    for op, bits in lut_bits.items():
        vanilla = VANILLA_LUT_INDEX_BITS[op]
        luts.append(LutCost(
            op=op, index_bits=bits, entries=1 << bits,
            vanilla_index_bits=vanilla,
            entry_reduction=float(2 ** (vanilla - bits)),
        ))
    wb = bits_per_element(qcfg.weight_mantissa_bits, qcfg.weight_block_size,
                          qcfg.exponent_bits)
    ab = bits_per_element(qcfg.activation_mantissa_bits,
                          qcfg.activation_block_size, qcfg.exponent_bits)
    if manifest is not None:
        counts = manifest.element_counts()
        total = counts["weight"] + counts["activation"]
        blended = (counts["weight"] * wb + counts["activation"] * ab) / total
    else:
        blended = (wb + ab) / 2.0
    return CostReport(
        luts=luts,
        weight_bits_per_element=wb, activation_bits_per_element=ab,
        weight_density=32.0 / wb, activation_density=32.0 / ab,
        blended_bits_per_element=blended, blended_density=32.0 / blended,
    )


def storage_cost_bits(qcfg: QuantConfig, ncfg: NonlinearConfig,
                      manifest: ModelManifest) -> float:
    """Total storage bits the greedy search minimizes: tensors plus LUTs."""
    counts = manifest.element_counts()
    wb = bits_per_element(qcfg.weight_mantissa_bits, qcfg.weight_block_size,
                          qcfg.exponent_bits)
    ab = bits_per_element(qcfg.activation_mantissa_bits,
                          qcfg.activation_block_size, qcfg.exponent_bits)
    total = counts["weight"] * wb + counts["activation"] * ab
    for bits in (ncfg.layernorm_lut_bits, ncfg.gelu_lut_bits, ncfg.softmax_r_bits):
        total += (1 << bits) * (bits + 6)  # entry word: frac bits + headroom
    return total


# ---------------------------------------------------------------------------
# greedy search

@dataclass
class GreedyStep:
    target: str
    value: int
    loss_pp: float
    cost_bits: float


@dataclass
class GreedyResult:
    qcfg: QuantConfig
    ncfg: NonlinearConfig
    loss_pp: float
    cost_bits: float
    steps: list[GreedyStep]
    evaluations: int

    def to_json(self, fingerprint: str) -> str:
        doc = {
            "config_fingerprint": fingerprint,
            "loss_pp": self.loss_pp,
            "cost_bits": self.cost_bits,
            "evaluations": self.evaluations,
            "steps": [dataclasses.asdict(s) for s in self.steps],
            "result": {
                "weight_m": self.qcfg.weight_mantissa_bits,
                "activation_m": self.qcfg.activation_mantissa_bits,
                "layernorm_lut_bits": self.ncfg.layernorm_lut_bits,
                "gelu_lut_bits": self.ncfg.gelu_lut_bits,
                "softmax_r_bits": self.ncfg.softmax_r_bits,
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _get_target(qcfg: QuantConfig, ncfg: NonlinearConfig, target: str) -> int:
    if target == "weight_m":
        return qcfg.weight_mantissa_bits
    if target == "activation_m":
        return qcfg.activation_mantissa_bits
    return getattr(ncfg, target)


def greedy_search(manifest: ModelManifest, images: np.ndarray,
                  labels: np.ndarray, budget_pp: float = 1.0,
                  start_bits: int = 8) -> GreedyResult:
    """Minimal-bitwidth configuration under an accuracy-loss budget.

    Starts from ``start_bits`` everywhere; each iteration tries a one-step
    reduction of every parameter, keeps those within budget, and commits the
    one saving the most storage bits (ties broken by the fixed order).
    """
    if budget_pp < 0:
        raise ConfigError("loss budget must be non-negative")
    ref_acc = evaluate(manifest, images, labels, "reference")["accuracy"]
    qcfg = QuantConfig(weight_mantissa_bits=start_bits,
                       activation_mantissa_bits=start_bits,
                       accumulator_mantissa_bits=max(12, start_bits))
    ncfg = NonlinearConfig(layernorm_lut_bits=start_bits,
                           gelu_lut_bits=start_bits,
                           softmax_r_bits=start_bits)
    evaluations = 0

    def loss_of(q: QuantConfig, n: NonlinearConfig) -> float:
        nonlocal evaluations
        evaluations += 1
        acc = evaluate(manifest, images, labels, "mxint", qcfg=q, ncfg=n)["accuracy"]
        return (ref_acc - acc) * 100.0

    steps: list[GreedyStep] = []
    while True:
        best = None
        for target, floor in GREEDY_ORDER:
            cur = _get_target(qcfg, ncfg, target)
            if cur <= floor:
                continue
            q, n = apply_target(qcfg, ncfg, target, cur - 1)
            loss = loss_of(q, n)
            if loss <= budget_pp:
                cost = storage_cost_bits(q, n, manifest)
                if best is None or cost < best[0]:
                    best = (cost, target, cur - 1, loss, q, n)
        if best is None:
            break
        cost, target, value, loss, qcfg, ncfg = best
        steps.append(GreedyStep(target=target, value=value, loss_pp=loss,
                                cost_bits=cost))
    final_loss = loss_of(qcfg, ncfg)
    return GreedyResult(qcfg=qcfg, ncfg=ncfg, loss_pp=final_loss,
                        cost_bits=storage_cost_bits(qcfg, ncfg, manifest),
                        steps=steps, evaluations=evaluations)
