"""mxvit command line: quantize, run, evaluate, sweep, search, lut-dump, compare.

Every command is deterministic given identical inputs; numeric outputs carry
the sha256 fingerprint of the effective configuration.  Exit codes: 0 success,
2 configuration error, 3 IO/manifest error, 4 numeric error.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:           # Python < 3.11
    import tomli

from .archive import read_archive, write_archive
from .dse import (
    SWEEP_TARGETS,
    SweepSpec,
    cost_report,
    curve_to_csv,
    curve_to_json,
    greedy_search,
    sweep,
)
from .errors import (
    AccumulatorOverflowError,
    ConfigError,
    DomainError,
    ManifestError,
)
from .formats import QuantConfig, quantize_tensor
from .luts import build_lut
from .model import (
    ModelManifest,
    config_fingerprint,
    config_to_dict,
    evaluate,
    load_dataset,
    load_manifest,
    nonlinear_config_from_dict,
    quant_config_from_dict,
    run_model,
)
from .nonlinear import NonlinearConfig

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_QUANT_KEYS = ("weight_mantissa_bits", "activation_mantissa_bits",
               "weight_block_size", "activation_block_size",
               "exponent_bits", "accumulator_mantissa_bits")
_NONLINEAR_KEYS = ("layernorm_lut_bits", "gelu_lut_bits", "gelu_domain",
                   "softmax_r_bits")


def handle_errors(fn):
    """Map library exceptions onto the documented exit-code table."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except ManifestError as exc:
            click.echo(f"io error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except (DomainError, AccumulatorOverflowError) as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except OSError as exc:
            click.echo(f"io error: {exc}", err=True)
            sys.exit(EXIT_IO)
    return wrapper


def config_options(fn):
    """Flags mirroring the config file keys one-to-one; flags win."""
    opts = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="TOML config with [quant] and [nonlinear] sections."),
        click.option("--weight-mantissa-bits", type=int, default=None),
        click.option("--activation-mantissa-bits", type=int, default=None),
        click.option("--weight-block-size", type=int, default=None),
        click.option("--activation-block-size", type=int, default=None),
        click.option("--exponent-bits", type=int, default=None),
        click.option("--accumulator-mantissa-bits", type=int, default=None),
        click.option("--layernorm-lut-bits", type=int, default=None),
        click.option("--gelu-lut-bits", type=int, default=None),
        click.option("--gelu-domain", type=float, default=None),
        click.option("--softmax-r-bits", type=int, default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def resolve_configs(manifest: Optional[ModelManifest], config_path,
                    kwargs: dict) -> tuple[QuantConfig, NonlinearConfig]:
    """Manifest defaults <- config file <- command-line flags."""
    qd, nd = {}, {}
    if manifest is not None:
        base = config_to_dict(manifest.quant, manifest.nonlinear)
        qd.update({k: v for k, v in base["quant"].items() if k != "rounding"})
        nd.update(base["nonlinear"])
        nd.pop("epsilon", None)
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise ManifestError(f"config file not found: {p}")
        try:
            doc = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"bad config file {p}: {exc}") from None
        for key, val in doc.get("quant", {}).items():
            if key not in _QUANT_KEYS:
                raise ConfigError(f"unknown [quant] key {key!r}")
            qd[key] = val
        for key, val in doc.get("nonlinear", {}).items():
            if key not in _NONLINEAR_KEYS:
                raise ConfigError(f"unknown [nonlinear] key {key!r}")
            nd[key] = val
    for key in _QUANT_KEYS:
        if kwargs.get(key) is not None:
            qd[key] = kwargs[key]
    for key in _NONLINEAR_KEYS:
        if kwargs.get(key) is not None:
            nd[key] = kwargs[key]
    return quant_config_from_dict(qd), nonlinear_config_from_dict(nd)


def _pop_config_kwargs(kwargs: dict) -> dict:
    keys = _QUANT_KEYS + _NONLINEAR_KEYS
    return {k: kwargs.pop(k) for k in keys if k in kwargs}


def _load(manifest_path: str) -> ModelManifest:
    return load_manifest(manifest_path)


def _dataset(manifest: ModelManifest, dataset_path: str):
    return load_dataset(dataset_path, manifest.image_size)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    click.echo(f"wrote {path}")


@click.group()
@click.version_option(package_name="mxvit")
def main() -> None:
    """Bit-exact MXInt emulator for transformer datapaths."""


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, help="Recorded in outputs.")
@config_options
@handle_errors
def quantize(manifest_path, out_dir, seed, config_path, **kwargs):
    """Quantize every weight tensor into a packed archive plus a stats report."""
    cfg_kwargs = _pop_config_kwargs(kwargs)
    manifest = _load(manifest_path)
    qcfg, ncfg = resolve_configs(manifest, config_path, cfg_kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tensors = {}
    doc = json.loads(Path(manifest_path).read_text())
    base = Path(manifest_path).parent
    for name, entry in doc["tensors"].items():
        data = np.fromfile(base / entry["file"], dtype="<f4").astype(np.float64)
        data = data.reshape(tuple(entry["shape"]))
        tensors[name] = quantize_tensor(data, qcfg, "weight")

    write_archive(out / "weights.mxar", tensors)
    click.echo(f"wrote {out / 'weights.mxar'}")

    stats = {}
    for name, t in sorted(tensors.items()):
        data = np.fromfile(base / doc["tensors"][name]["file"], dtype="<f4")
        vals = data.astype(np.float64).reshape(t.shape)
        err = np.abs(t.dequantize() - vals)
        exp_full = np.repeat(t.exponents, t.block_size, axis=t.block_axis)
        sl = [slice(None)] * len(t.shape)
        sl[t.block_axis] = slice(0, t.shape[t.block_axis])
        bound = np.ldexp(0.5, exp_full[tuple(sl)].astype(np.int32))
        stats[name] = {
            "max_abs_error": float(err.max()),
            "within_half_step_bound": bool(np.all(err <= bound)),
            "bits_per_element": t.bits_per_element(),
            "stored_bits": t.stored_bits(),
        }
    report = {
        "config_fingerprint": config_fingerprint(qcfg, ncfg),
        "seed": seed,
        "tensors": stats,
    }
    _write(out / "quantize_stats.json",
           json.dumps(report, indent=2, sort_keys=True) + "\n")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["mxint", "reference"]), default="mxint")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@config_options
@handle_errors
def run(manifest_path, dataset_path, mode, out_dir, seed, config_path, **kwargs):
    """Run the model over a dataset and write logits + predictions."""
    cfg_kwargs = _pop_config_kwargs(kwargs)
    manifest = _load(manifest_path)
    qcfg, ncfg = resolve_configs(manifest, config_path, cfg_kwargs)
    images, labels = _dataset(manifest, dataset_path)
    logits = run_model(images, manifest, mode, qcfg=qcfg, ncfg=ncfg)
    doc = {
        "config_fingerprint": config_fingerprint(qcfg, ncfg),
        "mode": mode,
        "seed": seed,
        "logits": [[float(x) for x in row] for row in logits],
        "predictions": logits.argmax(axis=-1).tolist(),
        "labels": labels.tolist(),
    }
    _write(Path(out_dir) / f"run_{mode}.json",
           json.dumps(doc, indent=2, sort_keys=True) + "\n")


@main.command("evaluate")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["mxint", "reference"]), default="mxint")
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seed", type=int, default=0)
@config_options
@handle_errors
def evaluate_cmd(manifest_path, dataset_path, mode, out_dir, seed,
                 config_path, **kwargs):
    """Top-1 accuracy plus per-sample agreement with the reference path."""
    cfg_kwargs = _pop_config_kwargs(kwargs)
    manifest = _load(manifest_path)
    qcfg, ncfg = resolve_configs(manifest, config_path, cfg_kwargs)
    images, labels = _dataset(manifest, dataset_path)
    result = evaluate(manifest, images, labels, mode, qcfg=qcfg, ncfg=ncfg)
    ref = evaluate(manifest, images, labels, "reference")
    agreement = [int(a == b) for a, b in
                 zip(result["predictions"], ref["predictions"])]
    doc = {
        "config_fingerprint": config_fingerprint(qcfg, ncfg),
        "seed": seed,
        "mode": mode,
        "accuracy": result["accuracy"],
        "reference_accuracy": ref["accuracy"],
        "accuracy_loss_pp": (ref["accuracy"] - result["accuracy"]) * 100.0,
        "num_samples": result["num_samples"],
        "agreement_with_reference": agreement,
        "agreement_rate": float(np.mean(agreement)),
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out_dir:
        _write(Path(out_dir) / f"evaluate_{mode}.json", text)
    click.echo(f"accuracy[{mode}] = {result['accuracy']:.6f} "
               f"(reference {ref['accuracy']:.6f}, "
               f"loss {doc['accuracy_loss_pp']:.4f} pp)")


@main.command("sweep")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--target", required=True, type=click.Choice(list(SWEEP_TARGETS)))
@click.option("--values", required=True,
              help="Comma-separated values, e.g. 1,2,3,4,5,6,7,8")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@config_options
@handle_errors
def sweep_cmd(manifest_path, dataset_path, target, values, out_dir, seed,
              config_path, **kwargs):
    """Sweep one knob and emit the accuracy-loss curve (CSV + JSON)."""
    cfg_kwargs = _pop_config_kwargs(kwargs)
    manifest = _load(manifest_path)
    qcfg, ncfg = resolve_configs(manifest, config_path, cfg_kwargs)
    images, labels = _dataset(manifest, dataset_path)
    try:
        parsed = tuple(float(v) if target == "gelu_domain" else int(v)
                       for v in values.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --values: {exc}") from None
    spec = SweepSpec(target=target, values=parsed, qcfg=qcfg, ncfg=ncfg)
    curve = sweep(spec, manifest, images, labels)
    fp = config_fingerprint(qcfg, ncfg)
    out = Path(out_dir)
    _write(out / f"sweep_{target}.csv", curve_to_csv(target, curve))
    _write(out / f"sweep_{target}.json", curve_to_json(target, curve, fp))


@main.command("search")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--budget-pp", type=float, default=1.0,
              help="Accuracy-loss budget in percentage points.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@handle_errors
def search_cmd(manifest_path, dataset_path, budget_pp, out_dir, seed):
    """Greedy minimal-bitwidth search under the loss budget."""
    manifest = _load(manifest_path)
    images, labels = _dataset(manifest, dataset_path)
    res = greedy_search(manifest, images, labels, budget_pp=budget_pp)
    fp = config_fingerprint(res.qcfg, res.ncfg)
    out = Path(out_dir)
    _write(out / "search_result.json", res.to_json(fp))
    report = cost_report(res.qcfg, res.ncfg, manifest)
    report.accuracy_loss_pp = res.loss_pp
    _write(out / "search_cost_report.json", report.to_json())
    click.echo(f"loss {res.loss_pp:.4f} pp after {res.evaluations} evaluations")


@main.command("lut-dump")
@click.option("--kind", required=True,
              type=click.Choice(["inv_sqrt", "gelu", "pow2"]))
@click.option("--bits", type=int, required=True, help="LUT index bits.")
@click.option("--gelu-domain", type=float, default=3.0)
@click.option("--format", "fmt", type=click.Choice(["hex", "csv"]), default="hex")
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def lut_dump(kind, bits, gelu_domain, fmt, out_path):
    """Dump LUT entries as a hardware memory-initialization file."""
    lut = build_lut(kind, bits, gelu_domain)
    word_bits = lut.frac_bits + 4
    width = -(-word_bits // 4)
    lines = []
    if fmt == "hex":
        mask = (1 << word_bits) - 1
        for e in lut.entries:
            lines.append(format(int(e) & mask, f"0{width}x"))
    else:
        lines.append("index,entry,value")
        for i, e in enumerate(lut.entries):
            lines.append(f"{i},{int(e)},{int(e) / (1 << lut.frac_bits):.10g}")
    _write(Path(out_path), "\n".join(lines) + "\n")


@main.command("compare")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--threshold", type=float, default=0.5,
              help="Max-abs-error threshold for flagging a layer.")
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seed", type=int, default=0)
@config_options
@handle_errors
def compare_cmd(manifest_path, dataset_path, threshold, out_dir, seed,
                config_path, **kwargs):
    """Per-layer activation divergence between mxint and reference paths."""
    cfg_kwargs = _pop_config_kwargs(kwargs)
    manifest = _load(manifest_path)
    qcfg, ncfg = resolve_configs(manifest, config_path, cfg_kwargs)
    images, labels = _dataset(manifest, dataset_path)
    trace_mx, trace_ref = {}, {}
    run_model(images, manifest, "mxint", qcfg=qcfg, ncfg=ncfg, trace=trace_mx)
    run_model(images, manifest, "reference", trace=trace_ref)
    layers = {}
    first_flagged = None
    for name in trace_ref:
        diff = np.abs(trace_mx[name] - trace_ref[name])
        layers[name] = {
            "max_abs_error": float(diff.max()),
            "mean_abs_error": float(diff.mean()),
            "flagged": bool(diff.max() > threshold),
        }
        if layers[name]["flagged"] and first_flagged is None:
            first_flagged = name
    doc = {
        "config_fingerprint": config_fingerprint(qcfg, ncfg),
        "seed": seed,
        "threshold": threshold,
        "layers": layers,
        "first_flagged_layer": first_flagged,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out_dir:
        _write(Path(out_dir) / "compare.json", text)
    if first_flagged:
        click.echo(f"first layer over threshold: {first_flagged}")
    else:
        click.echo("all layers below threshold")


if __name__ == "__main__":
    main()
