"""Toy DeiT-style transformer runner: MXInt datapath and double reference.

A model is described by a JSON manifest naming one raw little-endian float32
file per tensor (with sha256 digests) plus the architecture numbers.  The
block follows the per-head attention formulation with two deliberate
characteristics of the reference algorithm: the attention residual adds the
*normalized* input (``B_n = LayerNorm(B_o + X_n)``) and the MLP residual adds
``B_n`` (``O = D + B_n``).

``run_model`` accepts a batch of images and is fully vectorized; the MXInt
mode quantizes every weight tensor exactly once per configuration.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, ManifestError
from .formats import MXIntTensor, QuantConfig, quantize_tensor
from .linalg import (
    LinearParams,
    matmul_nt,
    mxint_linear,
    requantize,
    requantize_raw,
    residual_add,
    scale_attention_scores,
)
from .luts import LutTable, gelu_reference
from .nonlinear import (
    NonlinearConfig,
    build_luts,
    gelu_tensor,
    layernorm_batch,
    softmax_batch,
)

Trace = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# manifest and weights

@dataclass
class BlockWeights:
    """All parameters of one transformer block; per-head projections are
    separate (d_k x dim) matrices."""

    wq: list[np.ndarray]
    wk: list[np.ndarray]
    wv: list[np.ndarray]
    w0: np.ndarray
    wu: np.ndarray
    wd: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray

    def validate(self, dim: int, heads: int, d_k: int, hidden: int) -> None:
        if heads < 1:
            raise ConfigError("head count must be >= 1")
        if d_k * heads != dim:
            raise ConfigError(f"d_k*H = {d_k * heads} must equal model dim {dim}")
        for name, mats in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv)):
            if len(mats) != heads:
                raise ConfigError(f"{name}: expected {heads} head matrices")
            for h, w in enumerate(mats):
                if w.shape != (d_k, dim):
                    raise ConfigError(
                        f"{name} head {h}: attention projection shape "
                        f"{w.shape} != {(d_k, dim)}")
        if self.w0.shape != (dim, dim):
            raise ConfigError(f"w0: output projection shape {self.w0.shape} != {(dim, dim)}")
        if self.wu.shape != (hidden, dim):
            raise ConfigError(f"wu: MLP up projection shape {self.wu.shape} != {(hidden, dim)}")
        if self.wd.shape != (dim, hidden):
            raise ConfigError(f"wd: MLP down projection shape {self.wd.shape} != {(dim, hidden)}")
        for name in ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
            if getattr(self, name).shape != (dim,):
                raise ConfigError(f"{name}: layernorm parameter shape must be ({dim},)")


@dataclass
class ModelManifest:
    """Architecture plus loaded tensors plus the configs they shipped with."""

    dim: int
    heads: int
    d_k: int
    hidden: int
    layers: int
    num_classes: int
    image_size: int
    patch_size: int
    patch_embed_w: np.ndarray
    patch_embed_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    blocks: list[BlockWeights]
    quant: QuantConfig = field(default_factory=QuantConfig)
    nonlinear: NonlinearConfig = field(default_factory=NonlinearConfig)

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2

    def validate(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ConfigError("image_size must be a multiple of patch_size")
        if len(self.blocks) != self.layers:
            raise ConfigError(f"expected {self.layers} blocks, got {len(self.blocks)}")
        if self.patch_embed_w.shape != (self.dim, self.patch_dim):
            raise ConfigError(
                f"patch_embed.weight shape {self.patch_embed_w.shape} != "
                f"{(self.dim, self.patch_dim)}")
        if self.patch_embed_b.shape != (self.dim,):
            raise ConfigError("patch_embed.bias shape mismatch")
        if self.head_w.shape != (self.num_classes, self.dim):
            raise ConfigError("head.weight shape mismatch")
        if self.head_b.shape != (self.num_classes,):
            raise ConfigError("head.bias shape mismatch")
        for b in self.blocks:
            b.validate(self.dim, self.heads, self.d_k, self.hidden)

    def element_counts(self) -> dict[str, int]:
        """Total parameter and (per-sample) activation element counts,
        used as weights in the blended memory-density figure."""
        params = self.patch_embed_w.size + self.patch_embed_b.size
        params += self.head_w.size + self.head_b.size
        for b in self.blocks:
            params += sum(w.size for w in b.wq + b.wk + b.wv)
            params += b.w0.size + b.wu.size + b.wd.size
            params += (b.ln1_gamma.size + b.ln1_beta.size
                       + b.ln2_gamma.size + b.ln2_beta.size)
        t = self.num_tokens
        acts = t * self.patch_dim + t * self.dim
        for _ in self.blocks:
            per_block = 3 * t * self.dim          # X_n, B_n, B_c
            per_block += 3 * t * self.dim         # Q/K/V across heads
            per_block += self.heads * t * t       # attention maps
            per_block += 2 * t * self.hidden      # U before/after GELU
            per_block += 2 * t * self.dim         # B_o, D
            acts += per_block
        acts += self.dim + self.num_classes
        return {"weight": int(params), "activation": int(acts)}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_tensor(base: Path, name: str, entry: dict) -> np.ndarray:
    path = base / entry["file"]
    if not path.is_file():
        raise ManifestError(f"tensor {name!r}: missing weight file {path}")
    digest = _sha256(path)
    if digest != entry["digest"]:
        raise ManifestError(
            f"tensor {name!r}: digest mismatch (expected {entry['digest'][:12]}..., "
            f"got {digest[:12]}...)")
    shape = tuple(entry["shape"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != math.prod(shape):
        raise ManifestError(
            f"tensor {name!r}: file holds {data.size} floats, shape {shape} "
            f"needs {math.prod(shape)}")
    return data.astype(np.float64).reshape(shape)


def quant_config_from_dict(d: dict) -> QuantConfig:
    try:
        return QuantConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad quant config: {exc}") from None


def nonlinear_config_from_dict(d: dict) -> NonlinearConfig:
    try:
        return NonlinearConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad nonlinear config: {exc}") from None


def config_to_dict(qcfg: QuantConfig, ncfg: NonlinearConfig) -> dict:
    return {
        "quant": {
            "weight_mantissa_bits": qcfg.weight_mantissa_bits,
            "activation_mantissa_bits": qcfg.activation_mantissa_bits,
            "weight_block_size": qcfg.weight_block_size,
            "activation_block_size": qcfg.activation_block_size,
            "exponent_bits": qcfg.exponent_bits,
            "accumulator_mantissa_bits": qcfg.accumulator_mantissa_bits,
            "rounding": qcfg.rounding,
        },
        "nonlinear": {
            "layernorm_lut_bits": ncfg.layernorm_lut_bits,
            "gelu_lut_bits": ncfg.gelu_lut_bits,
            "gelu_domain": ncfg.gelu_domain,
            "softmax_r_bits": ncfg.softmax_r_bits,
            "epsilon": ncfg.epsilon,
        },
    }


def config_fingerprint(qcfg: QuantConfig, ncfg: NonlinearConfig) -> str:
    """sha256 of the canonical JSON form of the effective configuration."""
    blob = json.dumps(config_to_dict(qcfg, ncfg), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def load_manifest(path: str | Path) -> ModelManifest:
    """Parse a manifest JSON document and load + digest-check every tensor."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    base = path.parent
    try:
        arch = doc["architecture"]
        tensors = doc["tensors"]
    except KeyError as exc:
        raise ManifestError(f"manifest missing section {exc}") from None

    def rd(name: str) -> np.ndarray:
        if name not in tensors:
            raise ManifestError(f"manifest lists no tensor named {name!r}")
        return _read_tensor(base, name, tensors[name])

    heads = int(arch["heads"])
    blocks = []
    for i in range(int(arch["layers"])):
        p = f"block{i}"
        blocks.append(BlockWeights(
            wq=[rd(f"{p}.attn.head{h}.wq") for h in range(heads)],
            wk=[rd(f"{p}.attn.head{h}.wk") for h in range(heads)],
            wv=[rd(f"{p}.attn.head{h}.wv") for h in range(heads)],
            w0=rd(f"{p}.attn.w0"),
            wu=rd(f"{p}.mlp.wu"),
            wd=rd(f"{p}.mlp.wd"),
            ln1_gamma=rd(f"{p}.ln1.gamma"), ln1_beta=rd(f"{p}.ln1.beta"),
            ln2_gamma=rd(f"{p}.ln2.gamma"), ln2_beta=rd(f"{p}.ln2.beta"),
        ))
    manifest = ModelManifest(
        dim=int(arch["dim"]), heads=heads, d_k=int(arch["d_k"]),
        hidden=int(arch["hidden"]), layers=int(arch["layers"]),
        num_classes=int(arch["num_classes"]),
        image_size=int(arch["image_size"]), patch_size=int(arch["patch_size"]),
        patch_embed_w=rd("patch_embed.weight"), patch_embed_b=rd("patch_embed.bias"),
        head_w=rd("head.weight"), head_b=rd("head.bias"),
        blocks=blocks,
        quant=quant_config_from_dict(doc.get("quant", {})),
        nonlinear=nonlinear_config_from_dict(doc.get("nonlinear", {})),
    )
    manifest.validate()
    return manifest


def save_manifest(manifest_path: str | Path, arch: dict,
                  tensors: dict[str, np.ndarray],
                  quant: Optional[dict] = None,
                  nonlinear: Optional[dict] = None) -> None:
    """Write weight files + manifest JSON (used by the training exporter)."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    base.mkdir(parents=True, exist_ok=True)
    listing = {}
    for name, arr in tensors.items():
        fname = name.replace(".", "_") + ".f32"
        data = np.ascontiguousarray(arr, dtype="<f4")
        (base / fname).write_bytes(data.tobytes())
        listing[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "digest": _sha256(base / fname),
        }
    doc = {"architecture": arch, "tensors": listing}
    if quant:
        doc["quant"] = quant
    if nonlinear:
        doc["nonlinear"] = nonlinear
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# dataset

def load_dataset(path: str | Path, image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Load a directory of raw-float sample files plus labels.csv.

    Returns (images (N, S, S) float64, labels (N,) int64), ordered as listed
    in the CSV.
    """
    path = Path(path)
    labels_file = path / "labels.csv"
    if not labels_file.is_file():
        raise ManifestError(f"dataset has no labels.csv: {path}")
    files, labels = [], []
    with labels_file.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "file":
                continue
            files.append(row[0])
            labels.append(int(row[1]))
    if not files:
        raise ManifestError(f"dataset is empty: {labels_file}")
    images = np.empty((len(files), image_size, image_size), dtype=np.float64)
    for i, fname in enumerate(files):
        fp = path / fname
        if not fp.is_file():
            raise ManifestError(f"dataset sample missing: {fp}")
        data = np.fromfile(fp, dtype="<f4")
        if data.size != image_size * image_size:
            raise ManifestError(
                f"sample {fname}: {data.size} floats, expected {image_size ** 2}")
        images[i] = data.astype(np.float64).reshape(image_size, image_size)
    return images, np.asarray(labels, dtype=np.int64)


def extract_patches(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(N, S, S) images -> (N, tokens, patch_size**2) row-major flattened patches."""
    n, s, _ = images.shape
    g = s // patch_size
    x = images.reshape(n, g, patch_size, g, patch_size)
    return x.transpose(0, 1, 3, 2, 4).reshape(n, g * g, patch_size * patch_size)


# ---------------------------------------------------------------------------
# quantized parameter cache

@dataclass
class QuantizedBlock:
    q: list[LinearParams]
    k: list[LinearParams]
    v: list[LinearParams]
    o: LinearParams
    up: LinearParams
    down: LinearParams
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray


@dataclass
class QuantizedModel:
    """All weights quantized once; reused across every sample."""

    embed: LinearParams
    head: LinearParams
    pool: MXIntTensor
    blocks: list[QuantizedBlock]
    luts: dict[str, LutTable]
    qcfg: QuantConfig
    ncfg: NonlinearConfig


def _qlin(w: np.ndarray, cfg: QuantConfig, bias: Optional[np.ndarray] = None
          ) -> LinearParams:
    b = quantize_tensor(bias, cfg, "weight") if bias is not None else None
    return LinearParams(quantize_tensor(w, cfg, "weight"), b)


def _qvec(v: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    return quantize_tensor(v, cfg, "weight").dequantize()


def prepare_model(manifest: ModelManifest, qcfg: Optional[QuantConfig] = None,
                  ncfg: Optional[NonlinearConfig] = None) -> QuantizedModel:
    qcfg = qcfg or manifest.quant
    ncfg = ncfg or manifest.nonlinear
    blocks = []
    for bw in manifest.blocks:
        blocks.append(QuantizedBlock(
            q=[_qlin(w, qcfg) for w in bw.wq],
            k=[_qlin(w, qcfg) for w in bw.wk],
            v=[_qlin(w, qcfg) for w in bw.wv],
            o=_qlin(bw.w0, qcfg),
            up=_qlin(bw.wu, qcfg),
            down=_qlin(bw.wd, qcfg),
            ln1_gamma=_qvec(bw.ln1_gamma, qcfg), ln1_beta=_qvec(bw.ln1_beta, qcfg),
            ln2_gamma=_qvec(bw.ln2_gamma, qcfg), ln2_beta=_qvec(bw.ln2_beta, qcfg),
        ))
    t = manifest.num_tokens
    pool = quantize_tensor(np.full((1, t), 1.0 / t), qcfg, "weight")
    return QuantizedModel(
        embed=_qlin(manifest.patch_embed_w, qcfg, manifest.patch_embed_b),
        head=_qlin(manifest.head_w, qcfg, manifest.head_b),
        pool=pool, blocks=blocks, luts=build_luts(ncfg), qcfg=qcfg, ncfg=ncfg,
    )


# ---------------------------------------------------------------------------
# MXInt forward path

def _reshape3(t: MXIntTensor, shape: tuple[int, ...]) -> MXIntTensor:
    """Reinterpret a (R, n) last-axis-blocked tensor as (..., n)."""
    nb = t.blocks_along_axis
    return MXIntTensor(
        shape=shape, block_axis=len(shape) - 1,
        mantissa_bits=t.mantissa_bits, block_size=t.block_size,
        exponent_bits=t.exponent_bits, klass=t.klass,
        mantissas=t.mantissas.reshape(shape[:-1] + (nb * t.block_size,)),
        exponents=t.exponents.reshape(shape[:-1] + (nb,)),
    )


def _ln(x: MXIntTensor, gamma: np.ndarray, beta: np.ndarray,
        qcfg: QuantConfig, ncfg: NonlinearConfig, lut: LutTable) -> MXIntTensor:
    n, t, d = x.shape
    nb = x.blocks_along_axis
    mant = x.mantissas.reshape(n * t, nb, x.block_size)
    exp = x.exponents.reshape(n * t, nb)
    out = layernorm_batch(mant, exp, d, gamma, beta, qcfg, ncfg, lut)
    return _reshape3(out, (n, t, d))


def _softmax_rows(x: MXIntTensor, qcfg: QuantConfig, ncfg: NonlinearConfig,
                  lut_pow2: LutTable) -> MXIntTensor:
    n, t, t2 = x.shape
    nb = x.blocks_along_axis
    mant = x.mantissas.reshape(n * t, nb, x.block_size)
    exp = x.exponents.reshape(n * t, nb)
    out = softmax_batch(mant, exp, t2, qcfg, ncfg, lut_pow2)
    return _reshape3(out, (n, t, t2))


def run_block_mxint(x: MXIntTensor, qb: QuantizedBlock, qcfg: QuantConfig,
                    ncfg: NonlinearConfig, luts: dict[str, LutTable],
                    d_k: int, trace: Optional[Trace] = None,
                    tag: str = "block") -> MXIntTensor:
    """One transformer block over x (N, tokens, dim), blocked along dim."""
    xn = _ln(x, qb.ln1_gamma, qb.ln1_beta, qcfg, ncfg, luts["inv_sqrt"])
    if trace is not None:
        trace[f"{tag}.ln1"] = xn.dequantize()
    head_vals = []
    for h, (pq, pk, pv) in enumerate(zip(qb.q, qb.k, qb.v)):
        qh = mxint_linear(xn, pq, qcfg)
        kh = mxint_linear(xn, pk, qcfg)
        vh = mxint_linear(xn, pv, qcfg)
        mant, exp = matmul_nt(qh, kh, qcfg)
        a = requantize_raw(mant, exp, qcfg, "activation")
        a = scale_attention_scores(a, d_k, qcfg)
        ahat = _softmax_rows(a, qcfg, ncfg, luts["pow2"])
        if trace is not None:
            trace[f"{tag}.attn.head{h}.softmax"] = ahat.dequantize()
        vt = requantize(vh, qcfg, "activation", block_axis=-2).transpose()
        bm, be = matmul_nt(ahat, vt, qcfg)
        head_vals.append(np.ldexp(bm.astype(np.float64), be.astype(np.int32)))
    bc = quantize_tensor(np.concatenate(head_vals, axis=-1), qcfg, "activation")
    bo = mxint_linear(bc, qb.o, qcfg)
    if trace is not None:
        trace[f"{tag}.attn.out"] = bo.dequantize()
    bn = _ln(residual_add(bo, xn, qcfg), qb.ln2_gamma, qb.ln2_beta,
             qcfg, ncfg, luts["inv_sqrt"])
    if trace is not None:
        trace[f"{tag}.ln2"] = bn.dequantize()
    u = mxint_linear(bn, qb.up, qcfg)
    ug = gelu_tensor(u, luts["gelu"], ncfg.gelu_domain, qcfg)
    if trace is not None:
        trace[f"{tag}.gelu"] = ug.dequantize()
    d = mxint_linear(ug, qb.down, qcfg)
    out = residual_add(d, bn, qcfg)
    if trace is not None:
        trace[f"{tag}.out"] = out.dequantize()
    return out


def _run_mxint(images: np.ndarray, manifest: ModelManifest, qm: QuantizedModel,
               trace: Optional[Trace] = None) -> np.ndarray:
    qcfg, ncfg = qm.qcfg, qm.ncfg
    patches = extract_patches(images, manifest.patch_size)
    x = mxint_linear(quantize_tensor(patches, qcfg, "activation"), qm.embed, qcfg)
    if trace is not None:
        trace["embed"] = x.dequantize()
    for i, qb in enumerate(qm.blocks):
        x = run_block_mxint(x, qb, qcfg, ncfg, qm.luts, manifest.d_k,
                            trace=trace, tag=f"block{i}")
    xt = requantize(x, qcfg, "activation", block_axis=-2).transpose()
    pm, pe = matmul_nt(xt, qm.pool, qcfg)
    pooled_vals = np.ldexp(pm.astype(np.float64), pe.astype(np.int32))[..., 0]
    pooled = quantize_tensor(pooled_vals, qcfg, "activation")
    if trace is not None:
        trace["pool"] = pooled.dequantize()
    logits = mxint_linear(pooled, qm.head, qcfg).dequantize()
    if trace is not None:
        trace["logits"] = logits
    return logits


# ---------------------------------------------------------------------------
# double-precision reference path

def _ln_ref(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = np.where(var > 0, 1.0 / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
    return (x - mu) * inv * gamma + beta


def _softmax_ref(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def run_block_reference(x: np.ndarray, bw: BlockWeights, d_k: int,
                        trace: Optional[Trace] = None,
                        tag: str = "block") -> np.ndarray:
    xn = _ln_ref(x, bw.ln1_gamma, bw.ln1_beta)
    if trace is not None:
        trace[f"{tag}.ln1"] = xn
    heads = []
    for h in range(len(bw.wq)):
        q = xn @ bw.wq[h].T
        k = xn @ bw.wk[h].T
        v = xn @ bw.wv[h].T
        a = _softmax_ref(q @ np.swapaxes(k, -1, -2) / math.sqrt(d_k))
        if trace is not None:
            trace[f"{tag}.attn.head{h}.softmax"] = a
        heads.append(a @ v)
    bo = np.concatenate(heads, axis=-1) @ bw.w0.T
    if trace is not None:
        trace[f"{tag}.attn.out"] = bo
    bn = _ln_ref(bo + xn, bw.ln2_gamma, bw.ln2_beta)
    if trace is not None:
        trace[f"{tag}.ln2"] = bn
    u = np.asarray(gelu_reference(bn @ bw.wu.T))
    out = u @ bw.wd.T + bn
    if trace is not None:
        trace[f"{tag}.gelu"] = u
        trace[f"{tag}.out"] = out
    return out


def _run_reference(images: np.ndarray, manifest: ModelManifest,
                   trace: Optional[Trace] = None) -> np.ndarray:
    patches = extract_patches(images, manifest.patch_size)
    x = patches @ manifest.patch_embed_w.T + manifest.patch_embed_b
    if trace is not None:
        trace["embed"] = x
    for i, bw in enumerate(manifest.blocks):
        x = run_block_reference(x, bw, manifest.d_k, trace=trace, tag=f"block{i}")
    pooled = x.mean(axis=-2)
    if trace is not None:
        trace["pool"] = pooled
    logits = pooled @ manifest.head_w.T + manifest.head_b
    if trace is not None:
        trace["logits"] = logits
    return logits


# ---------------------------------------------------------------------------
# public entry points

def run_model(images: np.ndarray, manifest: ModelManifest, mode: str,
              qcfg: Optional[QuantConfig] = None,
              ncfg: Optional[NonlinearConfig] = None,
              prepared: Optional[QuantizedModel] = None,
              trace: Optional[Trace] = None) -> np.ndarray:
    """Forward one image (S, S) or a batch (N, S, S) to logits (N, classes)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3 or images.shape[1:] != (manifest.image_size,) * 2:
        raise DomainError(
            f"images must be (N, {manifest.image_size}, {manifest.image_size}), "
            f"got {images.shape}")
    if mode == "reference":
        return _run_reference(images, manifest, trace=trace)
    if mode == "mxint":
        qm = prepared or prepare_model(manifest, qcfg, ncfg)
        return _run_mxint(images, manifest, qm, trace=trace)
    raise ConfigError(f"unknown mode {mode!r}; expected 'mxint' or 'reference'")


def evaluate(manifest: ModelManifest, images: np.ndarray, labels: np.ndarray,
             mode: str, qcfg: Optional[QuantConfig] = None,
             ncfg: Optional[NonlinearConfig] = None,
             prepared: Optional[QuantizedModel] = None) -> dict:
    """Top-1 accuracy over a dataset; returns predictions for agreement checks."""
    if len(images) == 0:
        raise ManifestError("cannot evaluate an empty dataset")
    logits = run_model(images, manifest, mode, qcfg=qcfg, ncfg=ncfg,
                       prepared=prepared)
    preds = logits.argmax(axis=-1)
    acc = float((preds == labels).mean())
    return {
        "mode": mode,
        "accuracy": acc,
        "num_samples": int(len(labels)),
        "predictions": preds.tolist(),
    }
