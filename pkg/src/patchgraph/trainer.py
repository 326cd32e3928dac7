"""Masked-region reconstruction pretraining.

Per image, a mask is sampled and applied in pixel space, the masked image is
encoded into the patch graph, and a small transformer decoder reconstructs
the pixels of every fully masked patch from its position/scale encoding,
cross-attending over the visible (not fully masked) graph nodes. The total
loss is mean squared reconstruction error plus a weighted gate-divergence
term from the encoder's initial aggregation pass.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .graph import AttentionWeights, GraphEncoder, ModelConfig, attention
from .grids import static_grid
from .image import DataError, load_image
from .masking import MaskSpec, apply_mask, generate_mask
from .params import ParamBank
from .rng import Rng
from .tensor import Tensor


class TrainingError(RuntimeError):
    """Aborted training step (non-finite loss or gradient)."""


@dataclass
class TrainConfig:
    lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    beta_divergence: float = 0.1
    steps: int = 100
    batch_size: int = 1
    seed: int = 0
    fraction: float = 0.25
    checkpoint_every: int = 100
    decoder_layers: int = 2

    def __post_init__(self):
        if self.fraction not in (0.25, 0.125):
            raise ValueError(f"fraction must be 0.25 or 0.125, got {self.fraction}")
        for name in ("lr", "steps", "batch_size", "checkpoint_every", "decoder_layers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class DecoderLayer:
    def __init__(self, bank: ParamBank, prefix: str, d_model: int, d_ff: int):
        self.self_attn = AttentionWeights(bank, f"{prefix}.self", d_model)
        self.cross_attn = AttentionWeights(bank, f"{prefix}.cross", d_model)
        self.ln1_gain = bank.add(f"{prefix}.ln1.gain", (d_model,), init="ones")
        self.ln1_shift = bank.add(f"{prefix}.ln1.shift", (d_model,), init="zeros")
        self.ln2_gain = bank.add(f"{prefix}.ln2.gain", (d_model,), init="ones")
        self.ln2_shift = bank.add(f"{prefix}.ln2.shift", (d_model,), init="zeros")
        self.ffn_w1 = bank.add(f"{prefix}.ffn.w1", (d_model, d_ff), fan_in=d_model)
        self.ffn_b1 = bank.add(f"{prefix}.ffn.b1", (d_ff,), init="zeros")
        self.ffn_w2 = bank.add(f"{prefix}.ffn.w2", (d_ff, d_model), fan_in=d_ff)
        self.ffn_b2 = bank.add(f"{prefix}.ffn.b2", (d_model,), init="zeros")
        self.ln3_gain = bank.add(f"{prefix}.ln3.gain", (d_model,), init="ones")
        self.ln3_shift = bank.add(f"{prefix}.ln3.shift", (d_model,), init="zeros")

    def forward(self, tokens: Tensor, memory: Tensor, heads: int) -> Tensor:
        t = T.layer_norm(T.add(tokens, attention(tokens, tokens, self.self_attn, heads)), self.ln1_gain, self.ln1_shift)
        t = T.layer_norm(T.add(t, attention(t, memory, self.cross_attn, heads)), self.ln2_gain, self.ln2_shift)
        hidden = T.relu(T.add(T.matmul(t, self.ffn_w1), self.ffn_b1))
        ffn_out = T.add(T.matmul(hidden, self.ffn_w2), self.ffn_b2)
        return T.layer_norm(T.add(t, ffn_out), self.ln3_gain, self.ln3_shift)


class PatchDecoder:
    """Reconstructs (3, H, H) pixels for masked patches from their metadata.

    Query tokens are the shared position/scale encodings of the masked
    patches' metadata; memory is the set of visible graph nodes.
    """

    def __init__(self, bank: ParamBank, d_model: int, heads: int, d_ff: int, patch_dim: int, n_layers: int):
        self.heads = heads
        self.patch_dim = patch_dim
        self.layers = [DecoderLayer(bank, f"decoder.{i}", d_model, d_ff) for i in range(n_layers)]
        out_dim = 3 * patch_dim * patch_dim
        self.head_w = bank.add("decoder.head.w", (d_model, out_dim), fan_in=d_model)
        self.head_b = bank.add("decoder.head.b", (out_dim,), init="zeros")

    def decode(self, query_tokens: Tensor, memory: Tensor) -> Tensor:
        """(M, d_model) tokens + (V, d_model) memory -> (M, 3, H, H) pixels."""
        t = query_tokens
        for layer in self.layers:
            t = layer.forward(t, memory, self.heads)
        flat = T.add(T.matmul(t, self.head_w), self.head_b)
        m = flat.shape[0]
        return T.reshape(flat, (m, 3, self.patch_dim, self.patch_dim))


def reconstruction_loss(predicted: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every pixel of every masked patch."""
    if predicted.shape != target.shape:
        raise T.ShapeError(f"prediction shape {tuple(predicted.shape)} != target {tuple(target.shape)}")
    diff = T.sub(predicted, target)
    return T.mean_all(T.mul(diff, diff))


class PretextModel:
    """Graph encoder plus patch decoder trained end to end on masked images."""

    def __init__(self, cfg: ModelConfig, train_cfg: TrainConfig, rng: Rng, dtype=np.float32):
        self.cfg = cfg
        self.train_cfg = train_cfg
        self.encoder = GraphEncoder(cfg, rng, dtype=dtype)
        self.bank = self.encoder.bank
        self.decoder = PatchDecoder(
            self.bank, cfg.d_model, cfg.heads, cfg.d_ff, cfg.grid.H, train_cfg.decoder_layers
        )

    def parameters(self):
        return self.bank.parameters()

    def image_loss(self, pixels: np.ndarray, spec: MaskSpec):
        """Losses for one image under one mask: (total, recon, divergence)."""
        masked = apply_mask(pixels, spec)
        result = self.encoder.encode_pixels(masked)
        masked_meta = [result.patchset.meta[i] for i in spec.fully_masked]
        hidden = set(spec.fully_masked)
        visible = [i for i in range(len(result.patchset)) if i not in hidden]
        memory = T.concat([T.narrow(result.nodes, 0, i, 1) for i in visible], axis=0)
        tokens = self.encoder.posenc.encode_batch(masked_meta)
        predicted = self.decoder.decode(tokens, memory)
        target_set = static_grid(pixels, self.cfg.grid.k, self.cfg.grid.H)
        targets = Tensor(np.stack([target_set.patches[i] for i in spec.fully_masked]), dtype=self.bank.dtype)
        recon = reconstruction_loss(predicted, targets)
        total = T.add(recon, T.scale(result.divergence, self.train_cfg.beta_divergence))
        return total, recon, result.divergence


class Adam:
    """Per-parameter first/second moment optimizer with bias correction."""

    def __init__(self, params, lr: float, beta1: float, beta2: float, eps: float):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value.data) for p in self.params]
        self.v = [np.zeros_like(p.value.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.value.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.value.data.dtype)


def train_step(model: PretextModel, images: list[np.ndarray], optimizer: Adam, step_rng: Rng):
    """One optimization step over a batch: returns (total, recon, divergence).

    Losses are batch means; gradients are accumulated from a single combined
    backward pass, then the optimizer updates in place.
    """
    if not images:
        raise DataError("empty batch")
    model.bank.zero_grads()
    totals, recons, divs = [], [], []
    for i, pixels in enumerate(images):
        spec = generate_mask(
            pixels.shape[1], pixels.shape[2], model.cfg.grid.k, model.train_cfg.fraction, step_rng.derive("mask", i)
        )
        total, recon, div = model.image_loss(pixels, spec)
        totals.append(total)
        recons.append(recon)
        divs.append(div)
    n = len(images)
    combined = T.scale(totals[0], 1.0 / n)
    for t in totals[1:]:
        combined = T.add(combined, T.scale(t, 1.0 / n))
    if not np.isfinite(combined.data).all():
        raise TrainingError("non-finite loss: total batch loss")
    combined.backward()
    for p in model.parameters():
        if not np.isfinite(p.grad).all():
            raise TrainingError(f"non-finite gradient: {p.name}")
    optimizer.step()

    def mean(ts):
        return float(np.mean([t.item() for t in ts]))

    return mean(totals), mean(recons), mean(divs)


@dataclass
class MetricsRow:
    step: int
    total_loss: float
    recon_loss: float
    div_loss: float


METRICS_HEADER = ["step", "total_loss", "recon_loss", "div_loss"]


def write_metrics(rows: list[MetricsRow], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([r.step, repr(r.total_loss), repr(r.recon_loss), repr(r.div_loss)])


def load_dataset(data_dir) -> list[np.ndarray]:
    """All readable PNGs in a directory, sorted by name; unreadable are skipped."""
    paths = sorted(Path(data_dir).glob("*.png"))
    images = []
    for p in paths:
        try:
            images.append(load_image(p))
        except DataError as exc:
            print(f"warning: skipping {p}: {exc}")
    if not images:
        raise DataError(f"no readable PNG images in {data_dir}")
    return images


def batch_indices(n_images: int, batch_size: int, step: int, rng: Rng) -> list[int]:
    """Seeded epoch shuffles, computed from the absolute step number alone."""
    per_epoch = max(1, math.ceil(n_images / batch_size))
    epoch, pos = divmod(step, per_epoch)
    perm = rng.derive("shuffle", epoch).permutation(n_images)
    lo = pos * batch_size
    return [int(i) for i in perm[lo : lo + batch_size]]


def train_loop(
    model: PretextModel,
    images: list[np.ndarray],
    out_dir,
    start_step: int = 0,
    metrics_rows: list[MetricsRow] | None = None,
) -> list[MetricsRow]:
    """Run cfg.steps optimization steps, checkpointing and logging metrics.

    All randomness is derived from (seed, absolute step), so restarting from
    a checkpoint at step s reproduces the uninterrupted run's step-s batch
    and mask choices exactly.
    """
    cfg = model.train_cfg
    if model.cfg.grid.mode != "static":
        raise DataError("pretext training requires static grids (mask cells align to them)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = Rng(cfg.seed)
    optimizer = Adam(model.parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rows = list(metrics_rows) if metrics_rows else []
    for step in range(start_step, start_step + cfg.steps):
        batch = [images[i] for i in batch_indices(len(images), cfg.batch_size, step, rng)]
        total, recon, div = train_step(model, batch, optimizer, rng.derive("step", step))
        rows.append(MetricsRow(step + 1, total, recon, div))
        if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == start_step + cfg.steps:
            save_checkpoint(out_dir / f"checkpoint_{step + 1:06d}.bin", model.bank.state_dict())
            write_metrics(rows, out_dir / "metrics.csv")
    write_metrics(rows, out_dir / "metrics.csv")
    return rows
