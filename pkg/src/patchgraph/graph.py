"""Attention-graph refinement of the per-patch node vectors.

Every node attends to every other node (full adjacency). Each layer is a
post-norm transformer encoder block; on designated layers the post-attention
node vectors are fed back to the gated aggregator as queries, and the
re-aggregated features are concatenated to the block input of the
feed-forward network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .aggregator import GatedAggregator, gate_divergence
from .extractor import MultiExtractor
from .grids import ConfigError, GridConfig, PatchSet, generate_patches
from .params import ParamBank
from .posenc import PositionScaleEncoder
from .rng import Rng
from .tensor import Tensor


@dataclass
class ModelConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    d_model: int = 32
    n_layers: int = 4
    heads: int = 4
    d_ff: int = 64
    agg_period: int = 2
    encoder_variant: str = "trainable_periodic"
    lam: float = 10.0

    def __post_init__(self):
        if self.d_model % 4:
            raise ConfigError(f"d_model must be divisible by 4, got {self.d_model}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.n_layers < 1 or self.agg_period < 1:
            raise ConfigError("n_layers and agg_period must be >= 1")


class AttentionWeights:
    def __init__(self, bank: ParamBank, prefix: str, d_model: int):
        self.q = bank.add(f"{prefix}.q", (d_model, d_model), fan_in=d_model)
        self.k = bank.add(f"{prefix}.k", (d_model, d_model), fan_in=d_model)
        self.v = bank.add(f"{prefix}.v", (d_model, d_model), fan_in=d_model)
        self.o = bank.add(f"{prefix}.o", (d_model, d_model), fan_in=d_model)


def attention(queries_in: Tensor, memory_in: Tensor, w: AttentionWeights, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention, unmasked.

    queries_in (T, d) attends over memory_in (M, d); self-attention when the
    two coincide. Per-head width d/heads; heads are concatenated and passed
    through the output projection.
    """
    d = queries_in.shape[1]
    dh = d // heads
    q_all = T.matmul(queries_in, w.q)
    k_all = T.matmul(memory_in, w.k)
    v_all = T.matmul(memory_in, w.v)
    outs = []
    for hidx in range(heads):
        q = T.narrow(q_all, 1, hidx * dh, dh)
        k = T.narrow(k_all, 1, hidx * dh, dh)
        v = T.narrow(v_all, 1, hidx * dh, dh)
        scores = T.div_scalar(T.matmul(q, T.transpose2d(k)), math.sqrt(dh))
        outs.append(T.matmul(T.softmax(scores, axis=1), v))
    return T.matmul(T.concat(outs, axis=1), w.o)


def mha(nodes: Tensor, w: AttentionWeights, heads: int) -> Tensor:
    """Self-attention over the node matrix (P, d_model)."""
    return attention(nodes, nodes, w, heads)


def attention_weights_matrix(nodes: np.ndarray, w: AttentionWeights, heads: int) -> np.ndarray:
    """(heads, P, P) attention probabilities, for diagnostics/tests."""
    d = nodes.shape[1]
    dh = d // heads
    x = Tensor(nodes)
    q_all = T.matmul(x, Tensor(w.q.data)).data
    k_all = T.matmul(x, Tensor(w.k.data)).data
    rows = []
    for hidx in range(heads):
        q = q_all[:, hidx * dh : (hidx + 1) * dh]
        k = k_all[:, hidx * dh : (hidx + 1) * dh]
        scores = Tensor(q @ k.T / math.sqrt(dh))
        rows.append(T.softmax(scores, axis=1).data)
    return np.stack(rows)


class GraphLayer:
    """Post-norm encoder block with optional aggregator feedback.

    With feedback, the FFN input is concat(post-attention nodes, re-aggregated
    features), so its first matrix is twice as wide; the residual around the
    FFN comes from the post-attention nodes only.
    """

    def __init__(self, bank: ParamBank, prefix: str, d_model: int, d_ff: int, with_aggregator: bool):
        self.with_aggregator = with_aggregator
        self.attn = AttentionWeights(bank, f"{prefix}.attn", d_model)
        self.ln1_gain = bank.add(f"{prefix}.ln1.gain", (d_model,), init="ones")
        self.ln1_shift = bank.add(f"{prefix}.ln1.shift", (d_model,), init="zeros")
        ffn_in = 2 * d_model if with_aggregator else d_model
        self.ffn_w1 = bank.add(f"{prefix}.ffn.w1", (ffn_in, d_ff), fan_in=ffn_in)
        self.ffn_b1 = bank.add(f"{prefix}.ffn.b1", (d_ff,), init="zeros")
        self.ffn_w2 = bank.add(f"{prefix}.ffn.w2", (d_ff, d_model), fan_in=d_ff)
        self.ffn_b2 = bank.add(f"{prefix}.ffn.b2", (d_model,), init="zeros")
        self.ln2_gain = bank.add(f"{prefix}.ln2.gain", (d_model,), init="ones")
        self.ln2_shift = bank.add(f"{prefix}.ln2.shift", (d_model,), init="zeros")

    def forward(self, nodes: Tensor, feature_stacks: list[Tensor], aggregator: GatedAggregator, heads: int) -> Tensor:
        u = T.layer_norm(T.add(nodes, mha(nodes, self.attn, heads)), self.ln1_gain, self.ln1_shift)
        if self.with_aggregator:
            refreshed, _ = aggregator.aggregate_stacked(feature_stacks, queries=u)
            ffn_in = T.concat([u, refreshed], axis=1)
        else:
            ffn_in = u
        hidden = T.relu(T.add(T.matmul(ffn_in, self.ffn_w1), self.ffn_b1))
        ffn_out = T.add(T.matmul(hidden, self.ffn_w2), self.ffn_b2)
        return T.layer_norm(T.add(u, ffn_out), self.ln2_gain, self.ln2_shift)


@dataclass
class EncodeResult:
    nodes: Tensor  # (P, d_model)
    gates: Tensor  # (P, k) from the initial, query-free aggregation
    divergence: Tensor  # scalar, <= 0
    patchset: PatchSet
    feature_stacks: list[Tensor]  # k tensors of (P, d_model)


class GraphEncoder:
    """Patch generation -> k-branch features -> gated aggregation ->
    position/scale encoding -> n_layers of graph refinement."""

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=np.float32, bank: ParamBank | None = None):
        self.cfg = cfg
        self.bank = bank if bank is not None else ParamBank(rng, dtype=dtype)
        self.extractor = MultiExtractor(self.bank, cfg.grid.k, cfg.grid.H, cfg.d_model)
        self.aggregator = GatedAggregator(self.bank, cfg.d_model)
        self.posenc = PositionScaleEncoder(self.bank, cfg.encoder_variant, cfg.d_model, cfg.lam)
        # layers are numbered 1..N; feedback on multiples of agg_period
        self.layers = [
            GraphLayer(self.bank, f"graph.{i}", cfg.d_model, cfg.d_ff, with_aggregator=(i + 1) % cfg.agg_period == 0)
            for i in range(cfg.n_layers)
        ]

    def parameters(self):
        return self.bank.parameters()

    def encode_pixels(self, pixels: np.ndarray) -> EncodeResult:
        patchset = generate_patches(pixels, self.cfg.grid)
        return self.encode_patchset(patchset)

    def encode_patchset(self, patchset: PatchSet) -> EncodeResult:
        patches = self.extractor.patch_batch(patchset, self.bank.dtype)
        stacks = self.extractor.feature_stacks(patches)
        aggregated, gates = self.aggregator.aggregate_stacked(stacks, queries=None)
        divergence = gate_divergence(gates)
        encodings = self.posenc.encode_batch(patchset.meta)
        nodes = T.add(aggregated, encodings)
        for layer in self.layers:
            nodes = layer.forward(nodes, stacks, self.aggregator, self.cfg.heads)
        return EncodeResult(nodes, gates, divergence, patchset, stacks)
