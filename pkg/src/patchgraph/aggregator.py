"""Query-conditioned gate that collapses k feature vectors per patch into one.

A small shared feed-forward network scores each of the k candidate feature
vectors (optionally conditioned on a query vector from the graph layers),
softmax turns the scores into gate probabilities, and the output is the
gate-weighted sum. The divergence penalty is the negative KL divergence of
the gate distribution from uniform.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .params import ParamBank
from .tensor import ShapeError, Tensor


class GatedAggregator:
    """Weights: query path (w1, b1), score path (w2_fv, w2_q, b2, w3, b3).

    The score network is shared across the k feature vectors and across all
    graph layers; hidden width equals d_model.
    """

    def __init__(self, bank: ParamBank, d_model: int, prefix: str = "aggregator"):
        self.d_model = d_model
        d_h = d_model
        self.w1 = bank.add(f"{prefix}.w1", (d_model, d_model), fan_in=d_model)
        self.b1 = bank.add(f"{prefix}.b1", (d_model,), init="zeros")
        self.w2_fv = bank.add(f"{prefix}.w2_fv", (d_h, d_model), fan_in=d_model)
        self.w2_q = bank.add(f"{prefix}.w2_q", (d_h, d_model), fan_in=d_model)
        self.b2 = bank.add(f"{prefix}.b2", (d_h,), init="zeros")
        self.w3 = bank.add(f"{prefix}.w3", (1, d_h), fan_in=d_h)
        self.b3 = bank.add(f"{prefix}.b3", (1,), init="zeros")

    def aggregate_stacked(self, feature_stacks: list[Tensor], queries: Tensor | None):
        """Vectorized gate over all P patches at once.

        feature_stacks: k tensors of shape (P, d_model) (branch j's rows).
        queries: (P, d_model) or None (treated as all-zero queries).
        Returns (aggregated (P, d_model), gates (P, k)).
        """
        k = len(feature_stacks)
        P, d = feature_stacks[0].shape
        if d != self.d_model:
            raise ShapeError(f"feature width {d} != aggregator width {self.d_model}")
        if queries is None:
            queries = Tensor(np.zeros((P, d)), dtype=feature_stacks[0].dtype)
        elif queries.shape != (P, d):
            raise ShapeError(f"query shape {tuple(queries.shape)} != ({P}, {d})")
        q_hidden = T.relu(T.add(T.matmul(queries, T.transpose2d(self.w1)), self.b1))
        q_term = T.matmul(q_hidden, T.transpose2d(self.w2_q))
        score_cols = []
        for fv in feature_stacks:
            h1 = T.relu(T.add(T.add(T.matmul(fv, T.transpose2d(self.w2_fv)), q_term), self.b2))
            score_cols.append(T.add(T.matmul(h1, T.transpose2d(self.w3)), self.b3))
        scores = T.concat(score_cols, axis=1)  # (P, k)
        gates = T.softmax(scores, axis=1)
        out = None
        for j, fv in enumerate(feature_stacks):
            term = T.mul(T.narrow(gates, 1, j, 1), fv)
            out = term if out is None else T.add(out, term)
        return out, gates

    def aggregate(self, feature_stack: Tensor, query: Tensor | None):
        """Single-patch gate: (k, d_model) [+ optional (d_model,) query] -> ((d_model,), (k,))."""
        k, d = feature_stack.shape
        if query is not None and tuple(query.shape) != (d,):
            raise ShapeError(f"query shape {tuple(query.shape)} != ({d},)")
        rows = [T.narrow(feature_stack, 0, j, 1) for j in range(k)]
        q = None if query is None else T.reshape(query, (1, d))
        out, gates = self.aggregate_stacked(rows, q)
        return T.reshape(out, (d,)), T.reshape(gates, (k,))


def gate_divergence(gates: Tensor) -> Tensor:
    """Negative KL divergence of the gate distribution from uniform, <= 0.

    gates: (k,) probabilities, or (P, k) for the mean over P patches.
    Entries are clamped to 1e-12 before the log.
    """
    k = gates.shape[-1]
    logs = T.add(T.log(T.clamp_min(gates, 1e-12)), Tensor(np.full(gates.shape, math.log(k)), dtype=gates.dtype))
    total = T.sum_all(T.mul(gates, logs))
    rows = gates.data.size // k
    return T.scale(total, -1.0 / rows)


def batch_aggregate(agg: GatedAggregator, feature_stacks_per_patch: list[Tensor], queries: list[Tensor] | None):
    """Per-patch aggregation over a list of (k, d_model) stacks.

    The mean divergence penalty is computed only on the query-free pass
    (the initial aggregation outside the graph layers); with queries it is
    None. Returns (list of (d_model,), list of (k,), mean divergence).
    """
    if queries is not None and len(queries) != len(feature_stacks_per_patch):
        raise ShapeError(f"{len(queries)} queries for {len(feature_stacks_per_patch)} patches")
    outs, gate_list = [], []
    for p, stack in enumerate(feature_stacks_per_patch):
        out, gates = agg.aggregate(stack, None if queries is None else queries[p])
        outs.append(out)
        gate_list.append(gates)
    div = None
    if queries is None:
        div = gate_divergence(T.stack_rows(gate_list))
    return outs, gate_list, div
