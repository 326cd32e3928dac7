"""Position and scale encoding of patch metadata (x, y, area coverage).

Three variants: a sinusoidal encoding, a small trainable network on the raw
triple, and the default hybrid that projects the sinusoidal encoding through
a trainable dense layer. x and y each get d_model/4 dimensions, the area
descriptor gets d_model/2.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .grids import ConfigError, PatchMeta
from .params import ParamBank
from .tensor import Tensor

VARIANTS = ("trainable", "periodic", "trainable_periodic")


def sinusoidal_encoding(meta: PatchMeta, d_model: int, lam: float) -> np.ndarray:
    """Interleaved sin/cos features: entry 2i is sin(v * lam^(i/d_model)).

    The exponent uses the full d_model, not the per-variable width, so the
    frequency range covered by each variable depends on its slice size.
    """
    if d_model % 4:
        raise ConfigError(f"d_model must be divisible by 4, got {d_model}")
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    parts = []
    for value, width in ((meta.x, d_model // 4), (meta.y, d_model // 4), (meta.area_coverage, d_model // 2)):
        i = np.arange(width // 2)
        angles = value * lam ** (i / d_model)
        block = np.empty(width)
        block[0::2] = np.sin(angles)
        block[1::2] = np.cos(angles)
        parts.append(block)
    return np.concatenate(parts)


class PositionScaleEncoder:
    """Encodes a batch of patch metadata into (P, d_model) vectors."""

    def __init__(self, bank: ParamBank, variant: str, d_model: int, lam: float = 10.0, prefix: str = "posenc"):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant: {variant}")
        if d_model % 4:
            raise ConfigError(f"d_model must be divisible by 4, got {d_model}")
        self.variant = variant
        self.d_model = d_model
        self.lam = 1.0 if variant == "trainable_periodic" else lam
        self.dtype = bank.dtype
        if variant == "trainable":
            self.w1 = bank.add(f"{prefix}.w1", (3, d_model), fan_in=3)
            self.b1 = bank.add(f"{prefix}.b1", (d_model,), init="zeros")
            self.w2 = bank.add(f"{prefix}.w2", (d_model, d_model), fan_in=d_model)
            self.b2 = bank.add(f"{prefix}.b2", (d_model,), init="zeros")
        elif variant == "trainable_periodic":
            self.w = bank.add(f"{prefix}.w", (d_model, d_model), fan_in=d_model)
            self.b = bank.add(f"{prefix}.b", (d_model,), init="zeros")

    def encode_batch(self, metas: list[PatchMeta]) -> Tensor:
        if self.variant == "trainable":
            raw = np.array([[m.x, m.y, m.area_coverage] for m in metas])
            x = Tensor(raw, dtype=self.dtype)
            hidden = T.relu(T.add(T.matmul(x, self.w1), self.b1))
            return T.add(T.matmul(hidden, self.w2), self.b2)
        periodic = np.stack([sinusoidal_encoding(m, self.d_model, self.lam) for m in metas])
        base = Tensor(periodic, dtype=self.dtype)
        if self.variant == "periodic":
            return base
        return T.add(T.matmul(base, self.w), self.b)

    def encode(self, meta: PatchMeta) -> Tensor:
        return T.reshape(self.encode_batch([meta]), (self.d_model,))


def combine_features(aggregated: Tensor, encoding: Tensor) -> Tensor:
    """Elementwise sum of aggregated features and the position/scale encoding."""
    if aggregated.shape != encoding.shape:
        raise T.ShapeError(f"width mismatch: {tuple(aggregated.shape)} vs {tuple(encoding.shape)}")
    return T.add(aggregated, encoding)
