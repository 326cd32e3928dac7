"""Multi-branch CNN feature extraction over rescaled patches.

k architecturally identical branches with independent weights each map a
(3, H, H) patch to a d_model feature vector; stacking the k vectors gives
the per-patch feature stack the gated aggregator later collapses.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .grids import ConfigError, PatchSet
from .params import ParamBank
from .tensor import Tensor


def conv_schedule(h: int) -> list[tuple]:
    """Layer recipe reducing an h x h input to 1 x 1 before flattening.

    Returns ("conv", kernel, out_channels) / ("pool",) entries. Stages pair
    valid convolutions with 2x2 pools and double the channel width from 32
    (capped at 256); the tail picks kernel sizes so the spatial extent lands
    exactly on 1. Requires even h >= 8.
    """
    if h < 8:
        raise ConfigError(f"patch dimension must be >= 8, got {h}")
    if h % 2:
        raise ConfigError(f"patch dimension must be even, got {h}")
    layers = []
    extent = h
    stage = 0

    def ch(s):
        return min(32 * 2**s, 256)

    while True:
        if extent <= 7:
            layers.append(("conv", extent, ch(stage)))
            break
        if extent <= 12:
            if extent % 2 == 0:
                while extent > 6:
                    layers.append(("conv", 3, ch(stage)))
                    extent -= 2
                layers.append(("pool",))
                layers.append(("conv", 3, ch(stage + 1)))
            else:
                while extent > 5:
                    layers.append(("conv", 3, ch(stage)))
                    extent -= 2
                layers.append(("conv", 5, ch(stage + 1)))
            break
        ksize = 5 if stage == 0 and extent >= 32 else 3
        layers.append(("conv", ksize, ch(stage)))
        layers.append(("conv", ksize, ch(stage)))
        extent -= 2 * (ksize - 1)
        if extent % 2 == 0:
            layers.append(("pool",))
            extent //= 2
        stage += 1
    return layers


def schedule_shapes(h: int) -> list[tuple[int, int]]:
    """(spatial extent, channels) after each layer of conv_schedule(h)."""
    extent, channels = h, 3
    shapes = []
    for layer in conv_schedule(h):
        if layer[0] == "conv":
            _, ksize, channels = layer
            extent -= ksize - 1
        else:
            extent //= 2
        shapes.append((extent, channels))
    return shapes


class ExtractorBranch:
    """One CNN branch: conv/pool stack to 1x1, then two dense layers to d_model."""

    def __init__(self, bank: ParamBank, prefix: str, h: int, d_model: int):
        self.h = h
        self.d_model = d_model
        self.conv_layers = []  # (kernel tensor, bias tensor) or None for pool
        channels = 3
        for i, layer in enumerate(conv_schedule(h)):
            if layer[0] == "conv":
                _, ksize, out_ch = layer
                kernel = bank.add(
                    f"{prefix}.conv{i}.kernel", (out_ch, channels, ksize, ksize),
                    fan_in=channels * ksize * ksize,
                )
                bias = bank.add(f"{prefix}.conv{i}.bias", (out_ch,), init="zeros")
                self.conv_layers.append((kernel, bias))
                channels = out_ch
            else:
                self.conv_layers.append(None)
        self.flat_dim = channels
        self.w1 = bank.add(f"{prefix}.dense1.w", (channels, d_model), fan_in=channels)
        self.b1 = bank.add(f"{prefix}.dense1.b", (d_model,), init="zeros")
        self.w2 = bank.add(f"{prefix}.dense2.w", (d_model, d_model), fan_in=d_model)
        self.b2 = bank.add(f"{prefix}.dense2.b", (d_model,), init="zeros")

    def features(self, patches: Tensor) -> Tensor:
        """(B, 3, H, H) -> (B, d_model)."""
        x = self.conv_stack(patches)
        x = T.reshape(x, (x.shape[0], self.flat_dim))
        x = T.relu(T.add(T.matmul(x, self.w1), self.b1))
        return T.add(T.matmul(x, self.w2), self.b2)

    def conv_stack(self, patches: Tensor) -> Tensor:
        """The pre-dense part: (B, 3, H, H) -> (B, C, 1, 1)."""
        x = patches
        for layer in self.conv_layers:
            if layer is None:
                x = T.maxpool2(x)
            else:
                kernel, bias = layer
                x = T.relu(T.conv2d_valid(x, kernel, bias))
        return x


class MultiExtractor:
    """k independent branches applied to every patch."""

    def __init__(self, bank: ParamBank, k: int, h: int, d_model: int, prefix: str = "extractor"):
        if k < 1:
            raise ConfigError(f"extractor count must be >= 1, got {k}")
        if d_model < 8:
            raise ConfigError(f"d_model must be >= 8, got {d_model}")
        self.k = k
        self.h = h
        self.d_model = d_model
        self.branches = [ExtractorBranch(bank, f"{prefix}.{j}", h, d_model) for j in range(k)]

    def patch_batch(self, patchset: PatchSet, dtype) -> Tensor:
        if patchset.rescale_dim != self.h:
            raise ConfigError(f"patch dimension {patchset.rescale_dim} != extractor input {self.h}")
        return Tensor(np.stack(patchset.patches, axis=0), dtype=dtype)

    def feature_stacks(self, patches: Tensor) -> list[Tensor]:
        """Per branch j, a (P, d_model) matrix; row p is branch j's view of patch p."""
        return [branch.features(patches) for branch in self.branches]

    def feature_stack_rows(self, stacks: list[Tensor], p: int) -> Tensor:
        """The (k, d_model) feature stack of patch p."""
        return T.concat([T.narrow(s, 0, p, 1) for s in stacks], axis=0)


def shift_sensitivity(branch: ExtractorBranch, patch: np.ndarray, shift: int = 2) -> float:
    """Relative change of the pre-dense feature under a cyclic pixel shift.

    Characterizes how far the branch is from exact translation invariance
    (valid convolutions are only approximately shift invariant). Returns
    ||f(shifted) - f(original)|| / max(||f(original)||, 1e-12).
    """
    base = branch.conv_stack(Tensor(patch[None], dtype=np.float64)).data.reshape(-1)
    rolled = np.roll(patch, (shift, shift), axis=(1, 2))
    moved = branch.conv_stack(Tensor(rolled[None], dtype=np.float64)).data.reshape(-1)
    return float(np.linalg.norm(moved - base) / max(np.linalg.norm(base), 1e-12))
