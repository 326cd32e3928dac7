"""Level-sampled region masking for the reconstruction pretext task.

A grid level l in [2, k] is drawn uniformly, then a fraction (1/4 or 1/8)
of that level's cells is masked. Masking happens in pixel space before
patch generation, so shallower patches see partly masked content while the
selected cells' descendants are masked completely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import ConfigError, split_edges
from .rng import Rng

MASK_FILL = 0.5  # mid-gray, all channels


@dataclass
class MaskSpec:
    level: int
    fraction: float
    cells: list[tuple[int, int]]  # (row, col) in the level's cell grid
    masked_regions: list[tuple[int, int, int, int]]  # (y0, x0, y1, x1) pixel rects
    fully_masked: list[int]  # indices into the static PatchSet ordering


def fully_masked_indices(k: int, level: int, cells: list[tuple[int, int]]) -> list[int]:
    """Static-grid patch indices (levels >= `level`) inside the chosen cells.

    A level-j patch (j >= level) is fully masked iff its level-`level`
    ancestor cell was selected; shallower patches are never counted even if
    the selected cells happen to cover one entirely.
    """
    selected = set(cells)
    indices = []
    offset = sum(4 ** (i - 1) for i in range(1, level))
    for j in range(level, k + 1):
        side = 2 ** (j - 1)
        shift = j - level
        for r in range(side):
            for c in range(side):
                if (r >> shift, c >> shift) in selected:
                    indices.append(offset + r * side + c)
        offset += side * side
    return indices


def generate_mask(height: int, width: int, k: int, fraction: float, rng: Rng) -> MaskSpec:
    """Sample a mask with the level drawn uniformly from [2, k]."""
    if k < 2:
        raise ConfigError(f"masking needs k >= 2, got k={k}")
    level = rng.integers(2, k + 1)
    return mask_at_level(height, width, k, level, fraction, rng)


def mask_at_level(height: int, width: int, k: int, level: int, fraction: float, rng: Rng) -> MaskSpec:
    """Mask a fraction of the level-`level` cells, chosen without replacement.

    The cell count is round(fraction * 4^(level-1)), floored at 1. Requires
    a square image (the static grid the cells align to is square).
    """
    if k < 2:
        raise ConfigError(f"masking needs k >= 2, got k={k}")
    if not 2 <= level <= k:
        raise ConfigError(f"mask level must be in [2, {k}], got {level}")
    if height != width:
        raise ConfigError(f"masking needs a square image, got {height}x{width}")
    if 2 ** (k - 1) > height:
        raise ConfigError(f"level-{k} cells of a {height}x{width} image would be under 1 pixel")
    side = 2 ** (level - 1)
    n_cells = max(1, round(fraction * side * side))
    flat = rng.choice_without_replacement(side * side, n_cells)
    cells = sorted((int(i) // side, int(i) % side) for i in flat)
    edges = split_edges(0, height, level - 1)
    regions = [(edges[r], edges[c], edges[r + 1], edges[c + 1]) for r, c in cells]
    return MaskSpec(level, fraction, cells, regions, fully_masked_indices(k, level, cells))


def apply_mask(pixels: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Fill the masked rectangles with mid-gray; everything else unchanged."""
    out = pixels.copy()
    for y0, x0, y1, x1 in spec.masked_regions:
        out[:, y0:y1, x0:x1] = MASK_FILL
    return out
