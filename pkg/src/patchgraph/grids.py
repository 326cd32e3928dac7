"""Multi-level patch generation: static regular grids and dynamic quadtrees.

Both generators emit a PatchSet: patches rescaled to H x H plus, per patch,
the center coordinates, area-coverage descriptor and grid level. The
coordinate system puts (0, 0) at the image center with x increasing
rightward and y increasing downward, both spanning [-1, 1] on the longer
axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import bilinear_resize


class ConfigError(ValueError):
    """A structurally impossible grid/model configuration."""


@dataclass
class GridConfig:
    mode: str = "static"  # static | dynamic
    k: int = 3  # number of levels
    D: int = 0  # divisions (dynamic only)
    H: int = 16  # rescale dimension

    def __post_init__(self):
        if self.mode not in ("static", "dynamic"):
            raise ConfigError(f"unknown grid mode: {self.mode}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.D < 0:
            raise ConfigError(f"D must be >= 0, got {self.D}")
        if self.H < 8:
            raise ConfigError(f"H must be >= 8, got {self.H}")


@dataclass
class PatchMeta:
    x: float
    y: float
    area_coverage: float
    level: int


@dataclass
class PatchSet:
    patches: list[np.ndarray]  # each (3, H, H)
    meta: list[PatchMeta]
    rescale_dim: int
    exhausted: bool = False  # dynamic grid ran out of divisible leaves

    def __len__(self):
        return len(self.patches)


def area_coverage(area_ratio: float, k: int) -> float:
    """1 + 2*log4(area_ratio)/k; 1.0 for the whole image, decreasing with depth."""
    if area_ratio <= 0.0:
        raise ConfigError(f"area_ratio must be positive, got {area_ratio}")
    if area_ratio > 1.0:
        raise ConfigError(f"area_ratio must be <= 1, got {area_ratio}")
    return 1.0 + 2.0 * (math.log(area_ratio) / math.log(4.0)) / k


def color_variance(pixels: np.ndarray) -> float:
    """Mean squared deviation from the region's per-channel mean color."""
    mu = pixels.mean(axis=(1, 2), keepdims=True)
    return float(((pixels - mu) ** 2).mean())


def split_edges(lo: int, hi: int, depth: int) -> list[int]:
    """Cell boundaries from `depth` recursive halvings of [lo, hi).

    Left/top halves take the ceiling when the extent is odd, so grids of
    successive depths nest exactly.
    """
    if depth == 0:
        return [lo, hi]
    mid = lo + (hi - lo + 1) // 2
    return split_edges(lo, mid, depth - 1)[:-1] + split_edges(mid, hi, depth - 1)


def center_square(pixels: np.ndarray) -> np.ndarray:
    """Centered largest-square crop (static grids act on square images)."""
    _, h, w = pixels.shape
    s = min(h, w)
    top = (h - s) // 2
    left = (w - s) // 2
    return pixels[:, top : top + s, left : left + s]


def static_grid(pixels: np.ndarray, k: int, H: int) -> PatchSet:
    """Level-i grids of 4^(i-1) squares each, i = 1..k, rescaled to H x H.

    Non-square images are cropped to the centered largest square first.
    Patches are ordered by level, raster order within a level.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    square = center_square(pixels)
    s = square.shape[1]
    if 2 ** (k - 1) > s:
        raise ConfigError(f"level-{k} cells of a {s}x{s} image would be under 1 pixel")
    total_area = float(s) * float(s)
    patches, meta = [], []
    for level in range(1, k + 1):
        edges = split_edges(0, s, level - 1)
        for r in range(len(edges) - 1):
            for c in range(len(edges) - 1):
                y0, y1 = edges[r], edges[r + 1]
                x0, x1 = edges[c], edges[c + 1]
                region = square[:, y0:y1, x0:x1]
                patches.append(bilinear_resize(region, H, H))
                meta.append(
                    PatchMeta(
                        x=(x0 + x1 - s) / s,
                        y=(y0 + y1 - s) / s,
                        area_coverage=area_coverage((y1 - y0) * (x1 - x0) / total_area, k),
                        level=level,
                    )
                )
    return PatchSet(patches, meta, H)


def static_patch_count(k: int) -> int:
    return sum(4 ** (i - 1) for i in range(1, k + 1))


@dataclass
class QuadtreeNode:
    y0: int
    x0: int
    y1: int
    x1: int
    level: int
    created: int  # creation index, root = 0
    info_score: float = 0.0
    children: list["QuadtreeNode"] | None = None

    @property
    def is_leaf(self):
        return self.children is None

    def divisible(self, k: int) -> bool:
        return self.is_leaf and self.level < k and (self.y1 - self.y0) >= 2 and (self.x1 - self.x0) >= 2


@dataclass
class Quadtree:
    nodes: list[QuadtreeNode]  # creation order
    divisions: list[int]  # creation indices of divided nodes, in order
    exhausted: bool = False


def build_quadtree(pixels: np.ndarray, k: int, D: int) -> Quadtree:
    """Repeatedly quarter the most information-rich divisible leaf, D times.

    Information content is `color_variance`; ties go to the earliest-created
    node. Leaves at level k (or under 2 pixels on a side) never divide; if
    no divisible leaf remains the build stops early with `exhausted` set.
    """
    _, h, w = pixels.shape
    root = QuadtreeNode(0, 0, h, w, level=1, created=0, info_score=color_variance(pixels))
    nodes = [root]
    divisions = []
    exhausted = False
    for _ in range(D):
        best = None
        for node in nodes:  # creation order makes the earliest node win ties
            if node.divisible(k) and (best is None or node.info_score > best.info_score):
                best = node
        if best is None:
            exhausted = True
            break
        ys = split_edges(best.y0, best.y1, 1)
        xs = split_edges(best.x0, best.x1, 1)
        best.children = []
        for r in range(2):
            for c in range(2):
                child = QuadtreeNode(
                    ys[r], xs[c], ys[r + 1], xs[c + 1],
                    level=best.level + 1,
                    created=len(nodes),
                )
                child.info_score = color_variance(pixels[:, child.y0 : child.y1, child.x0 : child.x1])
                best.children.append(child)
                nodes.append(child)
        divisions.append(best.created)
    return Quadtree(nodes, divisions, exhausted)


def dynamic_grid(pixels: np.ndarray, k: int, D: int, H: int) -> PatchSet:
    """Quadtree patches (internal nodes included): P = 1 + 4 * divisions.

    Ordered by level, creation order within a level. Accepts non-square
    images; the shorter axis gets a proportionally reduced coordinate range.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    return quadtree_patchset(pixels, build_quadtree(pixels, k, D), k, H)


def quadtree_patchset(pixels: np.ndarray, tree: Quadtree, k: int, H: int) -> PatchSet:
    _, h, w = pixels.shape
    longer = max(h, w)
    total_area = float(h) * float(w)
    patches, meta = [], []
    for node in sorted(tree.nodes, key=lambda n: (n.level, n.created)):
        region = pixels[:, node.y0 : node.y1, node.x0 : node.x1]
        patches.append(bilinear_resize(region, H, H))
        meta.append(
            PatchMeta(
                x=(node.x0 + node.x1 - w) / longer,
                y=(node.y0 + node.y1 - h) / longer,
                area_coverage=area_coverage((node.y1 - node.y0) * (node.x1 - node.x0) / total_area, k),
                level=node.level,
            )
        )
    return PatchSet(patches, meta, H, exhausted=tree.exhausted)


def generate_patches(pixels: np.ndarray, cfg: GridConfig) -> PatchSet:
    if cfg.mode == "static":
        return static_grid(pixels, cfg.k, cfg.H)
    return dynamic_grid(pixels, cfg.k, cfg.D, cfg.H)
