"""Patch generation: static grids, quadtrees, metadata, bilinear rescaling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchgraph.grids import (
    ConfigError,
    PatchSet,
    area_coverage,
    build_quadtree,
    color_variance,
    dynamic_grid,
    split_edges,
    static_grid,
    static_patch_count,
)
from patchgraph.image import bilinear_resize


def random_image(size=64, seed=0, width=None):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(3, size, width or size))


# ---------------------------------------------------------------------------
# area_coverage
# ---------------------------------------------------------------------------


def test_area_coverage_whole_image():
    for k in (1, 3, 5):
        assert area_coverage(1.0, k) == 1.0


def test_area_coverage_known_values():
    assert abs(area_coverage(4.0**-2, 5) - 0.2) < 1e-12
    assert abs(area_coverage(4.0**-4, 5) - (-0.6)) < 1e-12


def test_area_coverage_domain_errors():
    with pytest.raises(ConfigError):
        area_coverage(0.0, 3)
    with pytest.raises(ConfigError):
        area_coverage(-0.5, 3)
    with pytest.raises(ConfigError):
        area_coverage(1.5, 3)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-9, 1.0), st.integers(1, 8))
def test_area_coverage_matches_log_identity(ratio, k):
    expected = 1.0 + 2.0 * math.log(ratio, 4) / k
    assert abs(area_coverage(ratio, k) - expected) < 1e-9


# ---------------------------------------------------------------------------
# static grids
# ---------------------------------------------------------------------------


def test_static_k1_single_patch():
    ps = static_grid(random_image(), 1, 16)
    assert len(ps) == 1
    m = ps.meta[0]
    assert (m.x, m.y, m.area_coverage, m.level) == (0.0, 0.0, 1.0, 1)


def test_static_patch_count_formula():
    expected = {1: 1, 2: 5, 3: 21, 4: 85, 5: 341, 6: 1365}
    img = random_image(64)
    for k, p in expected.items():
        assert static_patch_count(k) == p
        if k <= 5:  # level-6 cells of a 64px image would be 2px; still fine
            assert len(static_grid(img, k, 8)) == p
    assert len(static_grid(random_image(128, seed=2), 6, 8)) == 1365


def test_static_k2_centers_and_area():
    ps = static_grid(random_image(), 2, 16)
    assert len(ps) == 5
    level2 = [(m.x, m.y) for m in ps.meta if m.level == 2]
    assert level2 == [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
    for m in ps.meta:
        if m.level == 2:
            assert abs(m.area_coverage) < 1e-12


def test_static_patch_shapes_and_alignment():
    ps = static_grid(random_image(), 3, 16)
    assert len(ps.patches) == len(ps.meta) == 21
    for patch in ps.patches:
        assert patch.shape == (3, 16, 16)
        assert patch.min() >= 0.0 and patch.max() <= 1.0


def test_static_level1_patch_is_resized_image():
    img = random_image(32)
    ps = static_grid(img, 2, 16)
    np.testing.assert_array_equal(ps.patches[0], bilinear_resize(img, 16, 16))


def test_static_centers_mean_zero_per_level():
    ps = static_grid(random_image(64), 4, 8)
    for level in range(1, 5):
        xs = [m.x for m in ps.meta if m.level == level]
        ys = [m.y for m in ps.meta if m.level == level]
        assert abs(np.mean(xs)) < 1e-12
        assert abs(np.mean(ys)) < 1e-12


def test_static_area_coverage_strictly_decreasing_in_level():
    ps = static_grid(random_image(64), 5, 8)
    by_level = {}
    for m in ps.meta:
        by_level.setdefault(m.level, []).append(m.area_coverage)
        assert -1.0 <= m.area_coverage <= 1.0
    for level in range(1, 5):
        assert max(by_level[level + 1]) < min(by_level[level])


def test_static_rejects_subpixel_cells():
    with pytest.raises(ConfigError):
        static_grid(random_image(16), 6, 8)  # level-6 needs 32 cells per side


def test_static_non_square_uses_center_crop():
    img = random_image(32, seed=3, width=48)
    cropped = img[:, :, 8:40]
    ps = static_grid(img, 2, 16)
    ps_square = static_grid(cropped, 2, 16)
    for a, b in zip(ps.patches, ps_square.patches):
        np.testing.assert_array_equal(a, b)


def test_static_ordering_level_major_then_raster():
    ps = static_grid(random_image(), 3, 8)
    levels = [m.level for m in ps.meta]
    assert levels == sorted(levels)
    level2 = [(m.y, m.x) for m in ps.meta if m.level == 2]
    assert level2 == sorted(level2)


# ---------------------------------------------------------------------------
# information heuristic
# ---------------------------------------------------------------------------


def test_color_variance_constant_patch():
    assert color_variance(np.full((3, 5, 5), 0.7)) < 1e-30
    assert color_variance(np.zeros((3, 4, 4))) == 0.0


def test_color_variance_half_and_half():
    patch = np.zeros((1, 2, 4))
    patch[:, :, 2:] = 1.0
    assert abs(color_variance(patch) - 0.25) < 1e-12
    three = np.repeat(patch, 3, axis=0)
    assert abs(color_variance(three) - 0.25) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_color_variance_positive_for_non_constant(seed):
    rng = np.random.default_rng(seed)
    patch = rng.uniform(0, 1, (3, 4, 4))
    if np.allclose(patch, patch.reshape(3, -1).mean(axis=1)[:, None, None]):
        return
    assert color_variance(patch) > 0.0


# ---------------------------------------------------------------------------
# dynamic grids
# ---------------------------------------------------------------------------


def test_dynamic_zero_divisions():
    ps = dynamic_grid(random_image(), 3, 0, 16)
    assert len(ps) == 1 and not ps.exhausted


def test_dynamic_one_division():
    ps = dynamic_grid(random_image(), 3, 1, 16)
    assert len(ps) == 5
    assert [m.level for m in ps.meta] == [1, 2, 2, 2, 2]


def test_dynamic_patch_count_formula():
    img = random_image(64, seed=5)
    for d in (0, 1, 10, 85):
        ps = dynamic_grid(img, 6, d, 8)
        assert len(ps) == 1 + 4 * d
        assert not ps.exhausted


def test_dynamic_341_patches_at_k6_d85():
    ps = dynamic_grid(random_image(64, seed=6), 6, 85, 8)
    assert len(ps) == 341
    assert max(m.level for m in ps.meta) <= 6


def test_dynamic_levels_bounded_by_k():
    ps = dynamic_grid(random_image(32, seed=7), 2, 30, 8)
    assert all(m.level <= 2 for m in ps.meta)


def test_dynamic_exhaustion_stops_early_with_flag():
    # k=2 allows exactly one division; asking for more must stop and flag
    ps = dynamic_grid(random_image(), 2, 3, 16)
    assert ps.exhausted
    assert len(ps) == 5


def test_dynamic_leaves_tile_image():
    img = random_image(48, seed=8, width=64)
    tree = build_quadtree(img, 5, 23)
    cover = np.zeros((48, 64), dtype=int)
    for node in tree.nodes:
        if node.is_leaf:
            cover[node.y0 : node.y1, node.x0 : node.x1] += 1
    assert (cover == 1).all()


def test_dynamic_children_tile_parent_and_increment_level():
    tree = build_quadtree(random_image(63, seed=9), 4, 9)  # odd size: ceiling splits
    for node in tree.nodes:
        if node.children is None:
            continue
        assert len(node.children) == 4
        area = sum((c.y1 - c.y0) * (c.x1 - c.x0) for c in node.children)
        assert area == (node.y1 - node.y0) * (node.x1 - node.x0)
        assert all(c.level == node.level + 1 for c in node.children)
        # ceiling halves go to the top-left child
        c0 = node.children[0]
        assert c0.y1 - c0.y0 == (node.y1 - node.y0 + 1) // 2
        assert c0.x1 - c0.x0 == (node.x1 - node.x0 + 1) // 2


def test_dynamic_division_order_is_greedy_max():
    img = random_image(64, seed=10)
    k, d = 5, 40
    tree = build_quadtree(img, k, d)
    assert len(tree.divisions) == d
    # replay: at each division the chosen node must have had the maximal
    # info score among divisible leaves, earliest-created winning ties
    leaves = {0}
    by_created = {n.created: n for n in tree.nodes}

    def was_divisible(n):  # leaf status comes from the replayed `leaves` set
        return n.level < k and (n.y1 - n.y0) >= 2 and (n.x1 - n.x0) >= 2

    for divided in tree.divisions:
        candidates = [by_created[i] for i in sorted(leaves) if was_divisible(by_created[i])]
        assert candidates, "divided with no divisible leaf"
        best = max(candidates, key=lambda n: (n.info_score, -n.created))
        assert best.created == divided
        leaves.remove(divided)
        leaves.update(c.created for c in by_created[divided].children)


def test_dynamic_tie_break_is_fifo_on_constant_image():
    img = np.full((3, 32, 32), 0.5)
    tree = build_quadtree(img, 4, 3)
    # all scores are 0: the earliest-created divisible leaf divides each time
    assert tree.divisions == [0, 1, 2]


def test_dynamic_meta_ranges_non_square():
    img = random_image(32, seed=11, width=64)
    ps = dynamic_grid(img, 3, 6, 8)
    for m in ps.meta:
        assert -1.0 <= m.x <= 1.0
        assert -0.5 <= m.y <= 0.5  # shorter axis range shrinks with aspect
        assert -1.0 <= m.area_coverage <= 1.0
    root = ps.meta[0]
    assert (root.x, root.y, root.area_coverage) == (0.0, 0.0, 1.0)


def test_dynamic_ordering_level_then_creation():
    ps = dynamic_grid(random_image(64, seed=12), 4, 12, 8)
    levels = [m.level for m in ps.meta]
    assert levels == sorted(levels)


# ---------------------------------------------------------------------------
# split edges / bilinear resize
# ---------------------------------------------------------------------------


def test_split_edges_nest_across_depths():
    for size in (64, 63, 100):
        for depth in range(4):
            coarse = split_edges(0, size, depth)
            fine = split_edges(0, size, depth + 1)
            assert coarse == fine[::2]
            assert fine[0] == 0 and fine[-1] == size


def test_split_edges_ceiling_convention():
    assert split_edges(0, 5, 1) == [0, 3, 5]
    assert split_edges(0, 7, 2) == [0, 2, 4, 6, 7]


def test_bilinear_identity():
    patch = random_image(8, seed=13)
    np.testing.assert_array_equal(bilinear_resize(patch, 8, 8), patch)


def test_bilinear_constant():
    patch = np.full((3, 3, 5), 0.3)
    np.testing.assert_allclose(bilinear_resize(patch, 7, 7), np.full((3, 7, 7), 0.3), atol=1e-15)


def test_bilinear_align_corners_row():
    row = np.array([[[0.0, 1.0]]])
    out = bilinear_resize(row, 1, 4)
    np.testing.assert_allclose(out, [[[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]]], atol=1e-15)


def test_bilinear_range_preserved():
    patch = random_image(5, seed=14)
    out = bilinear_resize(patch, 16, 16)
    assert out.min() >= 0.0 and out.max() <= 1.0
    # corners map to corners
    np.testing.assert_allclose(out[:, 0, 0], patch[:, 0, 0], atol=1e-15)
    np.testing.assert_allclose(out[:, -1, -1], patch[:, -1, -1], atol=1e-15)


def test_patchset_lengths_consistent():
    ps = static_grid(random_image(), 3, 8)
    assert isinstance(ps, PatchSet)
    assert len(ps.patches) == len(ps.meta) == len(ps)


def test_load_image_drops_alpha_and_normalizes(tmp_path):
    from PIL import Image

    from patchgraph.image import load_image

    rgba = np.zeros((4, 6, 4), dtype=np.uint8)
    rgba[..., 0] = 255
    rgba[..., 3] = 128
    Image.fromarray(rgba, mode="RGBA").save(tmp_path / "a.png")
    pixels = load_image(tmp_path / "a.png")
    assert pixels.shape == (3, 4, 6)
    np.testing.assert_array_equal(pixels[0], np.ones((4, 6)))
    np.testing.assert_array_equal(pixels[1:], np.zeros((2, 4, 6)))
