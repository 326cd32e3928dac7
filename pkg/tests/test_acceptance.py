"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`. The training-sanity
criterion runs 2 x 500 optimization steps and dominates the runtime
(a few minutes on a laptop CPU).
"""

import numpy as np

from patchgraph import tensor as T
from patchgraph.aggregator import GatedAggregator, gate_divergence
from patchgraph.checkpoint import load_checkpoint, save_checkpoint
from patchgraph.cli import main
from patchgraph.graph import GraphEncoder, ModelConfig, mha
from patchgraph.grids import GridConfig, area_coverage, dynamic_grid, static_grid, static_patch_count
from patchgraph.image import save_image
from patchgraph.masking import generate_mask, mask_at_level
from patchgraph.params import ParamBank
from patchgraph.rng import Rng
from patchgraph.tensor import Tensor
from patchgraph.trainer import PretextModel, TrainConfig, train_loop

from test_graph import naive_single_head_attention
from test_tensor import naive_conv2d, naive_maxpool2


def _report(number, text):
    print(f"\nACCEPTANCE {number} PASS: {text}")


def synthetic_images(n, size, seed):
    """Deterministic gradient-plus-rectangles images (reconstructable content)."""
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(n):
        yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
        coeffs = rng.uniform(-0.5, 0.5, (3, 2))
        base = np.stack([a * xx + b * yy + 0.5 for a, b in coeffs])
        for _ in range(3):
            y0 = int(rng.integers(0, size - 16))
            x0 = int(rng.integers(0, size - 16))
            h = int(rng.integers(8, 16))
            w = int(rng.integers(8, 16))
            base[:, y0 : y0 + h, x0 : x0 + w] = rng.uniform(0, 1, 3)[:, None, None]
        images.append(np.clip(base, 0.0, 1.0))
    return images


def test_criterion_1_patch_count_formulas():
    expected = {1: 1, 2: 5, 3: 21, 4: 85, 5: 341, 6: 1365}
    image = np.random.default_rng(1).uniform(0, 1, (3, 128, 128))
    for k, p in expected.items():
        assert static_patch_count(k) == p
        assert len(static_grid(image, k, 8)) == p
    small = np.random.default_rng(2).uniform(0, 1, (3, 64, 64))
    for d in (0, 1, 10, 85):
        ps = dynamic_grid(small, 6, d, 8)
        assert len(ps) == 1 + 4 * d, f"D={d}"
        assert not ps.exhausted
    assert len(dynamic_grid(small, 6, 85, 8)) == 341
    _report(1, "static P in {1,5,21,85,341,1365} for k=1..6; dynamic P == 1+4D, k=6 D=85 -> 341")


def test_criterion_2_area_coverage():
    assert area_coverage(1.0, 5) == 1.0
    assert abs(area_coverage(4.0**-2, 5) - 0.2) < 1e-12
    assert abs(area_coverage(4.0**-4, 5) - (-0.6)) < 1e-12
    image = np.random.default_rng(3).uniform(0, 1, (3, 64, 64))
    for k in (2, 3, 5):
        ps = static_grid(image, k, 8)
        by_level = {}
        for m in ps.meta:
            assert -1.0 <= m.area_coverage <= 1.0
            by_level.setdefault(m.level, []).append(m.area_coverage)
        for level in range(1, k):
            assert max(by_level[level + 1]) < min(by_level[level])
    _report(2, "values 1.0 / 0.2 / -0.6 within 1e-12; strictly decreasing in level")


def test_criterion_3_mask_counting_and_level_sampling():
    assert len(mask_at_level(64, 64, 5, 3, 0.25, Rng(4)).fully_masked) == 84
    assert len(mask_at_level(64, 64, 5, 2, 0.25, Rng(5)).fully_masked) == 85
    assert len(mask_at_level(64, 64, 5, 5, 0.25, Rng(6)).fully_masked) == 64
    counts = dict.fromkeys((2, 3, 4, 5), 0)
    base = Rng(7)
    draws = 10_000
    for i in range(draws):
        counts[generate_mask(64, 64, 5, 0.25, base.derive("draw", i)).level] += 1
    for level, n in counts.items():
        assert abs(n / draws - 0.25) < 0.02, (level, n / draws)
    _report(3, "fully-masked counts 84/85/64 at levels 3/2/5; level sampling uniform within 0.02")


def test_criterion_4_aggregator_properties():
    bank = ParamBank(Rng(8), dtype=np.float64)
    agg = GatedAggregator(bank, 16)
    rng = np.random.default_rng(9)
    for trial in range(1000):
        k = int(rng.integers(2, 5))
        stack = Tensor(rng.uniform(-2.0, 2.0, (k, 16)), dtype=np.float64)
        query = Tensor(rng.uniform(-1.0, 1.0, 16), dtype=np.float64) if trial % 3 == 0 else None
        out, gates = agg.aggregate(stack, query)
        assert abs(gates.data.sum() - 1.0) < 1e-6
        assert np.all(out.data >= stack.data.min(axis=0) - 1e-9)
        assert np.all(out.data <= stack.data.max(axis=0) + 1e-9)
        assert gate_divergence(gates).item() <= 1e-12
    for k in (2, 4):
        assert abs(gate_divergence(Tensor(np.full(k, 1.0 / k), dtype=np.float64)).item()) < 1e-9
    hand = gate_divergence(Tensor([0.75, 0.25], dtype=np.float64)).item()
    assert abs(hand - (-0.13081)) < 1e-4
    _report(4, "gates sum to 1; AFV in row hull on 1000 instances; divergence 0 / -0.13081 / <= 0")


def test_criterion_5_gradient_oracle():
    from patchgraph.cli import _gradcheck_suite

    values = {"d_model": 16}
    thresholds_seen = []
    for component, threshold, result in _gradcheck_suite(values, seed=0, corrupt=False):
        assert result.max_rel_error < threshold, (
            f"{component}: {result.max_rel_error:.3e} >= {threshold:g} (worst {result.worst_param})"
        )
        thresholds_seen.append(component)
    assert len(thresholds_seen) >= 6
    _report(5, f"{len(thresholds_seen)} components pass central-difference checks at their thresholds")


def test_criterion_6_small_instance_equivalence():
    rng = np.random.default_rng(10)
    for c, h, w, o, kh in [(1, 4, 4, 1, 3), (2, 9, 7, 2, 3), (4, 16, 16, 3, 5)]:
        x = rng.normal(size=(c, h, w))
        kern = rng.normal(size=(o, c, kh, kh))
        bias = rng.normal(size=o)
        got = T.conv2d_valid(Tensor(x), Tensor(kern), Tensor(bias)).data
        np.testing.assert_array_equal(got, naive_conv2d(x, kern, bias))
    for c, h, w in [(1, 2, 2), (3, 10, 6), (4, 16, 16)]:
        x = rng.normal(size=(c, h, w))
        np.testing.assert_array_equal(T.maxpool2(Tensor(x)).data, naive_maxpool2(x))
    from patchgraph.graph import AttentionWeights

    bank = ParamBank(Rng(11), dtype=np.float64)
    w = AttentionWeights(bank, "attn", 8)
    nodes = rng.normal(size=(8, 8))
    got = mha(Tensor(nodes), w, heads=1).data
    expected = naive_single_head_attention(nodes, w.q.data, w.k.data, w.v.data, w.o.data)
    np.testing.assert_array_equal(got, expected)
    _report(6, "conv2d_valid, maxpool2, single-head attention bit-identical to naive loops")


SANITY_MODEL = dict(d_model=32, n_layers=2, heads=4, d_ff=64, agg_period=2,
                    encoder_variant="trainable_periodic")
SANITY_TRAIN = dict(lr=1e-3, steps=500, batch_size=1, seed=7, fraction=0.25,
                    decoder_layers=2, checkpoint_every=500)


def _sanity_run(out_dir):
    cfg = ModelConfig(grid=GridConfig(mode="static", k=3, H=16), **SANITY_MODEL)
    tcfg = TrainConfig(**SANITY_TRAIN)
    model = PretextModel(cfg, tcfg, Rng(tcfg.seed), dtype=np.float32)
    images = synthetic_images(8, 64, seed=7)
    return train_loop(model, images, out_dir)


def test_criterion_7_training_sanity(tmp_path):
    rows_a = _sanity_run(tmp_path / "run_a")
    rows_b = _sanity_run(tmp_path / "run_b")
    first = rows_a[0].recon_loss
    final = rows_a[-1].recon_loss
    assert final < 0.1 * first, f"recon {first:.5f} -> {final:.5f} (ratio {final / first:.3f})"
    csv_a = (tmp_path / "run_a" / "metrics.csv").read_bytes()
    csv_b = (tmp_path / "run_b" / "metrics.csv").read_bytes()
    assert csv_a == csv_b
    _report(7, f"recon {first:.4f} -> {final:.4f} (ratio {final / first:.3f} < 0.1); metrics CSVs bit-identical")


def test_criterion_8_determinism_and_round_trips(tmp_path):
    cfg = ModelConfig(grid=GridConfig(mode="static", k=2, H=8), d_model=16,
                      n_layers=1, heads=2, d_ff=32, agg_period=1)
    enc = GraphEncoder(cfg, Rng(12), dtype=np.float32)
    path = tmp_path / "model.bin"
    save_checkpoint(path, enc.bank.state_dict())
    loaded = load_checkpoint(path)
    for p in enc.parameters():
        np.testing.assert_array_equal(loaded[p.name], p.value.data)

    image_path = tmp_path / "img.png"
    save_image(np.random.default_rng(13).uniform(0, 1, (3, 64, 64)), image_path)
    for args, files in [
        (["grid", "--image", str(image_path), "--mode", "static", "--k", "3"],
         ["manifest.txt", "level_1.png", "level_2.png", "level_3.png"]),
        (["grid", "--image", str(image_path), "--mode", "dynamic", "--k", "4", "--D", "9"],
         ["manifest.txt", "level_1.png"]),
        (["mask", "--image", str(image_path), "--k", "4", "--level", "2", "--seed", "5"],
         ["manifest.txt", "masked.png"]),
    ]:
        out1, out2 = tmp_path / f"{args[0]}_1{args[-1]}", tmp_path / f"{args[0]}_2{args[-1]}"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        for name in files:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), (args[0], name)

    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        "k = 2\nH = 8\nd_model = 16\nN = 1\nheads = 2\nd_ff = 32\nagg_period = 1\n"
        "decoder_layers = 1\nsteps = 1\ncheckpoint_every = 1\nseed = 3\n"
    )
    data = tmp_path / "data"
    data.mkdir()
    save_image(np.random.default_rng(14).uniform(0, 1, (3, 16, 16)), data / "img.png")
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--config", str(cfg_path), "--out", str(run)]) == 0
    enc_small = tmp_path / "small.png"
    save_image(np.random.default_rng(15).uniform(0, 1, (3, 16, 16)), enc_small)
    outs = []
    for i in (1, 2):
        out_csv = tmp_path / f"nodes_{i}.csv"
        assert main(["encode", "--image", str(enc_small), "--config", str(cfg_path),
                     "--checkpoint", str(run / "checkpoint_000001.bin"), "--out", str(out_csv)]) == 0
        outs.append(out_csv.read_bytes())
    assert outs[0] == outs[1]
    _report(8, "checkpoint round-trip bit-exact; grid/mask/encode outputs byte-identical across runs")
