"""Command-line surface: grid visualization, mask demos, encoding dumps,
gradient checks and pretext training.

Exit codes: 0 success, 1 usage error, 2 data/configuration error,
3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .aggregator import gate_divergence
from .config import ConfigFileError, model_config, parse_config, train_config
from .checkpoint import load_checkpoint
from .gradcheck import GradCheckError, grad_check, randomize_parameters
from .graph import GraphEncoder, ModelConfig
from .grids import ConfigError, GridConfig, build_quadtree, center_square, quadtree_patchset, static_grid
from .image import DataError, load_image, save_image
from .masking import apply_mask, mask_at_level
from .params import ParamBank
from .rng import Rng
from .tensor import Parameter, ShapeError, Tensor
from .trainer import PretextModel, TrainingError, load_dataset, train_loop

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write_manifest(path, entries):
    with open(path, "w") as fh:
        for key, value in entries:
            fh.write(f"{key} = {value}\n")


def cmd_grid(args) -> int:
    from .report import save_dynamic_overlays, save_static_overlays

    pixels = load_image(args.image)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [("mode", args.mode), ("k", args.k)]
    if args.mode == "static":
        patchset = static_grid(pixels, args.k, args.H)
        save_static_overlays(center_square(pixels), args.k, out_dir)
    else:
        tree = build_quadtree(pixels, args.k, args.D)
        patchset = quadtree_patchset(pixels, tree, args.k, args.H)
        save_dynamic_overlays(pixels, tree, args.k, out_dir)
        entries.append(("D", args.D))
        entries.append(("exhausted", str(patchset.exhausted).lower()))
    entries.append(("P", len(patchset)))
    counts = {}
    for m in patchset.meta:
        counts[m.level] = counts.get(m.level, 0) + 1
    for level in sorted(counts):
        entries.append((f"level_{level}", counts[level]))
    _write_manifest(out_dir / "manifest.txt", entries)
    print(f"wrote {len(counts)} overlays and manifest.txt to {out_dir} (P={len(patchset)})")
    return EXIT_OK


def cmd_mask(args) -> int:
    if not 2 <= args.level <= args.k:
        print(f"error: --level must be in [2, {args.k}], got {args.level}", file=sys.stderr)
        return EXIT_USAGE
    pixels = load_image(args.image)
    rng = Rng(args.seed)
    spec = mask_at_level(pixels.shape[1], pixels.shape[2], args.k, args.level, args.fraction, rng)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(apply_mask(pixels, spec), out_dir / "masked.png")
    entries = [
        ("k", args.k),
        ("level", spec.level),
        ("fraction", spec.fraction),
        ("seed", args.seed),
        ("masked_cells", len(spec.cells)),
        ("fully_masked", len(spec.fully_masked)),
    ]
    for i, (y0, x0, y1, x1) in enumerate(spec.masked_regions):
        entries.append((f"region_{i}", f"{y0},{x0},{y1},{x1}"))
    _write_manifest(out_dir / "manifest.txt", entries)
    print(f"masked {len(spec.cells)} level-{spec.level} cells; {len(spec.fully_masked)} patches fully masked")
    return EXIT_OK


def cmd_encode(args) -> int:
    values = parse_config(args.config)
    cfg = model_config(values)
    model = PretextModel(cfg, train_config(values), Rng(values["seed"]), dtype=np.float32)
    model.bank.load_state_dict(load_checkpoint(args.checkpoint))
    pixels = load_image(args.image)
    result = model.encoder.encode_pixels(pixels)
    nodes = result.nodes.data
    gates = result.gates.data
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    k = cfg.grid.k
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["level", "x", "y", "area"] + [f"gate_{j}" for j in range(k)] + [f"f_{i}" for i in range(cfg.d_model)]
        )
        for p, meta in enumerate(result.patchset.meta):
            row = [meta.level, repr(meta.x), repr(meta.y), repr(meta.area_coverage)]
            row += [repr(float(v)) for v in gates[p]]
            row += [repr(float(v)) for v in nodes[p]]
            writer.writerow(row)
    print(f"wrote {nodes.shape[0]} rows x {4 + k + cfg.d_model} columns to {out_path}")
    return EXIT_OK


def _broken_scale(x: Tensor) -> Tensor:
    """scale-by-2 with a deliberately wrong backward; gradient-check canary."""

    def backward(g):
        x._accumulate(g * 2.02)

    return T.Tensor(x.data * 2.0, requires_grad=True, _parents=(x,), _backward_fn=backward)


def _gradcheck_suite(values: dict, seed: int, corrupt: bool):
    """Yields (component, threshold, result) rows; all checks in 64-bit.

    Composite checks use denom_floor=1e-6 (central-difference roundoff on
    structurally-zero gate-bias gradients) and h=1e-5 (small enough not to
    cross relu/maxpool kinks downstream of a perturbed conv weight).
    """
    rng = Rng(seed)
    d = values["d_model"]

    def param(name, shape, lo=-0.5, hi=0.5):
        data = rng.derive("gc", name).uniform(lo, hi, shape)
        return Parameter(name, Tensor(data, dtype=np.float64))

    a = param("a", (3, 4))
    b = param("b", (4, 2))
    yield "matmul", 1e-6, grad_check(
        lambda: T.sum_all(T.mul(T.matmul(a.value, b.value), T.matmul(a.value, b.value))), [a, b]
    )

    x = param("conv.in", (2, 6, 6))
    kern = param("conv.kernel", (3, 2, 3, 3))
    bias = param("conv.bias", (3,))
    yield "conv2d_valid", 1e-6, grad_check(
        lambda: T.sum_all(T.conv2d_valid(x.value, kern.value, bias.value)), [x, kern, bias]
    )

    mp = param("maxpool.in", (2, 4, 4))
    yield "maxpool2", 1e-6, grad_check(lambda: T.sum_all(T.mul(T.maxpool2(mp.value), T.maxpool2(mp.value))), [mp])

    rl = param("relu.in", (8,))
    yield "relu", 1e-6, grad_check(
        lambda: T.sum_all(T.mul(T.relu(rl.value), Tensor(np.arange(8.0)))), [rl]
    )

    sm = param("softmax.in", (6,))
    yield "softmax", 1e-6, grad_check(lambda: T.sum_all(T.mul(T.softmax(sm.value, 0), Tensor(np.arange(6.0)))), [sm])

    ln_x = param("layer_norm.in", (5,))
    ln_g = param("layer_norm.gain", (5,), 0.5, 1.5)
    ln_s = param("layer_norm.shift", (5,))
    yield "layer_norm", 1e-6, grad_check(
        lambda: T.sum_all(T.mul(T.layer_norm(ln_x.value, ln_g.value, ln_s.value), Tensor(np.arange(5.0)))),
        [ln_x, ln_g, ln_s],
    )

    from .aggregator import GatedAggregator

    bank = ParamBank(rng.derive("agg_bank"), dtype=np.float64)
    agg = GatedAggregator(bank, 8)
    randomize_parameters(bank.parameters(), rng.derive("agg_rand"))
    fv = Tensor(rng.derive("agg_fv").uniform(-1, 1, (3, 8)), dtype=np.float64)

    def agg_loss():
        out, gates = agg.aggregate(fv, None)
        return T.add(T.sum_all(out), gate_divergence(gates))

    yield "aggregator+divergence", 1e-5, grad_check(
        agg_loss, bank.parameters(), h=1e-4, denom_floor=1e-6
    )

    from .grids import PatchMeta
    from .posenc import PositionScaleEncoder

    metas = [PatchMeta(0.3, -0.4, 1.0, 1), PatchMeta(-0.5, 0.5, 0.0, 2)]
    for variant in ("trainable", "trainable_periodic"):
        vbank = ParamBank(rng.derive("pos_bank", variant), dtype=np.float64)
        enc = PositionScaleEncoder(vbank, variant, d)
        randomize_parameters(vbank.parameters(), rng.derive("pos_rand", variant))
        yield f"pos_encoder[{variant}]", 1e-6, grad_check(
            lambda enc=enc: T.sum_all(T.mul(enc.encode_batch(metas), enc.encode_batch(metas))),
            vbank.parameters(),
        )

    desk = ModelConfig(
        grid=GridConfig(mode="static", k=2, H=8),
        d_model=d,
        n_layers=1,
        heads=2,
        d_ff=2 * d,
        agg_period=1,
        encoder_variant="trainable_periodic",
    )
    image = rng.derive("image").uniform(0.0, 1.0, (3, 16, 16))
    encoder = GraphEncoder(desk, rng.derive("model"), dtype=np.float64)
    randomize_parameters(encoder.parameters(), rng.derive("model_rand"), -0.3, 0.3)
    # floor 1e-5: the probe is a sum over all node entries (|f| ~ 5), so
    # roundoff on shift-invariant query-path gradients reaches ~5e-11
    yield "graph_encode", 1e-5, grad_check(
        lambda: T.sum_all(encoder.encode_pixels(image).nodes),
        encoder.parameters(),
        h=1e-5,
        sample=4,
        rng=rng,
        denom_floor=1e-5,
    )

    from .masking import generate_mask
    from .trainer import TrainConfig

    model = PretextModel(desk, TrainConfig(decoder_layers=1, seed=seed), rng.derive("pretext"), dtype=np.float64)
    randomize_parameters(model.parameters(), rng.derive("pretext_rand"), -0.3, 0.3)
    spec = generate_mask(16, 16, 2, 0.25, rng.derive("mask"))

    def pretext_loss():
        total, _, _ = model.image_loss(image, spec)
        return total

    yield "pretext_step", 1e-4, grad_check(
        pretext_loss, model.parameters(), h=1e-5, sample=3, rng=rng, denom_floor=1e-6
    )

    if corrupt:
        c = param("canary", (4,))
        yield "corrupted_canary", 1e-6, grad_check(lambda: T.sum_all(_broken_scale(c.value)), [c])


def cmd_gradcheck(args) -> int:
    values = parse_config(args.config)
    failures = 0
    rows = 0
    for component, threshold, result in _gradcheck_suite(values, args.seed, args.corrupt):
        rows += 1
        ok = result.max_rel_error < threshold
        status = "ok" if ok else "FAIL"
        print(f"{component:24s} max_rel_err={result.max_rel_error:.3e} threshold={threshold:.0e} {status}")
        if not ok:
            failures += 1
    print(f"{rows} components checked, {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_CHECK


def cmd_train(args) -> int:
    from .report import save_loss_curves

    values = parse_config(args.config)
    cfg = model_config(values)
    tcfg = train_config(values)
    model = PretextModel(cfg, tcfg, Rng(tcfg.seed), dtype=np.float32)
    start_step = 0
    if args.resume:
        model.bank.load_state_dict(load_checkpoint(args.resume))
        stem = Path(args.resume).stem
        try:
            start_step = int(stem.rsplit("_", 1)[1])
        except (IndexError, ValueError):
            raise DataError(f"cannot parse step number from checkpoint name {stem!r}")
    images = load_dataset(args.data)
    rows = train_loop(model, images, args.out, start_step=start_step)
    save_loss_curves(rows, Path(args.out) / "loss_curves.png")
    print(f"trained {tcfg.steps} steps; metrics.csv, loss_curves.png and checkpoints in {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="render per-level patch-grid overlays")
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=("static", "dynamic"), required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--D", type=int, default=0)
    p.add_argument("--H", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("mask", help="write a masked image and its manifest")
    p.add_argument("--image", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--fraction", type=float, choices=(0.25, 0.125), default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_mask)

    p = sub.add_parser("encode", help="dump graph node vectors to CSV")
    p.add_argument("--image", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("gradcheck", help="finite-difference check of every component")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help="add a deliberately wrong gradient (self-test)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="masked-reconstruction pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint file to continue from")
    p.set_defaults(fn=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ConfigFileError, DataError, ShapeError, TrainingError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GradCheckError as exc:
        print(f"gradient check aborted: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
