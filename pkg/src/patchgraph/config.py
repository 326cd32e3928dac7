"""Flat `key = value` run configuration files.

One assignment per line, `#` starts a comment, unknown keys are rejected
with their line number. Parsed values feed ModelConfig / TrainConfig.
"""

from __future__ import annotations

from .graph import ModelConfig
from .grids import GridConfig
from .trainer import TrainConfig


class ConfigFileError(ValueError):
    pass


def _parse_fraction(text: str) -> float:
    value = float(text)
    if value not in (0.25, 0.125):
        raise ValueError("fraction must be 0.25 or 0.125")
    return value


# key -> (converter, default); None default means required when used
KEYS = {
    "mode": (str, "static"),
    "k": (int, 3),
    "D": (int, 0),
    "H": (int, 16),
    "d_model": (int, 32),
    "N": (int, 4),
    "heads": (int, 4),
    "d_ff": (int, 64),
    "agg_period": (int, 2),
    "encoder": (str, "trainable_periodic"),
    "lam": (float, 10.0),
    "beta": (float, 0.1),
    "lr": (float, 3e-4),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "steps": (int, 100),
    "batch_size": (int, 1),
    "seed": (int, 0),
    "fraction": (_parse_fraction, 0.25),
    "checkpoint_every": (int, 100),
    "decoder_layers": (int, 2),
}


def parse_config(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigFileError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            text = text.strip()
            if key not in KEYS:
                raise ConfigFileError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigFileError(f"{path}:{lineno}: duplicate key {key!r}")
            converter, _ = KEYS[key]
            try:
                values[key] = converter(text)
            except ValueError as exc:
                raise ConfigFileError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    for key, (_, default) in KEYS.items():
        values.setdefault(key, default)
    return values


def model_config(values: dict) -> ModelConfig:
    return ModelConfig(
        grid=GridConfig(mode=values["mode"], k=values["k"], D=values["D"], H=values["H"]),
        d_model=values["d_model"],
        n_layers=values["N"],
        heads=values["heads"],
        d_ff=values["d_ff"],
        agg_period=values["agg_period"],
        encoder_variant=values["encoder"],
        lam=values["lam"],
    )


def train_config(values: dict) -> TrainConfig:
    return TrainConfig(
        lr=values["lr"],
        adam_beta1=values["adam_beta1"],
        adam_beta2=values["adam_beta2"],
        adam_eps=values["adam_eps"],
        beta_divergence=values["beta"],
        steps=values["steps"],
        batch_size=values["batch_size"],
        seed=values["seed"],
        fraction=values["fraction"],
        checkpoint_every=values["checkpoint_every"],
        decoder_layers=values["decoder_layers"],
    )
