"""Flat dotted-key text configuration with override precedence.

Files hold `key = value` lines (# comments allowed). Command-line overrides
of the form key=value win over file values; defaults fill the rest. The
fully resolved config is echoed into every run directory.
"""
from __future__ import annotations

import difflib
import os

from .data import SynthSpec
from .encoder import ModalityConfig
from .fewshot import LossConfig
from .train import TrainConfig

DEFAULTS = {
    "data.path": "",
    "data.n_per_class": 100,
    "data.modalities": "audio:4,ppg:3,eda:2",
    "data.seq_len": 120,
    "data.separation": 8.0,
    "data.noise_sigma": 0.5,
    "data.hierarchy_depth": 2,
    "data.seed": 0,
    "model.embed_dim": 32,
    "model.heads": 2,
    "model.dropout": 0.1,
    "model.pool": "mean",
    "model.space": "hyperbolic",
    "model.alpha_init": 1.0,
    "model.alpha_trainable": True,
    "train.learning_rate": 1e-3,
    "train.epochs": 50,
    "train.episodes_per_epoch": 60,
    "train.k": 1,
    "train.b": 4,
    "train.seed": 0,
    "train.repeats": 5,
    "train.test_fraction": 0.2,
    "train.n_eval_episodes": 200,
    "train.grad_clip": 10.0,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "loss.gamma": 0.2,
    "loss.lambda": 1.0,
    "loss.mode": "combined",
    "loss.angular_form": "corrected",
    "ablate.axis": "alpha",
    "ablate.values": "",
    "gradcheck.step": 1e-5,
    "gradcheck.tol": 1e-4,
}


class ConfigError(ValueError):
    pass


def _convert(key, raw):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None


def _check_key(key):
    if key not in DEFAULTS:
        near = difflib.get_close_matches(key, DEFAULTS, n=1)
        hint = f"; did you mean {near[0]!r}?" if near else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")


def parse_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            _check_key(key)
            values[key] = _convert(key, raw)
    return values


def parse_overrides(pairs):
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, raw = (part.strip() for part in pair.split("=", 1))
        _check_key(key)
        values[key] = _convert(key, raw)
    return values


def resolve(config_path=None, overrides=()):
    """defaults < config file < command-line overrides < (seed env fallback)."""
    resolved = dict(DEFAULTS)
    explicit = set()
    if config_path:
        file_values = parse_config_file(config_path)
        resolved.update(file_values)
        explicit |= set(file_values)
    override_values = parse_overrides(overrides)
    resolved.update(override_values)
    explicit |= set(override_values)
    env_seed = os.environ.get("HCFSLN_SEED")
    if env_seed is not None and "train.seed" not in explicit:
        resolved["train.seed"] = int(env_seed)
        if "data.seed" not in explicit:
            resolved["data.seed"] = int(env_seed)
    return resolved


def format_config(resolved):
    lines = [f"{key} = {resolved[key]}" for key in sorted(resolved)]
    return "\n".join(lines) + "\n"


def parse_modalities(spec_str):
    out = []
    for part in spec_str.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"modality spec needs name:dim, got {part!r}")
        name, d = part.split(":", 1)
        out.append((name.strip(), int(d)))
    if not out:
        raise ConfigError("at least one modality is required")
    return out


def synth_spec(resolved):
    return SynthSpec(
        n_per_class=resolved["data.n_per_class"],
        modalities=parse_modalities(resolved["data.modalities"]),
        seq_len=resolved["data.seq_len"],
        separation=resolved["data.separation"],
        noise_sigma=resolved["data.noise_sigma"],
        hierarchy_depth=resolved["data.hierarchy_depth"],
        seed=resolved["data.seed"],
    )


def modality_configs(resolved):
    return [
        ModalityConfig(name, d, resolved["data.seq_len"])
        for name, d in parse_modalities(resolved["data.modalities"])
    ]


def train_config(resolved):
    loss = LossConfig(
        gamma=resolved["loss.gamma"],
        lam=resolved["loss.lambda"],
        mode=resolved["loss.mode"],
        angular_form=resolved["loss.angular_form"],
    )
    return TrainConfig(
        learning_rate=resolved["train.learning_rate"],
        epochs=resolved["train.epochs"],
        episodes_per_epoch=resolved["train.episodes_per_epoch"],
        k=resolved["train.k"],
        b=resolved["train.b"],
        seed=resolved["train.seed"],
        repeats=resolved["train.repeats"],
        test_fraction=resolved["train.test_fraction"],
        n_eval_episodes=resolved["train.n_eval_episodes"],
        grad_clip=resolved["train.grad_clip"],
        beta1=resolved["train.beta1"],
        beta2=resolved["train.beta2"],
        eps=resolved["train.eps"],
        embed_dim=resolved["model.embed_dim"],
        heads=resolved["model.heads"],
        dropout_rate=resolved["model.dropout"],
        pool=resolved["model.pool"],
        space=resolved["model.space"],
        alpha_init=resolved["model.alpha_init"],
        alpha_trainable=resolved["model.alpha_trainable"],
        loss=loss,
    )
