"""Flat key=value configuration files and profile-based config assembly.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Keys mirror the training and model config fields; ``views`` is a
comma-separated list of view tags (e.g. ``original,dflip,vflip,close:1.5``).
Precedence: profile defaults, then file values, then explicit overrides.
"""

from __future__ import annotations

from pathlib import Path

from .model import ModelConfig, PROFILES
from .train import TrainConfig
from .views import parse_view_list


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_depth(text: str):
    text = text.strip()
    return text if text == "tiny" else int(text)


def _parse_optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


MODEL_KEYS = {
    "depth": _parse_depth,
    "image_size": int,
    "views": parse_view_list,
    "channels": int,
    "fpn_channels": int,
    "camv_stage2": _parse_bool,
    "cfu_enabled": _parse_bool,
    "clip_groups": int,
    "opi_steps": int,
    "backbone_weights": str,
}

TRAIN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "warmup_epochs": int,
    "eval_every": int,
    "seed": int,
    "lambda_init": float,
    "lambda_schedule": str,
    "stop_compare": str,
    "val_fraction": float,
    "max_steps": _parse_optional_int,
}

PROFILE_TRAIN_DEFAULTS = {
    "full": {"batch_size": 8, "epochs": 60},
    "tiny": {"batch_size": 2, "epochs": 50},
}


def parse_config_file(path) -> dict:
    """Read a flat key=value file into a string-valued mapping."""
    mapping = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        mapping[key] = value
    return mapping


def build_train_config(profile="full", file_values=None, **overrides) -> TrainConfig:
    """Assemble a TrainConfig from a profile, optional file values (strings),
    and already-typed keyword overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    model_kwargs = {}
    train_kwargs = dict(PROFILE_TRAIN_DEFAULTS[profile])
    for key, raw in (file_values or {}).items():
        if key in MODEL_KEYS:
            model_kwargs[key] = MODEL_KEYS[key](raw)
        elif key in TRAIN_KEYS:
            train_kwargs[key] = TRAIN_KEYS[key](raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    for key, value in overrides.items():
        if value is None:
            continue
        if key in MODEL_KEYS:
            model_kwargs[key] = value
        elif key in TRAIN_KEYS:
            train_kwargs[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    model = PROFILES[profile](**model_kwargs)
    return TrainConfig(model=model, **train_kwargs)
