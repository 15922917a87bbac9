"""Config files and run manifests.

Configs are plain INI (key = value under [sections]); every key must belong
to the published schema, and violations are reported as ``section.key:
message`` so they are actionable from the command line. Each CLI run writes
one manifest JSON next to its outputs recording the command, config, seed,
and content hashes of every input file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .decoding import DecodeConfig
from .model import ModelConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "SynthConfig",
    "AppConfig",
    "load_config",
    "default_config",
    "write_manifest",
    "file_sha256",
]

STAGE_SECTIONS = ("pretrain", "joint", "finetune_grounding", "finetune_captioning")


class ConfigError(ValueError):
    """Invalid config file; message carries section.key context."""


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 20
    n_objects: int = 0             # 0 = per-scene random in [4, 8]
    points_per_object: int = 60
    n_frames: int = 100
    frame_stride: int = 20
    top_k: int = 3
    sim_threshold: float = 0.3
    noise_prob: float = 0.3
    vocab_min_count: int = 1

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if not 0.0 <= self.sim_threshold <= 1.0:
            raise ValueError("sim_threshold must lie in [0, 1]")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("noise_prob must lie in [0, 1]")


@dataclass
class AppConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    stages: dict = field(default_factory=dict)   # stage name -> TrainConfig

    def stage(self, name: str) -> TrainConfig:
        if name in self.stages:
            return self.stages[name]
        return TrainConfig(stage=name)


def _coerce(section: str, key: str, raw: str, target_type):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError("not a boolean")
        if target_type is str:
            return raw
        if target_type == tuple[float, float]:
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated floats")
            return (parts[0], parts[1])
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None
    raise ConfigError(f"{section}.{key}: unsupported field type {target_type}")


def _build(section: str, cls, raw_items: dict, fixed: dict | None = None):
    allowed = {f.name: f.type for f in dataclasses.fields(cls)}
    types = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(fixed or {})
    for key, raw in raw_items.items():
        if key not in allowed or key in kwargs:
            raise ConfigError(f"{section}.{key}: unknown key")
        ftype = types[key].type
        if isinstance(ftype, str):  # stringified annotation
            ftype = {"int": int, "float": float, "bool": bool, "str": str,
                     "tuple[float, float]": tuple[float, float]}.get(ftype, str)
        kwargs[key] = _coerce(section, key, raw, ftype)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def load_config(path: str) -> AppConfig:
    """Parse and validate an INI config. Unknown sections or keys, type
    errors, and constraint violations raise ConfigError with field context."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"model", "synth", "decode", *STAGE_SECTIONS}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{section}: unknown section")
    cfg = AppConfig()
    if parser.has_section("model"):
        cfg.model = _build("model", ModelConfig, dict(parser.items("model")))
    if parser.has_section("synth"):
        cfg.synth = _build("synth", SynthConfig, dict(parser.items("synth")))
    if parser.has_section("decode"):
        cfg.decode = _build("decode", DecodeConfig, dict(parser.items("decode")))
    for stage in STAGE_SECTIONS:
        if parser.has_section(stage):
            cfg.stages[stage] = _build(
                stage, TrainConfig, dict(parser.items(stage)), fixed={"stage": stage}
            )
    return cfg


def default_config() -> AppConfig:
    return AppConfig()


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, command: str, config_path: str | None, seed: int,
                   inputs: list[str], outputs: list[str]) -> str:
    """One manifest per run, next to the outputs: enough to reproduce the run
    (command, config, seed, input content hashes)."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": config_path,
        "config_sha256": file_sha256(config_path) if config_path else None,
        "seed": seed,
        "inputs": {p: file_sha256(p) for p in inputs if os.path.exists(p)},
        "outputs": sorted(outputs),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
