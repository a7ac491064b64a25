"""Run configuration: one flat JSON document plus command-line overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .model import TrainConfig

SEED_ENV = "STAR_SEED"
RUN_KEYS = ("dataset", "split", "side_info", "out")
RESOLVED_NAME = "config.json"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    split: str | None = None
    side_info: str | None = None
    out: str | None = None

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in RUN_KEYS}
        doc.update(self.train.to_dict())
        return doc

    def require(self, *keys: str) -> None:
        for key in keys:
            if not getattr(self, key):
                raise ConfigError(f"missing required config key {key!r}")


def all_keys() -> list[str]:
    return list(RUN_KEYS) + TrainConfig.field_names()


def _field_types() -> dict[str, Any]:
    return {f.name: f.type for f in fields(TrainConfig)}


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def coerce(key: str, value: Any) -> Any:
    """Convert a JSON or command-line value to the type of field ``key``."""
    if key in RUN_KEYS:
        return None if value is None else str(value)
    kind = str(_field_types()[key])
    try:
        if "tuple" in kind:
            if isinstance(value, str):
                value = [v for v in value.replace(" ", "").split(",") if v]
            return tuple(int(v) for v in value)
        if kind == "bool":
            return value if isinstance(value, bool) else parse_bool(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {kind}") from None


def load_config_file(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object of flat keys")
    return doc


def resolve(file_doc: dict | None = None, overrides: dict | None = None,
            env: dict | None = None) -> RunConfig:
    """Merge defaults, the config file and flag overrides (later wins).

    ``STAR_SEED`` applies only when neither the file nor a flag sets a seed.
    """
    file_doc = dict(file_doc or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    env = os.environ if env is None else env
    known = set(all_keys())
    for source, doc in (("config file", file_doc), ("overrides", overrides)):
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown keys in {source}: {unknown}")
    merged = {**file_doc, **overrides}
    if "seed" not in merged and env.get(SEED_ENV):
        merged["seed"] = env[SEED_ENV]
    values = {k: coerce(k, v) for k, v in merged.items()}
    train = TrainConfig(**{k: v for k, v in values.items() if k not in RUN_KEYS})
    train.validate()
    return RunConfig(train=train, **{k: values.get(k) for k in RUN_KEYS})


def write_resolved(cfg: RunConfig, out_dir: str | os.PathLike) -> Path:
    path = Path(out_dir) / RESOLVED_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
    return path


def run_dir_of(checkpoint: str | os.PathLike) -> Path | None:
    """``<run>/checkpoints/epoch_NNN`` -> ``<run>`` when the echoed config is there."""
    ckpt = Path(checkpoint)
    if ckpt.parent.name == "checkpoints" and (ckpt.parent.parent / RESOLVED_NAME).exists():
        return ckpt.parent.parent
    return None
