"""One declarative run configuration: JSON file plus dotted command-line overrides.

A RunConfig merges the model spec, training schedule, augmentation ranges,
phantom generator settings, and data paths. Everything is validated up front,
and the resolved configuration is echoed to the output directory so any run
can be reproduced from its artifacts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .errors import ConfigError
from .model import ModelSpec
from .phantom import PhantomConfig
from .training import TrainConfig

RESOLVED_NAME = "resolved_config.json"


@dataclass
class RunConfig:
    dataset: str | None = None
    out_dir: str | None = None
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)

    def __post_init__(self):
        if self.model.variant != self.train.variant:
            raise ConfigError(
                f"model.variant {self.model.variant!r} conflicts with train.variant "
                f"{self.train.variant!r}; set both (or use the --variant shortcut)"
            )


_SECTION_TYPES = {
    "model": ModelSpec,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "phantom": PhantomConfig,
}


def _defaults_dict() -> dict:
    out = {"dataset": None, "out_dir": None}
    for name, cls in _SECTION_TYPES.items():
        out[name] = dataclasses.asdict(cls())
    return out


def _merge_section(base: dict, update: dict, section: str):
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {section + '.' if section else ''}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge_section(base[key], value, f"{section + '.' if section else ''}{key}")
        else:
            base[key] = value


def _apply_override(tree: dict, assignment: str):
    if "=" not in assignment:
        raise ConfigError(f"override must look like section.key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings like variant names
    node = tree
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Defaults <- JSON file <- dotted overrides, then validate everything."""
    tree = _defaults_dict()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a JSON object: {path}")
        _merge_section(tree, loaded, "")
    for assignment in overrides:
        _apply_override(tree, assignment)
    return from_dict(tree)


def from_dict(tree: dict) -> RunConfig:
    kwargs = {"dataset": tree.get("dataset"), "out_dir": tree.get("out_dir")}
    for name, cls in _SECTION_TYPES.items():
        section = tree.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        try:
            kwargs[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"bad {name} section: {exc}") from exc
    return RunConfig(**kwargs)


def resolved_dict(cfg: RunConfig) -> dict:
    out = {"dataset": cfg.dataset, "out_dir": cfg.out_dir}
    for name in _SECTION_TYPES:
        out[name] = dataclasses.asdict(getattr(cfg, name))
    return out


def echo_config(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_NAME
    path.write_text(json.dumps(resolved_dict(cfg), indent=2, sort_keys=True, default=list) + "\n")
    return path
