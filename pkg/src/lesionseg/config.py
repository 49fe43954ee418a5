"""Run configuration files.

A run config is a YAML document with sections ``data``, ``arch``,
``loss``, ``train``, and ``eval``. Unknown sections or keys are rejected
by name; every omitted key takes its documented default, and the fully
materialized configuration lands in the run manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .arch import ArchSpec, preset
from .losses import LossParams
from .pipeline import AugmentConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_SECTIONS = ("data", "arch", "loss", "train", "eval")

_DATA_KEYS = {"manifest", "root", "store"}
_ARCH_KEYS = {"preset", "variant", "fusion_stages", "use_se", "se_reduction",
              "base_filters", "dropout_rate", "input_size"}
_LOSS_KEYS = {"name", "alpha", "gamma", "delta", "eps", "literal_log_dice"}
_TRAIN_KEYS = {"learning_rate", "momentum", "epochs", "batch_size", "seed",
               "augment", "max_shift", "scale_range", "hflip",
               "checkpoint_every"}
_EVAL_KEYS = {"threshold"}


@dataclass
class DataConfig:
    manifest: str | None = None
    root: str | None = None
    store: str | None = None


@dataclass
class RunConfig:
    data: DataConfig
    spec: ArchSpec
    train: TrainConfig
    threshold: float = 0.5

    def effective_dict(self) -> dict:
        return {
            "data": vars(self.data),
            "arch": self.spec.to_dict(),
            "loss": {"name": self.train.loss, **self.train.loss_params.to_dict()},
            "train": self.train.to_dict(),
            "eval": {"threshold": self.threshold},
        }


def _check_keys(section: str, mapping: dict, allowed: set) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in section {section!r}: {sorted(unknown)}")


def parse_config_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    data_doc = doc.get("data") or {}
    _check_keys("data", data_doc, _DATA_KEYS)
    data = DataConfig(**data_doc)

    arch_doc = dict(doc.get("arch") or {})
    _check_keys("arch", arch_doc, _ARCH_KEYS)
    size = int(arch_doc.pop("input_size", 192))
    name = arch_doc.pop("preset", None)
    try:
        if name is not None:
            base = preset(name, input_shape=(size, size, 4)).to_dict()
            base.pop("input_shape")
            base.update(arch_doc)
            arch_doc = base
        arch_doc.setdefault("input_shape", (size, size, 4))
        spec = ArchSpec.from_dict(arch_doc)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"arch section: {exc}") from exc

    loss_doc = dict(doc.get("loss") or {})
    _check_keys("loss", loss_doc, _LOSS_KEYS)
    loss_name = loss_doc.pop("name", "eml")
    try:
        loss_params = LossParams(**loss_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"loss section: {exc}") from exc

    train_doc = dict(doc.get("train") or {})
    _check_keys("train", train_doc, _TRAIN_KEYS)
    aug_kwargs = {}
    if "max_shift" in train_doc:
        aug_kwargs["max_shift"] = float(train_doc.pop("max_shift"))
    if "scale_range" in train_doc:
        aug_kwargs["scale_range"] = tuple(train_doc.pop("scale_range"))
    if "hflip" in train_doc:
        aug_kwargs["hflip"] = bool(train_doc.pop("hflip"))
    try:
        train_cfg = TrainConfig(loss=loss_name, loss_params=loss_params,
                                augment_config=AugmentConfig(**aug_kwargs),
                                **train_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train section: {exc}") from exc

    eval_doc = doc.get("eval") or {}
    _check_keys("eval", eval_doc, _EVAL_KEYS)
    threshold = float(eval_doc.get("threshold", 0.5))

    return RunConfig(data=data, spec=spec, train=train_cfg, threshold=threshold)


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return parse_config_dict(doc or {})
