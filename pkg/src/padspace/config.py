"""Flat ``key=value`` run configuration shared by all CLI subcommands."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .classifier import TrainConfig
from .exceptions import DataError
from .features import FrameConfig
from .reduction import ReductionConfig

# stream offsets for fanning one seed out to independent stages
STAGE_TRAIN = 1
STAGE_REDUCTION = 2
STAGE_SYNTH = 3


@dataclass(frozen=True)
class RunConfig:
    # classifier
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    # anchored reduction
    k: int = 20
    min_dist: float = 0.1
    layout_lr: float = 1e-2
    theta: float = 0.01
    layout_epochs: int = 500
    negative_sample_rate: int = 5
    supervision_weight: float = 0.5
    layout_scale: float = 10.0
    # framing and prediction
    frame_len: int = 400
    hop: int = 160
    k_pred: int = 10
    # run
    seed: int = 0
    manifest: str = ""
    workdir: str = ""

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr,
                           seed=stage_seed(self.seed, STAGE_TRAIN))

    def reduction_config(self) -> ReductionConfig:
        return ReductionConfig(self.k, self.min_dist, self.layout_lr, self.theta,
                               self.layout_epochs, self.negative_sample_rate,
                               self.supervision_weight, self.layout_scale,
                               stage_seed(self.seed, STAGE_REDUCTION))

    def frame_config(self) -> FrameConfig:
        return FrameConfig(self.frame_len, self.hop)

    def workdir_path(self) -> Path:
        return Path(self.workdir or os.environ.get("PADSPACE_WORKDIR") or ".")

    def validate(self):
        try:
            self.train_config()
            self.reduction_config()
            self.frame_config()
        except ValueError as exc:
            raise DataError(f"invalid configuration: {exc}") from None
        if self.k_pred < 1:
            raise DataError("invalid configuration: k_pred must be >= 1")
        return self

    def describe(self, keys) -> str:
        return " ".join(f"{k}={getattr(self, k)!r}".replace("'", "") for k in keys)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


def coerce(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise DataError(f"unknown config key {key!r}")
    try:
        return _CASTS[FIELD_TYPES[key]](raw)
    except ValueError:
        raise DataError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = coerce(key, raw)
        except DataError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides (CLI flags)."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config file not found: {p}")
        cfg = replace(cfg, **parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
