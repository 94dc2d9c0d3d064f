"""Run configuration: one YAML document covering pipeline, mode, and output."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .pipeline import PipelineConfig
from .registration import GicpConfig

SIM_PRESETS = ("static", "corridor", "corridor-loop", "figure-eight")


@dataclass
class SimulateSettings:
    preset: str = "corridor"
    frames: int = 100
    rate: float = 10.0
    speed: float | None = None        # None: preset default
    seed: int = 0
    prior: str = "none"               # none | gt | noisy
    save_dataset: bool = False
    channels: int = 16
    horizontal_resolution_deg: float = 1.2
    vertical_fov_deg: float = 30.0
    max_range: float = 25.0
    scan_period: float = 0.1

    def __post_init__(self):
        if self.preset not in SIM_PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {SIM_PRESETS}")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.prior not in ("none", "gt", "noisy"):
            raise ConfigError("prior must be none, gt, or noisy")


@dataclass
class RunConfig:
    mode: str = "simulate"            # simulate | replay
    out_dir: str = "out"
    seed: int = 0
    dataset: str | None = None
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.mode not in ("simulate", "replay"):
            raise ConfigError(f"mode must be 'simulate' or 'replay', got {self.mode!r}")
        if self.mode == "replay" and not self.dataset:
            raise ConfigError("replay mode requires a dataset path")


def _build(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _gicp_from_dict(data: dict) -> GicpConfig:
    data = dict(data)
    if "threads" in data:
        data["num_threads"] = data.pop("threads")
    return _build(GicpConfig, data, "gicp settings")


def _pipeline_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    gicp = data.pop("gicp", {})
    if not isinstance(gicp, dict):
        raise ConfigError("pipeline.gicp must be a mapping")
    if "body_box" in data:
        box = data["body_box"]
        if not (isinstance(box, (list, tuple)) and len(box) == 3):
            raise ConfigError("body_box must be a 3-element list")
        data["body_box"] = tuple(float(v) for v in box)
    if data.get("window_half_extent_m") in ("inf", ".inf", None):
        data["window_half_extent_m"] = np.inf
    cfg = _build(PipelineConfig, {**data, "gicp": _gicp_from_dict(gicp)},
                 "pipeline settings")
    return cfg


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    doc = dict(doc)
    sim = doc.pop("simulate", {})
    pipe = doc.pop("pipeline", {})
    if not isinstance(sim, dict) or not isinstance(pipe, dict):
        raise ConfigError("'simulate' and 'pipeline' must be mappings")
    return _build(RunConfig,
                  {**doc,
                   "simulate": _build(SimulateSettings, sim, "simulate settings"),
                   "pipeline": _pipeline_from_dict(pipe)},
                  "run config")


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    return config_from_dict(doc)
