"""Run configuration: nested dataclasses loaded from YAML, hashed by canonical JSON."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

REGIMES = ("fr", "ur", "craf")
REGIME_LABELS = {"fr": "STF-OL-FR", "ur": "STF-OL-UR", "craf": "CRAF"}
ASSIMILATION_MODES = ("escalation", "always", "never", "hours")


@dataclass
class WorldConfig:
    rows: int = 64
    cols: int = 64
    n_zones: int = 50
    n_buildings: int = 500
    cell_size: float = 10.0
    n_outlets: int = 8
    n_storms: int = 64
    duration: int = 24
    rain_threshold: float = 350.0
    substeps: int = 48


@dataclass
class FragilityConfig:
    base_medians: list[float] = field(default_factory=lambda: [0.4, 0.3, 0.25, 0.2])
    ratio: float = 1.6
    beta: float = 0.4


@dataclass
class GraphConfig:
    sa_threshold: float = 0.7
    stf_threshold: float = 0.7
    top_k: int = 3


@dataclass
class SaConfig:
    ratios: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    hidden_layers: int = 2
    heads: int = 4
    hidden_width: int = 32
    lr: float = 5e-3
    epochs: int = 40
    batch_size: int = 32
    patience: int = 10
    eval_draws: int = 20


@dataclass
class StfConfig:
    history: int = 12
    horizon: int = 24
    kernel: int = 3
    channels: int = 16
    rain_channels: int = 4
    zone_channels: int = 4
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    patience: int = 10


@dataclass
class CrowdConfig:
    base_rate: float = 0.5
    depth_mid: float = 0.15
    depth_scale: float = 0.05
    min_depth: float = 0.05
    coverage_band: list[float] | None = field(default_factory=lambda: [0.16, 0.42])
    radius: float = 300.0
    elevation_tol: float = 1.0


@dataclass
class EventConfig:
    regime: str = "craf"
    bias_factor: float = 0.363
    target_total: float = 447.5  # held-out storm: total nearest this value
    assimilation: str = "escalation"
    assimilation_hours: list[int] = field(default_factory=list)
    score_leads: int = 3
    min_run: int = 3
    fr_threshold: float = 0.5
    ur_threshold: float = 0.3


@dataclass
class RunConfig:
    seed: int = 1
    val_fraction: float = 0.3
    world: WorldConfig = field(default_factory=WorldConfig)
    fragility: FragilityConfig = field(default_factory=FragilityConfig)
    graphs: GraphConfig = field(default_factory=GraphConfig)
    sa: SaConfig = field(default_factory=SaConfig)
    stf: StfConfig = field(default_factory=StfConfig)
    crowd: CrowdConfig = field(default_factory=CrowdConfig)
    event: EventConfig = field(default_factory=EventConfig)
    out: str = "runs/default"

    def validate(self) -> None:
        if self.event.regime not in REGIMES:
            raise ValueError(f"config: regime must be one of {REGIMES}, got {self.event.regime!r}")
        if not self.event.bias_factor > 0:
            raise ValueError("config: bias factor must be > 0")
        if self.event.assimilation not in ASSIMILATION_MODES:
            raise ValueError(f"config: assimilation must be one of {ASSIMILATION_MODES}")
        if not self.sa.ratios or any(not (0 < r < 1) for r in self.sa.ratios):
            raise ValueError("config: SA ratios must lie in (0, 1)")
        if not (0 < self.val_fraction < 1):
            raise ValueError("config: val_fraction must lie in (0, 1)")
        if self.world.n_storms < 3:
            raise ValueError("config: need at least 3 storms (test, train, validation)")
        if self.stf.horizon < self.event.score_leads:
            raise ValueError("config: STF horizon shorter than the scored leads")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(self)


_SECTIONS = {
    "world": WorldConfig,
    "fragility": FragilityConfig,
    "graphs": GraphConfig,
    "sa": SaConfig,
    "stf": StfConfig,
    "crowd": CrowdConfig,
    "event": EventConfig,
}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"config: unknown keys in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    sections = {}
    for key, cls in _SECTIONS.items():
        sub = data.pop(key, None) or {}
        if not isinstance(sub, dict):
            raise ValueError(f"config: section {key} must be a mapping")
        sections[key] = _build(cls, sub, key)
    cfg = _build(RunConfig, {**data, **sections}, "top level")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return config_from_dict({})
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def config_hash(cfg: RunConfig) -> str:
    """sha256 of the canonical JSON form; ``out`` is excluded so relocating a run keeps its hash."""
    d = cfg.to_dict()
    d.pop("out", None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
