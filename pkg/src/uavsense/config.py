"""Root JSON configuration: nested dataclasses, strict keys, standard radar defaults."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from .estimation import CfarConfig
from .fusion import DbscanConfig
from .harness import CampaignConfig, PipelineConfig, SceneTemplate
from .selection import RewardConfig
from .waveform import WaveformConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field."""


@dataclass(frozen=True)
class GridConfig:
    cell_size: float = 0.25
    threshold_fraction: float = 0.5

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if not 0.0 <= self.threshold_fraction <= 1.0:
            raise ValueError("threshold_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SensingConfig:
    noise_figure_db: float = 10.0
    rotor_fraction: float = 0.05
    snr_floor_db: float = -10.0
    match_gate_m: float = 5.0
    fusion_prior: Optional[float] = None


@dataclass(frozen=True)
class CampaignSection:
    runs: int = 200
    bs_counts: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    template: SceneTemplate = field(default_factory=SceneTemplate)
    record_timing: bool = False


@dataclass(frozen=True)
class RecognizerConfig:
    seed: int = 0
    signals_per_class: int = 60
    regularization_c: float = 1.0


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 2000
    eval_seeds: int = 10
    fcm_states: int = 5
    fcm_fuzzifier: float = 2.0


@dataclass(frozen=True)
class RootConfig:
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    cfar: CfarConfig = field(default_factory=CfarConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    dbscan: DbscanConfig = field(default_factory=lambda: DbscanConfig(eps=1.0, min_pts=1))
    reward: RewardConfig = field(default_factory=RewardConfig)
    campaign: CampaignSection = field(default_factory=CampaignSection)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def pipeline(self) -> PipelineConfig:
        s = self.sensing
        return PipelineConfig(self.waveform, self.cfar, self.dbscan, self.grid.cell_size,
                              self.grid.threshold_fraction, s.noise_figure_db, s.rotor_fraction,
                              s.snr_floor_db, s.match_gate_m, s.fusion_prior)

    def campaign_config(self, seed: int, runs: Optional[int] = None,
                        bs_counts: Optional[tuple[int, ...]] = None) -> CampaignConfig:
        c = self.campaign
        return CampaignConfig(runs if runs is not None else c.runs, seed, c.template,
                              bs_counts if bs_counts is not None else c.bs_counts, self.pipeline(),
                              c.record_timing)


# -- (de)serialization -------------------------------------------------------------------

def _convert(tp: Any, value: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        item = args[0] if args else Any
        return tuple(_convert(item, v, f"{where}[{i}]") for i, v in enumerate(value))
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError:
            raise ConfigError(f"{where}: {value!r} is not one of {[e.value for e in tp]}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    return value


def build(cls: type, data: Any, where: str = "config") -> Any:
    """Construct dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def to_jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_jsonable(v) for v in obj]
    return obj


def dumps(cfg: RootConfig) -> str:
    return json.dumps(to_jsonable(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> RootConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return build(RootConfig, data)


def load(path: Optional[Path]) -> RootConfig:
    """Read a config file; None gives the defaults."""
    if path is None:
        return RootConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
