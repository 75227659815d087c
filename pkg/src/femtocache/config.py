"""Scenario configuration: typed sections, strict YAML loading and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .channel import CellGeometry, PowerSet
from .rateless import FileSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryConfig:
    radius_d: float = 0.3
    user_density_lambda: float = 38.0

    def build(self) -> CellGeometry:
        return CellGeometry(self.radius_d, self.user_density_lambda)


@dataclass(frozen=True)
class ChannelConfig:
    """Per-user gain rates are log-uniform on [beta_low, beta_high].

    ``interferer_powers`` adds neighbouring SBSs that always transmit at
    the listed powers.
    """

    noise_power: float = 1.0
    u_min: float = 0.5
    beta_low: float = 0.5
    beta_high: float = 2.0
    interferer_powers: tuple[float, ...] = ()


@dataclass(frozen=True)
class FileConfig:
    label: str
    size: int
    schedule: tuple[tuple[int, float], ...]
    blocks: int | None = None

    def build(self, overhead_ratio: float) -> FileSpec:
        blocks = self.size if self.blocks is None else self.blocks
        return FileSpec(self.label, blocks, self.size, self.schedule, overhead_ratio=overhead_ratio)


@dataclass(frozen=True)
class DeliveryConfig:
    kappa: float = 3.0
    delta: float = 0.95
    overhead_ratio: float = 0.05


@dataclass(frozen=True)
class DetectorConfig:
    h: float = 10.0
    C: float = 1.0
    init_T: int = 200
    window_max: int = 500


@dataclass(frozen=True)
class AliveConfig:
    alpha: float = 0.5
    mode: str = "aggregate"  # or "per_user": divide counts by the mean user count


@dataclass(frozen=True)
class CacheConfig:
    capacity: float = 15.0
    update_every: int = 1


@dataclass(frozen=True)
class BanditConfig:
    beta: float = 1.0
    zeta: float = 2.0
    epsilon: float = 0.1
    epsilon0: float = 5.0


@dataclass(frozen=True)
class VideoExperimentConfig:
    segments: int = 100
    blocks: int = 2
    overhead: int = 0
    deadlines: tuple[float, ...] = (2.5, 3.5, 5.0)
    sinr_db: tuple[float, ...] = tuple(float(x) for x in range(-10, 31, 2))
    u_min: float = 1.0
    runs: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.segments < 1 or self.blocks < 1:
            raise ConfigError("video: segments and blocks must be >= 1")
        if self.overhead < 0:
            raise ConfigError("video: overhead must be >= 0")
        if not self.sinr_db:
            raise ConfigError("video: SINR grid is empty")
        if not self.deadlines or any(d <= 1 for d in self.deadlines):
            raise ConfigError("video: deadline multipliers must exceed 1")
        if self.runs < 1:
            raise ConfigError("video: runs must be >= 1")


def _reference_files() -> tuple[FileConfig, ...]:
    sizes = dict(A=1, B=1, C=2, D=5, E=6, F=3, G=5, H=4, I=3, J=7)
    before = dict(A=5, B=6, C=3, D=4, E=6, F=0.1, G=1, H=4, I=7, J=5)
    first = dict(before, B=0.1)
    second = dict(first, A=0.1, I=12)
    out = []
    for f, s in sizes.items():
        sched = [(0, before[f])]
        if first[f] != before[f]:
            sched.append((1500, first[f]))
        if second[f] != first[f]:
            sched.append((3000, second[f]))
        out.append(FileConfig(f, s, tuple(sched)))
    return tuple(out)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    horizon: int = 5000
    seeds: tuple[int, ...] = ()
    replications: int = 1
    policy: str = "bandit"
    powers: tuple[float, ...] = (1.0, 2.0, 4.0)
    files: tuple[FileConfig, ...] = field(default_factory=_reference_files)
    geometry: GeometryConfig = GeometryConfig()
    channel: ChannelConfig = ChannelConfig()
    delivery: DeliveryConfig = DeliveryConfig()
    detector: DetectorConfig = DetectorConfig()
    alive: AliveConfig = AliveConfig()
    cache: CacheConfig = CacheConfig()
    bandit: BanditConfig = BanditConfig()
    video: VideoExperimentConfig = VideoExperimentConfig()

    def __post_init__(self):
        from .bandit import POLICY_KINDS

        if self.horizon < self.detector.init_T:
            raise ConfigError("horizon must be at least the initialisation length")
        if self.detector.init_T < 1:
            raise ConfigError("init_T must be >= 1")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.policy not in POLICY_KINDS:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.alive.mode not in ("aggregate", "per_user"):
            raise ConfigError(f"unknown alive mode {self.alive.mode!r}")
        if not 0 < self.delivery.delta <= 1:
            raise ConfigError("delta must lie in (0, 1]")
        if self.delivery.kappa < 1:
            raise ConfigError("kappa must be >= 1")
        if self.cache.update_every < 1:
            raise ConfigError("update_every must be >= 1")
        if self.cache.capacity < 0:
            raise ConfigError("cache capacity must be nonnegative")
        det = self.detector
        if det.h <= 0 or det.C < 0 or det.window_max < 1:
            raise ConfigError("detector: need h > 0, C >= 0, window_max >= 1")
        if self.alive.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        b = self.bandit
        if b.beta < 0 or b.zeta <= 0 or not 0 <= b.epsilon <= 1 or b.epsilon0 < 0:
            raise ConfigError("bandit: need beta >= 0, zeta > 0, epsilon in [0, 1], epsilon0 >= 0")
        if self.channel.u_min <= 0 or self.channel.noise_power < 0:
            raise ConfigError("channel: need u_min > 0 and noise_power >= 0")
        if any(p <= 0 for p in self.channel.interferer_powers):
            raise ConfigError("channel: interferer powers must be positive")
        if self.delivery.overhead_ratio < 0:
            raise ConfigError("overhead_ratio must be nonnegative")
        if not 0 < self.channel.beta_low <= self.channel.beta_high:
            raise ConfigError("need 0 < beta_low <= beta_high")
        if not self.files:
            raise ConfigError("file catalog is empty")
        labels = [f.label for f in self.files]
        if len(set(labels)) != len(labels):
            raise ConfigError("duplicate file labels")
        try:
            PowerSet(self.powers)
            self.geometry.build()
            self.file_specs()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def seed_list(self) -> tuple[int, ...]:
        if self.seeds:
            return tuple(self.seeds[: self.replications]) if len(self.seeds) >= self.replications else tuple(self.seeds)
        return tuple(range(1, self.replications + 1))

    def file_specs(self) -> tuple[FileSpec, ...]:
        return tuple(f.build(self.delivery.overhead_ratio) for f in self.files)

    def power_set(self) -> PowerSet:
        return PowerSet(self.powers)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return _plain(d)

    def hash(self) -> str:
        # pass through the loader so 15 and 15.0 hash alike
        canonical = config_from_dict(self.to_dict()).to_dict()
        blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _coerce(tp, value, path: str):
    """Convert YAML data to the annotated type, rejecting unknown keys."""
    origin, args = typing.get_origin(tp), typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if type(None) in args:
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(inner, value, path)
    raise ConfigError(f"{path}: unsupported type {tp}")


def _build(cls, data: dict, path: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown fields {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return _build(ScenarioConfig, data, "")


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
