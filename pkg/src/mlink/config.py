"""Experiment configuration: ``key = value`` lines grouped in ``[sections]``.

Example::

    [experiment]
    seed = 1

    [world]
    preset = pipeline
    n = 600

    [schedule]
    budget_kind = memory
    budget = 45e6
"""
import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

PRESETS = ("pipeline", "identity", "dominance", "complementary", "flip")


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    preset: str = "pipeline"
    n: int = 600
    seed: int = 0
    traces: str = ""  # directory of existing traces; overrides the preset when set


@dataclass
class LinkConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    width_factor: float = 2.0
    seed: int = 0
    train_fraction: float = 0.5  # leading share of the stream used for training


@dataclass
class EnsembleConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0


@dataclass
class ScheduleConfig:
    budget_kind: str = "memory"
    budget: float = 0.0
    period: int = 100
    profile_ratio: float = 0.1


@dataclass
class OnlineConfig:
    enabled: bool = False
    policy: str = "periodic"
    label_ratio: float = 0.01
    segment: int = 1000
    source: str = ""
    target: str = ""


@dataclass
class SimulateConfig:
    enabled: bool = False
    dist: str = "normal"
    k: int = 10
    trials: int = 20
    gain: float = 0.02
    points: int = 11
    seed: int = 1


@dataclass
class Config:
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    def validate(self):
        if self.world.preset not in PRESETS and not self.world.traces:
            raise ConfigError(f"unknown world preset {self.world.preset!r}")
        if self.world.n < 2:
            raise ConfigError("world.n must be at least 2")
        if not 0 < self.link.train_fraction < 1:
            raise ConfigError("link.train_fraction must lie in (0, 1)")
        if self.schedule.budget_kind not in ("memory", "time"):
            raise ConfigError("schedule.budget_kind must be memory or time")
        if self.schedule.budget <= 0:
            raise ConfigError("schedule.budget must be positive")
        if not 0 < self.schedule.profile_ratio <= 0.5:
            raise ConfigError("schedule.profile_ratio must lie in (0, 0.5]")
        if self.online.enabled and self.online.policy not in ("offline", "periodic", "uncertainty", "losspred"):
            raise ConfigError(f"unknown online policy {self.online.policy!r}")
        if self.simulate.enabled and self.simulate.dist not in ("normal", "beta"):
            raise ConfigError("simulate.dist must be normal or beta")
        return self


def _convert(raw, typ, where):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from exc


def _fill(obj, section, name):
    known = {f.name: f for f in fields(obj)}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        setattr(obj, key, _convert(raw, type(getattr(obj, key)), f"[{name}] {key}"))


def parse_config(text):
    cp = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = Config()
    for name in cp.sections():
        if name == "experiment":
            for key, raw in cp[name].items():
                if key != "seed":
                    raise ConfigError(f"[experiment] unknown key {key!r}")
                cfg.seed = _convert(raw, int, "[experiment] seed")
        elif hasattr(cfg, name) and name != "seed":
            _fill(getattr(cfg, name), cp[name], name)
        else:
            raise ConfigError(f"unknown section [{name}]")
    if cp.has_section("online") and "enabled" not in cp["online"]:
        cfg.online.enabled = True
    if cp.has_section("simulate") and "enabled" not in cp["simulate"]:
        cfg.simulate.enabled = True
    return cfg.validate()


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))
