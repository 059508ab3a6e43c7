import os
from dataclasses import asdict, dataclass, field, fields, replace
from logging import getLogger
from pathlib import Path
from typing import Any, Optional, Self, Type

import tomli
import tomli_w

from .env.gridnav import GridConfig, GridConfigError
from .evaluation.types import SuiteParams
from .search.controller import ControllerConfig, ControllerConfigError
from .search.encoders import EncoderConfig, EncoderError
from .search.index import parse_threshold

_log = getLogger(__name__)


class ConfigException(Exception):
    pass


class InvalidConfigException(Exception):
    pass


@dataclass
class Controller:
    warmup: int = 0
    max_steps: int = 100
    # a number, or 'auto:q' to calibrate at quantile q
    div_threshold: str = 'auto:0.95'

    def __post_init__(self):
        self.div_threshold = str(self.div_threshold)
        try:
            threshold, _ = parse_threshold(self.div_threshold)
            ControllerConfig(self.warmup, self.max_steps, threshold or 0.0)
        except (ValueError, ControllerConfigError) as e:
            raise InvalidConfigException(f"controller: {e}") from e

    def resolve(self) -> tuple[ControllerConfig, Optional[float]]:
        """(controller config, quantile to calibrate at or None)."""
        threshold, quantile = parse_threshold(self.div_threshold)
        return ControllerConfig(self.warmup, self.max_steps, threshold or 0.0), quantile


@dataclass
class Suite:
    seeds: int = 20
    seed_start: int = 0
    episodes: int = 10
    success_steps: int = 100
    score_window: int = 16
    jobs: int = 1
    stop_on_success: bool = True

    def __post_init__(self):
        for name in ('seeds', 'episodes', 'success_steps', 'score_window', 'jobs'):
            if getattr(self, name) < 1:
                raise InvalidConfigException(f"suite.{name} must be >= 1")


@dataclass
class Demos:
    path: str = 'demos.sbc'
    n_demos: int = 100
    noise_eps: float = 0.1
    hold_steps: int = 120
    seed: int = 0

    def __post_init__(self):
        if self.n_demos < 1:
            raise InvalidConfigException("demos.n_demos must be >= 1")
        if not 0 <= self.noise_eps < 0.5:
            raise InvalidConfigException("demos.noise_eps must be in [0, 0.5)")
        if self.hold_steps < 1:
            raise InvalidConfigException("demos.hold_steps must be >= 1")


@dataclass
class Ablation:
    counts: list[int] = field(default_factory=lambda: [10, 25, 50, 100])
    runs: int = 1

    def __post_init__(self):
        if not self.counts or any(c < 1 for c in self.counts):
            raise InvalidConfigException("ablation.counts must be positive integers")
        if any(b <= a for a, b in zip(self.counts, self.counts[1:])):
            raise InvalidConfigException("ablation.counts must be strictly increasing")
        if self.runs < 1:
            raise InvalidConfigException("ablation.runs must be >= 1")


@dataclass
class Report:
    include_timing: bool = False


@dataclass
class Configuration:
    grid: GridConfig = field(default_factory=GridConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    controller: Controller = field(default_factory=Controller)
    suite: Suite = field(default_factory=Suite)
    demos: Demos = field(default_factory=Demos)
    ablation: Ablation = field(default_factory=Ablation)
    report: Report = field(default_factory=Report)


_SECTIONS: dict[str, Type[Any]] = {f.name: f.type for f in fields(Configuration)}  # type: ignore[misc]
_SECTION_ERRORS = (TypeError, ValueError, GridConfigError, EncoderError, ControllerConfigError)


def _section(name: str, values: dict[str, Any]) -> Any:
    cls = _SECTIONS[name]
    unknown = set(values) - {f.name for f in fields(cls)}
    if unknown:
        raise InvalidConfigException(f"[{name}] has unknown keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except _SECTION_ERRORS as e:
        raise InvalidConfigException(f"[{name}]: {e}") from e


class Config:
    _CONFIG: Optional["Config"] = None

    def __init__(self, config_file: Optional[Path] = None) -> None:
        self.config_file = config_file
        self._conf = Configuration()
        if config_file:
            if not config_file.is_file():
                raise ConfigException(f"config file {config_file} not found")
            self._load()
        jobs = os.environ.get('SBC_JOBS')
        if jobs:
            try:
                self.update('suite', 'jobs', int(jobs))
            except ValueError as e:
                raise InvalidConfigException(f"SBC_JOBS must be a positive integer, got {jobs!r}") from e
        Config._CONFIG = self

    @property
    def grid(self) -> GridConfig:
        return self._conf.grid

    @property
    def encoder(self) -> EncoderConfig:
        return self._conf.encoder

    @property
    def controller(self) -> Controller:
        return self._conf.controller

    @property
    def suite(self) -> Suite:
        return self._conf.suite

    @property
    def demos(self) -> Demos:
        return self._conf.demos

    @property
    def ablation(self) -> Ablation:
        return self._conf.ablation

    @property
    def report(self) -> Report:
        return self._conf.report

    @classmethod
    def get_config(cls: Type[Self]) -> Self:
        if not Config._CONFIG:
            raise ConfigException("No config instantiated")
        return Config._CONFIG  # type: ignore[return-value]

    def _load(self) -> None:
        assert self.config_file is not None
        try:
            with open(self.config_file, 'rb') as f:
                data = tomli.load(f)
        except tomli.TOMLDecodeError as e:
            raise InvalidConfigException(f"{self.config_file}: {e}") from e

        for catagory, values in data.items():
            if catagory not in _SECTIONS:
                continue
            if not isinstance(values, dict):
                raise InvalidConfigException(f"[{catagory}] must be a table")
            setattr(self._conf, catagory, _section(catagory, values))
        _log.info(f'Loaded {self.config_file}: {", ".join(t for t in data if t in _SECTIONS) or "no known tables"}')

    @staticmethod
    def _write(path: Path, config: dict[str, Any]) -> None:
        with open(path.absolute(), 'wb') as f:
            tomli_w.dump(config, f)

    @staticmethod
    def _default() -> dict[str, Any]:
        return asdict(Configuration())

    @classmethod
    def write_default(cls, path: Path) -> None:
        cls._write(path, cls._default())

    def update(self, component: str, key: str, value: Any) -> None:
        """Override one value in memory (command-line flags); the file is left alone."""
        if component not in _SECTIONS:
            raise ConfigException(f"unknown config section {component!r}")
        section = getattr(self._conf, component)
        if key not in {f.name for f in fields(section)}:
            raise ConfigException(f"unknown key {component}.{key}")
        try:
            setattr(self._conf, component, replace(section, **{key: value}))
        except _SECTION_ERRORS as e:
            raise InvalidConfigException(f"{component}.{key}: {e}") from e

    def as_dict(self) -> dict[str, Any]:
        return asdict(self._conf)

    def suite_params(self) -> SuiteParams:
        suite = self.suite
        return SuiteParams(
            grid=self.grid,
            encoder=self.encoder,
            seeds=tuple(range(suite.seed_start, suite.seed_start + suite.seeds)),
            episodes=suite.episodes,
            success_steps=suite.success_steps,
            score_window=suite.score_window,
            jobs=suite.jobs,
            stop_on_success=suite.stop_on_success
        )

    def check_dimensions(self, demo_dimension: int) -> None:
        """Observation length -> encoder input -> encoder output -> demo dimension."""
        expected = self.encoder.output_dim(self.grid.observation_length)
        if expected != demo_dimension:
            raise InvalidConfigException(
                f"dimension mismatch: grid view_radius={self.grid.view_radius} with encoder "
                f"{self.encoder.kind} yields {expected}-dim embeddings, demos have {demo_dimension}")
