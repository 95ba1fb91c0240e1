"""Flat ``section.field = value`` configuration files.

Every section maps onto one frozen dataclass; a file only needs the keys it
changes. The resolution keys of the ``grid`` section are shared by the
network and the solver, so they are not repeated under ``net`` or ``solve``.
"""

import configparser
from dataclasses import dataclass, field, fields, replace
import typing

import numpy as np

from .errors import ConfigError, SliSphereError
from .estimation import LossWeights, SolveOptions
from .forward_model import EllipsoidKernelParams
from .network import NetParams, TrainConfig
from .projection import MicroscopeGeometry
from .synthetic import SynthConfig

CENTROID_MODES = ("auto", "smoothed-max", "center", "sidecar")


@dataclass(frozen=True)
class ProjectionConfig:
    sigma_g: float = 1.0
    normalize: bool = False
    # auto: sidecar centroid when the stack has one, else the smoothed maximum
    centroid: str = "auto"

    def __post_init__(self):
        if self.centroid not in CENTROID_MODES:
            raise ConfigError(
                f"centroid mode must be one of {CENTROID_MODES}, got {self.centroid!r}"
            )


@dataclass(frozen=True)
class GridConfig:
    input_n_side: int = 16
    fodf_n_side: int = 4
    theta_max_deg: float = 60.0
    l_max: int = 8

    @property
    def theta_max(self) -> float:
        return float(np.radians(self.theta_max_deg))


@dataclass(frozen=True)
class RuntimeConfig:
    workers: int = 1
    seed: int = 0
    # empty disables the on-disk kernel cache
    kernel_cache: str = ""

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}")


@dataclass(frozen=True)
class Config:
    geometry: MicroscopeGeometry = field(default_factory=MicroscopeGeometry)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    kernel: EllipsoidKernelParams = field(default_factory=EllipsoidKernelParams)
    loss: LossWeights = field(default_factory=LossWeights)
    solve: SolveOptions = field(default_factory=SolveOptions)
    net: NetParams = field(default_factory=NetParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    @property
    def net_params(self) -> NetParams:
        return replace(
            self.net,
            input_n_side=self.grid.input_n_side,
            fodf_n_side=self.grid.fodf_n_side,
            theta_max=self.grid.theta_max,
            l_max=self.grid.l_max,
        )

    @property
    def solve_options(self) -> SolveOptions:
        return replace(self.solve, l_max=self.grid.l_max)


# fields owned by the grid section
_SHARED = {
    "net": {"input_n_side", "fodf_n_side", "theta_max", "l_max"},
    "solve": {"l_max"},
}


def _section_fields(name: str, cls) -> list:
    hints = typing.get_type_hints(cls)
    return [
        (f.name, hints[f.name])
        for f in fields(cls)
        if f.init and f.name not in _SHARED.get(name, ())
    ]


def _coerce(key: str, text: str, annotation):
    text = text.strip()
    try:
        if annotation is bool:
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(f"not a boolean: {text!r}")
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if annotation in (int, float, str):
            return annotation(text)
        if typing.get_origin(annotation) is tuple:
            item = typing.get_args(annotation)[0]
            return tuple(item(part.strip()) for part in text.split(",") if part.strip())
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from e
    raise ConfigError(f"{key}: unsupported field type {annotation}")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_config(text: str, base: Config | None = None) -> Config:
    """Configuration from file contents; keys absent from ``text`` keep ``base``."""
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#",)
    )
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse configuration: {e}") from e

    base = base or Config()
    values: dict[str, dict] = {}
    known = {
        name: dict(_section_fields(name, type(getattr(base, name))))
        for name in (f.name for f in fields(Config))
    }
    for key, text_value in parser["config"].items():
        section, _, name = key.partition(".")
        if section not in known or name not in known[section]:
            raise ConfigError(f"unknown configuration key {key!r}")
        values.setdefault(section, {})[name] = _coerce(
            key, text_value, known[section][name]
        )

    sections = {}
    for section, changes in values.items():
        try:
            sections[section] = replace(getattr(base, section), **changes)
        except SliSphereError as e:
            raise ConfigError(f"section {section}: {e}") from e
    return replace(base, **sections)


def load_config(path) -> Config:
    try:
        with open(path) as stream:
            return parse_config(stream.read())
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e


def format_config(config: Config) -> str:
    lines = ["# slisphere configuration"]
    for section in fields(Config):
        instance = getattr(config, section.name)
        lines.append("")
        lines.append(f"# {section.name}")
        for name, _ in _section_fields(section.name, type(instance)):
            lines.append(f"{section.name}.{name} = {_format(getattr(instance, name))}")
    return "\n".join(lines) + "\n"


def write_config(path, config: Config | None = None):
    with open(path, "w") as stream:
        stream.write(format_config(config or Config()))
