"""TOML configuration for simulation runs.

Sections and keys (all optional; absent keys take the defaults below)::

    [room]       width, depth, grid_step
    [array]      n_elements, spacing_wavelengths, efficiency
    [link]       tx_power_dbm, rx_gain_db, loss_db, carrier_hz
    [channel]    sigma_db, threshold_dbm
    [estimator]  method, max_iterations, step_tolerance, damping_initial,
                 scan_points, n_starts
    [simulation] master_seed, n_list, trials, min_detected_beams, crlb_mask

Dotted top-level keys (``array.n_elements = 16``) are equivalent.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

import tomli_w

from .arraymodel import ArrayConfig
from .estimator import EstimatorConfig
from .rfchannel import LinkBudget
from .simharness import MASK_ALL, MASK_DETECTED, RoomSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Noise level matching the reference median CRLB values at the default link
# budget; regenerate with `slsloc calibrate`.
DEFAULT_SIGMA_DB = 0.53
DEFAULT_THRESHOLD_DBM = -80.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    sigma_db: float = DEFAULT_SIGMA_DB
    threshold_dbm: float = DEFAULT_THRESHOLD_DBM

    def __post_init__(self):
        if not self.sigma_db > 0:
            raise ValueError(f"sigma_db must be > 0, got {self.sigma_db!r}")


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    n_list: tuple[int, ...] = (4, 8, 16, 32)
    trials: int = 100
    min_detected_beams: int = 2
    crlb_mask: str = MASK_DETECTED

    def __post_init__(self):
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ValueError(f"master_seed must be an unsigned integer, got {self.master_seed!r}")
        if not self.n_list or any(int(n) != n or n < 1 for n in self.n_list):
            raise ValueError(f"n_list must be a non-empty list of positive integers, got {list(self.n_list)!r}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials!r}")
        if self.min_detected_beams < 1:
            raise ValueError(f"min_detected_beams must be >= 1, got {self.min_detected_beams!r}")
        if self.crlb_mask not in (MASK_DETECTED, MASK_ALL):
            raise ValueError(f"crlb_mask must be {MASK_DETECTED!r} or {MASK_ALL!r}, got {self.crlb_mask!r}")


@dataclass(frozen=True)
class SimulationConfig:
    room: RoomSpec = field(default_factory=RoomSpec)
    array: ArrayConfig = field(default_factory=ArrayConfig)
    link: LinkBudget = field(default_factory=LinkBudget)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    simulation: RunConfig = field(default_factory=RunConfig)

    @property
    def sigma_db(self) -> float:
        return self.channel.sigma_db

    @property
    def threshold_dbm(self) -> float:
        return self.channel.threshold_dbm

    @property
    def master_seed(self) -> int:
        return self.simulation.master_seed

    @property
    def n_list(self) -> tuple[int, ...]:
        return self.simulation.n_list


_SECTIONS = {f.name: f.default_factory for f in fields(SimulationConfig)}


def _build(section: str, cls, values: dict):
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
    kwargs = {}
    for key, value in values.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{section}.{key} must be a list")
            value = tuple(value)
        elif isinstance(default, bool) or isinstance(default, str):
            if not isinstance(value, type(default)):
                raise ConfigError(f"{section}.{key} must be a {type(default).__name__}")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{section}.{key} must be an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{section}.{key} must be a number")
            value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}.{exc}") from None


def from_dict(doc: dict) -> SimulationConfig:
    parts = {}
    for section, values in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section or key {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{section} must be a table")
        parts[section] = _build(section, type(_SECTIONS[section]()), values)
    return SimulationConfig(**parts)


def parse_config(text: str) -> SimulationConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return from_dict(doc)


def load_config(path) -> SimulationConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read().decode("utf-8"))


def to_dict(cfg: SimulationConfig) -> dict:
    out = {}
    for f in fields(SimulationConfig):
        section = asdict(getattr(cfg, f.name))
        out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
    return out


def serialize_config(cfg: SimulationConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))
