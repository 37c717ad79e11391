"""Experiment configuration: a TOML document with fixed sections.

Every section maps onto a frozen dataclass; unknown sections or keys are
rejected so that a typo in a regularisation parameter cannot silently fall
back to a default. :func:`dump_config` writes sections and keys in a fixed
order, and loading the dumped text reproduces the same configuration.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

from ..errors import ArtifactIOError, ConfigurationError
from ..geometry import SensorGeometry
from ..metrics import OVERSHOOT_MODES, ROI_RADIUS
from ..phantom import GaussianBlob, Phantom, get_phantom
from ..solvers.pipeline import Algorithm, RetrievalConfig
from ..solvers.retro import RetroConfig
from ..solvers.sart import SartConfig

DEFAULT_PHANTOMS = ("phantom1", "phantom2", "phantom3")
DEFAULT_SNR_GRID = (25.0, 30.0, 35.0, 40.0, 45.0)


def default_lambda_grid() -> tuple[float, ...]:
    """40 logarithmic steps from 1 down to 1e-9."""
    return tuple(float(v) for v in np.logspace(0.0, -9.0, 40))


def default_gamma_mu_grid() -> tuple[float, ...]:
    """10 logarithmic steps from 1e-1 down to 1e-9."""
    return tuple(float(v) for v in np.logspace(-1.0, -9.0, 10))


@dataclass(frozen=True)
class GridSection:
    pixel_size: float = 0.225
    fine_pixel_size: float = 0.09

    def __post_init__(self):
        if not (self.pixel_size > 0 and self.fine_pixel_size > 0):
            raise ConfigurationError("pixel sizes must be positive")
        if not self.fine_pixel_size < self.pixel_size:
            raise ConfigurationError("fine_pixel_size must be smaller than pixel_size")


@dataclass(frozen=True)
class SpectroscopySection:
    #: path to a constants TOML file; empty selects the packaged H2O pair
    constants: str = ""


@dataclass(frozen=True)
class PhantomSection:
    names: tuple[str, ...] = DEFAULT_PHANTOMS
    inline: tuple[Phantom, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "inline", tuple(self.inline))
        labels = [p.name for p in self.inline]
        if any(not name for name in labels):
            raise ConfigurationError("inline phantoms need a name")
        for name in self.names:
            if name not in labels:
                get_phantom(name)
        all_names = list(self.names) + [n for n in labels if n not in self.names]
        if len(set(all_names)) != len(all_names) or len(set(labels)) != len(labels):
            raise ConfigurationError("phantom names must be unique")
        if not all_names:
            raise ConfigurationError("no phantom selected")

    def phantoms(self) -> tuple[Phantom, ...]:
        """Selected phantoms: the named ones (presets or inline), then unnamed inline ones."""
        by_name = {p.name: p for p in self.inline}
        out = [by_name[n] if n in by_name else get_phantom(n) for n in self.names]
        out += [p for p in self.inline if p.name not in self.names]
        return tuple(out)


@dataclass(frozen=True)
class AlgorithmSection:
    name: str = "SART"

    def __post_init__(self):
        object.__setattr__(self, "name", Algorithm.parse(self.name).value)


@dataclass(frozen=True)
class NoiseSection:
    snr_db: float = 40.0
    #: a count (seeds ``base_seed + k``) or an explicit list of seeds
    seeds: int | tuple[int, ...] = 20
    base_seed: int = 0
    mode: str = "relative"

    def __post_init__(self):
        if isinstance(self.seeds, (list, tuple)):
            seeds = tuple(int(s) for s in self.seeds)
            if not seeds:
                raise ConfigurationError("seed list must not be empty")
            if len(set(seeds)) != len(seeds):
                raise ConfigurationError("seeds must be distinct")
            object.__setattr__(self, "seeds", seeds)
        elif isinstance(self.seeds, bool) or not isinstance(self.seeds, int) or self.seeds < 1:
            raise ConfigurationError("seeds must be a positive count or a list of integers")
        if not (math.isfinite(self.snr_db) or self.snr_db == math.inf):
            raise ConfigurationError("snr_db must be finite or inf")
        if self.mode not in ("relative", "rms"):
            raise ConfigurationError("noise mode must be 'relative' or 'rms'")

    def seed_list(self) -> tuple[int, ...]:
        if isinstance(self.seeds, tuple):
            return self.seeds
        return tuple(self.base_seed + k for k in range(self.seeds))


@dataclass(frozen=True)
class SweepSection:
    lambda_values: tuple[float, ...] = field(default_factory=default_lambda_grid)
    gamma_values: tuple[float, ...] = field(default_factory=default_gamma_mu_grid)
    mu_values: tuple[float, ...] = field(default_factory=default_gamma_mu_grid)
    snr_values: tuple[float, ...] = DEFAULT_SNR_GRID

    def __post_init__(self):
        for name in ("lambda_values", "gamma_values", "mu_values", "snr_values"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ConfigurationError(f"sweep.{name} must not be empty")
            if name != "snr_values" and any(not (v >= 0 and math.isfinite(v)) for v in values):
                raise ConfigurationError(f"sweep.{name} must hold finite non-negative values")
            object.__setattr__(self, name, values)


@dataclass(frozen=True)
class MetricsSection:
    overshoot_mode: str = "leave_one_out"
    roi_radius: float = ROI_RADIUS

    def __post_init__(self):
        if self.overshoot_mode not in OVERSHOOT_MODES:
            raise ConfigurationError(f"metrics.overshoot_mode must be one of {OVERSHOOT_MODES}")
        if not self.roi_radius > 0:
            raise ConfigurationError("metrics.roi_radius must be positive")


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs"
    #: write reconstructed fields (CSV and images) for the first seed of each run
    fields: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    grid: GridSection = field(default_factory=GridSection)
    spectroscopy: SpectroscopySection = field(default_factory=SpectroscopySection)
    phantom: PhantomSection = field(default_factory=PhantomSection)
    algorithm: AlgorithmSection = field(default_factory=AlgorithmSection)
    sart: SartConfig = field(default_factory=SartConfig)
    retro: RetroConfig = field(default_factory=RetroConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    noise: NoiseSection = field(default_factory=NoiseSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        if self.spectroscopy.constants and not Path(self.spectroscopy.constants).is_file():
            raise ConfigurationError(f"spectroscopic constants file not found: {self.spectroscopy.constants}")

    @property
    def algo(self) -> Algorithm:
        return Algorithm(self.algorithm.name)

    def solver_config(self, algo: Algorithm | str | None = None):
        algo = self.algo if algo is None else Algorithm.parse(algo)
        return self.sart if algo is Algorithm.SART else self.retro

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)

    def override(self, section: str, **values) -> "ExperimentConfig":
        """Copy with some keys of one section changed (validated again)."""
        current = getattr(self, section)
        return dataclasses.replace(self, **{section: _build(type(current), section,
                                                               {**_section_dict(current), **values})})


# ---------------------------------------------------------------------------
# dict <-> dataclass


def _blob_to_dict(b: GaussianBlob) -> dict:
    return {f.name: float(getattr(b, f.name)) for f in dataclasses.fields(b)}


def _phantom_to_dict(p: Phantom) -> dict:
    return {"name": p.name, "ambient": float(p.ambient), "pressure": float(p.pressure),
            "blobs": [_blob_to_dict(b) for b in p.blobs]}


def _phantom_from_dict(d: dict) -> Phantom:
    _check_keys(d, {"name", "ambient", "pressure", "blobs"}, "phantom.inline")
    try:
        blobs = []
        for b in d.get("blobs", []):
            _check_keys(b, {f.name for f in dataclasses.fields(GaussianBlob)}, "phantom.inline.blobs")
            blobs.append(GaussianBlob(**{k: float(v) for k, v in b.items()}))
        kwargs = {k: d[k] for k in ("ambient", "pressure") if k in d}
        return Phantom(tuple(blobs), name=str(d.get("name", "")), **kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"malformed inline phantom: {exc}") from exc


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, Phantom):
        return _phantom_to_dict(value)
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _section_dict(section) -> dict:
    return {f.name: _plain(getattr(section, f.name)) for f in dataclasses.fields(section) if f.init}


def _check_keys(d: dict, allowed: set, where: str):
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _coerce(value, default):
    """Convert TOML values to the type of the dataclass default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(value, list):
        return tuple(value)
    return value


def _build(cls, where: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigurationError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    _check_keys(data, names, where)
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        if cls is PhantomSection and key == "inline":
            kwargs[key] = tuple(_phantom_from_dict(p) for p in value)
            continue
        try:
            kwargs[key] = _coerce(value, getattr(defaults, key))
        except TypeError as exc:
            raise ConfigurationError(f"[{where}] {key}: {exc}") from None
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"[{where}] {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    sections = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    _check_keys(doc, set(sections), "top level")
    kwargs = {}
    for name, value in doc.items():
        cls = type(sections[name].default_factory())
        kwargs[name] = _build(cls, name, value)
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Plain nested dict in fixed section and key order."""
    return {f.name: _section_dict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a TOML configuration; ``None`` gives all defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read configuration {path}: {exc}") from exc
    return loads_config(text)


def loads_config(text: str) -> ExperimentConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML: {exc}") from exc
    return config_from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))
