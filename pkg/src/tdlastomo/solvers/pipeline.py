"""Measurements to temperature: operator assembly, reconstruction, ratio inversion."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..fields import Field
from ..geometry import PixelGrid, SensitivityMatrix, SensorGeometry, sensitivity_for
from ..phantom import MeasurementSet
from ..spectroscopy import EPS_DIV, TransitionPair, fields_to_temperature
from .regularization import build_difference_operator
from .retro import RetroConfig, RetroSystem, retro_reconstruct
from .sart import SartConfig, SartSystem, sart_reconstruct


class Algorithm(str, Enum):
    SART = "SART"
    RETRO = "RETRO"

    @classmethod
    def parse(cls, name) -> "Algorithm":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ConfigurationError(f"unknown algorithm {name!r}; choose SART or RETRO") from None


@dataclass(frozen=True)
class RetrievalConfig:
    """How absorbance pairs become temperatures."""

    eps_div: float = EPS_DIV
    min_fraction: float = 0.0


@dataclass(eq=False)
class ReconstructionResult:
    algorithm: Algorithm
    a1: Field
    a2: Field
    temperature: Field
    status: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class Operators:
    """``L``, ``F`` and the solver-specific systems for one geometry and grid.

    Built lazily and shared read-only between reconstructions.
    """

    def __init__(self, geom: SensorGeometry, grid: PixelGrid, L: SensitivityMatrix | None = None):
        self.geom = geom
        self.grid = grid
        self.L = sensitivity_for(geom, grid) if L is None else L
        if self.L.shape[1] != grid.num_pixels:
            raise ShapeError("sensitivity matrix does not match the grid")
        self.F = build_difference_operator(grid)
        self._sart: dict = {}
        self._retro: RetroSystem | None = None

    def sart_system(self, cfg: SartConfig) -> SartSystem:
        key = (cfg.pixel_length_floor, cfg.fill_uncovered)
        if key not in self._sart:
            self._sart[key] = SartSystem.build(self.L, self.F, self.grid.pixel_size, *key)
        return self._sart[key]

    def retro_system(self) -> RetroSystem:
        if self._retro is None:
            self._retro = RetroSystem.build(self.L, self.F)
        return self._retro


def _to_temperature(grid, a1, a2, pair, retrieval, algo, diagnostics):
    f1, f2 = Field(grid, a1, "cm^-2"), Field(grid, a2, "cm^-2")
    T, status = fields_to_temperature(f1, f2, pair, eps_div=retrieval.eps_div,
                                      min_fraction=retrieval.min_fraction)
    return ReconstructionResult(algo, f1, f2, T, status, diagnostics)


def reconstruct_many(measurements, ops: Operators, pair: TransitionPair, algo,
                     cfg: SartConfig | RetroConfig | None = None,
                     retrieval: RetrievalConfig = RetrievalConfig()) -> list[ReconstructionResult]:
    """Reconstruct several measurement sets with shared operators.

    SART solves all sets of one line as a single batch (columns are
    iterated independently); RETRO solves each set jointly on its own.
    ``wall_time`` in the diagnostics is the batch time divided evenly for
    SART.
    """
    algo = Algorithm.parse(algo)
    measurements = list(measurements)
    m = ops.L.shape[0]
    for ms in measurements:
        if ms.num_beams != m:
            raise ShapeError(f"measurement set has {ms.num_beams} beams, geometry has {m}")
    if not measurements:
        return []
    out = []
    if algo is Algorithm.SART:
        cfg = SartConfig() if cfg is None else cfg
        if not isinstance(cfg, SartConfig):
            raise ConfigurationError("SART needs a SartConfig")
        system = ops.sart_system(cfg)
        t0 = time.perf_counter()
        r1 = sart_reconstruct(np.column_stack([ms.A1 for ms in measurements]), system, cfg=cfg)
        r2 = sart_reconstruct(np.column_stack([ms.A2 for ms in measurements]), system, cfg=cfg)
        wall = (time.perf_counter() - t0) / len(measurements)
        for k in range(len(measurements)):
            diag = {
                "iterations": (int(r1.iterations[k]), int(r2.iterations[k])),
                "objective": (float(r1.objective[k]), float(r2.objective[k])),
                "residual_norm": (float(r1.residual_norm[k]), float(r2.residual_norm[k])),
                "converged": bool(r1.converged[k] and r2.converged[k]),
                "stalled": bool(r1.stalled[k] or r2.stalled[k]),
                "wall_time": wall,
            }
            out.append(_to_temperature(ops.grid, r1.a[:, k], r2.a[:, k], pair, retrieval, algo, diag))
    else:
        cfg = RetroConfig() if cfg is None else cfg
        if not isinstance(cfg, RetroConfig):
            raise ConfigurationError("RETRO needs a RetroConfig")
        system = ops.retro_system()
        for ms in measurements:
            t0 = time.perf_counter()
            r = retro_reconstruct(ms.A1, ms.A2, system, cfg=cfg)
            diag = {
                "iterations": r.newton_iterations,
                "objective": r.objective,
                "residual_norm": r.residual_norms,
                "converged": r.converged,
                "gap": r.gap,
                "kkt_residual": r.kkt_residual,
                "wall_time": time.perf_counter() - t0,
            }
            out.append(_to_temperature(ops.grid, r.a1, r.a2, pair, retrieval, algo, diag))
    return out


def solve_full_pipeline(ms: MeasurementSet, geom: SensorGeometry, grid: PixelGrid, pair: TransitionPair,
                        algo="SART", cfg: SartConfig | RetroConfig | None = None, *,
                        retrieval: RetrievalConfig = RetrievalConfig(),
                        operators: Operators | None = None) -> ReconstructionResult:
    """Reconstruct both lines from one measurement set and convert to temperature.

    SART runs once per line; RETRO runs once on both lines jointly. Pass
    ``operators`` to reuse the assembled matrices across calls.
    """
    ops = Operators(geom, grid) if operators is None else operators
    return reconstruct_many([ms], ops, pair, algo, cfg, retrieval)[0]
