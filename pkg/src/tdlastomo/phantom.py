"""Gaussian phantoms, fine-grid forward projection and measurement noise."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError, ConfigurationError, InputError
from .fields import Field
from .geometry import Beam, PixelGrid, SensorGeometry, enumerate_beams, sensitivity_for
from .spectroscopy import AMBIENT_TEMPERATURE, TransitionPair


@dataclass(frozen=True)
class GaussianBlob:
    x: float
    y: float
    sigma: float
    temperature_amplitude: float = 800.0
    concentration_amplitude: float = 0.1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("blob sigma must be positive")

    def profile(self, x, y):
        # denominator is sigma**2, not 2 sigma**2
        return np.exp(-((np.asarray(x) - self.x) ** 2 + (np.asarray(y) - self.y) ** 2) / self.sigma ** 2)


@dataclass(frozen=True)
class Phantom:
    blobs: tuple[GaussianBlob, ...]
    ambient: float = AMBIENT_TEMPERATURE
    pressure: float = 1.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "blobs", tuple(self.blobs))
        if not self.blobs:
            raise ConfigurationError("phantom needs at least one blob")
        if not self.pressure > 0:
            raise ConfigurationError("pressure must be positive")

    def temperature(self, x, y):
        return self.ambient + sum(b.temperature_amplitude * b.profile(x, y) for b in self.blobs)

    def mole_fraction(self, x, y):
        return sum(b.concentration_amplitude * b.profile(x, y) for b in self.blobs)

    def check_inside(self, roi: tuple[float, float, float]):
        cx, cy, r = roi
        for b in self.blobs:
            if (b.x - cx) ** 2 + (b.y - cy) ** 2 >= r * r:
                raise ConfigurationError(f"blob centre ({b.x}, {b.y}) lies outside the RoI")


PRESETS = {
    "phantom1": Phantom((GaussianBlob(0.0, 0.0, 0.9),), name="phantom1"),
    "phantom2": Phantom((GaussianBlob(-3.82, -3.82, 0.45), GaussianBlob(3.82, 3.82, 0.45)), name="phantom2"),
    "phantom3": Phantom((GaussianBlob(-2.7, 4.68, 0.45), GaussianBlob(-2.7, -4.68, 0.45),
                         GaussianBlob(5.4, 0.0, 0.45)), name="phantom3"),
}


def get_phantom(name: str) -> Phantom:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown phantom {name!r}; presets are {sorted(PRESETS)}") from None


def sample_field(phantom: Phantom, grid: PixelGrid) -> tuple[Field, Field]:
    """Temperature and mole fraction evaluated at the active pixel centres."""
    x, y = grid.x, grid.y
    return Field(grid, phantom.temperature(x, y), "K"), Field(grid, phantom.mole_fraction(x, y), "mole fraction")


def absorbance_density(phantom: Phantom, pair: TransitionPair, grid: PixelGrid) -> tuple[np.ndarray, np.ndarray]:
    """``a_nu = P X S_nu(T)`` for both lines at the pixel centres of ``grid``.

    The ambient temperature lies below the inversion range, so strengths are
    evaluated without the range check.
    """
    T, X = sample_field(phantom, grid)
    px = phantom.pressure * X.values
    return (px * pair.strength(1, T.values, check_range=False),
            px * pair.strength(2, T.values, check_range=False))


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Per-beam path integrals for both lines."""

    A1: np.ndarray
    A2: np.ndarray
    beams: tuple[Beam, ...] = ()
    snr_db: float = math.inf
    rng_seed: int | None = None

    def __post_init__(self):
        A1 = np.array(self.A1, dtype=float)
        A2 = np.array(self.A2, dtype=float)
        if A1.ndim != 1 or A1.shape != A2.shape:
            raise InputError("A1 and A2 must be 1-D arrays of equal length")
        if self.beams and len(self.beams) != A1.size:
            raise InputError("beam metadata does not match the number of measurements")
        A1.setflags(write=False)
        A2.setflags(write=False)
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "A2", A2)
        object.__setattr__(self, "beams", tuple(self.beams))

    @property
    def num_beams(self) -> int:
        return self.A1.size

    def to_csv(self, path: str | Path):
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["beam_index", "angle_deg", "offset_cm", "A1", "A2"])
                for i in range(self.num_beams):
                    b = self.beams[i] if self.beams else None
                    w.writerow([i, repr(b.angle_deg) if b else "", repr(b.offset) if b else "",
                                repr(float(self.A1[i])), repr(float(self.A2[i]))])
        except OSError as exc:
            raise ArtifactIOError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def from_csv(cls, path: str | Path, geom: SensorGeometry | None = None) -> "MeasurementSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InputError(f"{path}: no measurements")
        try:
            idx = [int(r["beam_index"]) for r in rows]
            A1 = [float(r["A1"]) for r in rows]
            A2 = [float(r["A2"]) for r in rows]
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: malformed measurement CSV ({exc})") from exc
        if idx != list(range(len(rows))):
            raise InputError(f"{path}: beam_index must run 0..M-1 in order")
        beams = tuple(enumerate_beams(geom)) if geom is not None else ()
        return cls(np.array(A1), np.array(A2), beams)


def forward_project(phantom: Phantom, pair: TransitionPair, geom: SensorGeometry,
                    fine_pixel_size: float = 0.09, reconstruction_pixel_size: float | None = 0.225
                    ) -> MeasurementSet:
    """Noiseless path integrals ``A_nu = L_fine a_nu`` on a fine grid."""
    if reconstruction_pixel_size is not None and not fine_pixel_size < reconstruction_pixel_size:
        raise ConfigurationError("fine_pixel_size must be smaller than the reconstruction pixel size")
    grid = PixelGrid.from_geometry(geom, fine_pixel_size)
    phantom.check_inside(grid.roi)
    L = sensitivity_for(geom, grid)
    a1, a2 = absorbance_density(phantom, pair, grid)
    return MeasurementSet(L.matrix @ a1, L.matrix @ a2, L.beams)


def add_noise(ms: MeasurementSet, snr_db: float, seed: int, mode: str = "relative") -> MeasurementSet:
    """Zero-mean Gaussian noise at ``snr_db``.

    ``mode="relative"``: each measurement gets std ``|A_i| 10^(-snr/20)``.
    ``mode="rms"``: one std per line, ``rms(A) 10^(-snr/20)``.
    Noise for element ``k`` of line 1 (then line 2) is the ``k``-th draw of
    a Philox stream keyed by ``seed``, so results depend only on the seed.
    Negative noisy values are kept.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return replace(ms, snr_db=math.inf, rng_seed=seed)
    if not np.isfinite(snr_db):
        raise ConfigurationError("snr_db must be finite or +inf")
    if mode not in ("relative", "rms"):
        raise ConfigurationError(f"unknown noise mode {mode!r}")
    scale = 10.0 ** (-snr_db / 20.0)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    z = rng.standard_normal(2 * ms.num_beams)
    out = []
    for A, zk in ((ms.A1, z[:ms.num_beams]), (ms.A2, z[ms.num_beams:])):
        if mode == "relative":
            sd = np.abs(A) * scale
        else:
            sd = np.full(A.shape, math.sqrt(np.mean(A * A)) * scale)
        out.append(A + sd * zk)
    return replace(ms, A1=out[0], A2=out[1], snr_db=float(snr_db), rng_seed=int(seed))
