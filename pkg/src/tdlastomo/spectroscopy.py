"""Line strengths and two-line ratio thermometry."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from .errors import ConfigurationError, DomainError
from .fields import Field, check_same_grid

#: Second radiation constant hc/k [cm K].
C2 = 1.4387769
AMBIENT_TEMPERATURE = 298.15
#: Absorbance densities at or below this are treated as zero in the ratio.
EPS_DIV = 1e-12

DEFAULT_CONSTANTS = "h2o_7185_7444.toml"


class PixelStatus(enum.IntEnum):
    OK = 0
    SATURATED = 1
    INVALID = 2


@dataclass(frozen=True)
class Transition:
    line_centre: float
    reference_strength: float
    lower_state_energy: float
    reference_temperature: float = 296.0

    def __post_init__(self):
        if not self.line_centre > 0:
            raise ConfigurationError("line_centre must be positive")
        if not self.reference_strength > 0:
            raise ConfigurationError("reference_strength must be positive")
        if not self.lower_state_energy >= 0:
            raise ConfigurationError("lower_state_energy must be non-negative")
        if not self.reference_temperature > 0:
            raise ConfigurationError("reference_temperature must be positive")


@dataclass(frozen=True)
class PartitionFunction:
    """Polynomial ``Q(T) = sum_k c_k T^k``."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not self.coefficients:
            raise ConfigurationError("partition function needs at least one coefficient")

    def __call__(self, T):
        T = np.asarray(T, dtype=float)
        q = np.zeros_like(T)
        for c in reversed(self.coefficients):
            q = q * T + c
        return q


def line_strength(tr: Transition, Q: PartitionFunction, T, valid_range=None):
    """Line strength ``S(T)`` in cm^-2 atm^-1.

    ``S(T0) * Q(T0)/Q(T) * exp(-c2 E'' (1/T - 1/T0))
    * (1 - exp(-c2 nu0 / T)) / (1 - exp(-c2 nu0 / T0))``.
    When ``valid_range`` is given, temperatures outside it raise
    :class:`DomainError`.
    """
    T_arr = np.asarray(T, dtype=float)
    if valid_range is not None:
        lo, hi = valid_range
        if np.any(~np.isfinite(T_arr)) or np.any((T_arr < lo) | (T_arr > hi)):
            raise DomainError(f"temperature outside valid range [{lo}, {hi}] K")
    elif np.any(~(T_arr > 0)):
        raise DomainError("temperature must be positive")
    T0 = tr.reference_temperature
    q0 = Q(T0)
    q = Q(T_arr)
    if np.any(q <= 0):
        raise DomainError("partition function is not positive at the requested temperature")
    boltz = np.exp(-C2 * tr.lower_state_energy * (1.0 / T_arr - 1.0 / T0))
    stim = -np.expm1(-C2 * tr.line_centre / T_arr) / -math.expm1(-C2 * tr.line_centre / T0)
    s = tr.reference_strength * (q0 / q) * boltz * stim
    # exact at the reference temperature
    s = np.where(T_arr == T0, tr.reference_strength, s)
    return float(s) if np.ndim(T) == 0 else s


@dataclass(frozen=True, eq=False)
class TransitionPair:
    """Two transitions whose strength ratio ``R(T) = S2/S1`` encodes temperature."""

    line1: Transition
    line2: Transition
    partition_function: PartitionFunction
    t_min: float = 300.0
    t_max: float = 1200.0

    def __post_init__(self):
        if not 0 < self.t_min < self.t_max:
            raise ConfigurationError("need 0 < t_min < t_max")
        grid = np.arange(self.t_min, self.t_max + 0.5, 1.0)
        grid[-1] = self.t_max
        d = np.diff(self._ratio(grid))
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigurationError("R(T) is not strictly monotone over the valid range")
        object.__setattr__(self, "_increasing", bool(d[0] > 0))

    @property
    def valid_range(self) -> tuple[float, float]:
        return self.t_min, self.t_max

    @property
    def increasing(self) -> bool:
        return self._increasing

    def strength(self, line: int, T, check_range: bool = True):
        tr = self.line1 if line == 1 else self.line2
        return line_strength(tr, self.partition_function, T, self.valid_range if check_range else None)

    def _ratio(self, T):
        q = self.partition_function
        return line_strength(self.line2, q, T) / line_strength(self.line1, q, T)

    def ratio(self, T):
        self._check(T)
        return self._ratio(T)

    def _check(self, T):
        T = np.asarray(T, dtype=float)
        if np.any(~np.isfinite(T)) or np.any((T < self.t_min) | (T > self.t_max)):
            raise DomainError(f"temperature outside valid range [{self.t_min}, {self.t_max}] K")

    def invert_ratio(self, R, xtol: float = 1e-4):
        """Temperature(s) with ``ratio(T) == R`` by bisection.

        Returns ``(T, status)``. Ratios beyond the range map to the nearest
        endpoint with :attr:`PixelStatus.SATURATED`; non-finite or
        non-positive ratios give NaN with :attr:`PixelStatus.INVALID`.
        """
        scalar = np.ndim(R) == 0
        R = np.atleast_1d(np.asarray(R, dtype=float))
        T = np.full(R.shape, np.nan)
        status = np.full(R.shape, PixelStatus.OK, dtype=np.int8)
        bad = ~np.isfinite(R) | (R <= 0)
        status[bad] = PixelStatus.INVALID

        r_lo, r_hi = self._ratio(np.array([self.t_min, self.t_max]))
        t_at_rlo, t_at_rhi = self.t_min, self.t_max
        if not self.increasing:
            r_lo, r_hi = r_hi, r_lo
            t_at_rlo, t_at_rhi = t_at_rhi, t_at_rlo
        good = ~bad
        low = good & (R <= r_lo)
        high = good & (R >= r_hi)
        T[low], T[high] = t_at_rlo, t_at_rhi
        status[good & (R < r_lo)] = PixelStatus.SATURATED
        status[good & (R > r_hi)] = PixelStatus.SATURATED

        todo = good & ~low & ~high
        if todo.any():
            target = R[todo]
            a = np.full(target.shape, self.t_min)
            b = np.full(target.shape, self.t_max)
            sign = 1.0 if self.increasing else -1.0
            n_iter = int(math.ceil(math.log2((self.t_max - self.t_min) / xtol)))
            for _ in range(n_iter):
                m = 0.5 * (a + b)
                above = sign * (self._ratio(m) - target) > 0
                b = np.where(above, m, b)
                a = np.where(above, a, m)
            T[todo] = 0.5 * (a + b)
        if scalar:
            return float(T[0]), PixelStatus(int(status[0]))
        return T, status


def load_transition_pair(path: str | Path | None = None) -> TransitionPair:
    """Read a constants file (TOML); ``None`` loads the packaged H2O pair."""
    if path is None:
        text = resources.files("tdlastomo.data").joinpath(DEFAULT_CONSTANTS).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read spectroscopic constants {path}: {exc}") from exc
    try:
        doc = tomli.loads(text)
        rng = doc.get("range", {})
        return TransitionPair(
            line1=Transition(**doc["line1"]),
            line2=Transition(**doc["line2"]),
            partition_function=PartitionFunction(tuple(doc["partition_function"]["coefficients"])),
            t_min=float(rng.get("t_min", 300.0)),
            t_max=float(rng.get("t_max", 1200.0)),
        )
    except (KeyError, TypeError, tomli.TOMLDecodeError) as exc:
        raise ConfigurationError(f"malformed spectroscopic constants: {exc}") from exc


def fields_to_temperature(a1: Field, a2: Field, pair: TransitionPair, *,
                          eps_div: float = EPS_DIV, min_fraction: float = 0.0):
    """Per-pixel two-line temperature.

    Pixels with ``a1 <= max(eps_div, min_fraction * max(a1))`` or a
    non-positive ratio are flagged invalid and set to the ambient 298.15 K.
    ``min_fraction`` is a detection threshold relative to the strongest
    pixel; the default 0 keeps every pixel above ``eps_div``.

    Returns
    -------
    (Field, ndarray)
        Temperature in K and per-pixel :class:`PixelStatus` codes.
    """
    check_same_grid(a1, a2)
    if not (eps_div >= 0 and 0 <= min_fraction < 1):
        raise ConfigurationError("need eps_div >= 0 and 0 <= min_fraction < 1")
    v1, v2 = a1.values, a2.values
    cutoff = eps_div
    if min_fraction > 0 and v1.size:
        cutoff = max(cutoff, min_fraction * float(np.max(v1)))
    ok = v1 > cutoff
    R = np.full(v1.shape, np.nan)
    R[ok] = v2[ok] / v1[ok]
    T, status = pair.invert_ratio(R)
    invalid = status == PixelStatus.INVALID
    T[invalid] = AMBIENT_TEMPERATURE
    return a1.with_values(T, "K"), status


def fields_to_concentration(a1: Field, T: Field, pressure: float, pair: TransitionPair,
                            status=None) -> Field:
    """Mole fraction ``X = a1 / (P S1(T))``; zero where the temperature is invalid."""
    check_same_grid(a1, T)
    if not pressure > 0:
        raise DomainError("pressure must be positive")
    valid = np.ones(T.values.shape, dtype=bool) if status is None else (np.asarray(status) != PixelStatus.INVALID)
    X = np.zeros(T.values.shape)
    S1 = pair.strength(1, T.values[valid], check_range=False)
    X[valid] = a1.values[valid] / (pressure * S1)
    return a1.with_values(X, "mole fraction")
