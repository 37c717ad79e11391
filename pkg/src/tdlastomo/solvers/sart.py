"""Preconditioned projected-gradient SART with first-order Tikhonov smoothing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigurationError, InputError, ShapeError
from ..geometry import SensitivityMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SartConfig:
    lam: float = 0.1
    max_iterations: int = 2000
    tol: float = 1e-6
    armijo: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 40
    #: lower bound on l_pixel inside the preconditioner C, in units of the
    #: pixel size; ``0`` uses C = 1/l_pixel exactly.
    pixel_length_floor: float = 0.0
    #: keep pixels crossed by no beam as unknowns (filled by the smoothing
    #: term); needs ``pixel_length_floor > 0`` so that C is defined there.
    fill_uncovered: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigurationError("lam must be non-negative")
        if not (self.tol > 0 and self.armijo > 0 and 0 < self.shrink < 1 and self.initial_step > 0):
            raise ConfigurationError("SART tolerances and line-search parameters must be positive "
                                     "(shrink in (0, 1))")
        if int(self.max_iterations) < 1 or int(self.max_backtracks) < 1:
            raise ConfigurationError("max_iterations and max_backtracks must be >= 1")
        if not self.pixel_length_floor >= 0:
            raise ConfigurationError("pixel_length_floor must be non-negative")
        if self.fill_uncovered and not self.pixel_length_floor > 0:
            raise ConfigurationError("fill_uncovered needs a positive pixel_length_floor")


@dataclass(eq=False)
class SartResult:
    """Reconstruction for one or several right-hand sides.

    ``a`` has shape ``(N,)`` or ``(N, S)`` over the full grid; pixels not
    crossed by any beam (``~unknown``) are zero.
    """

    a: np.ndarray
    unknown: np.ndarray
    iterations: np.ndarray
    objective: np.ndarray
    converged: np.ndarray
    stalled: np.ndarray
    residual_norm: np.ndarray
    objective_trace: list | None = field(default=None, repr=False)


def _drop_rows_touching(F: sp.csr_matrix, keep_cols: np.ndarray) -> sp.csr_matrix:
    excluded = np.ones(F.shape[1])
    excluded[keep_cols] = 0.0
    touches = abs(F) @ excluded
    return F[touches == 0][:, keep_cols].tocsr()


@dataclass(frozen=True, eq=False)
class SartSystem:
    """``L``, ``W``, ``C`` and ``F`` restricted to the pixels crossed by a beam."""

    L: sp.csr_matrix
    F: sp.csr_matrix
    w: np.ndarray
    c: np.ndarray
    unknown: np.ndarray
    num_pixels: int

    @classmethod
    def build(cls, L: SensitivityMatrix, F: sp.csr_matrix, pixel_size: float | None = None,
              pixel_length_floor: float = 0.0, fill_uncovered: bool = False) -> "SartSystem":
        if F.shape[1] != L.shape[1]:
            raise ShapeError("difference operator and sensitivity matrix disagree on N")
        if np.any(L.ray_lengths <= 0):
            raise InputError("a beam has zero length inside the RoI")
        if fill_uncovered and not pixel_length_floor > 0:
            raise ConfigurationError("fill_uncovered needs a positive pixel_length_floor")
        unknown = np.ones(L.shape[1], dtype=bool) if fill_uncovered else L.pixel_lengths > 0
        cols = np.flatnonzero(unknown)
        lp = L.pixel_lengths[cols]
        if pixel_length_floor > 0:
            if pixel_size is None:
                raise ConfigurationError("pixel_length_floor needs the pixel size")
            lp = np.maximum(lp, pixel_length_floor * pixel_size)
        return cls(L.matrix[:, cols].tocsr(), _drop_rows_touching(F.tocsr(), cols),
                   1.0 / L.ray_lengths, 1.0 / lp, unknown, L.shape[1])


def sart_reconstruct(A, L: SensitivityMatrix | SartSystem, F: sp.csr_matrix | None = None,
                     cfg: SartConfig = SartConfig(), *, pixel_size: float | None = None,
                     trace: bool = False) -> SartResult:
    """Minimise ``||A - L a||_W^2 + lam ||F a||^2`` subject to ``a >= 0``.

    Each iteration takes ``a <- P+(a + eta C (L^T W (A - L a) - lam F^T F a))``
    starting from ``a = 0``, with ``W = diag(1/l_ray)``, ``C = diag(1/l_pixel)``
    and ``eta`` found by Armijo backtracking on the objective. ``A`` may hold
    several measurement vectors as columns; each column is iterated
    independently and stops on its own.
    """
    if isinstance(L, SartSystem):
        system = L
    else:
        if F is None:
            raise InputError("difference operator F is required")
        system = SartSystem.build(L, F, pixel_size, cfg.pixel_length_floor, cfg.fill_uncovered)
    A = np.asarray(A, dtype=float)
    single = A.ndim == 1
    A2 = A[:, None] if single else A
    if A2.ndim != 2 or A2.shape[0] != system.L.shape[0]:
        raise ShapeError(f"measurement shape {A.shape} does not match {system.L.shape[0]} beams")
    if not np.all(np.isfinite(A2)):
        raise InputError("measurements contain non-finite values")

    Lm, Fm, w, c = system.L, system.F, system.w[:, None], system.c[:, None]
    LT, FT = Lm.T.tocsr(), Fm.T.tocsr()
    lam = cfg.lam
    n, s = Lm.shape[1], A2.shape[1]

    a = np.zeros((n, s))
    r = A2.copy()
    Fa = np.zeros((Fm.shape[0], s))
    obj = np.sum(w * r * r, axis=0)
    running = np.ones(s, dtype=bool)
    converged = np.zeros(s, dtype=bool)
    stalled = np.zeros(s, dtype=bool)
    iters = np.zeros(s, dtype=np.int64)
    history = [obj.copy()] if trace else None

    for _ in range(int(cfg.max_iterations)):
        cols = np.flatnonzero(running)
        if cols.size == 0:
            break
        everyone = cols.size == s
        # column subsets are copies, so skip them while every column is running
        a_c, r_c, Fa_c = (a, r, Fa) if everyone else (a[:, cols], r[:, cols], Fa[:, cols])
        A_c = A2 if everyone else A2[:, cols]
        g = LT @ (w * r_c) - lam * (FT @ Fa_c)
        d = c * g
        ga = np.einsum("ij,ij->j", g, a_c)
        eta = np.full(cols.size, cfg.initial_step)
        f0 = obj[cols]
        a_new = np.empty_like(a_c)
        r_new = np.empty_like(r_c)
        Fa_new = np.empty_like(Fa_c)
        f_new = np.empty(cols.size)
        todo = np.arange(cols.size)
        for _bt in range(int(cfg.max_backtracks)):
            if todo.size == cols.size:
                a_t, d_t, g_t, A_t = a_c, d, g, A_c
            else:
                a_t, d_t, g_t, A_t = a_c[:, todo], d[:, todo], g[:, todo], A_c[:, todo]
            cand = d_t * eta[todo]
            cand += a_t
            np.maximum(cand, 0.0, out=cand)
            r_t = A_t - Lm @ cand
            Fa_t = Fm @ cand
            f_t = np.einsum("ij,ij->j", w * r_t, r_t) + lam * np.einsum("ij,ij->j", Fa_t, Fa_t)
            # Armijo along the projection arc; the objective gradient is -2 g.
            decrease = np.einsum("ij,ij->j", g_t, cand) - ga[todo]
            ok = f_t <= f0[todo] - 2.0 * cfg.armijo * decrease
            if ok.all() and todo.size == cols.size:
                a_new, r_new, Fa_new, f_new = cand, r_t, Fa_t, f_t
                todo = todo[:0]
                break
            if ok.any():
                acc = todo[ok]
                a_new[:, acc], r_new[:, acc], Fa_new[:, acc] = cand[:, ok], r_t[:, ok], Fa_t[:, ok]
                f_new[acc] = f_t[ok]
            todo = todo[~ok]
            if todo.size == 0:
                break
            if _bt == int(cfg.max_backtracks) - 1:
                a_new[:, todo], r_new[:, todo], Fa_new[:, todo] = cand[:, ~ok], r_t[:, ~ok], Fa_t[:, ~ok]
                f_new[todo] = f_t[~ok]
                break
            eta[todo] *= cfg.shrink
        failed = np.zeros(cols.size, dtype=bool)
        failed[todo] = True
        # Backtracking exhausted: keep the best (current) iterate if no decrease.
        worse = failed & (f_new > f0)
        if worse.any():
            a_new[:, worse], r_new[:, worse], Fa_new[:, worse], f_new[worse] = (
                a_c[:, worse], r_c[:, worse], Fa_c[:, worse], f0[worse])

        step = np.sqrt(np.sum((a_new - a_c) ** 2, axis=0))
        size = np.sqrt(np.sum(a_new * a_new, axis=0))
        rel = np.where(size > 0, step / np.where(size > 0, size, 1.0), step)
        if everyone:
            a, r, Fa = a_new, r_new, Fa_new
            obj[:] = f_new
        else:
            a[:, cols], r[:, cols], Fa[:, cols], obj[cols] = a_new, r_new, Fa_new, f_new
        iters[cols] += 1
        done = rel < cfg.tol
        converged[cols[done & ~worse]] = True
        stalled[cols[worse]] = True
        running[cols[done | worse]] = False
        if trace:
            history.append(obj.copy())

    if stalled.any():
        log.warning("SART line search could not decrease the objective for %d of %d problems; "
                    "returning the best iterate", int(stalled.sum()), s)
    full = np.zeros((system.num_pixels, s))
    full[system.unknown] = a
    res_norm = np.sqrt(np.sum(r * r, axis=0))
    if single:
        return SartResult(full[:, 0], system.unknown, iters[:1].copy(), obj[:1].copy(), converged[:1].copy(),
                          stalled[:1].copy(), res_norm[:1], [h[:1] for h in history] if trace else None)
    return SartResult(full, system.unknown, iters, obj, converged, stalled, res_norm, history)
