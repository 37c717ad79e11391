"""Joint two-line reconstruction with a relative-entropy ratio penalty.

Solves

    min  ||A1 - L a1||^2 + gamma^2 ||F a1||^2
       + ||A2 - L a2||^2 + gamma^2 ||F a2||^2 + mu * sum(tau)
    s.t. a1 > 0, a2 > 0, tau >= (a1 + a2) log((a1 + a2) / a1)

At the optimum every ``tau`` is tight, so the solver works on the
equivalent smooth problem ``min phi(a) = quad(a) + mu * sum g(a1, a2)`` over
``a > 0`` with a Mehrotra predictor-corrector primal-dual interior-point
method for the bound constraints. Each Newton system has the form
``D + 2 U U^T`` with ``D`` sparse (smoothness, the per-pixel 2x2 entropy
Hessians and the complementarity diagonal) and ``U`` the 2M beam columns, and
is solved with the Woodbury identity around a sparse LU of ``D``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConfigurationError, ConvergenceError, InputError, ShapeError
from ..geometry import SensitivityMatrix
from .entropy import entropy_gradient, entropy_hessian, relative_entropy_term

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetroConfig:
    gamma: float = 0.01
    mu: float = 1e-5
    gap_tol: float = 1e-8
    max_newton: int = 200
    positivity_floor: float = 1e-10
    #: projected-gradient tolerance, relative to the size of the data gradient
    kkt_tol: float = 1e-7
    raise_on_failure: bool = False

    def __post_init__(self):
        if not (self.gamma >= 0 and self.mu >= 0):
            raise ConfigurationError("gamma and mu must be non-negative")
        if not (self.gap_tol > 0 and self.positivity_floor >= 0 and self.kkt_tol > 0
                and int(self.max_newton) >= 1):
            raise ConfigurationError("invalid RETRO solver tolerances")


@dataclass(eq=False)
class RetroResult:
    """Solution in the units of the input data.

    ``a1`` is floored at ``positivity_floor`` for reporting (``a2`` is
    scaled along but raised by at most ``positivity_floor``, see
    :func:`_floor_pairs`) and ``tau = g(a1, a2)`` is the tight epigraph
    variable. ``gap`` is the complementarity gap ``a.z`` relative to ``max(1, |phi|)`` of the
    internally rescaled problem; ``kkt_residual`` is the largest entry of the
    projected gradient relative to the size of the data gradient.
    """

    a1: np.ndarray
    a2: np.ndarray
    tau: np.ndarray
    objective: float
    gap: float
    kkt_residual: float
    newton_iterations: int
    converged: bool
    scale: float
    residual_norms: tuple[float, float]


@dataclass(frozen=True, eq=False)
class RetroSystem:
    """Operators reused across solves with the same geometry."""

    L: sp.csr_matrix
    F: sp.csr_matrix
    FtF2: sp.csc_matrix
    U0: np.ndarray

    @classmethod
    def build(cls, L, F: sp.spmatrix) -> "RetroSystem":
        Lm = L.matrix if isinstance(L, SensitivityMatrix) else sp.csr_matrix(L)
        F = sp.csr_matrix(F)
        if F.shape[1] != Lm.shape[1]:
            raise ShapeError("difference operator and sensitivity matrix disagree on N")
        n = Lm.shape[1]
        # unknowns interleaved as (a1_0, a2_0, a1_1, a2_1, ...)
        FtF2 = sp.kron(F.T @ F, sp.identity(2), format="csc")
        Lt = Lm.T.toarray()
        U0 = np.zeros((2 * n, 2 * Lm.shape[0]))
        U0[0::2, :Lm.shape[0]] = Lt
        U0[1::2, Lm.shape[0]:] = Lt
        return cls(Lm, F, FtF2, U0)

    @property
    def num_pixels(self) -> int:
        return self.L.shape[1]


_MAX_BACKTRACKS = 40
_SHRINK = 0.5
_PG_GROWTH = 10.0


def _merit(dual, comp, w, xz):
    return math.sqrt(float(np.sum(w * dual * dual) + np.sum(comp * comp / xz)))


def _max_step(x, dx, fraction: float = 0.995):
    """Largest step in (0, 1] keeping ``x + step * dx`` positive."""
    neg = dx < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, fraction * np.min(-x[neg] / dx[neg])))


def _entropy_blocks(x: np.ndarray, mu: float) -> sp.csc_matrix:
    """``mu`` times the per-pixel 2x2 Hessians of ``g`` in interleaved order."""
    n = x.shape[0]
    h11, h12, h22 = entropy_hessian(x[:, 0], x[:, 1])
    i = np.arange(n)
    rows = np.concatenate([2 * i, 2 * i, 2 * i + 1, 2 * i + 1])
    cols = np.concatenate([2 * i, 2 * i + 1, 2 * i, 2 * i + 1])
    vals = mu * np.concatenate([h11, h12, h12, h22])
    return sp.csc_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))


class _NewtonSystem:
    """Factorised ``D + 2 U U^T`` for one interior-point iteration."""

    def __init__(self, D: sp.csc_matrix, U: np.ndarray):
        self.D = D
        self.U = U
        # D is symmetric positive definite: a symmetric ordering without
        # pivoting roughly halves the fill of the default column ordering.
        self.lu = spla.splu(D, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        self.Y = self.lu.solve(U)
        cap = 0.5 * np.eye(U.shape[1]) + U.T @ self.Y
        self.cap = sla.cho_factor(cap)

    def matvec(self, v):
        return self.D @ v + 2.0 * (self.U @ (self.U.T @ v))

    def _solve(self, b):
        y = self.lu.solve(b)
        return y - self.Y @ sla.cho_solve(self.cap, self.U.T @ y)

    def solve(self, b, refine: int = 1):
        x = self._solve(b)
        for _ in range(refine):
            x = x + self._solve(b - self.matvec(x))
        return x


class _Objective:
    """``phi`` and its derivatives on the rescaled data, variables as (N, 2)."""

    def __init__(self, system: RetroSystem, B: np.ndarray, gamma2: float, mu: float):
        self.L, self.F, self.LT, self.FT = system.L, system.F, system.L.T.tocsr(), system.F.T.tocsr()
        self.B = B
        self.gamma2 = gamma2
        self.mu = mu

    def quad(self, x):
        r = self.B - self.L @ x
        fx = self.F @ x
        return float(np.sum(r * r) + self.gamma2 * np.sum(fx * fx)), r, fx

    def value(self, x):
        q, _, _ = self.quad(x)
        if self.mu > 0:
            q += self.mu * float(np.sum(relative_entropy_term(x[:, 0], x[:, 1])))
        return q

    def gradient(self, x):
        _, r, fx = self.quad(x)
        g = 2.0 * (self.gamma2 * (self.FT @ fx) - self.LT @ r)
        if self.mu > 0:
            g1, g2 = entropy_gradient(x[:, 0], x[:, 1])
            g = g + self.mu * np.column_stack([g1, g2])
        return g


def projected_gradient(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """``x - max(x - grad, 0)``: zero exactly at KKT points of ``min phi, x >= 0``."""
    return x - np.maximum(x - grad, 0.0)


def _floor_pairs(a: np.ndarray, floor: float) -> np.ndarray:
    """Lift pixels with ``a1 < floor`` to ``a1 = floor``.

    ``a2`` is scaled by the same factor, which keeps the ratio of two tiny
    values (flooring each line separately would turn the ratio of an empty
    pixel into 1 and make it hot), but is never raised by more than
    ``floor``, so a pixel with ``a1`` at its bound and a sizeable ``a2``
    keeps its ``a2``.
    """
    low = a[:, 0] < floor
    if floor > 0 and low.any():
        a = a.copy()
        a2 = a[low, 1]
        a[low, 1] = np.minimum(a2 * (floor / a[low, 0]), a2 + floor)
        a[low, 0] = floor
    return a


def retro_reconstruct(A1, A2, L: SensitivityMatrix | RetroSystem, F: sp.spmatrix | None = None,
                      cfg: RetroConfig = RetroConfig(), *, x0=None) -> RetroResult:
    """Jointly reconstruct both absorbance-density fields.

    Parameters
    ----------
    A1, A2 : array_like
        Path integrals of the two transitions, one per beam.
    L : SensitivityMatrix or RetroSystem
        Sensitivity matrix, or operators prepared by :meth:`RetroSystem.build`.
    F : sparse matrix, optional
        Difference operator; required unless ``L`` is a :class:`RetroSystem`.
    cfg : RetroConfig
    x0 : tuple of arrays, optional
        Strictly positive starting point ``(a1, a2)`` in data units.

    Returns
    -------
    RetroResult

    Raises
    ------
    ConvergenceError
        If the iteration budget runs out and ``cfg.raise_on_failure`` is set.
    """
    if isinstance(L, RetroSystem):
        system = L
    else:
        if F is None:
            raise InputError("difference operator F is required")
        system = RetroSystem.build(L, F)
    m, n = system.L.shape
    A = np.column_stack([np.asarray(A1, dtype=float).ravel(), np.asarray(A2, dtype=float).ravel()])
    if A.shape[0] != m or np.size(A1) != m or np.size(A2) != m:
        raise ShapeError(f"expected {m} measurements per line, got {np.size(A1)} and {np.size(A2)}")
    if not np.all(np.isfinite(A)):
        raise InputError("measurements contain non-finite values")

    # Work on data scaled to unit size: phi(s x) = s^2 (quad(x) + (mu/s) g(x)).
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        scale = 1.0
    obj = _Objective(system, A / scale, cfg.gamma ** 2, cfg.mu / scale)
    grad_ref = 1.0 + 2.0 * float(np.max(np.abs(obj.LT @ obj.B)))

    if x0 is not None:
        x = np.column_stack([np.asarray(x0[0], float), np.asarray(x0[1], float)]) / scale
        if x.shape != (n, 2) or not np.all(x > 0):
            raise InputError("x0 must be a strictly positive (a1, a2) pair of length N")
    else:
        ones = system.L @ np.ones(n)
        level = np.maximum(obj.B.T @ ones / (ones @ ones), 0.0)
        x = np.tile(np.maximum(level, 1e-2 / float(np.max(ones))), (n, 1))
    grad = obj.gradient(x)
    z = np.maximum(grad, 0.0) + 0.1 * float(np.max(np.abs(grad))) + 1e-8

    base = (2.0 * obj.gamma2) * system.FtF2
    N2 = 2 * n
    converged = False
    it = 0
    gap = kkt = math.inf
    phi = obj.value(x)
    while True:
        gap = float(np.sum(x * z)) / max(1.0, abs(phi))
        kkt = float(np.max(np.abs(projected_gradient(x, grad)))) / grad_ref
        if gap <= cfg.gap_tol and kkt <= cfg.kkt_tol:
            converged = True
            break
        if it >= int(cfg.max_newton):
            break
        it += 1
        xv, zv, gv = x.ravel(), z.ravel(), grad.ravel()
        D = base + sp.diags(zv / xv, format="csc")
        if obj.mu > 0:
            D = D + _entropy_blocks(x, obj.mu)
        newton = _NewtonSystem(D.tocsc(), system.U0)
        nu = float(xv @ zv) / N2
        # Complementarity is kept a few decades below the gap tolerance.
        # Much lower and the a1 entropy gradient, which grows like
        # log(a2 / a1) near the bound, stalls the step on the dual residual;
        # much higher and degenerate pairs (x and z both ~ sqrt(nu)) keep the
        # projected gradient above kkt_tol.
        nu_floor = 1e-3 * cfg.gap_tol * max(1.0, abs(phi)) / N2

        # predictor
        dx = newton.solve(-gv)
        dz = -zv - (zv / xv) * dx
        ap, ad = _max_step(xv, dx, 1.0), _max_step(zv, dz, 1.0)
        nu_aff = float((xv + ap * dx) @ (zv + ad * dz)) / N2
        sigma = min(1.0, max((nu_aff / nu) ** 3, nu_floor / nu))

        # corrector
        comp = sigma * nu - dx * dz
        dx = newton.solve(-gv + comp / xv)
        dz = comp / xv - zv - (zv / xv) * dx
        # Common step length, halved until the perturbed KKT residual
        # decreases in the local primal-dual norm (weights x/z of the current
        # point). Pixels heading to zero have large entropy curvature; the
        # weights keep their gradient swings from blocking the step.
        target = sigma * nu
        w = xv / zv
        xz = xv * zv
        merit0 = _merit(gv - zv, xz - target, w, xz)
        # The weights all but ignore pixels where both lines are near zero,
        # so the projected gradient is also kept from blowing up there.
        pg_cap = max(_PG_GROWTH * kkt, cfg.kkt_tol) * grad_ref
        alpha = amax = min(_max_step(xv, dx), _max_step(zv, dz))
        for _ in range(_MAX_BACKTRACKS):
            xt = (xv + alpha * dx).reshape(n, 2)
            zt = zv + alpha * dz
            gt = obj.gradient(xt)
            if (_merit(gt.ravel() - zt, xt.ravel() * zt - target, w, xz) <= (1.0 - 0.01 * alpha) * merit0
                    and float(np.max(np.abs(projected_gradient(xt, gt)))) <= pg_cap):
                break
            alpha *= _SHRINK
        log.debug("it %d gap %.3g kkt %.3g sigma %.3g alpha %.3g amax %.3g", it, gap, kkt, sigma, alpha, amax)
        x, z, grad = xt, zt.reshape(n, 2), gt
        phi = obj.value(x)

    a = _floor_pairs(x * scale, cfg.positivity_floor)
    if not converged:
        msg = (f"RETRO stopped after {it} Newton iterations with relative gap {gap:.3g} "
               f"and KKT residual {kkt:.3g}")
        if cfg.raise_on_failure:
            raise ConvergenceError(msg, iterate=(a[:, 0], a[:, 1]), gap=gap)
        log.warning(msg)
    resid = A - system.L @ a
    return RetroResult(
        a1=a[:, 0].copy(), a2=a[:, 1].copy(),
        tau=relative_entropy_term(a[:, 0], a[:, 1]),
        objective=phi * scale * scale, gap=gap, kkt_residual=kkt,
        newton_iterations=it, converged=converged, scale=scale,
        residual_norms=(float(np.linalg.norm(resid[:, 0])), float(np.linalg.norm(resid[:, 1]))),
    )
