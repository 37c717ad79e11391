"""Relative-entropy penalty ``g(a1, a2) = (a1 + a2) log(1 + a2 / a1)``."""
from __future__ import annotations

import numpy as np


def relative_entropy_term(a1, a2):
    """Elementwise ``g`` with extended-value semantics.

    ``0`` where ``a1 + a2 == 0`` and ``a1 >= 0``; ``+inf`` outside the
    domain ``a1 > 0, a2 >= 0``.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    a1b, a2b = np.broadcast_arrays(a1, a2)
    out = np.full(a1b.shape, np.inf)
    inside = (a1b > 0) & (a2b >= 0)
    out[inside] = (a1b[inside] + a2b[inside]) * np.log1p(a2b[inside] / a1b[inside])
    out[(a1b + a2b == 0) & (a1b >= 0)] = 0.0
    return float(out) if out.ndim == 0 else out


def entropy_gradient(a1, a2):
    """Partial derivatives ``(dg/da1, dg/da2)`` for ``a1 > 0, a2 >= 0``."""
    r = np.asarray(a2, dtype=float) / np.asarray(a1, dtype=float)
    lg = np.log1p(r)
    return lg - r, lg + 1.0


def entropy_hessian(a1, a2):
    """Hessian entries ``(g11, g12, g22)``.

    ``g`` is positively homogeneous, so the Hessian is the rank-one
    ``w w^T / (a1 + a2)`` with ``w = (-a2/a1, 1)``.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    s = a1 + a2
    r = a2 / a1
    return r * r / s, -r / s, 1.0 / s
