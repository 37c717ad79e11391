"""First-order finite-difference operator over active pixels."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..geometry import PixelGrid


def build_difference_operator(grid: PixelGrid, active=None) -> sp.csr_matrix:
    """Stacked horizontal and vertical neighbour differences.

    One row per pair of edge-adjacent active pixels (right neighbours first,
    then down neighbours), holding ``+1`` at the left/upper pixel and ``-1``
    at its neighbour, so ``(F a)_k = a_j - a_neighbour``. Pairs that leave the
    mask are omitted.

    ``active`` optionally restricts the operator to a subset of pixel
    indices; columns are then renumbered to that subset and pairs touching
    excluded pixels are dropped.
    """
    idx = grid.index_map
    if active is not None:
        keep = np.zeros(grid.num_pixels, dtype=bool)
        keep[np.asarray(active)] = True
        remap = np.full(grid.num_pixels, -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        idx = np.where(idx >= 0, remap[np.maximum(idx, 0)], -1)
        n = int(keep.sum())
    else:
        n = grid.num_pixels
    pairs = []
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        ok = (a >= 0) & (b >= 0)
        pairs.append((a[ok], b[ok]))
    first = np.concatenate([p[0] for p in pairs])
    second = np.concatenate([p[1] for p in pairs])
    m = first.size
    rows = np.repeat(np.arange(m), 2)
    cols = np.column_stack((first, second)).ravel()
    vals = np.tile([1.0, -1.0], m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
