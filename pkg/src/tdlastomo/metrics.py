"""Image-quality metrics for reconstructed temperature fields.

IE (image error), DL (centroid dislocation), CVE (centroid value error) and
OS (overshoot, the fraction of 3x3-window outliers).
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ShapeError
from .fields import Field, check_same_grid
from .phantom import Phantom

#: RoI radius used to normalise the centroid dislocation [cm]
ROI_RADIUS = 9.0

OVERSHOOT_MODES = ("leave_one_out", "inclusive")
# _OTHERS[i] lists the other eight cells of a flattened 3x3 window
_OTHERS = np.array([[j for j in range(9) if j != i] for i in range(9)])


@dataclass(frozen=True)
class BlobDetail:
    index: int
    x_true: float
    y_true: float
    x_rec: float
    y_rec: float
    dl: float
    cve: float
    degenerate: bool


@dataclass(frozen=True)
class MetricReport:
    ie: float
    dl: float
    cve: float
    os: float
    blobs: tuple[BlobDetail, ...] = ()

    COLUMNS = ("ie", "dl", "cve", "os")

    def row(self) -> tuple[float, float, float, float]:
        return self.ie, self.dl, self.cve, self.os

    def blob_rows(self) -> list[dict]:
        return [asdict(b) for b in self.blobs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        w.writerow([repr(v) for v in self.row()])
        return buf.getvalue()


def image_error(T_rec: Field, T_true: Field) -> float:
    """``||T_rec - T_true|| / ||T_true||`` over the active pixels."""
    check_same_grid(T_rec, T_true)
    denom = float(np.linalg.norm(T_true.values))
    if denom == 0.0:
        raise ConfigurationError("reference field is identically zero")
    return float(np.linalg.norm(T_rec.values - T_true.values)) / denom


def _partition(phantom: Phantom, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    centres = np.array([(b.x, b.y) for b in phantom.blobs])
    d2 = (x[:, None] - centres[None, :, 0]) ** 2 + (y[:, None] - centres[None, :, 1]) ** 2
    return np.argmin(d2, axis=1)


def blob_centroids(T_rec: Field, phantom: Phantom):
    """Reconstructed centroid per blob.

    Active pixels are assigned to the nearest true blob centre; within each
    region the centroid is the ``(T_rec - ambient)+``-weighted mean pixel
    position. A region with zero total weight falls back to its geometric
    centre and is flagged degenerate.

    Returns
    -------
    list of (x, y, degenerate)
    """
    grid = T_rec.grid
    x, y = grid.x, grid.y
    label = _partition(phantom, x, y)
    weight = np.maximum(T_rec.values - phantom.ambient, 0.0)
    out = []
    for k in range(len(phantom.blobs)):
        sel = label == k
        w = weight[sel]
        total = float(np.sum(w))
        if total > 0:
            out.append((float(w @ x[sel]) / total, float(w @ y[sel]) / total, False))
        elif sel.any():
            out.append((float(np.mean(x[sel])), float(np.mean(y[sel])), True))
        else:
            b = phantom.blobs[k]
            out.append((b.x, b.y, True))
    return out


def dislocation(T_rec: Field, phantom: Phantom, r_roi: float = ROI_RADIUS) -> float:
    """Mean over blobs of the centroid distance divided by ``r_roi``."""
    cents = blob_centroids(T_rec, phantom)
    d = [np.hypot(xr - b.x, yr - b.y) / r_roi for (xr, yr, _), b in zip(cents, phantom.blobs)]
    return float(np.mean(d))


def centroid_value_error(T_rec: Field, T_true: Field, phantom: Phantom) -> float:
    """Mean over blobs of ``|T_rec(centroid) - T_true(centre)| / |T_true(centre)|``.

    Both fields are sampled at the pixel nearest to the respective point.
    """
    return float(np.mean([b.cve for b in _blob_details(T_rec, T_true, phantom, ROI_RADIUS)]))


def _blob_details(T_rec: Field, T_true: Field, phantom: Phantom, r_roi: float) -> list[BlobDetail]:
    grid = check_same_grid(T_rec, T_true)
    out = []
    for k, ((xr, yr, degenerate), b) in enumerate(zip(blob_centroids(T_rec, phantom), phantom.blobs)):
        ref = float(T_true.values[grid.nearest_pixel(b.x, b.y)])
        rec = float(T_rec.values[grid.nearest_pixel(xr, yr)])
        out.append(BlobDetail(k, b.x, b.y, xr, yr, float(np.hypot(xr - b.x, yr - b.y) / r_roi),
                              abs(rec - ref) / abs(ref), degenerate))
    return out


def overshoot(T_rec: Field, mode: str = "leave_one_out") -> float:
    """Outlier count from a sliding 3x3 window, divided by the pixel count.

    The window visits every position where all nine cells are active pixels
    and every (window, pixel) pair deviating by more than three standard
    deviations counts once. ``mode="leave_one_out"`` compares each pixel
    with the mean and population standard deviation of the other eight;
    ``mode="inclusive"`` uses all nine values including the tested pixel
    (with divisor 9 a single pixel can deviate by at most sqrt(8) sigma, so
    this mode never fires on isolated spikes).
    """
    if mode not in OVERSHOOT_MODES:
        raise ConfigurationError(f"unknown overshoot mode {mode!r}; choose from {OVERSHOOT_MODES}")
    grid = T_rec.grid
    img = grid.to_image(T_rec.values, np.nan)
    if min(img.shape) < 3:
        return 0.0
    win = sliding_window_view(img, (3, 3)).reshape(img.shape[0] - 2, img.shape[1] - 2, 9)
    win = win[~np.isnan(win).any(axis=2)]
    if win.size == 0:
        return 0.0
    if mode == "inclusive":
        mean = win.mean(axis=1, keepdims=True)
        sd = win.std(axis=1, keepdims=True)
    else:
        others = win[:, _OTHERS]
        mean = others.mean(axis=2)
        sd = others.std(axis=2)
    flagged = np.abs(win - mean) > 3.0 * sd
    return float(np.count_nonzero(flagged)) / grid.num_pixels


def evaluate(T_rec: Field, T_true: Field, phantom: Phantom, *, r_roi: float = ROI_RADIUS,
             overshoot_mode: str = "leave_one_out") -> MetricReport:
    """All four metrics plus per-blob centroid details."""
    if not T_rec.grid.same_as(T_true.grid):
        raise ShapeError("fields are defined on different grids")
    details = _blob_details(T_rec, T_true, phantom, r_roi)
    return MetricReport(
        ie=image_error(T_rec, T_true),
        dl=float(np.mean([d.dl for d in details])),
        cve=float(np.mean([d.cve for d in details])),
        os=overshoot(T_rec, overshoot_mode),
        blobs=tuple(details),
    )
