"""Parallel-beam sensor layout, masked circular pixel grid and ray tracing.

Coordinates are in cm. Projection angles are measured counter-clockwise from
the +x axis; a projection at angle ``theta`` offsets its beams along
``n = (cos theta, sin theta)`` and each beam travels along
``u = (-sin theta, cos theta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, GeometryError

# Relative tolerance used to decide that a beam runs along a grid line.
_ON_LINE_TOL = 1e-9


@dataclass(frozen=True)
class SensorGeometry:
    """Equiangular, equispaced parallel-beam layout around a circular RoI."""

    num_projections: int = 4
    beams_per_projection: int = 8
    angular_spacing: float = 45.0
    beam_spacing: float = 1.8
    emitter_detector_distance: float = 36.76
    roi_diameter: float = 18.0
    roi_center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.num_projections) != self.num_projections or self.num_projections < 1:
            raise ConfigurationError("num_projections must be a positive integer")
        if int(self.beams_per_projection) != self.beams_per_projection or self.beams_per_projection < 1:
            raise ConfigurationError("beams_per_projection must be a positive integer")
        if self.beams_per_projection > 1 and not self.beam_spacing > 0:
            raise ConfigurationError("beam_spacing must be positive")
        if not self.roi_diameter > 0:
            raise ConfigurationError("roi_diameter must be positive")
        if not self.emitter_detector_distance > 0:
            raise ConfigurationError("emitter_detector_distance must be positive")
        if not np.isfinite(self.angular_spacing):
            raise ConfigurationError("angular_spacing must be finite")
        object.__setattr__(self, "roi_center", (float(self.roi_center[0]), float(self.roi_center[1])))

    @property
    def num_beams(self) -> int:
        return self.num_projections * self.beams_per_projection

    @property
    def roi_radius(self) -> float:
        return 0.5 * self.roi_diameter

    @property
    def projection_angles(self) -> np.ndarray:
        return np.arange(self.num_projections) * self.angular_spacing


@dataclass(frozen=True)
class Beam:
    index: int
    projection: int
    position: int
    angle_deg: float
    offset: float
    origin: tuple[float, float]
    direction: tuple[float, float]

    def point(self, t):
        """Point(s) at signed distance ``t`` from the origin along the beam."""
        t = np.asarray(t, dtype=float)
        return self.origin[0] + t * self.direction[0], self.origin[1] + t * self.direction[1]


def enumerate_beams(geom: SensorGeometry) -> list[Beam]:
    """All beams of ``geom``, projection-major.

    Beam ``b`` of a projection with ``B`` beams sits at perpendicular offset
    ``(b - (B - 1) / 2) * beam_spacing`` from the RoI centre.
    """
    beams = []
    cx, cy = geom.roi_center
    nb = geom.beams_per_projection
    for k, angle in enumerate(geom.projection_angles):
        theta = math.radians(angle)
        nx, ny = math.cos(theta), math.sin(theta)
        ux, uy = -ny, nx
        for b in range(nb):
            offset = (b - (nb - 1) / 2.0) * geom.beam_spacing if nb > 1 else 0.0
            beams.append(Beam(
                index=len(beams),
                projection=k,
                position=b,
                angle_deg=float(angle),
                offset=float(offset),
                origin=(cx + offset * nx, cy + offset * ny),
                direction=(ux, uy),
            ))
    return beams


@dataclass(frozen=True, eq=False)
class PixelGrid:
    """Axis-aligned square pixels with a boolean activity mask.

    Row 0 is the top row (largest y). Active pixels are numbered densely in
    row-major order. ``roi`` is ``(cx, cy, r)`` when the grid represents a
    circular RoI; ray tracing then clips beams to that circle.
    """

    pixel_size: float
    x0: float
    y0: float
    mask: np.ndarray
    roi: tuple[float, float, float] | None = None
    rows: np.ndarray = field(init=False, repr=False)
    cols: np.ndarray = field(init=False, repr=False)
    index_map: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise ConfigurationError("pixel_size must be positive")
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ConfigurationError("mask must be two-dimensional")
        mask.setflags(write=False)
        rows, cols = np.nonzero(mask)
        index_map = np.full(mask.shape, -1, dtype=np.int64)
        index_map[rows, cols] = np.arange(rows.size)
        for arr in (rows, cols, index_map):
            arr.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "index_map", index_map)

    @classmethod
    def circular(cls, roi_diameter: float = 18.0, pixel_size: float = 0.225,
                 center: tuple[float, float] = (0.0, 0.0)) -> "PixelGrid":
        """Square bounding grid over a circular RoI; pixel centres inside are active."""
        if not pixel_size > 0 or not roi_diameter > 0:
            raise ConfigurationError("pixel_size and roi_diameter must be positive")
        n = int(math.ceil(roi_diameter / pixel_size - 1e-9))
        half = 0.5 * n * pixel_size
        cx, cy = float(center[0]), float(center[1])
        r = 0.5 * roi_diameter
        xc = cx - half + (np.arange(n) + 0.5) * pixel_size
        yc = cy + half - (np.arange(n) + 0.5) * pixel_size
        xx, yy = np.meshgrid(xc, yc)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        return cls(pixel_size, cx - half, cy + half, mask, roi=(cx, cy, r))

    @classmethod
    def from_geometry(cls, geom: SensorGeometry, pixel_size: float = 0.225) -> "PixelGrid":
        return cls.circular(geom.roi_diameter, pixel_size, geom.roi_center)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def num_pixels(self) -> int:
        return int(self.rows.size)

    @property
    def x(self) -> np.ndarray:
        """x coordinate of every active pixel centre."""
        return self.x0 + (self.cols + 0.5) * self.pixel_size

    @property
    def y(self) -> np.ndarray:
        return self.y0 - (self.rows + 0.5) * self.pixel_size

    def index(self, row: int, col: int) -> int:
        """Linear index of the pixel at ``(row, col)``; -1 when inactive."""
        return int(self.index_map[row, col])

    def cell(self, j: int) -> tuple[int, int]:
        return int(self.rows[j]), int(self.cols[j])

    def nearest_pixel(self, x: float, y: float) -> int:
        d2 = (self.x - x) ** 2 + (self.y - y) ** 2
        return int(np.argmin(d2))

    def to_image(self, values, fill=np.nan) -> np.ndarray:
        """Scatter per-pixel ``values`` into the bounding grid."""
        values = np.asarray(values)
        if values.shape != (self.num_pixels,):
            raise ValueError(f"expected {self.num_pixels} values, got shape {values.shape}")
        image = np.full(self.shape, fill, dtype=np.result_type(values.dtype, np.asarray(fill).dtype))
        image[self.rows, self.cols] = values
        return image

    def from_image(self, image) -> np.ndarray:
        image = np.asarray(image)
        if image.shape != self.shape:
            raise ValueError(f"expected image of shape {self.shape}, got {image.shape}")
        return image[self.rows, self.cols].copy()

    def same_as(self, other: "PixelGrid") -> bool:
        return other is self or (
            self.pixel_size == other.pixel_size and self.x0 == other.x0 and self.y0 == other.y0
            and self.shape == other.shape and bool(np.array_equal(self.mask, other.mask))
        )


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    """Chord lengths ``l[i, j]`` of beam ``i`` inside active pixel ``j``."""

    matrix: sp.csr_matrix
    ray_lengths: np.ndarray
    pixel_lengths: np.ndarray
    beams: tuple[Beam, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def chord_length(beam: Beam, circle: tuple[float, float, float]) -> float:
    """Length of ``beam`` inside the circle ``(cx, cy, r)``."""
    cx, cy, r = circle
    if not r > 0:
        raise ValueError("circle radius must be positive")
    d = _perpendicular_distance(beam, cx, cy)
    if d >= r:
        return 0.0
    return 2.0 * math.sqrt(r * r - d * d)


def _perpendicular_distance(beam: Beam, cx: float, cy: float) -> float:
    ox, oy = beam.origin
    ux, uy = beam.direction
    return abs((ox - cx) * uy - (oy - cy) * ux)


def _clip_interval(beam: Beam, grid: PixelGrid) -> tuple[float, float] | None:
    """Parameter interval of ``beam`` inside the grid box (and RoI circle)."""
    ox, oy = beam.origin
    ux, uy = beam.direction
    h = grid.pixel_size
    nr, nc = grid.shape
    lo, hi = -math.inf, math.inf
    for o, u, a, b in ((ox, ux, grid.x0, grid.x0 + nc * h), (oy, uy, grid.y0 - nr * h, grid.y0)):
        if abs(u) < 1e-15:
            if not a <= o <= b:
                return None
            continue
        t1, t2 = (a - o) / u, (b - o) / u
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    if grid.roi is not None:
        cx, cy, r = grid.roi
        # foot of the perpendicular from the circle centre
        tc = (cx - ox) * ux + (cy - oy) * uy
        d = _perpendicular_distance(beam, cx, cy)
        if d >= r:
            return None
        half = math.sqrt(r * r - d * d)
        lo, hi = max(lo, tc - half), min(hi, tc + half)
    if not hi > lo:
        return None
    return lo, hi


def _line_crossings(o: float, u: float, edge0: float, step: float, count: int, lo: float, hi: float):
    if abs(u) < 1e-15:
        return np.empty(0)
    t = (edge0 + step * np.arange(count + 1) - o) / u
    return t[(t > lo) & (t < hi)]


def _on_grid_line(coord: float, edge0: float, step: float) -> bool:
    k = (coord - edge0) / step
    return abs(k - round(k)) < _ON_LINE_TOL * max(1.0, abs(k))


def trace_beam(beam: Beam, grid: PixelGrid) -> tuple[np.ndarray, np.ndarray]:
    """Siddon traversal of one beam.

    Returns ``(pixel_index, length)`` pairs with repeated indices summed.
    A beam running exactly along a grid line shares each segment equally
    between the two cells it borders. With a circular RoI, in-circle
    segments that fall in masked cells (centre outside the circle) are
    credited to the nearest active cell along the beam (along the same
    side for a split beam), so row sums equal the analytic chord length.
    """
    span = _clip_interval(beam, grid)
    if span is None:
        return np.empty(0, dtype=np.int64), np.empty(0)
    lo, hi = span
    ox, oy = beam.origin
    ux, uy = beam.direction
    h = grid.pixel_size
    nr, nc = grid.shape
    ts = np.concatenate((
        [lo, hi],
        _line_crossings(ox, ux, grid.x0, h, nc, lo, hi),
        _line_crossings(oy, uy, grid.y0 - nr * h, h, nr, lo, hi),
    ))
    ts = np.unique(ts)
    seg_len = np.diff(ts)
    keep = seg_len > 1e-12 * max(1.0, hi - lo)
    t_mid = 0.5 * (ts[:-1] + ts[1:])[keep]
    seg_len = seg_len[keep]
    xm = ox + t_mid * ux
    ym = oy + t_mid * uy

    col = np.floor((xm - grid.x0) / h).astype(np.int64)
    row = np.floor((grid.y0 - ym) / h).astype(np.int64)
    weight = np.ones_like(seg_len)
    copy = np.zeros(seg_len.size, dtype=np.int64)
    # Beams lying on a grid line are split between the two bordering cells.
    # The bordering cells come from the rounded line index; flooring a
    # coordinate that sits on the line could pick either side.
    if abs(ux) < 1e-15 and _on_grid_line(ox, grid.x0, h):
        k = round((ox - grid.x0) / h)
        col = np.concatenate((np.full(col.size, k), np.full(col.size, k - 1)))
        row = np.concatenate((row, row))
        copy = np.repeat([0, 1], seg_len.size)
        t_mid, seg_len = np.tile(t_mid, 2), np.tile(seg_len, 2)
        weight = np.full(seg_len.size, 0.5)
    elif abs(uy) < 1e-15 and _on_grid_line(oy, grid.y0, h):
        k = round((grid.y0 - oy) / h)
        row = np.concatenate((np.full(row.size, k), np.full(row.size, k - 1)))
        col = np.concatenate((col, col))
        copy = np.repeat([0, 1], seg_len.size)
        t_mid, seg_len = np.tile(t_mid, 2), np.tile(seg_len, 2)
        weight = np.full(seg_len.size, 0.5)

    inside = (row >= 0) & (row < nr) & (col >= 0) & (col < nc)
    pix = np.full(row.size, -1, dtype=np.int64)
    pix[inside] = grid.index_map[row[inside], col[inside]]
    length = seg_len * weight

    masked = pix < 0
    if grid.roi is not None and masked.any():
        if masked.all():
            return np.empty(0, dtype=np.int64), np.empty(0)
        # each half of a split beam is reassigned along its own row/column
        for c in np.unique(copy):
            mine = copy == c
            active = mine & ~masked
            if not active.any():
                active = ~masked
            todo = mine & masked
            if todo.any():
                nearest = np.abs(t_mid[todo, None] - t_mid[None, active]).argmin(axis=1)
                pix[todo] = pix[active][nearest]
        masked = np.zeros_like(masked)
    pix, length = pix[~masked], length[~masked]
    uniq, inv = np.unique(pix, return_inverse=True)
    total = np.zeros(uniq.size)
    np.add.at(total, inv, length)
    return uniq, total


def build_sensitivity(beams: Sequence[Beam], grid: PixelGrid) -> SensitivityMatrix:
    """Sensitivity matrix ``L`` (M x N, cm) of ``beams`` over ``grid``."""
    beams = tuple(beams)
    if not beams:
        raise GeometryError("no beams given")
    if grid.num_pixels < 1:
        raise GeometryError("grid has no active pixels")
    indptr = [0]
    indices, data = [], []
    for beam in beams:
        if grid.roi is not None and chord_length(beam, grid.roi) == 0.0:
            raise GeometryError(f"beam {beam.index} (angle {beam.angle_deg:g} deg, "
                                f"offset {beam.offset:g} cm) misses the RoI")
        pix, length = trace_beam(beam, grid)
        if pix.size == 0:
            raise GeometryError(f"beam {beam.index} crosses no active pixel")
        indices.append(pix)
        data.append(length)
        indptr.append(indptr[-1] + pix.size)
    mat = sp.csr_matrix((np.concatenate(data), np.concatenate(indices), np.array(indptr)),
                        shape=(len(beams), grid.num_pixels))
    mat.sort_indices()
    ray = np.asarray(mat.sum(axis=1)).ravel()
    pixel = np.asarray(mat.sum(axis=0)).ravel()
    return SensitivityMatrix(mat, ray, pixel, beams)


def sensitivity_for(geom: SensorGeometry, grid: PixelGrid) -> SensitivityMatrix:
    return build_sensitivity(enumerate_beams(geom), grid)


def render_layout_svg(geom: SensorGeometry, grid: PixelGrid | None = None, scale: float = 20.0) -> str:
    """SVG drawing of the beams (full emitter-detector length) and the RoI."""
    beams = enumerate_beams(geom)
    half_d = 0.5 * geom.emitter_detector_distance
    cx, cy = geom.roi_center
    extent = half_d + geom.beam_spacing * geom.beams_per_projection / 2 + 1.0
    size = 2 * extent * scale

    def px(x, y):
        return (x - cx + extent) * scale, (cy + extent - y) * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.1f}" height="{size:.1f}" '
             f'viewBox="0 0 {size:.1f} {size:.1f}">',
             f'<rect width="{size:.1f}" height="{size:.1f}" fill="white"/>']
    if grid is not None:
        h = grid.pixel_size * scale
        for x, y in zip(grid.x, grid.y):
            X, Y = px(x - grid.pixel_size / 2, y + grid.pixel_size / 2)
            parts.append(f'<rect x="{X:.2f}" y="{Y:.2f}" width="{h:.2f}" height="{h:.2f}" '
                         f'fill="none" stroke="#dddddd" stroke-width="0.3"/>')
    rx, ry = px(cx, cy)
    parts.append(f'<circle cx="{rx:.2f}" cy="{ry:.2f}" r="{geom.roi_radius * scale:.2f}" '
                 f'fill="none" stroke="black" stroke-width="1.5"/>')
    for beam in beams:
        x1, y1 = beam.point(-half_d)
        x2, y2 = beam.point(half_d)
        X1, Y1 = px(float(x1), float(y1))
        X2, Y2 = px(float(x2), float(y2))
        parts.append(f'<line x1="{X1:.2f}" y1="{Y1:.2f}" x2="{X2:.2f}" y2="{Y2:.2f}" '
                     f'stroke="red" stroke-width="1"><title>beam {beam.index}: '
                     f'{beam.angle_deg:g} deg, offset {beam.offset:g} cm</title></line>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def beams_table(beams: Iterable[Beam]) -> list[tuple[int, float, float]]:
    return [(b.index, b.angle_deg, b.offset) for b in beams]
