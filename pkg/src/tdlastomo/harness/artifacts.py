"""File artefacts: field matrices, PGM/PPM images, SVG plots and the manifest.

Palettes
--------
``grey`` writes a binary PGM (P5). Active values map linearly from
``[lo, hi]`` to levels 1..255 via ``1 + round(254 t)``; masked cells get
the sentinel level 0.
``heat`` writes a binary PPM (P6) with the black-red-yellow-white ramp
``(clip(3t), clip(3t - 1), clip(3t - 2))`` scaled by 255 and rounded;
masked cells get the sentinel colour blue ``(0, 0, 255)``, which the ramp
never produces.
In both cases ``t = (v - lo) / (hi - lo)`` clipped to [0, 1], and ``t = 0.5``
when ``hi == lo``. Image row 0 is the top of the grid (largest y).
"""
from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import ArtifactIOError, ConfigurationError, InputError
from ..fields import Field
from ..geometry import PixelGrid

PALETTES = ("grey", "heat")
GREY_SENTINEL = 0
HEAT_SENTINEL = (0, 0, 255)
MASKED = "NA"


def _write_bytes(path: Path, data: bytes):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    _write_bytes(path, text.encode())
    return path


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with ``\\n`` line endings; floats are written with ``repr``."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return write_text(path, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    s = str(v)
    if any(ch in s for ch in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_field_csv(path: str | Path, field: Field) -> Path:
    """Image-shaped matrix, top row first; masked cells are written as ``NA``."""
    img = field.image()
    rows = [[MASKED if math.isnan(v) else repr(float(v)) for v in row] for row in img]
    return write_text(path, "\n".join(",".join(r) for r in rows) + "\n")


def read_field_csv(path: str | Path, grid: PixelGrid, unit: str = "") -> Field:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    if len(rows) != grid.shape[0] or any(len(r) != grid.shape[1] for r in rows):
        raise InputError(f"{path}: matrix shape does not match the {grid.shape} grid")
    masked = np.array([[c.strip() == MASKED for c in r] for r in rows])
    if not np.array_equal(~masked, grid.mask):
        raise InputError(f"{path}: masked cells do not match the grid's RoI mask")
    try:
        img = np.array([[math.nan if c.strip() == MASKED else float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return Field(grid, grid.from_image(img), unit)


def _normalise(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full(values.shape, 0.5)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def field_to_pixels(field: Field, palette: str = "grey", value_range=None) -> tuple[np.ndarray, tuple[float, float]]:
    """uint8 image (``(H, W)`` for grey, ``(H, W, 3)`` for heat) and the range used."""
    if palette not in PALETTES:
        raise ConfigurationError(f"unknown palette {palette!r}; choose from {PALETTES}")
    v = field.values
    if value_range is None:
        lo, hi = (float(np.min(v)), float(np.max(v))) if v.size else (0.0, 0.0)
    else:
        lo, hi = (float(x) for x in value_range)
        if not hi >= lo:
            raise ConfigurationError("value range must have hi >= lo")
    t = _normalise(v, lo, hi)
    mask = field.grid.mask
    if palette == "grey":
        out = np.full(mask.shape, GREY_SENTINEL, dtype=np.uint8)
        out[mask] = (1 + np.rint(254 * t)).astype(np.uint8)
    else:
        out = np.empty(mask.shape + (3,), dtype=np.uint8)
        out[...] = HEAT_SENTINEL
        rgb = np.clip(np.stack([3 * t, 3 * t - 1, 3 * t - 2], axis=1), 0.0, 1.0)
        out[mask] = np.rint(255 * rgb).astype(np.uint8)
    # grid.mask is row-major over the image, as is values' pixel order
    return out, (lo, hi)


def render_field(field: Field, palette: str = "grey", path: str | Path = "field.pgm",
                 value_range=None) -> Path:
    """Write a PGM/PPM image plus a ``<stem>.range.txt`` sidecar holding ``lo hi``."""
    pix, (lo, hi) = field_to_pixels(field, palette, value_range)
    path = Path(path)
    h, w = pix.shape[:2]
    magic = b"P5" if pix.ndim == 2 else b"P6"
    _write_bytes(path, magic + f"\n{w} {h}\n255\n".encode() + pix.tobytes())
    write_text(path.with_suffix(".range.txt"), f"{lo!r} {hi!r}\n")
    return path


def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PGM/PPM written by :func:`render_field`."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    magic, (w, h), maxval = parts[0], map(int, parts[1].split()), int(parts[2])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise InputError(f"{path}: unsupported image format")
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    return pix.reshape((h, w) if magic == b"P5" else (h, w, 3))


# ---------------------------------------------------------------------------
# SVG plots

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def svg_line_plot(series: dict[str, tuple[Sequence[float], Sequence[float]]], *, title: str = "",
                  xlabel: str = "", ylabel: str = "", xlog: bool = False,
                  width: int = 480, height: int = 320) -> str:
    """Polyline per series with labelled axes; non-finite points are skipped."""
    left, right, top, bottom = 60, 110, 30, 45
    pts = {}
    for name, (xs, ys) in series.items():
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xlog:
            with np.errstate(divide="ignore", invalid="ignore"):
                xs = np.log10(xs)
        ok = np.isfinite(xs) & np.isfinite(ys)
        pts[name] = (xs[ok], ys[ok])
    allx = np.concatenate([p[0] for p in pts.values()] or [np.zeros(1)])
    ally = np.concatenate([p[1] for p in pts.values()] or [np.zeros(1)])
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{title}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
           f'<text x="14" y="{top + ph / 2:.1f}" transform="rotate(-90 14 {top + ph / 2:.1f})" '
           f'text-anchor="middle">{ylabel}</text>']
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        xt = f"1e{xv:.1f}" if xlog else f"{xv:.3g}"
        out.append(f'<text x="{_fmt(sx(xv))}" y="{top + ph + 15}" text-anchor="middle">{xt}</text>')
        out.append(f'<text x="{left - 4}" y="{_fmt(sy(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')
    for i, (name, (xs, ys)) in enumerate(pts.items()):
        colour = _COLOURS[i % len(_COLOURS)]
        if xs.size:
            path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{path}"/>')
        ly = top + 14 * (i + 1)
        out.append(f'<line x1="{width - right + 8}" y1="{ly - 4}" x2="{width - right + 24}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{width - right + 28}" y="{ly}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_heatmap(values: np.ndarray, xs: Sequence[float], ys: Sequence[float], *, title: str = "",
                xlabel: str = "", ylabel: str = "", cell: int = 28) -> str:
    """Grid of coloured cells (rows follow ``ys``, columns ``xs``) with the minimum outlined."""
    values = np.asarray(values, dtype=float)
    ny, nx = values.shape
    left, top = 70, 30
    width, height = left + nx * cell + 20, top + ny * cell + 50
    finite = values[np.isfinite(values)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="9">',
           f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="11">{title}</text>']
    for i in range(ny):
        for j in range(nx):
            v = values[i, j]
            if np.isfinite(v):
                t = 0.5 if hi == lo else (v - lo) / (hi - lo)
                rgb = np.rint(255 * np.clip([3 * t, 3 * t - 1, 3 * t - 2], 0, 1)).astype(int)
                fill = "#%02x%02x%02x" % tuple(rgb)
            else:
                fill = "#0000ff"
            out.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                       f'fill="{fill}"><title>{v!r}</title></rect>')
    if finite.size:
        i, j = np.unravel_index(np.nanargmin(np.where(np.isfinite(values), values, np.inf)), values.shape)
        out.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                   f'fill="none" stroke="#00ff00" stroke-width="2"/>')
    for j, x in enumerate(xs):
        out.append(f'<text x="{left + j * cell + cell / 2:.1f}" y="{top + ny * cell + 12}" '
                   f'text-anchor="middle">{x:.0e}</text>')
    for i, y in enumerate(ys):
        out.append(f'<text x="{left - 4}" y="{top + i * cell + cell / 2 + 3:.1f}" text-anchor="end">{y:.0e}</text>')
    out.append(f'<text x="{left + nx * cell / 2:.1f}" y="{height - 8}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="12" y="{top + ny * cell / 2:.1f}" transform="rotate(-90 12 {top + ny * cell / 2:.1f})" '
               f'text-anchor="middle">{ylabel}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory: str | Path, paths: Iterable[str | Path], name: str = "manifest.txt") -> Path:
    """``<sha256>  <relative path>`` per artefact, sorted by path."""
    directory = Path(directory)
    rels = sorted({Path(p).resolve().relative_to(directory.resolve()).as_posix() for p in paths})
    lines = [f"{sha256_file(directory / r)}  {r}" for r in rels]
    return write_text(directory / name, "\n".join(lines) + "\n")
