import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tdlastomo.errors import ArtifactIOError, ConfigurationError, InputError
from tdlastomo.fields import Field
from tdlastomo.geometry import PixelGrid
from tdlastomo.harness.artifacts import (read_field_csv, read_pnm, render_field, sha256_file, svg_heatmap,
                                         svg_line_plot, write_csv, write_field_csv, write_manifest)
from tdlastomo.phantom import get_phantom, sample_field


def _square(values, mask=None):
    img = np.asarray(values, dtype=float)
    mask = np.ones(img.shape, bool) if mask is None else np.asarray(mask)
    grid = PixelGrid(pixel_size=1.0, x0=0.0, y0=float(img.shape[0]), mask=mask)
    return Field(grid, img[grid.rows, grid.cols])


def test_uniform_field_renders_uniform(tmp_path, grid):
    f = Field(grid, np.full(grid.num_pixels, 640.0))
    path = render_field(f, "grey", tmp_path / "u.pgm")
    pix = read_pnm(path)
    assert pix.shape == grid.shape
    assert set(np.unique(pix[grid.mask])) == {128}  # t = 0.5 -> 1 + round(127)
    assert set(np.unique(pix[~grid.mask])) == {0}
    assert (tmp_path / "u.range.txt").read_text() == "640.0 640.0\n"


def test_phantom1_peak_at_image_centre(tmp_path, grid):
    T, _ = sample_field(get_phantom("phantom1"), grid)
    pix = read_pnm(render_field(T, "grey", tmp_path / "p1.pgm"))
    r, c = np.unravel_index(np.argmax(pix), pix.shape)
    n = grid.shape[0]
    assert r in (n // 2 - 1, n // 2) and c in (n // 2 - 1, n // 2)
    assert pix[r, c] == 255


def test_two_by_two_grey_bytes(tmp_path):
    path = render_field(_square([[0.0, 1.0], [2.0, 3.0]]), "grey", tmp_path / "g.pgm")
    # t = 0, 1/3, 2/3, 1 -> 1 + round(254 t)
    assert path.read_bytes() == b"P5\n2 2\n255\n" + bytes([1, 86, 170, 255])


def test_two_by_two_heat_bytes_with_mask(tmp_path):
    f = _square([[0.0, 1.0], [2.0, 0.0]], mask=[[True, True], [True, False]])
    path = render_field(f, "heat", tmp_path / "h.ppm")
    # t = 0, 1/2, 1 -> black, (255, 128, 0), white; the masked cell is blue
    expected = bytes([0, 0, 0, 255, 128, 0, 255, 255, 255, 0, 0, 255])
    assert path.read_bytes() == b"P6\n2 2\n255\n" + expected


def test_explicit_value_range_clips(tmp_path):
    path = render_field(_square([[-5.0, 5.0], [15.0, 10.0]]), "grey", tmp_path / "c.pgm", value_range=(0, 10))
    assert list(read_pnm(path).ravel()) == [1, 128, 255, 255]
    with pytest.raises(ConfigurationError):
        render_field(_square([[0.0]]), "grey", tmp_path / "x.pgm", value_range=(1, 0))
    with pytest.raises(ConfigurationError):
        render_field(_square([[0.0]]), "rainbow", tmp_path / "x.pgm")


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ArtifactIOError):
        render_field(_square([[1.0]]), "grey", blocker / "sub" / "x.pgm")


def test_field_csv_round_trip(tmp_path, grid):
    T, _ = sample_field(get_phantom("phantom3"), grid)
    path = write_field_csv(tmp_path / "T.csv", T)
    back = read_field_csv(path, grid, "K")
    np.testing.assert_array_equal(back.values, T.values)
    first = path.read_text().splitlines()[0].split(",")
    assert first[0] == "NA" and len(first) == grid.shape[1]


def test_field_csv_rejects_mismatch(tmp_path, grid):
    small = _square([[1.0, 2.0], [3.0, 4.0]])
    path = write_field_csv(tmp_path / "s.csv", small)
    with pytest.raises(InputError):
        read_field_csv(path, grid)
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,x\n2.0,3.0\n")
    with pytest.raises(InputError):
        read_field_csv(bad, small.grid)
    with pytest.raises(ArtifactIOError):
        read_field_csv(tmp_path / "missing.csv", small.grid)


def test_csv_cells(tmp_path):
    path = write_csv(tmp_path / "t.csv", ("a", "b", "c", "d"), [(0.1, 3, True, "x,y")])
    assert path.read_text() == 'a,b,c,d\n0.1,3,true,"x,y"\n'


def test_manifest_hashes(tmp_path):
    a = write_csv(tmp_path / "a.csv", ("x",), [(1,)])
    b = write_csv(tmp_path / "sub" / "b.csv", ("y",), [(2,)])
    m = write_manifest(tmp_path, [b, a])
    lines = m.read_text().splitlines()
    assert lines == [f"{sha256_file(a)}  a.csv", f"{sha256_file(b)}  sub/b.csv"]


def test_svg_plots_are_well_formed():
    line = svg_line_plot({"SART": ([1e-3, 1e-2, 1e-1], [0.3, 0.2, float("nan")])}, xlog=True, title="t")
    root = ET.fromstring(line)
    assert root.tag.endswith("svg")
    assert len([e for e in root.iter() if e.tag.endswith("polyline")]) == 1
    heat = svg_heatmap(np.array([[1.0, 0.5], [np.nan, 2.0]]), [1e-3, 1e-2], [1e-1, 1e-2])
    rects = [e for e in ET.fromstring(heat).iter() if e.tag.endswith("rect")]
    assert len(rects) == 5  # four cells plus the argmin outline
