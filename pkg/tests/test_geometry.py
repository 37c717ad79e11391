import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sampled_pixel_lengths
from tdlastomo.errors import ConfigurationError, GeometryError
from tdlastomo.geometry import (
    Beam,
    PixelGrid,
    SensorGeometry,
    beams_table,
    build_sensitivity,
    chord_length,
    enumerate_beams,
    render_layout_svg,
    sensitivity_for,
    trace_beam,
)


def make_beam(angle_deg, offset, centre=(0.0, 0.0)):
    th = math.radians(angle_deg)
    n = (math.cos(th), math.sin(th))
    return Beam(0, 0, 0, angle_deg, offset, (centre[0] + offset * n[0], centre[1] + offset * n[1]),
                (-n[1], n[0]))


class TestEnumerateBeams:
    def test_default_layout(self, geom):
        beams = enumerate_beams(geom)
        assert len(beams) == 32
        angles = [b.angle_deg for b in beams]
        for k, a in enumerate((0.0, 45.0, 90.0, 135.0)):
            assert angles[8 * k:8 * k + 8] == [a] * 8

    def test_single_beam_through_centre(self):
        (beam,) = enumerate_beams(SensorGeometry(num_projections=1, beams_per_projection=1, beam_spacing=0.0))
        assert beam.offset == 0.0
        assert chord_length(beam, (0.0, 0.0, 9.0)) == 18.0

    def test_offset_of_beam_3(self, geom):
        assert enumerate_beams(geom)[3].offset == pytest.approx(-0.9, abs=1e-12)

    def test_offsets_follow_formula(self, geom):
        for b in enumerate_beams(geom):
            assert b.offset == pytest.approx((b.position - 3.5) * 1.8, abs=1e-12)
            assert math.hypot(*b.direction) == pytest.approx(1.0)

    @pytest.mark.parametrize("kwargs", [
        {"num_projections": 0}, {"beams_per_projection": 0}, {"beam_spacing": -1.0},
        {"roi_diameter": 0.0}, {"angular_spacing": math.nan},
    ])
    def test_invalid_geometry(self, kwargs):
        with pytest.raises(ConfigurationError):
            SensorGeometry(**kwargs)


class TestPixelGrid:
    def test_default_pixel_count(self, grid):
        assert grid.shape == (80, 80)
        assert grid.num_pixels == 5024

    def test_centres_inside_roi(self, grid):
        assert np.all(np.hypot(grid.x, grid.y) < 9.0)

    def test_index_round_trip(self, grid):
        j = np.arange(grid.num_pixels)
        assert all(grid.index(*grid.cell(k)) == k for k in j[::97])
        img = grid.to_image(j.astype(float))
        assert np.array_equal(grid.from_image(img), j)


class TestChordLength:
    @pytest.mark.parametrize("offset,expected", [(0.0, 18.0), (9.0, 0.0), (4.5, 2 * math.sqrt(60.75))])
    def test_examples(self, offset, expected):
        assert chord_length(make_beam(0.0, offset), (0.0, 0.0, 9.0)) == pytest.approx(expected, abs=1e-12)

    def test_4_5_value(self):
        assert chord_length(make_beam(30.0, 4.5), (0.0, 0.0, 9.0)) == pytest.approx(15.5885, abs=1e-4)


class TestSensitivity:
    def test_centre_beam_row_sum(self, grid):
        L = build_sensitivity([make_beam(0.0, 0.0)], grid)
        assert L.ray_lengths[0] == pytest.approx(18.0, abs=1e-9)

    def test_offset_beam_row_sum(self, grid):
        L = build_sensitivity([make_beam(0.0, 0.9)], grid)
        assert L.ray_lengths[0] == pytest.approx(2 * math.sqrt(81 - 0.81), abs=1e-9)
        assert L.ray_lengths[0] == pytest.approx(17.9098, abs=1e-4)

    def test_full_pixel_entry(self, grid):
        # a vertical beam through pixel centres, well inside the RoI
        beam = make_beam(0.0, grid.x[grid.nearest_pixel(0.1, 0.0)])
        pix, length = trace_beam(beam, grid)
        j = grid.nearest_pixel(beam.origin[0], 0.0)
        assert length[list(pix).index(j)] == pytest.approx(0.225, abs=1e-12)

    def test_entries_non_negative_and_rows_match_chords(self, L, geom):
        assert L.matrix.data.min() > 0
        for i, beam in enumerate(L.beams):
            assert abs(L.ray_lengths[i] - chord_length(beam, (0.0, 0.0, geom.roi_radius))) < 1e-6
        assert np.allclose(L.pixel_lengths, np.asarray(L.matrix.sum(axis=0)).ravel())

    def test_missing_beam_rejected(self, grid):
        with pytest.raises(GeometryError, match="beam 0"):
            build_sensitivity([make_beam(0.0, 9.5)], grid)

    def test_no_beams_rejected(self, grid):
        with pytest.raises(GeometryError):
            build_sensitivity([], grid)

    @pytest.mark.parametrize("index", [0, 3, 9, 14, 18, 21, 27, 31])
    def test_fine_sampling_oracle(self, L, grid, index):
        beam = L.beams[index]
        ref = sampled_pixel_lengths(beam.origin, beam.direction, grid, step=1e-4)
        row = L.matrix.getrow(index)
        got = dict(zip(row.indices.tolist(), row.data.tolist()))
        for j in set(ref) | set(got):
            assert abs(got.get(j, 0.0) - ref.get(j, 0.0)) < 1e-3

    def test_rotation_consistency(self, L, grid, geom):
        # rotating by +90 deg maps pixel (r, c) to (n-1-c, r) and the
        # 0-deg projection onto the 90-deg projection with the same offsets
        n = grid.shape[0]
        rot = np.empty(grid.num_pixels, dtype=int)
        for j in range(grid.num_pixels):
            r, c = grid.cell(j)
            rot[j] = grid.index(n - 1 - c, r)
        assert np.all(rot >= 0)
        dense = L.toarray()
        B = geom.beams_per_projection
        for b in range(B):
            src = dense[b]
            dst = np.zeros_like(src)
            dst[rot] = src
            assert np.allclose(dense[2 * B + b], dst, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(angle=st.floats(0.0, 180.0), offset=st.floats(-8.9, 8.9))
    def test_row_sum_property(self, grid, angle, offset):
        beam = make_beam(angle, offset)
        L = build_sensitivity([beam], grid)
        assert abs(L.ray_lengths[0] - chord_length(beam, grid.roi)) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(nproj=st.integers(1, 6), nb=st.integers(1, 9), spacing=st.floats(0.3, 2.0),
           step=st.floats(10.0, 60.0))
    def test_random_layouts_row_sums(self, nproj, nb, spacing, step):
        if (nb - 1) / 2 * spacing >= 8.9:
            spacing = 8.8 / max(nb - 1, 1)
        g = SensorGeometry(num_projections=nproj, beams_per_projection=nb, beam_spacing=spacing,
                           angular_spacing=step)
        grid = PixelGrid.from_geometry(g, 0.45)
        L = sensitivity_for(g, grid)
        chords = [chord_length(b, grid.roi) for b in L.beams]
        assert np.max(np.abs(L.ray_lengths - chords)) < 1e-6


def test_layout_svg_and_table(geom, grid):
    svg = render_layout_svg(geom, grid)
    assert svg.startswith("<svg") and svg.count("<line") == 32
    table = beams_table(enumerate_beams(geom))
    assert table[3] == (3, 0.0, pytest.approx(-0.9))
