import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import overshoot_by_enumeration
from tdlastomo.errors import ConfigurationError, ShapeError
from tdlastomo.fields import Field
from tdlastomo.geometry import PixelGrid
from tdlastomo.metrics import (MetricReport, blob_centroids, centroid_value_error, dislocation, evaluate,
                               image_error, overshoot)
from tdlastomo.phantom import get_phantom, sample_field

PH1 = get_phantom("phantom1")


@pytest.fixture(scope="module")
def truth(grid):
    return sample_field(PH1, grid)[0]


def _shifted(grid, dx):
    # the phantom evaluated at x - dx is the image moved by +dx
    return Field(grid, PH1.temperature(grid.x - dx, grid.y), "K")


def test_image_error_identity_and_scaling(truth):
    assert image_error(truth, truth) == 0.0
    assert image_error(truth.with_values(1.1 * truth.values), truth) == pytest.approx(0.1, rel=1e-12)


@given(c=st.floats(-5, 5), seed=st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_image_error_is_homogeneous_in_the_perturbation(truth, c, seed):
    E = np.random.default_rng(seed).normal(0, 50, truth.values.size)
    lhs = image_error(truth.with_values(truth.values + c * E), truth)
    rhs = abs(c) * image_error(truth.with_values(truth.values + E), truth)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-15)


def test_image_error_rejects_zero_reference(grid):
    z = Field(grid, np.zeros(grid.num_pixels))
    with pytest.raises(ConfigurationError):
        image_error(z, z)


def test_dislocation_identity(truth):
    assert dislocation(truth, PH1) < 1e-3


def test_dislocation_one_pixel_shift(grid, truth):
    dl = dislocation(_shifted(grid, grid.pixel_size), PH1)
    assert dl == pytest.approx(0.225 / 9, abs=1e-3)


@given(c=st.floats(0.01, 100.0))
@settings(max_examples=25, deadline=None)
def test_dislocation_invariant_to_excess_rescaling(grid, c):
    rec = _shifted(grid, 0.4)
    excess = np.maximum(rec.values - PH1.ambient, 0.0)
    scaled = rec.with_values(PH1.ambient + c * excess)
    a, b = blob_centroids(rec, PH1), blob_centroids(scaled, PH1)
    for (xa, ya, _), (xb, yb, _) in zip(a, b):
        assert xb == pytest.approx(xa, rel=1e-12, abs=1e-14)
        assert yb == pytest.approx(ya, rel=1e-12, abs=1e-14)


def test_dislocation_degenerate_region_falls_back(grid, truth):
    cold = truth.with_values(np.full(grid.num_pixels, PH1.ambient - 10.0))
    ((x, y, degenerate),) = blob_centroids(cold, PH1)
    assert degenerate
    assert dislocation(cold, PH1) <= 2.0


def test_centroid_value_error_identity(truth):
    assert centroid_value_error(truth, truth, PH1) < 0.005


def test_centroid_value_error_offset(grid, truth):
    cve = centroid_value_error(truth.with_values(truth.values + 100.0), truth, PH1)
    # the nearest pixel centre to the blob centre sits 0.159 cm away
    ref = truth.values[grid.nearest_pixel(0.0, 0.0)]
    assert cve == pytest.approx(100.0 / ref, rel=1e-12)
    assert cve == pytest.approx(100.0 / 1098.15, abs=3e-3)


def _image_field(img):
    """A field on a small full-square grid whose image is ``img``."""
    grid = PixelGrid(pixel_size=1.0, x0=0.0, y0=float(img.shape[0]), mask=np.ones(img.shape, bool))
    return Field(grid, img[grid.rows, grid.cols])


def test_overshoot_uniform_is_zero(grid):
    f = Field(grid, np.full(grid.num_pixels, 700.0))
    assert overshoot(f) == 0.0
    assert overshoot(f, "inclusive") == 0.0


def test_overshoot_spike(grid):
    values = np.full(grid.num_pixels, 700.0)
    values[grid.nearest_pixel(1.0, 1.0)] += 1000.0
    f = Field(grid, values)
    img = grid.to_image(values, np.nan)
    assert overshoot_by_enumeration(img, True) == 9
    assert overshoot(f) == pytest.approx(9 / grid.num_pixels)
    # with the tested pixel inside its own statistics the deviation never exceeds sqrt(8) sigma
    assert overshoot_by_enumeration(img, False) == 0
    assert overshoot(f, "inclusive") == 0.0


@given(seed=st.integers(0, 2**16), n=st.integers(3, 9))
@settings(max_examples=30, deadline=None)
def test_overshoot_matches_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    img = rng.normal(500, 30, (n, n))
    img[rng.random((n, n)) < 0.1] += 2000
    f = _image_field(img)
    for loo in (True, False):
        mode = "leave_one_out" if loo else "inclusive"
        assert overshoot(f, mode) * f.grid.num_pixels == pytest.approx(overshoot_by_enumeration(img, loo))


@given(a=st.floats(-100, 100), b=st.floats(-100, 100), c=st.floats(300, 1000))
@settings(max_examples=40, deadline=None)
def test_overshoot_zero_on_affine_fields(grid, a, b, c):
    f = Field(grid, c + a * grid.x + b * grid.y)
    assert overshoot(f) == 0.0
    assert overshoot(f, "inclusive") == 0.0


@given(seed=st.integers(0, 2**16))
@settings(max_examples=20, deadline=None)
def test_overshoot_bounds_and_inclusive_never_fires(seed):
    rng = np.random.default_rng(seed)
    img = rng.standard_cauchy((8, 8)) * 100
    f = _image_field(img)
    windows = 36
    assert 0.0 <= overshoot(f) <= 9 * windows / f.grid.num_pixels
    assert overshoot(f, "inclusive") == 0.0


def test_overshoot_unknown_mode(truth):
    with pytest.raises(ConfigurationError):
        overshoot(truth, "median")


def test_evaluate_is_deterministic_and_serialises(grid, truth):
    rec = _shifted(grid, 0.3).with_values(_shifted(grid, 0.3).values + 20.0)
    r1, r2 = evaluate(rec, truth, PH1), evaluate(rec, truth, PH1)
    assert r1 == r2
    assert r1.row() == (image_error(rec, truth), dislocation(rec, PH1),
                        centroid_value_error(rec, truth, PH1), overshoot(rec))
    lines = r1.to_csv().splitlines()
    assert lines[0] == "ie,dl,cve,os"
    assert [float(v) for v in lines[1].split(",")] == list(r1.row())
    assert r1.blob_rows()[0]["index"] == 0 and not r1.blob_rows()[0]["degenerate"]
    assert isinstance(r1, MetricReport)


def test_evaluate_rejects_mismatched_grids(truth):
    small = _image_field(np.full((4, 4), 500.0))
    with pytest.raises(ShapeError):
        evaluate(small, truth, PH1)
    with pytest.raises(ShapeError):
        image_error(small, truth)
