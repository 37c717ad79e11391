import numpy as np
import pytest

from tdlastomo.errors import ConfigurationError, ShapeError
from tdlastomo.phantom import (GaussianBlob, MeasurementSet, Phantom, absorbance_density, add_noise,
                               forward_project, get_phantom, sample_field)
from tdlastomo.solvers.entropy import relative_entropy_term as g
from tdlastomo.solvers.pipeline import Algorithm, reconstruct_many, solve_full_pipeline
from tdlastomo.solvers.retro import RetroConfig
from tdlastomo.solvers.sart import SartConfig


def _uniform(T0):
    # sigma = 20 cm makes the mole fraction nearly flat over the 9 cm RoI
    return Phantom((GaussianBlob(0.0, 0.0, 20.0, temperature_amplitude=0.0),), ambient=T0)


def _well_sampled(ops):
    return ops.L.pixel_lengths >= ops.grid.pixel_size


def _max_error(res, T0, ops):
    well = _well_sampled(ops)
    return float(np.max(np.abs(res.temperature.values[well] - T0)))


@pytest.mark.parametrize("T0", [450.0, 800.0, 1100.0])
def test_uniform_temperature_round_trip_sart(T0, geom, grid, pair, ops):
    res = solve_full_pipeline(forward_project(_uniform(T0), pair, geom), geom, grid, pair, "SART",
                              operators=ops)
    assert _max_error(res, T0, ops) < 1.0


@pytest.mark.parametrize("T0", [450.0, 1100.0])
def test_uniform_temperature_round_trip_retro_without_entropy(T0, geom, grid, pair, ops):
    res = solve_full_pipeline(forward_project(_uniform(T0), pair, geom), geom, grid, pair, "RETRO",
                              RetroConfig(mu=0.0), operators=ops)
    assert _max_error(res, T0, ops) < 1.0


@pytest.mark.xfail(strict=False, reason="default entropy weight biases the ratio of a noiseless uniform field")
def test_uniform_temperature_round_trip_retro_default(geom, grid, pair, ops):
    T0 = 800.0
    ms = forward_project(_uniform(T0), pair, geom)
    res = solve_full_pipeline(ms, geom, grid, pair, "RETRO", operators=ops)
    err = _max_error(res, T0, ops)
    a1, a2 = absorbance_density(_uniform(T0), pair, grid)
    cfg = RetroConfig()

    def total(x1, x2):
        Lm, F = ops.L.matrix, ops.F
        fit = (np.sum((ms.A1 - Lm @ x1) ** 2) + np.sum((ms.A2 - Lm @ x2) ** 2)
               + cfg.gamma ** 2 * (np.sum((F @ x1) ** 2) + np.sum((F @ x2) ** 2)))
        return fit + cfg.mu * float(np.sum(g(x1, x2)))

    print(f"RETRO mu={cfg.mu}: max |T - T0| in well-sampled pixels = {err:.1f} K; "
          f"objective(reconstruction) = {total(res.a1.values, res.a2.values):.4e} "
          f"< objective(truth) = {total(a1, a2):.4e}")
    assert err < 1.0


@pytest.mark.xfail(strict=False, reason="phantom 2 blobs are barely crossed by the 32-beam layout")
def test_phantom2_pixel_errors_order_of_magnitude(geom, grid, pair, ops):
    ph = get_phantom("phantom2")
    a1t, a2t = absorbance_density(ph, pair, grid)
    Tt, _ = sample_field(ph, grid)
    res = solve_full_pipeline(add_noise(forward_project(ph, pair, geom), 40.0, 0), geom, grid, pair,
                              "SART", SartConfig(lam=0.1), operators=ops)
    e1 = np.abs(res.a1.values - a1t).max() / a1t.max()
    e2 = np.abs(res.a2.values - a2t).max() / a2t.max()
    eT = (np.abs(res.temperature.values - Tt.values) / Tt.values).max()
    print(f"max e1 = {e1:.3f} (0.046), max e2 = {e2:.3f} (0.103), max eT = {eT:.3f} (1.51)")
    for measured, target in ((e1, 0.046), (e2, 0.103), (eT, 1.51)):
        assert target / 10 <= measured <= target * 10


def test_diagnostics_recorded(geom, grid, pair, ops):
    ms = add_noise(forward_project(get_phantom("phantom1"), pair, geom), 40.0, 1)
    sart = solve_full_pipeline(ms, geom, grid, pair, "sart", operators=ops)
    retro = solve_full_pipeline(ms, geom, grid, pair, Algorithm.RETRO, operators=ops)
    assert sart.algorithm is Algorithm.SART and retro.algorithm is Algorithm.RETRO
    assert {"iterations", "objective", "residual_norm", "converged", "stalled", "wall_time"} <= set(sart.diagnostics)
    assert len(sart.diagnostics["iterations"]) == 2
    assert {"iterations", "objective", "converged", "gap", "kkt_residual", "wall_time"} <= set(retro.diagnostics)
    assert retro.diagnostics["converged"]
    for res in (sart, retro):
        assert res.temperature.values.shape == (grid.num_pixels,)
        assert res.status.shape == (grid.num_pixels,)


def test_batch_matches_single_runs(geom, grid, pair, ops):
    clean = forward_project(get_phantom("phantom1"), pair, geom)
    sets = [add_noise(clean, 30.0, s) for s in range(2)]
    batch = reconstruct_many(sets, ops, pair, "SART")
    for ms, res in zip(sets, batch):
        single = solve_full_pipeline(ms, geom, grid, pair, "SART", operators=ops)
        np.testing.assert_array_equal(res.a1.values, single.a1.values)
        np.testing.assert_array_equal(res.temperature.values, single.temperature.values)


def test_reconstruct_many_errors(geom, pair, ops):
    ms = forward_project(get_phantom("phantom1"), pair, geom)
    assert reconstruct_many([], ops, pair, "SART") == []
    with pytest.raises(ConfigurationError):
        reconstruct_many([ms], ops, pair, "ART")
    with pytest.raises(ConfigurationError):
        reconstruct_many([ms], ops, pair, "SART", RetroConfig())
    with pytest.raises(ConfigurationError):
        reconstruct_many([ms], ops, pair, "RETRO", SartConfig())
    short = MeasurementSet(ms.A1[:-1], ms.A2[:-1])
    with pytest.raises(ShapeError):
        reconstruct_many([short], ops, pair, "SART")
