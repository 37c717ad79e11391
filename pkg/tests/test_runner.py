import math

import numpy as np
import pytest

from tdlastomo.errors import ConfigurationError, TomographyError
from tdlastomo.harness.config import ExperimentConfig, NoiseSection, PhantomSection, loads_config
from tdlastomo.harness.runner import (BatchTask, aggregate, execute, run_gamma_mu_sweep, run_lambda_sweep,
                                      run_single, run_snr_sweep, run_tasks)
from tdlastomo.metrics import MetricReport
from tdlastomo.phantom import GaussianBlob, Phantom
from tdlastomo.solvers.sart import SartConfig


def _cfg(names=("phantom1",), seeds=2, snr=40.0, **kw):
    return ExperimentConfig(phantom=PhantomSection(names=names, inline=kw.pop("inline", ())),
                            noise=NoiseSection(snr_db=snr, seeds=seeds), **kw)


def _uniform(T0, name):
    return Phantom((GaussianBlob(0.0, 0.0, 20.0, temperature_amplitude=0.0),), ambient=T0, name=name)


def test_noiseless_ambient_field_round_trip():
    cfg = _cfg(("flat",), seeds=1, snr=math.inf, inline=(_uniform(298.15, "flat"),))
    rec = run_single(cfg, out=False)
    assert rec.mean("flat", "SART", "ie") < 0.01


def test_noiseless_hot_uniform_field_round_trip():
    cfg = _cfg(("hot",), seeds=1, snr=math.inf, inline=(_uniform(800.0, "hot"),),
               sart=SartConfig(pixel_length_floor=0.1, fill_uncovered=True))
    rec = run_single(cfg, out=False)
    assert rec.mean("hot", "SART", "ie") < 0.01


def _files(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*"))
            if p.is_file() and p.name not in ("timing.txt", "manifest.txt")}


def test_repeated_runs_are_bit_identical(tmp_path):
    cfg = _cfg(("phantom2",), seeds=2)
    a = run_single(cfg, algorithms=["SART", "RETRO"], out=tmp_path / "a")
    b = run_single(cfg, algorithms=["SART", "RETRO"], out=tmp_path / "b")
    fa, fb = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert fa.keys() == fb.keys() and fa == fb
    assert {"metrics.csv", "blobs.csv", "summary.csv", "config.toml"} <= set(fa)
    assert any(k.startswith("fields/") and k.endswith(".ppm") for k in fa)
    manifest = (tmp_path / "a" / "manifest.txt").read_text()
    assert "metrics.csv" in manifest and "timing.txt" in manifest
    assert a.aggregates == b.aggregates


def test_written_config_reloads(tmp_path):
    cfg = _cfg(("phantom1",), seeds=1)
    run_single(cfg, out=tmp_path)
    again = loads_config((tmp_path / "config.toml").read_text())
    assert again == cfg


def test_aggregates_recomputable_from_rows(tmp_path):
    rec = run_single(_cfg(("phantom1", "phantom3"), seeds=3), out=tmp_path)
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    header = rows[0].split(",")
    table = [dict(zip(header, r.split(","))) for r in rows[1:]]
    for (ph, algo), agg in rec.aggregates.items():
        mine = [t for t in table if t["phantom"] == ph and t["algorithm"] == algo]
        assert len(mine) == 3
        for m in ("ie", "dl", "cve", "os"):
            vals = np.array([float(t[m]) for t in mine])
            assert agg[m][0] == pytest.approx(np.mean(vals), rel=1e-15, abs=0)
            assert agg[m][1] == pytest.approx(np.std(vals), rel=1e-12, abs=1e-18)


def test_single_lambda_sweep_equals_run_single():
    cfg = _cfg(("phantom1",), seeds=2)
    sweep = run_lambda_sweep(cfg, [0.1], out=False)
    rec = run_single(cfg.override("sart", lam=0.1), out=False)
    assert sweep.mean("ie")[0, 0] == rec.mean("phantom1", "SART", "ie")
    assert sweep.argmin()["phantom1"] == ((0.1,), rec.mean("phantom1", "SART", "ie"))


def test_single_cell_gamma_mu_grid_equals_run_single():
    cfg = _cfg(("phantom1",), seeds=1)
    sweep = run_gamma_mu_sweep(cfg, [0.01], [1e-5], out=False)
    rec = run_single(cfg.override("retro", gamma=0.01, mu=1e-5), algorithms=["RETRO"], out=False)
    assert sweep.mean("ie")[0, 0] == rec.mean("phantom1", "RETRO", "ie")


def test_sweep_cells_are_separable(tmp_path):
    cfg = _cfg(("phantom1",), seeds=2)
    sweep = run_lambda_sweep(cfg, [1.0, 0.01, 1e-5], out=tmp_path)
    for k, lam in enumerate([1.0, 0.01, 1e-5]):
        alone = run_lambda_sweep(cfg, [lam], out=False)
        assert alone.mean("ie")[0, 0] == sweep.mean("ie")[0, k]
    assert (tmp_path / "sweep_lambda.svg").exists()
    table = (tmp_path / "sweep_lambda.csv").read_text().splitlines()
    assert table[0] == "lam,phantom,n_seeds,mean_ie,std_ie" and len(table) == 4


def test_snr_sweep_outputs(tmp_path):
    cfg = _cfg(("phantom1",), seeds=1)
    res = run_snr_sweep(cfg, [30.0, math.inf], out=tmp_path)
    assert res.algorithms == ("SART", "RETRO")
    for a in res.algorithms:
        assert res.mean(math.inf, a, "ie") == res.phantom_mean(math.inf, a, "phantom1", "ie")
    for m in ("ie", "dl", "cve", "os"):
        assert (tmp_path / f"sweep_snr_{m}.svg").exists()
    assert len((tmp_path / "sweep_snr.csv").read_text().splitlines()) == 5


def test_parallel_jobs_match_serial():
    cfg = _cfg(("phantom1", "phantom2"), seeds=1)
    tasks = [BatchTask.from_config(cfg, ph, "SART") for ph in cfg.phantom.phantoms()]
    serial = run_tasks(tasks, 1)
    parallel = run_tasks(tasks, 2)
    for s, p in zip(serial, parallel):
        assert [r.report for r in s.records] == [r.report for r in p.records]


def test_stage_errors_name_the_stage():
    cfg = _cfg(("phantom1",), seeds=1)
    task = BatchTask.from_config(cfg, cfg.phantom.phantoms()[0], "SART")
    bad = BatchTask(**{**task.__dict__, "snr_db": float("nan")})
    with pytest.raises(TomographyError, match="stage add_noise, phantom phantom1, seed 0"):
        execute(bad)


def test_invalid_arguments():
    cfg = _cfg()
    with pytest.raises(ConfigurationError):
        run_tasks([], 0)
    with pytest.raises(ConfigurationError):
        run_lambda_sweep(cfg, [], out=False)
    with pytest.raises(ConfigurationError):
        run_gamma_mu_sweep(cfg, [0.1], [], out=False)
    with pytest.raises(ConfigurationError):
        run_snr_sweep(cfg, [], out=False)


def test_aggregate_population_std():
    agg = aggregate([MetricReport(0.1, 0.0, 0.0, 0.0), MetricReport(0.3, 0.0, 0.0, 0.0)])
    assert agg["ie"] == pytest.approx((0.2, 0.1))
