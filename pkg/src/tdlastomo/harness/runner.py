"""Experiment orchestration: repeated-seed runs and parameter sweeps.

The unit of work is a :class:`BatchTask`: one phantom, one algorithm with
one solver configuration, one SNR and a list of seeds. Tasks share nothing
but read-only, per-process cached operators, so they can run in any order
on any number of workers; results are collected in task order and every
file is written by the parent process, which keeps artefacts independent
of ``jobs``. Wall-clock timings are kept out of the CSV files.
"""
from __future__ import annotations

import copy
import dataclasses
import functools
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from ..errors import ConfigurationError, TomographyError
from ..fields import Field
from ..geometry import PixelGrid, SensorGeometry
from ..metrics import MetricReport, evaluate
from ..phantom import Phantom, add_noise, forward_project, sample_field
from ..solvers.pipeline import Algorithm, Operators, RetrievalConfig, reconstruct_many
from ..solvers.retro import RetroConfig
from ..solvers.sart import SartConfig
from ..spectroscopy import TransitionPair, load_transition_pair
from . import artifacts
from .config import ExperimentConfig, MetricsSection, dump_config

log = logging.getLogger(__name__)

METRICS = ("ie", "dl", "cve", "os")


# ---------------------------------------------------------------------------
# per-process caches of deterministic inputs


@functools.lru_cache(maxsize=8)
def transition_pair(constants: str) -> TransitionPair:
    return load_transition_pair(constants or None)


@functools.lru_cache(maxsize=8)
def operators(geom: SensorGeometry, pixel_size: float) -> Operators:
    return Operators(geom, PixelGrid.from_geometry(geom, pixel_size))


@functools.lru_cache(maxsize=32)
def clean_measurements(phantom: Phantom, geom: SensorGeometry, fine_pixel_size: float,
                       pixel_size: float, constants: str):
    return forward_project(phantom, transition_pair(constants), geom, fine_pixel_size, pixel_size)


@functools.lru_cache(maxsize=32)
def true_fields(phantom: Phantom, geom: SensorGeometry, pixel_size: float):
    return sample_field(phantom, operators(geom, pixel_size).grid)


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class BatchTask:
    geometry: SensorGeometry
    pixel_size: float
    fine_pixel_size: float
    constants: str
    phantom: Phantom
    algorithm: Algorithm
    solver: SartConfig | RetroConfig
    retrieval: RetrievalConfig
    snr_db: float
    seeds: tuple[int, ...]
    noise_mode: str
    metrics: MetricsSection
    keep_first: bool = False

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, phantom: Phantom, algo=None, *, solver=None,
                    snr_db: float | None = None, keep_first: bool = False) -> "BatchTask":
        algo = cfg.algo if algo is None else Algorithm.parse(algo)
        return cls(cfg.geometry, cfg.grid.pixel_size, cfg.grid.fine_pixel_size, cfg.spectroscopy.constants,
                   phantom, algo, cfg.solver_config(algo) if solver is None else solver, cfg.retrieval,
                   cfg.noise.snr_db if snr_db is None else float(snr_db), cfg.noise.seed_list(),
                   cfg.noise.mode, cfg.metrics, keep_first)


@dataclass(frozen=True)
class SeedRecord:
    phantom: str
    algorithm: str
    snr_db: float
    seed: int
    report: MetricReport
    converged: bool
    iterations: str
    objective: str


@dataclass(eq=False)
class BatchOutcome:
    records: list[SeedRecord]
    wall_time: float
    first: dict | None = None


@contextmanager
def _stage(name: str, phantom: str, seed=None):
    try:
        yield
    except TomographyError as exc:
        where = f"stage {name}, phantom {phantom}" + ("" if seed is None else f", seed {seed}")
        new = copy.copy(exc)
        new.args = (f"{where}: {exc}",)
        raise new from exc


def _format_pair(v) -> str:
    if isinstance(v, tuple):
        return "/".join(_format_pair(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def execute(task: BatchTask) -> BatchOutcome:
    """Run one batch; single-threaded BLAS keeps the floating-point results fixed."""
    t0 = time.perf_counter()
    name = task.phantom.name or "inline"
    with threadpool_limits(limits=1):
        with _stage("setup", name):
            pair = transition_pair(task.constants)
            ops = operators(task.geometry, task.pixel_size)
            T_true, _ = true_fields(task.phantom, task.geometry, task.pixel_size)
        with _stage("forward_project", name):
            clean = clean_measurements(task.phantom, task.geometry, task.fine_pixel_size,
                                       task.pixel_size, task.constants)
        noisy = []
        for seed in task.seeds:
            with _stage("add_noise", name, seed):
                noisy.append(add_noise(clean, task.snr_db, seed, task.noise_mode))
        if task.algorithm is Algorithm.SART:
            with _stage("reconstruct", name, "all (batched)"):
                results = reconstruct_many(noisy, ops, pair, task.algorithm, task.solver, task.retrieval)
        else:
            results = []
            for seed, ms in zip(task.seeds, noisy):
                with _stage("reconstruct", name, seed):
                    results += reconstruct_many([ms], ops, pair, task.algorithm, task.solver, task.retrieval)
        records = []
        for seed, res in zip(task.seeds, results):
            with _stage("metrics", name, seed):
                rep = evaluate(res.temperature, T_true, task.phantom, r_roi=task.metrics.roi_radius,
                               overshoot_mode=task.metrics.overshoot_mode)
            d = res.diagnostics
            records.append(SeedRecord(name, task.algorithm.value, task.snr_db, int(seed), rep,
                                      bool(d["converged"]), _format_pair(d["iterations"]),
                                      _format_pair(d["objective"])))
    first = None
    if task.keep_first and results:
        r = results[0]
        first = {"T": r.temperature.values, "a1": r.a1.values, "a2": r.a2.values, "status": r.status,
                 "T_true": T_true.values}
    return BatchOutcome(records, time.perf_counter() - t0, first)


def run_tasks(tasks: list[BatchTask], jobs: int = 1) -> list[BatchOutcome]:
    """Execute tasks, in order of submission, on ``jobs`` worker processes."""
    if isinstance(jobs, bool) or not isinstance(jobs, int) or jobs < 1:
        raise ConfigurationError("jobs must be a positive integer")
    if jobs == 1 or len(tasks) <= 1:
        return [execute(t) for t in tasks]
    return list(Parallel(n_jobs=min(jobs, len(tasks)), backend="loky")(delayed(execute)(t) for t in tasks))


# ---------------------------------------------------------------------------
# aggregation


def aggregate(reports: list[MetricReport]) -> dict[str, tuple[float, float]]:
    """Mean and population standard deviation of each metric, in seed order."""
    arr = np.array([r.row() for r in reports], dtype=float)
    return {m: (float(np.mean(arr[:, i])), float(np.std(arr[:, i]))) for i, m in enumerate(METRICS)}


@dataclass(eq=False)
class RunRecord:
    config: ExperimentConfig
    records: list[SeedRecord]
    timing: dict[str, float] = field(default_factory=dict)
    artifacts: list[Path] = field(default_factory=list)

    def groups(self) -> dict[tuple[str, str], list[SeedRecord]]:
        out: dict[tuple[str, str], list[SeedRecord]] = {}
        for r in self.records:
            out.setdefault((r.phantom, r.algorithm), []).append(r)
        return out

    @property
    def aggregates(self) -> dict[tuple[str, str], dict[str, tuple[float, float]]]:
        return {k: aggregate([r.report for r in v]) for k, v in self.groups().items()}

    def mean(self, phantom: str, algorithm: str, metric: str) -> float:
        return self.aggregates[(phantom, Algorithm.parse(algorithm).value)][metric][0]


# ---------------------------------------------------------------------------
# writers

_SEED_HEADER = ("phantom", "algorithm", "snr_db", "seed", *METRICS, "converged", "iterations", "objective")


def _seed_rows(records: list[SeedRecord], extra=lambda r: ()):
    for r in records:
        yield (*extra(r), r.phantom, r.algorithm, float(r.snr_db), r.seed, *r.report.row(), r.converged,
               r.iterations, r.objective)


def _blob_rows(records: list[SeedRecord]):
    for r in records:
        for b in r.report.blobs:
            yield (r.phantom, r.algorithm, float(r.snr_db), r.seed, b.index, b.x_true, b.y_true, b.x_rec,
                   b.y_rec, b.dl, b.cve, b.degenerate)


_BLOB_HEADER = ("phantom", "algorithm", "snr_db", "seed", "blob", "x_true", "y_true", "x_rec", "y_rec",
                "dl", "cve", "degenerate")


def _summary_rows(groups: dict[tuple, list[SeedRecord]]):
    for key, recs in groups.items():
        agg = aggregate([r.report for r in recs])
        yield (*key, len(recs), *(v for m in METRICS for v in agg[m]))


def _summary_header(keys: tuple[str, ...]):
    return (*keys, "n_seeds", *(f"{s}_{m}" for m in METRICS for s in ("mean", "std")))


class _Writer:
    def __init__(self, out: Path | None):
        self.out = None if out is None else Path(out)
        self.paths: list[Path] = []

    def __bool__(self):
        return self.out is not None

    def csv(self, name, header, rows):
        self.paths.append(artifacts.write_csv(self.out / name, header, rows))

    def text(self, name, text):
        self.paths.append(artifacts.write_text(self.out / name, text))

    def field(self, stem, field_, palette="heat", value_range=None):
        self.paths.append(artifacts.write_field_csv(self.out / f"{stem}.csv", field_))
        suffix = ".pgm" if palette == "grey" else ".ppm"
        img = artifacts.render_field(field_, palette, self.out / f"{stem}{suffix}", value_range)
        self.paths += [img, img.with_suffix(".range.txt")]

    def finish(self, cfg: ExperimentConfig, timing: dict[str, float]) -> list[Path]:
        self.text("config.toml", dump_config(cfg))
        self.text("timing.txt", "".join(f"{k} {v:.3f}\n" for k, v in sorted(timing.items())))
        self.paths.append(artifacts.write_manifest(self.out, self.paths))
        return self.paths


def _output_dir(cfg: ExperimentConfig, out) -> Path | None:
    if out is False:
        return None
    return Path(cfg.output.directory if out is None else out)


def _write_fields(w: _Writer, cfg: ExperimentConfig, tasks: list[BatchTask], outcomes: list[BatchOutcome]):
    if not (w and cfg.output.fields):
        return
    for task, oc in zip(tasks, outcomes):
        if oc.first is None:
            continue
        grid = operators(task.geometry, task.pixel_size).grid
        name = task.phantom.name or "inline"
        truth = Field(grid, oc.first["T_true"], "K")
        vr = (float(task.phantom.ambient), float(np.max(truth.values)))
        w.field(f"fields/{name}_true_T", truth, value_range=vr)
        stem = f"fields/{name}_{task.algorithm.value}_seed{task.seeds[0]}"
        w.field(f"{stem}_T", Field(grid, oc.first["T"], "K"), value_range=vr)
        w.field(f"{stem}_a1", Field(grid, oc.first["a1"]), palette="grey")
        w.field(f"{stem}_a2", Field(grid, oc.first["a2"]), palette="grey")


# ---------------------------------------------------------------------------
# experiments


def run_single(cfg: ExperimentConfig, *, algorithms=None, jobs: int = 1, out=None) -> RunRecord:
    """Every configured phantom, every seed, one algorithm (or several).

    ``out=None`` writes under ``cfg.output.directory``; ``out=False`` writes
    nothing.
    """
    algos = [cfg.algo] if algorithms is None else [Algorithm.parse(a) for a in algorithms]
    tasks = [BatchTask.from_config(cfg, ph, a, keep_first=cfg.output.fields)
             for a in algos for ph in cfg.phantom.phantoms()]
    t0 = time.perf_counter()
    outcomes = run_tasks(tasks, jobs)
    records = [r for oc in outcomes for r in oc.records]
    timing = {"total": time.perf_counter() - t0}
    timing.update({f"{t.phantom.name}_{t.algorithm.value}": oc.wall_time for t, oc in zip(tasks, outcomes)})
    rec = RunRecord(cfg, records, timing)
    w = _Writer(_output_dir(cfg, out))
    if w:
        w.csv("metrics.csv", _SEED_HEADER, _seed_rows(records))
        w.csv("blobs.csv", _BLOB_HEADER, _blob_rows(records))
        w.csv("summary.csv", _summary_header(("phantom", "algorithm")), _summary_rows(rec.groups()))
        _write_fields(w, cfg, tasks, outcomes)
        rec.artifacts = w.finish(cfg, timing)
    return rec


@dataclass(eq=False)
class SweepResult:
    """Mean metrics per sweep cell and phantom.

    ``cells`` lists the swept parameter tuples in grid order;
    ``reports[(phantom, cell_index)]`` holds the per-seed reports.
    """

    parameters: tuple[str, ...]
    cells: list[tuple[float, ...]]
    phantoms: list[str]
    reports: dict[tuple[str, int], list[MetricReport]]
    timing: dict[str, float] = field(default_factory=dict)
    artifacts: list[Path] = field(default_factory=list)

    def mean(self, metric: str = "ie") -> np.ndarray:
        """``(n_phantoms, n_cells)`` array of seed means."""
        return np.array([[aggregate(self.reports[(p, k)])[metric][0] for k in range(len(self.cells))]
                         for p in self.phantoms])

    def argmin(self, metric: str = "ie") -> dict[str, tuple[tuple[float, ...], float]]:
        m = self.mean(metric)
        out = {}
        for i, p in enumerate(self.phantoms):
            k = int(np.argmin(m[i]))
            out[p] = (self.cells[k], float(m[i, k]))
        return out


def _sweep(cfg: ExperimentConfig, algo: Algorithm, parameters: tuple[str, ...], cells, make_solver,
           jobs: int) -> tuple[SweepResult, list[BatchTask], list[BatchOutcome]]:
    phantoms = cfg.phantom.phantoms()
    tasks = [BatchTask.from_config(cfg, ph, algo, solver=make_solver(cell)) for cell in cells for ph in phantoms]
    t0 = time.perf_counter()
    outcomes = run_tasks(tasks, jobs)
    names = [p.name for p in phantoms]
    reports = {}
    it = iter(outcomes)
    for k in range(len(cells)):
        for name in names:
            reports[(name, k)] = [r.report for r in next(it).records]
    res = SweepResult(parameters, list(cells), names, reports, {"total": time.perf_counter() - t0})
    return res, tasks, outcomes


def _sweep_seed_rows(res: SweepResult, tasks, outcomes):
    for task, oc in zip(tasks, outcomes):
        cell = tuple(getattr(task.solver, p) for p in res.parameters)
        for r in oc.records:
            yield (*cell, r.phantom, r.seed, *r.report.row(), r.converged, r.iterations)


def _sweep_table_rows(res: SweepResult):
    for k, cell in enumerate(res.cells):
        for p in res.phantoms:
            agg = aggregate(res.reports[(p, k)])
            yield (*cell, p, len(res.reports[(p, k)]), agg["ie"][0], agg["ie"][1])


def run_lambda_sweep(cfg: ExperimentConfig, lambdas=None, *, jobs: int = 1, out=None) -> SweepResult:
    """Mean IE of SART per lambda and phantom; argmin per phantom."""
    lambdas = cfg.sweep.lambda_values if lambdas is None else tuple(float(v) for v in lambdas)
    if not lambdas:
        raise ConfigurationError("lambda grid must not be empty")
    res, tasks, outcomes = _sweep(cfg, Algorithm.SART, ("lam",), [(v,) for v in lambdas],
                                  lambda c: dataclasses.replace(cfg.sart, lam=c[0]), jobs)
    w = _Writer(_output_dir(cfg, out))
    if w:
        w.csv("sweep_lambda.csv", ("lam", "phantom", "n_seeds", "mean_ie", "std_ie"), _sweep_table_rows(res))
        w.csv("sweep_lambda_seeds.csv", ("lam", "phantom", "seed", *METRICS, "converged", "iterations"),
              _sweep_seed_rows(res, tasks, outcomes))
        w.csv("sweep_lambda_argmin.csv", ("phantom", "lam", "mean_ie"),
              ((p, c[0], v) for p, (c, v) in res.argmin().items()))
        m = res.mean("ie")
        w.text("sweep_lambda.svg", artifacts.svg_line_plot(
            {p: (lambdas, m[i]) for i, p in enumerate(res.phantoms)}, title="SART: mean IE against lambda",
            xlabel="lambda", ylabel="IE", xlog=True))
        res.artifacts = w.finish(cfg, res.timing)
    return res


def run_gamma_mu_sweep(cfg: ExperimentConfig, gammas=None, mus=None, *, jobs: int = 1, out=None) -> SweepResult:
    """Mean IE of RETRO on the (gamma, mu) grid; cells are ordered gamma-major."""
    gammas = cfg.sweep.gamma_values if gammas is None else tuple(float(v) for v in gammas)
    mus = cfg.sweep.mu_values if mus is None else tuple(float(v) for v in mus)
    if not gammas or not mus:
        raise ConfigurationError("gamma and mu grids must not be empty")
    cells = [(g, m) for g in gammas for m in mus]
    res, tasks, outcomes = _sweep(cfg, Algorithm.RETRO, ("gamma", "mu"), cells,
                                  lambda c: dataclasses.replace(cfg.retro, gamma=c[0], mu=c[1]), jobs)
    w = _Writer(_output_dir(cfg, out))
    if w:
        w.csv("sweep_gamma_mu.csv", ("gamma", "mu", "phantom", "n_seeds", "mean_ie", "std_ie"),
              _sweep_table_rows(res))
        w.csv("sweep_gamma_mu_seeds.csv", ("gamma", "mu", "phantom", "seed", *METRICS, "converged", "iterations"),
              _sweep_seed_rows(res, tasks, outcomes))
        w.csv("sweep_gamma_mu_argmin.csv", ("phantom", "gamma", "mu", "mean_ie"),
              ((p, *c, v) for p, (c, v) in res.argmin().items()))
        m = res.mean("ie")
        for i, p in enumerate(res.phantoms):
            w.text(f"sweep_gamma_mu_{p}.svg", artifacts.svg_heatmap(
                m[i].reshape(len(gammas), len(mus)), mus, gammas, title=f"RETRO: mean IE, {p}",
                xlabel="mu", ylabel="gamma"))
        res.artifacts = w.finish(cfg, res.timing)
    return res


@dataclass(eq=False)
class SnrSweepResult:
    snrs: tuple[float, ...]
    algorithms: tuple[str, ...]
    phantoms: list[str]
    #: ``records[(snr, algorithm, phantom)]`` in seed order
    records: dict[tuple[float, str, str], list[SeedRecord]]
    timing: dict[str, float] = field(default_factory=dict)
    artifacts: list[Path] = field(default_factory=list)

    def phantom_mean(self, snr: float, algorithm: str, phantom: str, metric: str) -> float:
        return aggregate([r.report for r in self.records[(snr, algorithm, phantom)]])[metric][0]

    def mean(self, snr: float, algorithm: str, metric: str) -> float:
        """Metric averaged over all phantoms and seeds at one SNR."""
        reps = [r.report for p in self.phantoms for r in self.records[(snr, algorithm, p)]]
        return aggregate(reps)[metric][0]


def run_snr_sweep(cfg: ExperimentConfig, snrs=None, *, jobs: int = 1, out=None) -> SnrSweepResult:
    """Both algorithms over an SNR grid; each metric averaged over phantoms and seeds."""
    snrs = cfg.sweep.snr_values if snrs is None else tuple(float(v) for v in snrs)
    if not snrs:
        raise ConfigurationError("SNR grid must not be empty")
    algos = (Algorithm.SART, Algorithm.RETRO)
    phantoms = cfg.phantom.phantoms()
    tasks = [BatchTask.from_config(cfg, ph, a, snr_db=s) for s in snrs for a in algos for ph in phantoms]
    t0 = time.perf_counter()
    outcomes = run_tasks(tasks, jobs)
    records = {(t.snr_db, t.algorithm.value, t.phantom.name): oc.records for t, oc in zip(tasks, outcomes)}
    res = SnrSweepResult(tuple(snrs), tuple(a.value for a in algos), [p.name for p in phantoms], records,
                         {"total": time.perf_counter() - t0})
    w = _Writer(_output_dir(cfg, out))
    if w:
        w.csv("sweep_snr.csv", ("snr_db", "algorithm", *METRICS),
              ((s, a, *(res.mean(s, a, m) for m in METRICS)) for s in snrs for a in res.algorithms))
        w.csv("sweep_snr_phantoms.csv", _summary_header(("snr_db", "algorithm", "phantom")),
              _summary_rows(records))
        w.csv("sweep_snr_seeds.csv", _SEED_HEADER, _seed_rows([r for v in records.values() for r in v]))
        for m in METRICS:
            series = {a: (snrs, [res.mean(s, a, m) for s in snrs]) for a in res.algorithms}
            w.text(f"sweep_snr_{m}.svg", artifacts.svg_line_plot(
                series, title=f"{m.upper()} against SNR", xlabel="SNR [dB]", ylabel=m.upper()))
        res.artifacts = w.finish(cfg, res.timing)
    return res
