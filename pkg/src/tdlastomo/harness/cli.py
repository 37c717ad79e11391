"""``tdlastomo`` command line.

Exit codes: 0 success, 2 configuration or input error, 3 solver
non-convergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from ..errors import ArtifactIOError, ConvergenceError, TomographyError
from ..geometry import beams_table, enumerate_beams, render_layout_svg
from ..metrics import evaluate
from ..phantom import MeasurementSet, add_noise, sample_field
from ..solvers.pipeline import solve_full_pipeline
from . import artifacts
from .config import ExperimentConfig, load_config
from .runner import METRICS, clean_measurements, operators, run_gamma_mu_sweep, run_lambda_sweep, \
    run_single, run_snr_sweep, transition_pair

log = logging.getLogger("tdlastomo")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="experiment configuration (TOML)")
    p.add_argument("--out", type=Path, help="output directory (default: output.directory)")
    p.add_argument("--algo", choices=["SART", "RETRO", "sart", "retro"], help="reconstruction algorithm")
    p.add_argument("--snr-db", type=float, help="noise level in dB ('inf' for noiseless)")
    p.add_argument("--seed", type=int, help="run this single noise seed")
    p.add_argument("--phantom", action="append", help="phantom name (repeatable)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdlastomo", description="Two-line TDLAS tomography experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "phantom": "write true temperature and mole-fraction fields",
        "project": "write noiseless and noisy measurement CSVs",
        "reconstruct": "reconstruct one measurement set and write the fields",
        "metrics": "reconstruct every phantom and seed and write metric tables",
        "sweep-lambda": "SART IE against the Tikhonov weight",
        "sweep-gamma-mu": "RETRO IE on the (gamma, mu) grid",
        "sweep-snr": "all metrics of both algorithms against SNR",
        "render-layout": "SVG drawing of the beam layout",
        "render-field": "render a field CSV as a PGM/PPM image",
    }
    cmds = {name: sub.add_parser(name, help=h, description=h) for name, h in helps.items()}
    for p in cmds.values():
        _common(p)
    cmds["reconstruct"].add_argument("--measurements", type=Path,
                                     help="measurement CSV; default simulates the first configured phantom")
    cmds["metrics"].add_argument("--field", type=Path, help="evaluate this temperature CSV instead")
    cmds["render-field"].add_argument("field", type=Path, help="field CSV written by this tool")
    cmds["render-field"].add_argument("--palette", choices=artifacts.PALETTES, default="heat")
    cmds["render-field"].add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    cmds["render-field"].add_argument("--image", type=Path, help="output image path")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.algo:
        cfg = cfg.override("algorithm", name=args.algo.upper())
    if args.snr_db is not None:
        cfg = cfg.override("noise", snr_db=args.snr_db)
    if args.seed is not None:
        cfg = cfg.override("noise", seeds=(args.seed,))
    if args.phantom:
        cfg = cfg.override("phantom", names=tuple(args.phantom))
    return cfg


def _out(args, cfg: ExperimentConfig) -> Path:
    return Path(cfg.output.directory) if args.out is None else args.out


def _grid(cfg):
    return operators(cfg.geometry, cfg.grid.pixel_size).grid


def cmd_phantom(args, cfg):
    out = _out(args, cfg)
    grid = _grid(cfg)
    paths = []
    for ph in cfg.phantom.phantoms():
        T, X = sample_field(ph, grid)
        for stem, f, pal in ((f"{ph.name}_T", T, "heat"), (f"{ph.name}_X", X, "grey")):
            paths.append(artifacts.write_field_csv(out / f"{stem}.csv", f))
            img = artifacts.render_field(f, pal, out / (stem + (".ppm" if pal == "heat" else ".pgm")))
            paths += [img, img.with_suffix(".range.txt")]
        print(f"{ph.name}: T in [{T.values.min():.2f}, {T.values.max():.2f}] K")
    artifacts.write_manifest(out, paths)


def cmd_project(args, cfg):
    out = _out(args, cfg)
    paths = []
    for ph in cfg.phantom.phantoms():
        clean = clean_measurements(ph, cfg.geometry, cfg.grid.fine_pixel_size, cfg.grid.pixel_size,
                                   cfg.spectroscopy.constants)
        p = out / f"{ph.name}_clean.csv"
        clean.to_csv(p)
        paths.append(p)
        if math.isinf(cfg.noise.snr_db):
            continue
        for seed in cfg.noise.seed_list():
            p = out / f"{ph.name}_snr{cfg.noise.snr_db:g}_seed{seed}.csv"
            add_noise(clean, cfg.noise.snr_db, seed, cfg.noise.mode).to_csv(p)
            paths.append(p)
    artifacts.write_manifest(out, paths)
    print(f"wrote {len(paths)} measurement files to {out}")


def cmd_reconstruct(args, cfg):
    out = _out(args, cfg)
    ops = operators(cfg.geometry, cfg.grid.pixel_size)
    pair = transition_pair(cfg.spectroscopy.constants)
    if args.measurements is not None:
        try:
            ms = MeasurementSet.from_csv(args.measurements, cfg.geometry)
        except OSError as exc:
            raise ArtifactIOError(f"cannot read {args.measurements}: {exc}") from exc
        stem = args.measurements.stem
    else:
        ph = cfg.phantom.phantoms()[0]
        seed = cfg.noise.seed_list()[0]
        clean = clean_measurements(ph, cfg.geometry, cfg.grid.fine_pixel_size, cfg.grid.pixel_size,
                                   cfg.spectroscopy.constants)
        ms = add_noise(clean, cfg.noise.snr_db, seed, cfg.noise.mode)
        stem = f"{ph.name}_snr{cfg.noise.snr_db:g}_seed{seed}"
    res = solve_full_pipeline(ms, cfg.geometry, ops.grid, pair, cfg.algo, cfg.solver_config(),
                              retrieval=cfg.retrieval, operators=ops)
    stem = f"{stem}_{cfg.algo.value}"
    paths = []
    for suffix, f, pal in (("T", res.temperature, "heat"), ("a1", res.a1, "grey"), ("a2", res.a2, "grey")):
        paths.append(artifacts.write_field_csv(out / f"{stem}_{suffix}.csv", f))
        img = artifacts.render_field(f, pal, out / f"{stem}_{suffix}.{'ppm' if pal == 'heat' else 'pgm'}")
        paths += [img, img.with_suffix(".range.txt")]
    diag = "".join(f"{k} = {v}\n" for k, v in res.diagnostics.items() if k != "wall_time")
    paths.append(artifacts.write_text(out / f"{stem}_diagnostics.txt", diag))
    artifacts.write_manifest(out, paths)
    print(diag, end="")
    if not res.diagnostics["converged"]:
        raise ConvergenceError(f"{cfg.algo.value} did not reach its tolerance")


def _print_table(rec):
    print("phantom    algorithm  " + "  ".join(f"{m:>9}" for m in METRICS))
    for (ph, algo), agg in rec.aggregates.items():
        print(f"{ph:<10} {algo:<10} " + "  ".join(f"{agg[m][0]:9.4f}" for m in METRICS))


def cmd_metrics(args, cfg):
    if args.field is not None:
        grid = _grid(cfg)
        T = artifacts.read_field_csv(args.field, grid, "K")
        ph = cfg.phantom.phantoms()[0]
        rep = evaluate(T, sample_field(ph, grid)[0], ph, r_roi=cfg.metrics.roi_radius,
                       overshoot_mode=cfg.metrics.overshoot_mode)
        print(rep.to_csv(), end="")
        return
    rec = run_single(cfg, jobs=args.jobs, out=_out(args, cfg))
    _print_table(rec)


def cmd_sweep_lambda(args, cfg):
    res = run_lambda_sweep(cfg, jobs=args.jobs, out=_out(args, cfg))
    for ph, ((lam,), ie) in res.argmin().items():
        print(f"{ph}: argmin lambda = {lam:.4g}, mean IE = {ie:.4f}")


def cmd_sweep_gamma_mu(args, cfg):
    res = run_gamma_mu_sweep(cfg, jobs=args.jobs, out=_out(args, cfg))
    for ph, ((g, m), ie) in res.argmin().items():
        print(f"{ph}: argmin gamma = {g:.3g}, mu = {m:.3g}, mean IE = {ie:.4f}")


def cmd_sweep_snr(args, cfg):
    res = run_snr_sweep(cfg, jobs=args.jobs, out=_out(args, cfg))
    print("snr_db  algorithm  " + "  ".join(f"{m:>9}" for m in METRICS))
    for s in res.snrs:
        for a in res.algorithms:
            print(f"{s:6g}  {a:<9}  " + "  ".join(f"{res.mean(s, a, m):9.4f}" for m in METRICS))


def cmd_render_layout(args, cfg):
    out = _out(args, cfg)
    svg = artifacts.write_text(out / "layout.svg", render_layout_svg(cfg.geometry, _grid(cfg)))
    table = artifacts.write_csv(out / "beams.csv", ("beam_index", "angle_deg", "offset_cm"),
                                beams_table(enumerate_beams(cfg.geometry)))
    artifacts.write_manifest(out, [svg, table])
    print(f"wrote {svg} and {table}")


def cmd_render_field(args, cfg):
    field = artifacts.read_field_csv(args.field, _grid(cfg))
    target = args.image or args.field.with_suffix(".ppm" if args.palette == "heat" else ".pgm")
    path = artifacts.render_field(field, args.palette, target, args.range)
    print(f"wrote {path}")


COMMANDS = {
    "phantom": cmd_phantom, "project": cmd_project, "reconstruct": cmd_reconstruct, "metrics": cmd_metrics,
    "sweep-lambda": cmd_sweep_lambda, "sweep-gamma-mu": cmd_sweep_gamma_mu, "sweep-snr": cmd_sweep_snr,
    "render-layout": cmd_render_layout, "render-field": cmd_render_field,
}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, TomographyError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 4
    if isinstance(exc, ValueError):
        return 2
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (TomographyError, OSError, ValueError) as exc:
        print(f"tdlastomo {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
