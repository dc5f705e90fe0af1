"""``fraclod`` command line: one subcommand per experiment kind.

Exit codes: 0 success, 2 invalid config, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .experiments.config import ConfigError, ExperimentConfig, load_config, scaled
from .experiments.drivers import decay_slope, plot_spec, run_experiment, run_mesh_info
from .experiments.output import ResultTable, emit_csv, emit_svg_plot
from .fracture import FractureError
from .interpolation import InterpolationError
from .mesh import MeshError
from .sparse_linalg import LinAlgError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

COMMANDS = {
    "dual-norms": "dual_norm_table",
    "decay": "decay_demo",
    "convergence": "convergence",
    "patch-study": "patch_study",
    "wave": "wave",
    "mesh-info": None,
}

NUMERICAL_ERRORS = (LinAlgError, InterpolationError, FractureError, MeshError, FloatingPointError,
                    ArithmeticError)

log = logging.getLogger("fraclod")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fraclod", description="Multiscale experiments for fractured media.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment JSON file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--scale", type=float, default=None,
                       help="resolution factor in (0, 1]; overrides the config value")
        s.add_argument("--workers", type=int, default=None, help="threads for patch solves")
        s.add_argument("--no-plot", action="store_true", help="skip the SVG plot")
        s.add_argument("--export", action="store_true",
                       help="also write solution vectors as CSV (decay correctors, wave snapshots)")
        s.add_argument("-q", "--quiet", action="store_true")
    return p


def _summary(cfg: ExperimentConfig, table: ResultTable) -> list[str]:
    if cfg.kind != "decay_demo":
        return []
    lo, hi = cfg.decay_layers
    out = []
    for v in dict.fromkeys(table.column("variant")):
        out.append(f"{v}: ln(ring energy) slope over layers {lo}..{hi} = {decay_slope(table, v, lo, hi):.4f}")
    return out


def run(command: str, config: str, out: str, scale: float | None = None, workers: int | None = None,
        plot: bool = True, export: bool = False) -> ResultTable:
    """Load, validate, scale and run; write ``<name>.csv`` (and ``.svg``) into ``out``."""
    cfg = load_config(config)
    kind = COMMANDS[command]
    if kind is not None and cfg.kind != kind:
        raise ConfigError(f"subcommand {command} expects kind {kind!r}, config has {cfg.kind!r}")
    cfg = scaled(cfg, scale)
    if workers is not None:
        if workers < 1:
            raise ConfigError("workers must be positive")
        cfg.workers = workers
    outdir = Path(out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {outdir}: {exc}") from exc
    t0 = time.perf_counter()
    if kind is None:
        table = run_mesh_info(cfg)
        stem = f"{cfg.name}_mesh_info"
    else:
        table = run_experiment(cfg, outdir if export else None)
        stem = cfg.name
    emit_csv(table, outdir / f"{stem}.csv")
    if plot and kind is not None:
        spec = plot_spec(cfg, table)
        emit_svg_plot(table, path=outdir / f"{stem}.svg", title=cfg.name, **spec)
    if kind is not None:
        for line in _summary(cfg, table):
            log.info(line)
    log.info("%s done in %.1fs -> %s", command, time.perf_counter() - t0, outdir / f"{stem}.csv")
    return table


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        run(args.command, args.config, args.out, args.scale, args.workers, plot=not args.no_plot,
            export=args.export)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
