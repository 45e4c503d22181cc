"""Command line entry point: ``mflab {run,check,admissible,sard,sweep} CONFIG``.

Exit codes: 0 success, 1 configuration error, 2 non-finite state, 3 failed check.
``MFLAB_OUT`` overrides the configured output directory.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import diagnostics, flow, params
from .checks import run_checks
from .config import ConfigError, ExperimentConfig, load_config, sweep_cells, with_seed
from .data import admissible
from .field import PotentialField, cone_sphere_grid, load_grid_csv
from .loss import MBRNotAttainedError, mbr_estimate

EXIT_OK, EXIT_CONFIG, EXIT_NONFINITE, EXIT_CHECK = 0, 1, 2, 3
MBR_STREAM = 7919
SARD_STREAM = 3

log = logging.getLogger("mflab")


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(os.environ.get("MFLAB_OUT") or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.grid_file:
        grid = load_grid_csv(cfg.grid_file)
        if grid.shape[1] != cfg.dim + 2:
            raise ConfigError(f"probe grid has {grid.shape[1]} columns, expected {cfg.dim + 2}")
        return grid
    return cone_sphere_grid(cfg.grid_size, cfg.dim, cfg.grid_seed)


def _initial(cfg: ExperimentConfig) -> params.Ensemble:
    if cfg.init_file:
        e = params.read_ensemble_csv(cfg.init_file, cfg.init_seed)
        if e.dim != cfg.dim:
            raise ConfigError(f"{cfg.init_file}: ensemble dimension {e.dim} != data dim {cfg.dim}")
        return e
    return params.init_omni(cfg.m, cfg.dim, cfg.init_seed)


def _mbr(cfg: ExperimentConfig):
    try:
        return mbr_estimate(cfg.loss, cfg.model, cfg.mbr_samples, MBR_STREAM)
    except (MBRNotAttainedError, ValueError) as err:
        log.warning("MBR unavailable: %s", err)
        return float("nan"), float("nan")


def execute(cfg: ExperimentConfig, out: Path, perturb: float = 0.0) -> int:
    """Run one experiment and write its four output files."""
    fcfg = replace(cfg.flow, perturb_gradient=perturb) if perturb else cfg.flow
    e0 = _initial(cfg)
    rec = flow.run(e0, fcfg, cfg.model, cfg.loss, _grid(cfg), cfg.activation)
    rec.write_csv(out / "trajectory.csv")
    params.write_ensemble_csv(rec.final, out / "final_ensemble.csv")
    mbr, mbr_se = _mbr(cfg)
    report = diagnostics.convergence_report(rec, mbr, mbr_se)
    if rec.aborted:
        params.write_ensemble_csv(rec.final, out / "nonfinite_dump.csv")
        report.verdict = "inconclusive"
    report.write_csv(out / "report.csv")
    diagnostics.write_verdict(out / "verdict.txt", report.verdict)
    if rec.aborted:
        log.error("run aborted: %s (state dumped to %s)", rec.message, out / "nonfinite_dump.csv")
        return EXIT_NONFINITE
    print(f"verdict={report.verdict}")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> int:
    return execute(cfg, _output_dir(cfg), args.perturb_gradient)


def cmd_check(cfg: ExperimentConfig, args) -> int:
    results = run_checks(cfg, args.perturb_gradient)
    out = _output_dir(cfg)
    with open(out / "checks.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "passed", "value", "tolerance"])
        for r in results:
            print(r.line())
            writer.writerow([r.name, int(r.passed), f"{r.value:.17g}", f"{r.tolerance:.17g}"])
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} invariants passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_admissible(cfg: ExperimentConfig, args) -> int:
    rep = admissible(cfg.model, pairs=args.pairs, n=args.samples)
    out = _output_dir(cfg)
    with open(out / "admissible.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "ratio_max"])
        for delta, ratio in rep.rows():
            writer.writerow([f"{delta:.17g}", f"{ratio:.17g}"])
    print(f"{'delta':>10} {'ratio_max':>12}")
    for delta, ratio in rep.rows():
        print(f"{delta:10.3g} {ratio:12.6g}")
    print(f"variation={rep.variation:.4g} growth_per_decade={rep.growth_per_decade:.4g}")
    print(f"verdict={rep.verdict}")
    return EXIT_OK


def cmd_sard(cfg: ExperimentConfig, args) -> int:
    e = _initial(cfg)
    batch = cfg.model.sample(cfg.flow.eval_size, SARD_STREAM)
    fld = PotentialField.build(e, batch, cfg.loss, cfg.activation)
    rep = diagnostics.sard_probe(fld, _grid(cfg), bins=cfg.sard_bins)
    out = _output_dir(cfg)
    rep.write_csv(out / "sard.csv")
    print(f"identity_residual_max={rep.identity_max:.3e} "
          f"near_critical_threshold={rep.near_critical_threshold:.3e} "
          f"near_critical_total={int(rep.near_critical_counts.sum())}")
    return EXIT_OK


def cmd_sweep(cfg_path: str, args) -> int:
    base = load_config(cfg_path)
    out = Path(os.environ.get("MFLAB_OUT") or base.output)
    out.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(base.sweep)
    status = EXIT_OK
    with open(out / "cells.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell"] + [k for k, _ in base.sweep] + ["exit_code"])
        for i, overrides in enumerate(cells):
            cfg = load_config(cfg_path, overrides)
            if args.seed_override is not None:
                cfg = with_seed(cfg, args.seed_override)
            cell_dir = out / f"cell_{i:03d}"
            cell_dir.mkdir(exist_ok=True)
            code = execute(cfg, cell_dir, args.perturb_gradient)
            writer.writerow([cell_dir.name] + list(overrides.values()) + [code])
            status = max(status, code)
    return status


COMMANDS = {"run": cmd_run, "check": cmd_check, "admissible": cmd_admissible, "sard": cmd_sard}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mflab", description=__doc__.splitlines()[0])
    parser.add_argument("--seed-override", type=int, default=None,
                        help="replace every seed in the config")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    parser.add_argument("--perturb-gradient", type=float, default=0.0, metavar="EPS",
                        help="add EPS*theta to the velocity (test harness only)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "check", "admissible", "sard", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("config")
        if name == "admissible":
            p.add_argument("--pairs", type=int, default=64)
            p.add_argument("--samples", type=int, default=200_000)
    return parser


def _thread_limit(threads: Optional[int]):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    with _thread_limit(args.threads):
        try:
            if args.command == "sweep":
                return cmd_sweep(args.config, args)
            cfg = load_config(args.config)
            if args.seed_override is not None:
                cfg = with_seed(cfg, args.seed_override)
            return COMMANDS[args.command](cfg, args)
        except ConfigError as err:
            print(f"config error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        except flow.NonFiniteStateError as err:
            print(f"non-finite state: {err}", file=sys.stderr)
            return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
