"""Command-line entry point: ``slsloc <subcommand> --config cfg.toml --out out.csv``.

Exit status: 0 success, 1 bad configuration, 2 I/O error, 3 calibration failure.
The worker count for grid sweeps comes from ``SLSLOC_WORKERS`` (default: all CPUs).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

import numpy as np

from .arraymodel import sls_beam_set
from .config import ConfigError, SimulationConfig, load_config
from .simharness import (
    crlb_field,
    median_rmse,
    nlse_rmse_field,
    rss_max_field,
    sweep_over_n,
    write_cdf_csv,
    write_summary_csv,
)

log = logging.getLogger("slsloc")

SUBCOMMANDS = ("rss-map", "crlb-map", "nlse-map", "sweep-n", "cdf", "calibrate")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_CALIBRATION = 3

CALIBRATION_TARGETS = {4: 0.74, 8: 0.11}
CALIBRATION_TOLERANCE = 0.15
# sigma_db candidates, 0.001 dB .. 100 dB
CALIBRATION_GRID = np.geomspace(1e-3, 1e2, 5001)


class CalibrationError(RuntimeError):
    pass


def calibrate_sigma(cfg: SimulationConfig, targets=None, tolerance=CALIBRATION_TOLERANCE, grid=None):
    """Pick sigma_db on a log grid minimising the worst relative error of the median CRLB.

    The CRLB is linear in sigma, so each N is evaluated once at unit sigma.
    Returns ``(sigma, rows, ok)`` with one ``(n, target, achieved, rel_error)`` row per N.
    """
    targets = CALIBRATION_TARGETS if targets is None else targets
    grid = CALIBRATION_GRID if grid is None else np.asarray(grid, dtype=float)
    unit = {}
    for n, target in targets.items():
        arr = replace(cfg.array, n_elements=n)
        f = crlb_field(cfg.room, arr, sls_beam_set(arr), cfg.link, 1.0, cfg.threshold_dbm, cfg.simulation.crlb_mask)
        unit[n] = median_rmse(f)
        log.info("N=%d unit-sigma median CRLB %.6g m", n, unit[n])
    if not all(np.isfinite(m) for m in unit.values()):
        raise CalibrationError(f"median CRLB unbounded at unit sigma: {unit}")
    ns = sorted(targets)
    achieved = np.outer(grid, [unit[n] for n in ns])
    tgt = np.array([targets[n] for n in ns])
    worst = np.max(np.abs(achieved - tgt) / tgt, axis=1)
    k = int(np.argmin(worst))
    sigma = float(grid[k])
    rows = [(n, targets[n], sigma * unit[n], (sigma * unit[n] - targets[n]) / targets[n]) for n in ns]
    return sigma, rows, bool(worst[k] <= tolerance)


def _write_calibration(path, sigma, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma_db", "n", "target_m", "achieved_m", "rel_error"])
        for n, target, got, rel in rows:
            w.writerow([f"{sigma:.9g}", n, f"{target:.9g}", f"{got:.9g}", f"{rel:.9g}"])


def run_subcommand(name: str, cfg: SimulationConfig, out) -> int:
    if name not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {name!r}")
    try:
        # fail on an unwritable path before any long computation
        open(out, "w").close()
        return _dispatch(name, cfg, out)
    except OSError as exc:
        print(f"slsloc: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_IO


def _dispatch(name: str, cfg: SimulationConfig, out) -> int:
    beams = sls_beam_set(cfg.array)
    sim = cfg.simulation
    if name == "rss-map":
        rss_max_field(cfg.room, cfg.array, beams, cfg.link).write_csv(out)
    elif name == "crlb-map":
        crlb_field(cfg.room, cfg.array, beams, cfg.link, cfg.sigma_db, cfg.threshold_dbm, sim.crlb_mask).write_csv(out)
    elif name == "nlse-map":
        nlse_rmse_field(cfg.room, cfg.array, beams, cfg.link, cfg.sigma_db, cfg.threshold_dbm, sim.trials,
                        sim.master_seed, cfg.estimator, min_detected=sim.min_detected_beams).write_csv(out)
    elif name in ("sweep-n", "cdf"):
        summaries = sweep_over_n(cfg.room, cfg.link, cfg.sigma_db, cfg.threshold_dbm, sim.n_list, sim.trials,
                                 sim.master_seed, cfg.estimator, array=cfg.array,
                                 min_detected=sim.min_detected_beams, mask_mode=sim.crlb_mask)
        (write_summary_csv if name == "sweep-n" else write_cdf_csv)(summaries, out)
    else:
        try:
            sigma, rows, ok = calibrate_sigma(cfg)
        except CalibrationError as exc:
            print(f"slsloc: calibration failed: {exc}", file=sys.stderr)
            return EXIT_CALIBRATION
        _write_calibration(out, sigma, rows)
        if not ok:
            for n, target, got, rel in rows:
                print(f"slsloc: N={n} target {target:g} m achieved {got:.4g} m ({rel:+.1%})", file=sys.stderr)
            print(f"slsloc: no sigma_db within {CALIBRATION_TOLERANCE:.0%} of every target", file=sys.stderr)
            return EXIT_CALIBRATION
        log.info("calibrated sigma_db = %.6g", sigma)
    return EXIT_OK


def apply_overrides(cfg: SimulationConfig, seed=None, n=None, subcommand=None) -> SimulationConfig:
    """``--seed`` sets the master seed; ``--n`` sets the array size (and the N list for sweeps)."""
    if seed is not None:
        cfg = replace(cfg, simulation=replace(cfg.simulation, master_seed=seed))
    if n is not None:
        cfg = replace(cfg, array=replace(cfg.array, n_elements=n))
        if subcommand in ("sweep-n", "cdf"):
            cfg = replace(cfg, simulation=replace(cfg.simulation, n_list=(n,)))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slsloc", description="SLS-based RSS localization bounds and estimator sweeps.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="TOML configuration file (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, help="override simulation.master_seed")
    p.add_argument("--n", type=int, help="override array.n_elements")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else SimulationConfig()
        cfg = apply_overrides(cfg, args.seed, args.n, args.subcommand)
    except OSError as exc:
        print(f"slsloc: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"slsloc: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_subcommand(args.subcommand, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
