"""Room grid sweeps, Monte-Carlo NLSE trials and summary metrics.

The base station sits at the origin in the middle of one wall; the room spans
``x in [-W/2, W/2]`` and ``y in (0, D]``.  Grid points are cell-centred in x
and sit at ``y = step, 2 step, ..., D``, so no point is closer than one grid
step to the array.

Every random draw is taken from a per-cell stream seeded by
``(master_seed, cell_index)``; trial ``t`` uses row ``t`` of that stream, so
results do not depend on how cells are split across workers.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .arraymodel import ArrayConfig, BeamSet, sls_beam_set
from .estimator import EstimatorConfig, Rect, estimate_batch
from .fisher import crlb_grid
from .rfchannel import LinkBudget, profile_grid

log = logging.getLogger(__name__)

RSS_MAX = "rss_max_dbm"
CRLB = "crlb_m"
NLSE = "nlse_rmse_m"

MASK_DETECTED = "detected"
MASK_ALL = "all"

WORKERS_ENV = "SLSLOC_WORKERS"

# cells per estimator batch; bounds the (trials x scan points) cost matrix
_CHUNK_CELLS = 8


@dataclass(frozen=True)
class RoomSpec:
    width: float = 8.0
    depth: float = 8.0
    grid_step: float = 0.1

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"width must be > 0, got {self.width!r}")
        if not self.depth > 0:
            raise ValueError(f"depth must be > 0, got {self.depth!r}")
        if not 0 < self.grid_step <= min(self.width, self.depth):
            raise ValueError(f"grid_step must be in (0, min(width, depth)], got {self.grid_step!r}")

    @property
    def shape(self) -> tuple[int, int]:
        """``(ny, nx)``."""
        return int(round(self.depth / self.grid_step)), int(round(self.width / self.grid_step))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.shape
        xs = -self.width / 2 + (np.arange(nx) + 0.5) * self.grid_step
        ys = (np.arange(ny) + 1) * self.grid_step
        return xs, ys

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid ``(X, Y)`` of shape ``(ny, nx)``; row-major by y then x."""
        xs, ys = self.axes()
        return np.meshgrid(xs, ys)

    def region(self) -> Rect:
        return Rect(-self.width / 2, self.width / 2, 0.0, self.depth)


@dataclass
class FieldMap:
    room: RoomSpec
    values: np.ndarray
    kind: str
    unbounded: np.ndarray
    localization_rate: np.ndarray | None = None

    def __post_init__(self):
        if self.values.shape != self.room.shape or self.unbounded.shape != self.room.shape:
            raise ValueError("field shape does not match the room grid")

    def cell_values(self) -> np.ndarray:
        """Flattened values with unbounded cells as ``+inf``."""
        return np.where(self.unbounded, np.inf, self.values).ravel()

    def write_csv(self, path) -> None:
        xs, ys = self.room.axes()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "value", "unbounded"])
            for j, y in enumerate(ys):
                for i, x in enumerate(xs):
                    w.writerow([f"{x:.9g}", f"{y:.9g}", f"{self.values[j, i]:.9g}", int(self.unbounded[j, i])])


@dataclass
class MetricsSummary:
    n_elements: int
    variant: str
    median_rmse_m: float
    one_meter_coverage_pct: float
    coverage_probability: float
    cdf: list[tuple[float, float]] = field(default_factory=list)


# -- fields -----------------------------------------------------------------


def rss_max_field(room: RoomSpec, array: ArrayConfig, beams: BeamSet, link: LinkBudget) -> FieldMap:
    x, y = room.grid()
    vals = profile_grid(x, y, array, beams, link).max(axis=-1)
    return FieldMap(room, vals, RSS_MAX, np.zeros(vals.shape, dtype=bool))


def crlb_field(
    room: RoomSpec,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    sigma_db: float,
    threshold_dbm: float = -80.0,
    mask_mode: str = MASK_DETECTED,
) -> FieldMap:
    """CRLB over the room; ``detected`` mode keeps beams whose noiseless RSS clears the threshold."""
    x, y = room.grid()
    if mask_mode == MASK_DETECTED:
        mask = profile_grid(x, y, array, beams, link) >= threshold_dbm
    elif mask_mode == MASK_ALL:
        mask = None
    else:
        raise ValueError(f"unknown mask mode {mask_mode!r}")
    vals = crlb_grid(x, y, array, beams, sigma_db, mask)
    return FieldMap(room, vals, CRLB, ~np.isfinite(vals))


def cell_noise(master_seed: int, cell_index: int, trials: int, n: int) -> np.ndarray:
    """Standard-normal draws ``(trials, n)`` for one cell."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(cell_index,))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal((trials, n))


def _nlse_cells(args):
    (cells, xs, ys, array, beams, link, sigma_db, threshold_dbm, trials, master_seed, est_cfg, region, min_detected) = args
    n = array.n_elements
    p = profile_grid(xs, ys, array, beams, link)
    noise = np.stack([cell_noise(master_seed, int(c), trials, n) for c in cells])
    s = p[:, None, :] + sigma_db * noise
    det = s >= threshold_dbm
    localized = det.sum(-1) >= min_detected
    s2 = s.reshape(-1, n)
    d2 = det.reshape(-1, n)
    ok = localized.ravel()
    ex = np.full(ok.size, np.nan)
    ey = np.full(ok.size, np.nan)
    if ok.any():
        rx, ry, *_ = estimate_batch(s2[ok], d2[ok], array, beams, link, est_cfg, region)
        ex[ok], ey[ok] = rx, ry
    err2 = ((ex - np.repeat(xs, trials)) ** 2 + (ey - np.repeat(ys, trials)) ** 2).reshape(len(cells), trials)
    rate = localized.mean(axis=1)
    with np.errstate(invalid="ignore"):
        rmse = np.sqrt(np.nansum(np.where(localized, err2, np.nan), axis=1) / localized.sum(axis=1))
    return rmse, rate


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def nlse_rmse_field(
    room: RoomSpec,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    sigma_db: float,
    threshold_dbm: float,
    trials: int,
    master_seed: int,
    est_cfg: EstimatorConfig,
    min_detected: int = 2,
    workers: int | None = None,
) -> FieldMap:
    """Per-cell RMSE of the NLSE over localized trials.

    A trial is localized when at least ``min_detected`` beams clear the
    threshold.  Cells localized in fewer than half their trials are unbounded.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x, y = room.grid()
    xf, yf = x.ravel(), y.ravel()
    region = room.region()
    jobs = []
    for start in range(0, xf.size, _CHUNK_CELLS):
        cells = np.arange(start, min(start + _CHUNK_CELLS, xf.size))
        jobs.append((cells, xf[cells], yf[cells], array, beams, link, sigma_db, threshold_dbm,
                     trials, master_seed, est_cfg, region, min_detected))
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_nlse_cells, jobs, chunksize=4))
    else:
        parts = [_nlse_cells(j) for j in jobs]
    rmse = np.concatenate([p[0] for p in parts]).reshape(room.shape)
    rate = np.concatenate([p[1] for p in parts]).reshape(room.shape)
    unbounded = rate < 0.5
    return FieldMap(room, rmse, NLSE, unbounded, localization_rate=rate)


# -- metrics ----------------------------------------------------------------


def median_rmse(field_map: FieldMap) -> float:
    """Median over all cells; unbounded cells count as ``+inf``."""
    return float(np.median(field_map.cell_values()))


def error_bound_coverage(field_map: FieldMap, bound_m: float = 1.0) -> float:
    v = field_map.cell_values()
    return 100.0 * float(np.count_nonzero(np.isfinite(v) & (v <= bound_m))) / v.size


def rmse_cdf(field_map: FieldMap) -> list[tuple[float, float]]:
    """Empirical CDF over cells as ``(error, P(RMSE <= error))`` steps.

    Unbounded cells are part of the denominator but never of the numerator,
    so the curve plateaus at the coverage probability.
    """
    v = field_map.cell_values()
    finite = np.sort(v[np.isfinite(v)])
    if finite.size == 0:
        return []
    uniq, idx = np.unique(finite, return_index=True)
    counts = np.append(idx[1:], finite.size)
    return [(float(e), float(c) / v.size) for e, c in zip(uniq, counts)]


def cdf_at(cdf: list[tuple[float, float]], error_m: float) -> float:
    prob = 0.0
    for e, p in cdf:
        if e > error_m:
            break
        prob = p
    return prob


def summarize(field_map: FieldMap, n_elements: int, variant: str) -> MetricsSummary:
    cdf = rmse_cdf(field_map)
    return MetricsSummary(
        n_elements=n_elements,
        variant=variant,
        median_rmse_m=median_rmse(field_map),
        one_meter_coverage_pct=error_bound_coverage(field_map, 1.0),
        coverage_probability=cdf[-1][1] if cdf else 0.0,
        cdf=cdf,
    )


def sweep_over_n(
    room: RoomSpec,
    link: LinkBudget,
    sigma_db: float,
    threshold_dbm: float,
    n_list,
    trials: int,
    master_seed: int,
    est_cfg: EstimatorConfig,
    array: ArrayConfig | None = None,
    min_detected: int = 2,
    workers: int | None = None,
    mask_mode: str = MASK_DETECTED,
) -> list[MetricsSummary]:
    """CRLB and NLSE summaries for each array size, in ``n_list`` order."""
    if not list(n_list):
        raise ValueError("n_list must be non-empty")
    base = array or ArrayConfig()
    out = []
    for n in n_list:
        arr = replace(base, n_elements=int(n))
        beams = sls_beam_set(arr)
        crlb = crlb_field(room, arr, beams, link, sigma_db, threshold_dbm, mask_mode)
        out.append(summarize(crlb, int(n), "crlb"))
        nlse = nlse_rmse_field(room, arr, beams, link, sigma_db, threshold_dbm, trials, master_seed,
                               est_cfg, min_detected=min_detected, workers=workers)
        out.append(summarize(nlse, int(n), "nlse"))
        log.info("N=%d crlb median %.4g m, nlse median %.4g m", n, out[-2].median_rmse_m, out[-1].median_rmse_m)
    return out


def write_summary_csv(summaries: list[MetricsSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "variant", "median_rmse_m", "one_meter_coverage_pct", "coverage_probability"])
        for m in summaries:
            w.writerow([m.n_elements, m.variant, f"{m.median_rmse_m:.9g}",
                        f"{m.one_meter_coverage_pct:.9g}", f"{m.coverage_probability:.9g}"])


def write_cdf_csv(summaries: list[MetricsSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "variant", "error_m", "probability"])
        for m in summaries:
            for e, p in m.cdf:
                w.writerow([m.n_elements, m.variant, f"{e:.9g}", f"{p:.9g}"])
