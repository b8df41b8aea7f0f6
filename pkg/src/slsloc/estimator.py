"""Nonlinear least-squares position estimate from a truncated sweep.

The cost is ``sum_i (s_i - p_i(x, y))^2`` over detected beams only.  Two update
rules are available:

``gauss-newton-damped``
    Levenberg-Marquardt style step ``(H^T H + mu diag(H^T H))^-1 H^T r``;
    ``mu`` halves on an accepted step and quadruples on a rejected one.
    Convergence is declared when the undamped step ``(H^T H)^-1 H^T r`` is
    shorter than the step tolerance.
``paper-newton``
    The literal update ``x <- x - H^T (s - p(x))``.  It has no curvature
    scaling and its sign ascends the cost, so it is kept for comparison only.

Every iterate is clamped to the search rectangle.  The solver works on a batch
of independent problems at once; the single-problem functions are thin
wrappers over the batch engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .arraymodel import ArrayConfig, BeamSet
from .fisher import profile_and_jacobian
from .rfchannel import LinkBudget, ObservationVector, Position, profile_grid

GAUSS_NEWTON = "gauss-newton-damped"
PAPER_NEWTON = "paper-newton"

_MIN_RANGE = 1e-3
_MAX_SINGULAR_RETRIES = 10
_SINGULAR_RTOL = 1e-12
_TIE_TOL = 1e-9
_REFINE_LEVELS = 2
_REFINE_POINTS = 33


class UnlocalizableError(ValueError):
    """No beam cleared the detection threshold."""


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = GAUSS_NEWTON
    max_iterations: int = 100
    step_tolerance: float = 1e-4
    damping_initial: float = 1e-2
    scan_points: int = 1024
    n_starts: int = 4

    def __post_init__(self):
        if self.method not in (GAUSS_NEWTON, PAPER_NEWTON):
            raise ValueError(f"method must be {GAUSS_NEWTON!r} or {PAPER_NEWTON!r}, got {self.method!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.step_tolerance > 0:
            raise ValueError("step_tolerance must be > 0")
        if self.scan_points < 3:
            raise ValueError("scan_points must be >= 3")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not self.damping_initial > 0:
            raise ValueError("damping_initial must be > 0")


@dataclass(frozen=True)
class Rect:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("search region must be non-empty")

    def clamp(self, x, y):
        return np.clip(x, self.xmin, self.xmax), np.clip(y, max(self.ymin, _MIN_RANGE), self.ymax)

    def seeds(self, per_axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centred ``per_axis x per_axis`` grid, row-major in y then x."""
        fx = (np.arange(per_axis) + 0.5) / per_axis
        gx = self.xmin + fx * (self.xmax - self.xmin)
        gy = self.ymin + fx * (self.ymax - self.ymin)
        yy, xx = np.meshgrid(gy, gx, indexing="ij")
        return xx.ravel(), yy.ravel()


@dataclass(frozen=True)
class EstimatorResult:
    estimate: Position
    iterations: int
    converged: bool
    residual_norm: float
    detected_count: int


@dataclass
class BatchSolution:
    x: np.ndarray
    y: np.ndarray
    cost: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    damping: np.ndarray


def _residual_and_jacobian(x, y, s, w, array, beams, link):
    p, hx, hy, _ = profile_and_jacobian(x, y, array, beams, link)
    r = np.where(w, s - p, 0.0)
    return r, np.where(w, hx, 0.0), np.where(w, hy, 0.0)


def solve_batch(
    s: np.ndarray,
    w: np.ndarray,
    x0: np.ndarray,
    y0: np.ndarray,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    cfg: EstimatorConfig,
    region: Rect,
    damping=None,
) -> BatchSolution:
    """Iterate ``B`` independent problems; ``s``/``w`` are ``(B, N)``, starts are ``(B,)``.

    Problems leave the active set once converged (step below tolerance) or
    stalled on a singular normal matrix; the others keep iterating.
    """
    x, y = region.clamp(np.asarray(x0, dtype=float).copy(), np.asarray(y0, dtype=float).copy())
    x = np.array(x, dtype=float)
    y = np.array(y, dtype=float)
    b = x.shape[0]
    r, hx, hy = _residual_and_jacobian(x, y, s, w, array, beams, link)
    cost = (r * r).sum(-1)
    mu = np.full(b, cfg.damping_initial) if damping is None else np.array(damping, dtype=float)
    iterations = np.zeros(b, dtype=int)
    converged = np.zeros(b, dtype=bool)
    active = np.arange(b)

    for _ in range(cfg.max_iterations):
        if active.size == 0:
            break
        ra, hxa, hya = r[active], hx[active], hy[active]
        gx = (hxa * ra).sum(-1)
        gy = (hya * ra).sum(-1)
        if cfg.method == PAPER_NEWTON:
            dx, dy = -gx, -gy
            ok = np.ones(active.size, dtype=bool)
        else:
            axx = (hxa * hxa).sum(-1)
            axy = (hxa * hya).sum(-1)
            ayy = (hya * hya).sum(-1)
            # undamped step length (after clamping); damping can shrink steps long
            # before the minimum is reached
            det0 = axx * ayy - axy * axy
            regular = det0 > _SINGULAR_RTOL * axx * ayy
            with np.errstate(divide="ignore", invalid="ignore"):
                ux = x[active] + (ayy * gx - axy * gy) / det0
                uy = y[active] + (axx * gy - axy * gx) / det0
            ux, uy = region.clamp(np.where(regular, ux, 0.0), np.where(regular, uy, 0.0))
            gn_len = np.where(regular, np.hypot(ux - x[active], uy - y[active]), np.inf)
            mua = mu[active]
            ok = np.zeros(active.size, dtype=bool)
            dx = np.zeros(active.size)
            dy = np.zeros(active.size)
            for _retry in range(_MAX_SINGULAR_RETRIES + 1):
                todo = ~ok
                mxx = axx[todo] * (1.0 + mua[todo])
                myy = ayy[todo] * (1.0 + mua[todo])
                det = mxx * myy - axy[todo] ** 2
                good = (det > _SINGULAR_RTOL * mxx * myy) & (mxx > 0) & (myy > 0)
                idx = np.flatnonzero(todo)[good]
                dg = det[good]
                dx[idx] = (myy[good] * gx[idx] - axy[idx] * gy[idx]) / dg
                dy[idx] = (mxx[good] * gy[idx] - axy[idx] * gx[idx]) / dg
                ok[idx] = True
                if ok.all():
                    break
                mua[~ok] *= 4.0
            mu[active] = mua

        xa, ya = x[active], y[active]
        xn, yn = region.clamp(xa + dx, ya + dy)
        step = np.hypot(xn - xa, yn - ya)
        rn, hxn, hyn = _residual_and_jacobian(xn, yn, s[active], w[active], array, beams, link)
        cn = (rn * rn).sum(-1)
        iterations[active] += 1

        if cfg.method == PAPER_NEWTON:
            accept = ok
        else:
            accept = ok & (cn < cost[active])
            mu[active] = np.where(accept, mu[active] * 0.5, mu[active] * 4.0)
        acc = active[accept]
        x[acc], y[acc] = xn[accept], yn[accept]
        cost[acc] = cn[accept]
        r[acc], hx[acc], hy[acc] = rn[accept], hxn[accept], hyn[accept]

        if cfg.method == PAPER_NEWTON:
            done = step < cfg.step_tolerance
            stalled = ~ok
        else:
            done = ok & (gn_len < cfg.step_tolerance)
            # singular normal matrix, or no usable descent direction (rank-deficient H, zero gradient)
            stalled = ~ok | (~accept & (step < 1e-3 * cfg.step_tolerance))
        converged[active[done]] = True
        active = active[~(done | stalled)]

    return BatchSolution(x=x, y=y, cost=cost, iterations=iterations, converged=converged, damping=mu)


def select_best(cost: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Column index of the winning start in each row of ``(T, S)`` arrays.

    Lowest cost wins; near-ties (relative 1e-9) go to smaller ``|x|``, then
    smaller ``x``, then smaller ``y``.
    """
    t, k = cost.shape
    best = cost.min(axis=1, keepdims=True)
    tie = cost <= best + _TIE_TOL * (1.0 + best)
    rows = np.repeat(np.arange(t), k)
    order = np.lexsort((y.ravel(), x.ravel(), np.abs(x).ravel(), ~tie.ravel(), rows))
    first = order[np.searchsorted(rows[order], np.arange(t))]
    return first - rows[first] * k


def _ray_extent(cos_t, sin_t, region: Rect):
    """Range interval ``[lo, hi]`` of the ray from the origin inside the region (``lo > hi`` if it misses)."""
    ylo = max(region.ymin, _MIN_RANGE)
    lo = np.maximum(ylo / sin_t, 0.0)
    hi = region.ymax / sin_t
    with np.errstate(divide="ignore"):
        a = region.xmin / cos_t
        b = region.xmax / cos_t
    inside = region.xmin <= 0.0 <= region.xmax
    xlo = np.where(cos_t > 0, a, np.where(cos_t < 0, b, -np.inf if inside else np.inf))
    xhi = np.where(cos_t > 0, b, np.where(cos_t < 0, a, np.inf if inside else -np.inf))
    return np.maximum(lo, xlo), np.minimum(hi, xhi)


@lru_cache(maxsize=16)
def _scan_table(array: ArrayConfig, beams: BeamSet, link: LinkBudget, region: Rect, samples: int):
    phi = np.pi * (np.arange(samples) + 0.5) / samples
    lo, hi = _ray_extent(np.cos(phi), np.sin(phi), region)
    # pattern term 20 log10 G at unit range, per (angle, beam)
    pattern = profile_grid(np.cos(phi), np.sin(phi), array, beams, link) - link.constant_db
    return phi, pattern, lo, hi


def _log_profile(pattern, a, wf, lo, hi):
    """Cost minimised over ``t = 40 log10 d`` for log-domain residuals ``a - pattern + t``."""
    nw = wf.sum(-1)[..., None]
    if pattern.ndim == 2:
        se = a.sum(-1)[:, None] - wf @ pattern.T
        see = (a * a).sum(-1)[:, None] - 2.0 * a @ pattern.T + wf @ (pattern * pattern).T
    else:
        e = np.where(wf[:, None, :] > 0, a[:, None, :] - pattern, 0.0)
        se = e.sum(-1)
        see = (e * e).sum(-1)
    valid = hi > lo
    t = np.clip(-se / nw, 40.0 * np.log10(np.where(valid, lo, 1.0)), 40.0 * np.log10(np.where(valid, hi, 1.0)))
    cost = see + 2.0 * t * se + nw * t * t
    return np.where(valid, cost, np.inf), 10.0 ** (t / 40.0)


def _linear_profile(pattern, amp, wf, lo, hi):
    """Cost minimised over ``c = 1/d^2`` for amplitude residuals ``amp - c G``; smooth through pattern nulls."""
    g = 10.0 ** (pattern / 20.0)
    if pattern.ndim == 2:
        sag = amp @ g.T
        sgg = wf @ (g * g).T
    else:
        sag = (amp[:, None, :] * g).sum(-1)
        sgg = (wf[:, None, :] * g * g).sum(-1)
    saa = (amp * amp).sum(-1)[:, None]
    valid = (hi > lo) & (sgg > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.clip(sag / sgg, 1.0 / np.where(valid, hi, 1.0) ** 2, 1.0 / np.where(valid, lo, 1.0) ** 2)
    cost = saa - 2.0 * c * sag + c * c * sgg
    return np.where(valid, cost, np.inf), 1.0 / np.sqrt(np.where(valid, c, 1.0))


def _lowest_minima(cost, k):
    """Indices of the ``k`` lowest discrete local minima per row (best one repeated if fewer)."""
    inf = np.full((cost.shape[0], 1), np.inf)
    left = np.concatenate([inf, cost[:, :-1]], axis=1)
    right = np.concatenate([cost[:, 1:], inf], axis=1)
    ranked = np.where((cost <= left) & (cost <= right), cost, np.inf)
    order = np.argsort(ranked, axis=1, kind="stable")[:, :k]
    rows = np.arange(cost.shape[0])[:, None]
    return np.where(np.isfinite(ranked[rows, order]), order, order[:, :1])


def _refine(phi, half, profile, array, beams, link, region):
    """Two rounds of sub-grid search around each azimuth; returns ``(phi, d)``."""
    for _ in range(_REFINE_LEVELS):
        cand = np.clip(phi[..., None] + np.linspace(-half, half, _REFINE_POINTS), 1e-9, np.pi - 1e-9)
        shape = cand.shape
        flat = cand.reshape(shape[0], -1)
        c, sn = np.cos(flat), np.sin(flat)
        pattern = profile_grid(c, sn, array, beams, link) - link.constant_db
        lo, hi = _ray_extent(c, sn, region)
        cost, d = profile(pattern, lo, hi)
        best = np.argmin(cost.reshape(shape), axis=-1)[..., None]
        phi = np.take_along_axis(cand, best, -1)[..., 0]
        dist = np.take_along_axis(d.reshape(shape), best, -1)[..., 0]
        half = 2.0 * half / (_REFINE_POINTS - 1)
    return phi, dist


def scan_starts(s, w, array, beams, link, cfg: EstimatorConfig, region: Rect):
    """Seeds from range-profiled costs over azimuth.

    For a fixed azimuth the range enters linearly (as ``40 log10 d`` in dB, or
    as the scale ``1/d^2`` in amplitude), so the best range has a closed form,
    clamped to where the ray crosses the region.  Both 1-D profiles are
    sampled at ``cfg.scan_points`` azimuths.  The dB profile is the true cost
    but pattern nulls cut it into narrow basins; the amplitude profile is
    smooth through nulls.  Half the seeds come from each, taken at the lowest
    local minima and refined on finer sub-grids.  Returns ``(x, y)`` of shape
    ``(T, n_starts)``.
    """
    phi_grid, pattern, lo, hi = _scan_table(array, beams, link, region, cfg.scan_points)
    wf = w.astype(float)
    a = np.where(w, s - link.constant_db, 0.0)
    amp = np.where(w, 10.0 ** (a / 20.0), 0.0)
    half = np.pi / cfg.scan_points
    k_lin = cfg.n_starts // 2
    k_log = cfg.n_starts - k_lin
    xs, ys = [], []
    for k, profile in (
        (k_log, lambda pat, l, h: _log_profile(pat, a, wf, l, h)),
        (k_lin, lambda pat, l, h: _linear_profile(pat, amp, wf, l, h)),
    ):
        if k == 0:
            continue
        cost, _ = profile(pattern, lo, hi)
        phi, d = _refine(phi_grid[_lowest_minima(cost, k)], half, profile, array, beams, link, region)
        xs.append(d * np.cos(phi))
        ys.append(d * np.sin(phi))
    return np.concatenate(xs, axis=1), np.concatenate(ys, axis=1)


def estimate_batch(
    s: np.ndarray,
    detected: np.ndarray,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    cfg: EstimatorConfig,
    region: Rect,
):
    """Multistart estimate for ``T`` observations at once.

    Returns ``(x, y, converged, residual_norm, iterations)`` arrays of length
    ``T``; rows without any detected beam come back as NaN / not converged.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    detected = np.atleast_2d(np.asarray(detected, dtype=bool))
    t = s.shape[0]
    out_x = np.full(t, np.nan)
    out_y = np.full(t, np.nan)
    out_conv = np.zeros(t, dtype=bool)
    out_norm = np.full(t, np.nan)
    out_iter = np.zeros(t, dtype=int)
    rows = np.flatnonzero(detected.any(axis=1))
    if rows.size == 0:
        return out_x, out_y, out_conv, out_norm, out_iter
    m = rows.size
    k = cfg.n_starts
    sx, sy = scan_starts(s[rows], detected[rows], array, beams, link, cfg, region)
    sol = solve_batch(
        np.repeat(s[rows], k, axis=0),
        np.repeat(detected[rows], k, axis=0),
        sx.ravel(),
        sy.ravel(),
        array,
        beams,
        link,
        cfg,
        region,
    )
    cost = sol.cost.reshape(m, k)
    xs = sol.x.reshape(m, k)
    ys = sol.y.reshape(m, k)
    pick = select_best(cost, xs, ys)
    sel = np.arange(m)
    out_x[rows] = xs[sel, pick]
    out_y[rows] = ys[sel, pick]
    out_conv[rows] = sol.converged.reshape(m, k)[sel, pick]
    out_norm[rows] = np.sqrt(cost[sel, pick])
    out_iter[rows] = sol.iterations.reshape(m, k)[sel, pick]
    return out_x, out_y, out_conv, out_norm, out_iter


# -- single-observation API ---------------------------------------------------


def _obs_arrays(obs: ObservationVector):
    return np.asarray(obs.rss_dbm, dtype=float)[None, :], np.asarray(obs.detected, dtype=bool)[None, :]


def residual(candidate: Position, obs: ObservationVector, array: ArrayConfig, beams: BeamSet, link: LinkBudget):
    """``s_i - p_i(candidate)`` over detected beams, in dB."""
    if obs.detected_count == 0:
        raise UnlocalizableError("no detected beams")
    p, _, _, _ = profile_and_jacobian(candidate.x, candidate.y, array, beams, link)
    mask = np.asarray(obs.detected, dtype=bool)
    return np.asarray(obs.rss_dbm, dtype=float)[mask] - p[mask]


def paper_newton_step(
    candidate: Position,
    obs: ObservationVector,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    step_scale: float = 1.0,
) -> Position:
    """``x - step_scale * H^T (s - p(x))`` with ``H`` restricted to detected beams (no clamping)."""
    s, w = _obs_arrays(obs)
    r, hx, hy = _residual_and_jacobian(
        np.array([candidate.x]), np.array([candidate.y]), s, w, array, beams, link
    )
    return Position(
        float(candidate.x - step_scale * (hx * r).sum()),
        float(candidate.y - step_scale * (hy * r).sum()),
    )


def gauss_newton_step(
    candidate: Position,
    obs: ObservationVector,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    damping: float,
    region: Rect | None = None,
) -> tuple[Position, float]:
    """One damped trial step; returns the (possibly unchanged) position and the new damping."""
    if obs.detected_count == 0:
        raise UnlocalizableError("no detected beams")
    s, w = _obs_arrays(obs)
    if region is None:
        region = Rect(-np.inf, np.inf, -np.inf, np.inf)
    cfg = EstimatorConfig(max_iterations=1, damping_initial=damping)
    sol = solve_batch(s, w, [candidate.x], [candidate.y], array, beams, link, cfg, region)
    return Position(float(sol.x[0]), float(sol.y[0])), float(sol.damping[0])


def estimate(
    obs: ObservationVector,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    cfg: EstimatorConfig,
    search_region: Rect,
) -> EstimatorResult:
    if obs.detected_count == 0:
        raise UnlocalizableError("no detected beams")
    s, w = _obs_arrays(obs)
    x, y, conv, norm, it = estimate_batch(s, w, array, beams, link, cfg, search_region)
    return EstimatorResult(
        estimate=Position(float(x[0]), float(y[0])),
        iterations=int(it[0]),
        converged=bool(conv[0]),
        residual_norm=float(norm[0]),
        detected_count=obs.detected_count,
    )
