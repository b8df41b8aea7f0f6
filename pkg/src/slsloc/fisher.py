"""RSS Jacobian, Fisher information and Cramer-Rao bounds on the UE position.

Two Jacobian flavours are provided:

``exact-chain``
    The true gradient of the log-RSS model, ``(20/ln10) (dG/G - 2 dd/d)``,
    built on the half-angle pattern ``G = sin(N u)/sin(u)`` with
    ``u = pi (d_s/lambda) x/d + beta/2``.  Matches finite differences of
    :func:`slsloc.rfchannel.profile_grid`.
``paper-literal``
    ``(20/ln10) (dG - 2 dd)`` with ``G = sin(N psi)/sin(psi)``,
    ``psi = 2 pi (d_s/lambda) x/d + beta``; no ``1/G`` or ``1/d`` chain factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arraymodel import ArrayConfig, BeamSet, sinc_ratio
from .rfchannel import FLOOR_DBM, LinkBudget, Position, azimuth_and_distance

DB_PER_NEPER = 20.0 / math.log(10.0)
EXACT_CHAIN = "exact-chain"
PAPER_LITERAL = "paper-literal"

_SINGULAR_SIN = 1e-10
_MIN_GAIN = 1e-6
_DET_RTOL = 1e-15


class SingularDirectionError(ValueError):
    """The pattern derivative is 0/0 along this direction (sin(psi) = 0)."""


@dataclass(frozen=True)
class FisherInfo:
    j_xx: float
    j_xy: float
    j_yy: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.j_xx, self.j_xy], [self.j_xy, self.j_yy]])

    @property
    def det(self) -> float:
        return self.j_xx * self.j_yy - self.j_xy**2


def paper_gain(ue: Position, beta: float, n: int, spacing_wavelengths: float = 0.5) -> float:
    """Signed pattern ``sin(N psi)/sin(psi)``, ``psi = 2 pi (d_s/lambda) x/d + beta``."""
    _, d = azimuth_and_distance(ue)
    return float(sinc_ratio(2.0 * math.pi * spacing_wavelengths * ue.x / d + beta, n))


def _pattern_slope(psi: float, n: int) -> float:
    s = math.sin(psi)
    if abs(s) < _SINGULAR_SIN:
        raise SingularDirectionError(f"sin(psi) = {s:.3g} at psi = {psi!r}")
    return (n * math.cos(n * psi) - math.cos(psi) / s * math.sin(n * psi)) / s


def gain_partial_x(ue: Position, beta: float, n: int) -> float:
    """``dG/dx = pi y^2 (N cos(N psi) - cot(psi) sin(N psi)) / (sin(psi) d^3)`` for half-wavelength spacing."""
    _, d = azimuth_and_distance(ue)
    psi = math.pi * ue.x / d + beta
    return math.pi * ue.y**2 * _pattern_slope(psi, n) / d**3


def gain_partial_y(ue: Position, beta: float, n: int) -> float:
    _, d = azimuth_and_distance(ue)
    psi = math.pi * ue.x / d + beta
    return -math.pi * ue.x * ue.y * _pattern_slope(psi, n) / d**3


def jacobian_grid(x, y, array: ArrayConfig, beams: BeamSet, mode: str = EXACT_CHAIN):
    """Vectorised Jacobian of the log-RSS profile.

    Returns ``(hx, hy, singular)``, each of shape ``x.shape + (N,)``, in dB/m.
    ``singular`` flags beams whose pattern term is unusable (0/0 direction, or
    gain below 1e-6 in exact-chain mode); their pattern term is zero-filled.
    """
    if mode == EXACT_CHAIN:
        _, hx, hy, singular = _exact_chain(x, y, array, beams)
        return hx, hy, singular
    if mode != PAPER_LITERAL:
        raise ValueError(f"unknown derivative mode {mode!r}")
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    n = array.n_elements
    d = np.sqrt(x * x + y * y)
    slope_coef = 2.0 * math.pi * array.spacing_wavelengths
    psi = slope_coef * x / d + beams.beta
    s = np.sin(psi)
    singular = np.abs(s) < _SINGULAR_SIN
    with np.errstate(divide="ignore", invalid="ignore"):
        dg = (n * np.cos(n * psi) - np.cos(psi) / s * np.sin(n * psi)) / s
    dg = np.where(singular, 0.0, dg)
    hx = DB_PER_NEPER * (dg * slope_coef * y * y / d**3 - 2.0 * x / d)
    hy = DB_PER_NEPER * (-dg * slope_coef * x * y / d**3 - 2.0 * y / d)
    hx, hy, singular = np.broadcast_arrays(hx, hy, singular)
    return hx, hy, singular


def profile_and_jacobian(x, y, array: ArrayConfig, beams: BeamSet, link: LinkBudget):
    """Log-RSS profile and its exact-chain Jacobian from one pass over the pattern.

    Returns ``(p, hx, hy, singular)``; this is the estimator's inner-loop model.
    """
    g, hx, hy, singular = _exact_chain(x, y, array, beams)
    d2 = np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2
    with np.errstate(divide="ignore"):
        p = link.constant_db + 20.0 * np.log10(g) - 20.0 * np.log10(d2)[..., None]
    return np.maximum(p, FLOOR_DBM), hx, hy, singular


def _exact_chain(x, y, array: ArrayConfig, beams: BeamSet):
    # half-angle form; (1/G) dG/du = N cot(N u) - cot(u)
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    n = array.n_elements
    d2 = x * x + y * y
    d = np.sqrt(d2)
    d3 = d2 * d
    slope_coef = math.pi * array.spacing_wavelengths
    u = slope_coef * x / d + beams.beta / 2.0
    su = np.sin(u)
    snu = np.sin(n * u)
    cu = np.cos(u)
    near = np.abs(su) < _SINGULAR_SIN
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = snu / su
        dlog = n * np.cos(n * u) / snu - cu / su
    if np.any(near):
        ratio = np.where(near, sinc_ratio(u, n), ratio)
    g = array.efficiency * np.abs(ratio)
    singular = near | (g < _MIN_GAIN)
    dlog = np.where(singular, 0.0, dlog)
    hx = DB_PER_NEPER * (dlog * slope_coef * y * y / d3 - 2.0 * x / d2)
    hy = DB_PER_NEPER * (-dlog * slope_coef * x * y / d3 - 2.0 * y / d2)
    g, hx, hy, singular = np.broadcast_arrays(g, hx, hy, singular)
    return g, hx, hy, singular


def rss_jacobian(ue: Position, array: ArrayConfig, beams: BeamSet, mode: str = EXACT_CHAIN):
    """``(H, singular)`` with ``H`` of shape ``(N, 2)`` holding ``(dP_i/dx, dP_i/dy)``."""
    azimuth_and_distance(ue)
    hx, hy, singular = jacobian_grid(ue.x, ue.y, array, beams, mode)
    return np.stack([hx, hy], axis=-1), singular.copy()


def information_sums(hx, hy, mask=None):
    """Unscaled ``H^T H`` entries summed over the beam axis (last)."""
    if mask is not None:
        hx = np.where(mask, hx, 0.0)
        hy = np.where(mask, hy, 0.0)
    return (hx * hx).sum(-1), (hx * hy).sum(-1), (hy * hy).sum(-1)


def crlb_from_sums(sxx, sxy, syy, sigma_db):
    """``sigma sqrt(tr(S^-1))`` elementwise; ``inf`` where S is (numerically) singular."""
    sxx, sxy, syy = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (sxx, sxy, syy)))
    det = sxx * syy - sxy * sxy
    bounded = (det > _DET_RTOL * sxx * syy) & (sxx > 0) & (syy > 0)
    out = np.full(sxx.shape, np.inf)
    out[bounded] = sigma_db * np.sqrt((sxx[bounded] + syy[bounded]) / det[bounded])
    return out[()] if out.ndim == 0 else out


def fim(ue: Position, array: ArrayConfig, beams: BeamSet, sigma_db: float, beam_mask=None) -> FisherInfo:
    if not sigma_db > 0:
        raise ValueError("sigma_db must be > 0")
    h, singular = rss_jacobian(ue, array, beams)
    use = ~singular if beam_mask is None else (np.asarray(beam_mask, dtype=bool) & ~singular)
    sxx, sxy, syy = information_sums(h[:, 0], h[:, 1], use)
    s2 = sigma_db**2
    return FisherInfo(float(sxx) / s2, float(sxy) / s2, float(syy) / s2)


def crlb_rmse(ue: Position, array: ArrayConfig, beams: BeamSet, sigma_db: float, beam_mask=None) -> float:
    """Position RMSE bound in metres; ``math.inf`` marks a blindspot."""
    if not sigma_db > 0:
        raise ValueError("sigma_db must be > 0")
    h, singular = rss_jacobian(ue, array, beams)
    use = ~singular if beam_mask is None else (np.asarray(beam_mask, dtype=bool) & ~singular)
    return float(crlb_from_sums(*information_sums(h[:, 0], h[:, 1], use), sigma_db))


def crlb_grid(x, y, array: ArrayConfig, beams: BeamSet, sigma_db: float, beam_mask=None):
    """:func:`crlb_rmse` over arrays of points; ``beam_mask`` has shape ``x.shape + (N,)``."""
    hx, hy, singular = jacobian_grid(x, y, array, beams)
    use = ~singular if beam_mask is None else (beam_mask & ~singular)
    return crlb_from_sums(*information_sums(hx, hy, use), sigma_db)


# -- large-N approximation -------------------------------------------------


def _large_n_coefficient(ue: Position, beta: float, n: int, m: int) -> float:
    if m not in (1, 2):
        raise ValueError("m selects the coordinate: 1 for x, 2 for y")
    _, d = azimuth_and_distance(ue)
    psi = math.pi * ue.x / d + beta
    s = math.sin(psi)
    if abs(s) < _SINGULAR_SIN:
        raise SingularDirectionError(f"sin(psi) = {s:.3g}")
    x_m = ue.x if m == 1 else ue.y
    return DB_PER_NEPER * (-math.pi * ue.y * x_m * math.cos(n * psi) / (s * d**3))


def asymptotic_partial(ue: Position, beta: float, n: int, m: int) -> float:
    """Large-N partial ``N * A_m(N, i)``, ``A_m = (20/ln10) (-pi y x_m cos(N psi)) / (sin(psi) d^3)``.

    ``m = 1`` selects ``x_m = x``, ``m = 2`` selects ``x_m = y``.  As written the
    pair ``(A_1, A_2)`` is the leading-order gain gradient rotated by 90 degrees,
    i.e. ``A_1 ~ dG/dy`` and ``A_2 ~ -dG/dx``.
    """
    return n * _large_n_coefficient(ue, beta, n, m)


def asymptotic_crlb(
    ue: Position,
    array: ArrayConfig,
    beams: BeamSet,
    sigma_db: float,
    include_range: bool = True,
) -> float:
    """Large-N CRLB ``(sigma / N) sqrt((sum A1^2 + sum A2^2) / (sum A1^2 sum A2^2 - (sum A1 A2)^2))``.

    The pattern-only coefficients satisfy ``A_1 = (x/y) A_2`` for every beam, so
    the pure form is rank one and always returns ``inf``.  With
    ``include_range`` the distance gradient ``-2 x_m/d`` (scaled by ``1/N`` to
    keep the ``N A`` factorisation) is added back to each coefficient, which
    restores the radial information.
    """
    if not sigma_db > 0:
        raise ValueError("sigma_db must be > 0")
    n = array.n_elements
    _, d = azimuth_and_distance(ue)
    a1, a2 = [], []
    for beta in beams.phases:
        try:
            c1 = _large_n_coefficient(ue, beta, n, 1)
            c2 = _large_n_coefficient(ue, beta, n, 2)
        except SingularDirectionError:
            continue
        if include_range:
            # rotate back to (d/dx, d/dy) before adding the radial term
            c1, c2 = -c2 - DB_PER_NEPER * 2.0 * ue.x / (d * n), c1 - DB_PER_NEPER * 2.0 * ue.y / (d * n)
        a1.append(c1)
        a2.append(c2)
    a1 = np.asarray(a1)
    a2 = np.asarray(a2)
    return float(crlb_from_sums((a1 * a1).sum(), (a1 * a2).sum(), (a2 * a2).sum(), sigma_db)) / n
