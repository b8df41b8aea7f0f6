"""Per-beam received signal strength and noisy sector-sweep observations.

The log-RSS model keeps the amplitude-style convention of the underlying
derivation: every term, including the link constant, is taken as
``20 log10`` of its linear value, so the distance law is ``-40 log10 d``::

    P_i = 20 log10(Pt Gr lambda^2 / (16 L pi^2)) + 20 log10 G_i(phi) - 40 log10 d

with ``Pt`` in mW.  Consequently the linear Friis power maps onto this scale
through ``20 log10(P / 1 mW)``, see :func:`paper_dbm`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arraymodel import ArrayConfig, BeamSet, beam_gains

SPEED_OF_LIGHT = 299_792_458.0
# Finite stand-in for a pattern null (G = 0 would give -inf dBm).
FLOOR_DBM = -300.0


class DegenerateGeometryError(ValueError):
    """The UE coincides with the base station."""


@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float = 40.6
    rx_gain_db: float = 0.0
    loss_db: float = 0.0
    carrier_hz: float = 60e9

    def __post_init__(self):
        if not self.carrier_hz > 0:
            raise ValueError(f"carrier_hz must be > 0, got {self.carrier_hz!r}")
        if not self.loss_db >= 0:
            raise ValueError(f"loss_db must be >= 0, got {self.loss_db!r}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def constant_db(self) -> float:
        pt_mw = 10.0 ** (self.tx_power_dbm / 10.0)
        gr = 10.0 ** (self.rx_gain_db / 10.0)
        loss = 10.0 ** (self.loss_db / 10.0)
        return 20.0 * math.log10(pt_mw * gr * self.wavelength**2 / (16.0 * loss * math.pi**2))


@dataclass(frozen=True)
class Position:
    x: float
    y: float


@dataclass(frozen=True)
class ObservationVector:
    rss_dbm: np.ndarray
    detected: np.ndarray
    sigma_db: float

    @property
    def detected_count(self) -> int:
        return int(np.count_nonzero(self.detected))


def paper_dbm(watts):
    """Linear power to the amplitude-style log scale, ``20 log10(P / 1 mW)``."""
    with np.errstate(divide="ignore"):
        out = 20.0 * np.log10(np.asarray(watts, dtype=float) / 1e-3)
    return np.maximum(out, FLOOR_DBM)


def azimuth_and_distance(ue: Position) -> tuple[float, float]:
    d = math.hypot(ue.x, ue.y)
    if d == 0.0:
        raise DegenerateGeometryError("UE at the base station position")
    return math.acos(max(-1.0, min(1.0, ue.x / d))), d


def profile_grid(x, y, array: ArrayConfig, beams: BeamSet, link: LinkBudget) -> np.ndarray:
    """Noiseless RSS in dBm of every beam at points ``(x, y)``; shape ``x.shape + (N,)``.

    Points must not sit at the origin; nulls are clamped to ``FLOOR_DBM``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.hypot(x, y)
    phi = np.arccos(np.clip(x / d, -1.0, 1.0))
    g = beam_gains(phi, array, beams)
    with np.errstate(divide="ignore"):
        p = link.constant_db + 20.0 * np.log10(g) - 40.0 * np.log10(d)[..., None]
    return np.maximum(p, FLOOR_DBM)


def rss_dbm(ue: Position, beam_index: int, array: ArrayConfig, beams: BeamSet, link: LinkBudget) -> float:
    return float(exact_profile(ue, array, beams, link)[_check_beam(beam_index, beams)])


def rss_linear(ue: Position, beam_index: int, array: ArrayConfig, beams: BeamSet, link: LinkBudget) -> float:
    """Friis received power in watts for one beam."""
    i = _check_beam(beam_index, beams)
    phi, d = azimuth_and_distance(ue)
    g = beam_gains(phi, array, beams)[i]
    pt_w = 10.0 ** (link.tx_power_dbm / 10.0) * 1e-3
    gr = 10.0 ** (link.rx_gain_db / 10.0)
    loss = 10.0 ** (link.loss_db / 10.0)
    return float(pt_w * g * gr * (link.wavelength / (4.0 * math.pi * d)) ** 2 / loss)


def exact_profile(ue: Position, array: ArrayConfig, beams: BeamSet, link: LinkBudget) -> np.ndarray:
    azimuth_and_distance(ue)
    return profile_grid(ue.x, ue.y, array, beams, link)


def synthesize_observation(
    ue: Position,
    array: ArrayConfig,
    beams: BeamSet,
    link: LinkBudget,
    sigma_db: float,
    threshold_dbm: float,
    rng: np.random.Generator,
) -> ObservationVector:
    """One sweep: ``s = p + n`` with i.i.d. N(0, sigma^2) noise; beams under threshold are dropped."""
    if not sigma_db > 0:
        raise ValueError("sigma_db must be > 0")
    p = exact_profile(ue, array, beams, link)
    s = p + sigma_db * rng.standard_normal(p.shape)
    return ObservationVector(rss_dbm=s, detected=s >= threshold_dbm, sigma_db=sigma_db)


def _check_beam(beam_index: int, beams: BeamSet) -> int:
    if not 1 <= beam_index <= len(beams):
        raise IndexError(f"beam_index {beam_index} outside 1..{len(beams)}")
    return beam_index - 1
