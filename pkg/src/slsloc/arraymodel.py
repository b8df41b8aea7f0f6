"""Uniform linear array factor, sector-sweep beam set and per-beam gain.

The array lies on the x-axis at the origin. Azimuth ``phi`` is measured from
the +x axis, so the half-plane ``y > 0`` maps to ``phi`` in ``(0, pi)``.

Two phase conventions are exposed:

* ``array_factor_magnitude(psi, n)`` is the textbook ``|sin(n psi/2) / sin(psi/2)|``
  with ``psi = 2 pi (d/lambda) cos(phi) + beta``.
* ``sinc_ratio(u, n)`` is the signed ``sin(n u) / sin(u)``, i.e. the same pattern
  written in the half-angle ``u = psi / 2``.  The Fisher module differentiates
  this form.

Gain is amplitude-style: ``G = efficiency * |A|`` (peak ``efficiency * N``),
entering the log-RSS model as ``20 log10 G``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this |sin(u)| the ratio is replaced by its Taylor expansion about u = m*pi.
_SINGULAR_SIN = 1e-8


@dataclass(frozen=True)
class ArrayConfig:
    n_elements: int = 32
    spacing_wavelengths: float = 0.5
    efficiency: float = 1.0

    def __post_init__(self):
        if int(self.n_elements) != self.n_elements or self.n_elements < 1:
            raise ValueError(f"n_elements must be a positive integer, got {self.n_elements!r}")
        if not self.spacing_wavelengths > 0:
            raise ValueError(f"spacing_wavelengths must be > 0, got {self.spacing_wavelengths!r}")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must be in (0, 1], got {self.efficiency!r}")


@dataclass(frozen=True)
class BeamSet:
    """Steering phases and boresight azimuths of the sweep, one entry per beam."""

    phases: tuple[float, ...]
    boresights: tuple[float, ...]

    def __post_init__(self):
        if len(self.phases) != len(self.boresights) or not self.phases:
            raise ValueError("phases and boresights must be non-empty and equal length")
        b = np.asarray(self.boresights)
        if np.any(np.diff(b) <= 0) or b[0] <= 0 or b[-1] >= math.pi:
            raise ValueError("boresights must be strictly increasing inside (0, pi)")

    def __len__(self):
        return len(self.phases)

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.phases, dtype=float)


def array_factor_complex(psi: float, n: int) -> complex:
    """Direct phasor sum ``sum_{m=0}^{n-1} exp(j m psi)``."""
    total = 0j
    for m in range(n):
        total += complex(math.cos(m * psi), math.sin(m * psi))
    return total


def sinc_ratio(u, n: int):
    """Signed ``sin(n u) / sin(u)``, finite at ``u = m pi``.

    Near ``u = m pi + delta`` the value is ``(-1)^(m(n-1)) n (1 - (n^2-1) delta^2 / 6)``.
    Accepts scalars or arrays.
    """
    u = np.asarray(u, dtype=float)
    s = np.sin(u)
    near = np.abs(s) < _SINGULAR_SIN
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sin(n * u) / s
    if np.any(near):
        m = np.round(u[near] / math.pi)
        delta = u[near] - m * math.pi
        sign = np.where((m * (n - 1)) % 2 == 0, 1.0, -1.0)
        out = np.where(near, 0.0, out)
        out[near] = sign * n * (1.0 - (n * n - 1) * delta * delta / 6.0)
    return out[()] if out.ndim == 0 else out


def array_factor_magnitude(psi, n: int):
    """``|sin(n psi/2) / sin(psi/2)|``; equals ``n`` at ``psi = 2 pi m``."""
    return np.abs(sinc_ratio(np.asarray(psi, dtype=float) / 2.0, n))


def sls_beam_set(array: ArrayConfig) -> BeamSet:
    """Sector-sweep beams slicing the half circle into ``N`` equal sectors.

    Boresight ``theta_i = pi (i - 1/2) / N`` and steering phase
    ``beta_i = -2 pi (d/lambda) cos(theta_i)``, ``i = 1..N``.
    """
    n = array.n_elements
    i = np.arange(1, n + 1)
    theta = math.pi * (i - 0.5) / n
    cos_t = np.cos(theta)
    # force exact antisymmetry about broadside
    cos_t = 0.5 * (cos_t - cos_t[::-1])
    beta = -2.0 * math.pi * array.spacing_wavelengths * cos_t
    return BeamSet(phases=tuple(beta.tolist()), boresights=tuple(theta.tolist()))


def steering_phase(phi, array: ArrayConfig, beams: BeamSet) -> np.ndarray:
    """Full array phase ``psi_i(phi)`` for every beam, shape ``phi.shape + (N,)``."""
    phi = np.asarray(phi, dtype=float)
    geo = 2.0 * math.pi * array.spacing_wavelengths * np.cos(phi)
    return geo[..., None] + beams.beta


def beam_gains(phi, array: ArrayConfig, beams: BeamSet) -> np.ndarray:
    """Linear amplitude gain of every beam at azimuth ``phi``, shape ``phi.shape + (N,)``."""
    psi = steering_phase(phi, array, beams)
    return array.efficiency * array_factor_magnitude(psi, array.n_elements)


def beam_gain(phi: float, beam_index: int, array: ArrayConfig, beams: BeamSet) -> float:
    """Gain of beam ``beam_index`` (1-based) at azimuth ``phi``."""
    if not 1 <= beam_index <= len(beams):
        raise IndexError(f"beam_index {beam_index} outside 1..{len(beams)}")
    psi = 2.0 * math.pi * array.spacing_wavelengths * math.cos(phi) + beams.phases[beam_index - 1]
    return float(array.efficiency * array_factor_magnitude(psi, array.n_elements))
