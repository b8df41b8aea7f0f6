"""Independent reference computations shared by the test modules."""

import math

import numpy as np

from slsloc.arraymodel import ArrayConfig, BeamSet
from slsloc.fisher import paper_gain
from slsloc.rfchannel import LinkBudget, Position, profile_grid

FD_STEP = 1e-6


def af_direct(psi, n):
    """``|sum_m exp(j m psi)|`` by explicit summation over elements."""
    m = np.arange(n)
    return np.abs(np.exp(1j * np.multiply.outer(psi, m)).sum(-1))


def fd_profile_jacobian(x, y, array: ArrayConfig, beams: BeamSet, link: LinkBudget, h=FD_STEP):
    """Central differences of the log-RSS profile, shape ``(N, 2)``."""
    dx = (profile_grid(x + h, y, array, beams, link) - profile_grid(x - h, y, array, beams, link)) / (2 * h)
    dy = (profile_grid(x, y + h, array, beams, link) - profile_grid(x, y - h, array, beams, link)) / (2 * h)
    return np.stack([dx, dy], axis=-1)


def fd_gain_partials(ue: Position, beta, n, h=FD_STEP):
    gx = (paper_gain(Position(ue.x + h, ue.y), beta, n) - paper_gain(Position(ue.x - h, ue.y), beta, n)) / (2 * h)
    gy = (paper_gain(Position(ue.x, ue.y + h), beta, n) - paper_gain(Position(ue.x, ue.y - h), beta, n)) / (2 * h)
    return gx, gy


def well_conditioned(x, y, array: ArrayConfig, beams: BeamSet, margin=0.05):
    """No beam sits near a pattern null or a 0/0 direction."""
    d = math.hypot(x, y)
    u = math.pi * array.spacing_wavelengths * x / d + beams.beta / 2
    n = array.n_elements
    return bool(np.all(np.abs(np.sin(n * u)) > margin) and np.all(np.abs(np.sin(u)) > margin))


def random_poses(rng, count, array, beams, xlim=4.0, ylim=(0.2, 8.0)):
    out = []
    while len(out) < count:
        x, y = rng.uniform(-xlim, xlim), rng.uniform(*ylim)
        if well_conditioned(x, y, array, beams):
            out.append(Position(x, y))
    return out


def termwise_fim(h, mask, sigma):
    """Sum of per-beam outer products, one beam at a time."""
    j = np.zeros((2, 2))
    for row, use in zip(h, mask):
        if use:
            j += np.outer(row, row)
    return j / sigma**2


def inverse_trace_rmse(j):
    return math.sqrt(np.trace(np.linalg.inv(j)))
