import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slsloc.arraymodel import (
    ArrayConfig,
    BeamSet,
    array_factor_complex,
    array_factor_magnitude,
    beam_gain,
    beam_gains,
    sinc_ratio,
    sls_beam_set,
)

# |sum exp(j m psi)| evaluated with mpmath at 40 digits
FROZEN_AF = [
    (0.7, 8, 0.97693290208461350402),
    (2.0, 32, 0.65531276918309717222),
    (1e-9, 16, 16.0),
    (2 * math.pi, 5, 5.0),
]


@pytest.mark.parametrize("psi,n,expected", FROZEN_AF)
def test_array_factor_frozen_values(psi, n, expected):
    assert array_factor_magnitude(psi, n) == pytest.approx(expected, rel=1e-12)
    assert abs(array_factor_complex(psi, n)) == pytest.approx(expected, rel=1e-12)


def test_array_factor_n1_is_unity():
    psi = np.linspace(-10, 10, 101)
    np.testing.assert_allclose(array_factor_magnitude(psi, 1), 1.0)


@given(st.floats(-50, 50), st.integers(1, 64))
def test_array_factor_bounded_by_n(psi, n):
    assert array_factor_magnitude(psi, n) <= n * (1 + 1e-12)


@given(st.integers(-6, 6), st.integers(1, 40), st.floats(-1e-9, 1e-9))
def test_sinc_ratio_continuous_at_multiples_of_pi(m, n, delta):
    u = m * math.pi + delta
    expected = (-1) ** ((m * (n - 1)) % 2) * n
    assert sinc_ratio(u, n) == pytest.approx(expected, rel=1e-9)


def test_sinc_ratio_array_input():
    u = np.array([0.0, 0.3, math.pi])
    out = sinc_ratio(u, 4)
    assert out.shape == (3,)
    assert out[1] == pytest.approx(math.sin(1.2) / math.sin(0.3))


def test_beam_set_layout():
    arr = ArrayConfig(8)
    beams = sls_beam_set(arr)
    assert len(beams) == 8
    np.testing.assert_allclose(beams.boresights, math.pi * (np.arange(1, 9) - 0.5) / 8)
    # mirror beams carry opposite phases exactly
    assert np.array_equal(beams.beta, -beams.beta[::-1])


@pytest.mark.parametrize("n", [4, 8, 16, 32])
def test_each_beam_peaks_at_its_boresight(n):
    arr = ArrayConfig(n)
    beams = sls_beam_set(arr)
    for i, theta in enumerate(beams.boresights, start=1):
        assert beam_gain(theta, i, arr, beams) == pytest.approx(n, rel=1e-9)


@given(st.floats(1e-3, math.pi - 1e-3), st.sampled_from([4, 8, 16, 32]))
def test_beam_gains_mirror_symmetry(phi, n):
    arr = ArrayConfig(n)
    beams = sls_beam_set(arr)
    g = beam_gains(phi, arr, beams)
    gm = beam_gains(math.pi - phi, arr, beams)
    np.testing.assert_allclose(g, gm[::-1], rtol=1e-9, atol=1e-9)


def test_efficiency_scales_gain():
    beams = sls_beam_set(ArrayConfig(8))
    g1 = beam_gains(1.0, ArrayConfig(8), beams)
    g2 = beam_gains(1.0, ArrayConfig(8, efficiency=0.5), beams)
    np.testing.assert_allclose(g2, 0.5 * g1)


def test_beam_gains_shape():
    arr = ArrayConfig(4)
    assert beam_gains(np.ones((3, 5)), arr, sls_beam_set(arr)).shape == (3, 5, 4)


def test_beam_index_out_of_range():
    arr = ArrayConfig(4)
    beams = sls_beam_set(arr)
    with pytest.raises(IndexError):
        beam_gain(1.0, 0, arr, beams)
    with pytest.raises(IndexError):
        beam_gain(1.0, 5, arr, beams)


@pytest.mark.parametrize(
    "kwargs", [dict(n_elements=0), dict(n_elements=2.5), dict(spacing_wavelengths=0), dict(efficiency=1.5)]
)
def test_array_config_validation(kwargs):
    with pytest.raises(ValueError):
        ArrayConfig(**kwargs)


def test_beam_set_validation():
    with pytest.raises(ValueError):
        BeamSet(phases=(0.0, 0.1), boresights=(1.0, 0.5))
    with pytest.raises(ValueError):
        BeamSet(phases=(0.0,), boresights=(0.0,))
