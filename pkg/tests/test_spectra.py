import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fruitband.errors import InvalidBand
from fruitband.spectra import (
    NARROWBAND_660,
    ReflectanceCurve,
    SpectralBand,
    band_transmission,
    sample_intensity,
    sample_visible,
)


class TestBandTransmission:
    def test_peak_at_center(self):
        assert band_transmission(NARROWBAND_660, 660.0) == pytest.approx(1.0, abs=1e-12)

    def test_half_maximum_at_fwhm_edges(self):
        assert band_transmission(NARROWBAND_660, 630.0) == pytest.approx(0.5, abs=1e-9)
        assert band_transmission(NARROWBAND_660, 690.0) == pytest.approx(0.5, abs=1e-9)

    def test_invalid_fwhm(self):
        with pytest.raises(InvalidBand):
            SpectralBand(660.0, 0.0)
        with pytest.raises(InvalidBand):
            SpectralBand(660.0, -5.0)

    @given(center=st.floats(420, 680), fwhm=st.floats(1.0, 200.0))
    @settings(max_examples=100, deadline=None)
    def test_half_max_property(self, center, fwhm):
        band = SpectralBand(center, fwhm)
        for edge in (center - fwhm / 2, center + fwhm / 2):
            assert band_transmission(band, edge) == pytest.approx(0.5, abs=1e-9)

    def test_strictly_decreasing_away_from_center(self):
        band = SpectralBand(660.0, 60.0)
        offsets = np.array([0.0, 5.0, 15.0, 30.0, 60.0, 120.0])
        up = band_transmission(band, 660.0 + offsets)
        down = band_transmission(band, 660.0 - offsets)
        assert np.all(np.diff(up) < 0)
        assert np.all(np.diff(down) < 0)


def box_curve(lo, hi, value=1.0):
    # 1 nm edge ramps, so the piecewise-linear shape is exactly representable
    return ReflectanceCurve((
        (400.0, 0.0), (lo - 1.0, 0.0), (lo, value), (hi, value), (hi + 1.0, 0.0), (700.0, 0.0),
    ))


class TestSampleIntensity:
    def test_constant_curve_passes_through(self):
        flat = ReflectanceCurve(((400.0, 0.7), (700.0, 0.7)))
        assert sample_intensity(flat, NARROWBAND_660) == pytest.approx(0.7, abs=1e-9)
        for channel_value in sample_visible(flat):
            assert channel_value == pytest.approx(0.7, abs=1e-9)

    def test_box_curve_matches_fine_grid_quadrature(self):
        curve = box_curve(630.0, 690.0)
        got = sample_intensity(curve, NARROWBAND_660)
        # independent oracle: trapezoid quadrature on a 0.1 nm grid
        grid = np.arange(400.0, 700.0001, 0.1)
        refl = curve.at(grid)
        trans = band_transmission(NARROWBAND_660, grid)
        expected = np.trapezoid(refl * trans, grid) / np.trapezoid(trans, grid)
        assert got == pytest.approx(float(expected), abs=1e-3)

    def test_zero_curve(self):
        zero = ReflectanceCurve(((400.0, 0.0), (700.0, 0.0)))
        assert sample_intensity(zero, NARROWBAND_660) == 0.0

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_monotone_under_pointwise_dominance(self, seed):
        rng = np.random.default_rng(seed)
        wl = np.linspace(400, 700, 7)
        low = rng.uniform(0.0, 0.6, 7)
        high = np.clip(low + rng.uniform(0.0, 0.4, 7), 0, 1)
        c_low = ReflectanceCurve(tuple(zip(wl, low)))
        c_high = ReflectanceCurve(tuple(zip(wl, high)))
        band = SpectralBand(rng.uniform(450, 680), rng.uniform(5, 120))
        assert sample_intensity(c_high, band) >= sample_intensity(c_low, band)

    def test_curve_requires_increasing_wavelengths(self):
        with pytest.raises(ValueError):
            ReflectanceCurve(((500.0, 0.2), (450.0, 0.4)))
