"""Spectral model: bandpass filter transmission and reflectance sampling.

The narrowband channel is a Gaussian bandpass profile pinned by its FWHM
(transmission is exactly 0.5 at center +- fwhm/2). Surface materials are
piecewise-linear reflectance curves over 400-700 nm; the pixel intensity
of a material under a band is the transmission-weighted mean reflectance,
integrated with the trapezoid rule on a fixed 1 nm grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBand

WAVELENGTH_MIN_NM = 400.0
WAVELENGTH_MAX_NM = 700.0
GRID_STEP_NM = 1.0
WAVELENGTH_GRID = np.arange(WAVELENGTH_MIN_NM, WAVELENGTH_MAX_NM + GRID_STEP_NM, GRID_STEP_NM)

# visible channels: triangular sensitivities, peak 1 at the named wavelength,
# falling linearly to 0 at +-75 nm (red, green, blue)
VISIBLE_CHANNEL_PEAKS_NM = (600.0, 550.0, 450.0)
VISIBLE_CHANNEL_HALF_WIDTH_NM = 75.0


@dataclass(frozen=True)
class SpectralBand:
    center_nm: float
    fwhm_nm: float

    def __post_init__(self):
        if self.fwhm_nm <= 0:
            raise InvalidBand(f"fwhm must be > 0, got {self.fwhm_nm}")

    @property
    def sigma_nm(self) -> float:
        # FWHM of a Gaussian = 2*sqrt(2*ln 2)*sigma
        return self.fwhm_nm / (2.0 * math.sqrt(2.0 * math.log(2.0)))


NARROWBAND_660 = SpectralBand(center_nm=660.0, fwhm_nm=60.0)


@dataclass(frozen=True)
class ReflectanceCurve:
    """Piecewise-linear reflectance over wavelength, clamped to [0, 1]."""

    samples: tuple[tuple[float, float], ...]

    def __post_init__(self):
        wl = [w for w, _ in self.samples]
        if len(wl) < 2 or any(b <= a for a, b in zip(wl, wl[1:])):
            raise ValueError("samples must have >= 2 strictly increasing wavelengths")

    def at(self, wavelengths: np.ndarray) -> np.ndarray:
        wl = np.array([w for w, _ in self.samples])
        refl = np.clip([r for _, r in self.samples], 0.0, 1.0)
        return np.interp(wavelengths, wl, refl)

    def blend(self, other: "ReflectanceCurve", weight: float) -> "ReflectanceCurve":
        """Pointwise mix on the common grid: (1 - weight)*self + weight*other."""
        grid = WAVELENGTH_GRID
        mixed = (1.0 - weight) * self.at(grid) + weight * other.at(grid)
        return ReflectanceCurve(tuple(zip(grid.tolist(), mixed.tolist())))

    def scaled(self, factor: float) -> "ReflectanceCurve":
        return ReflectanceCurve(tuple((w, min(1.0, max(0.0, r * factor))) for w, r in self.samples))


def band_transmission(band: SpectralBand, wavelength_nm) -> np.ndarray | float:
    """Gaussian transmission: 1.0 at the center, 0.5 at center +- fwhm/2."""
    if band.fwhm_nm <= 0:
        raise InvalidBand(f"fwhm must be > 0, got {band.fwhm_nm}")
    wl = np.asarray(wavelength_nm, dtype=np.float64)
    t = np.exp(-0.5 * ((wl - band.center_nm) / band.sigma_nm) ** 2)
    return float(t) if np.isscalar(wavelength_nm) else t


def visible_channel_weights(channel: int) -> np.ndarray:
    """Triangular channel sensitivity on the 1 nm grid (0=red, 1=green, 2=blue)."""
    peak = VISIBLE_CHANNEL_PEAKS_NM[channel]
    w = 1.0 - np.abs(WAVELENGTH_GRID - peak) / VISIBLE_CHANNEL_HALF_WIDTH_NM
    return np.clip(w, 0.0, None)


def _weighted_mean(reflectance: np.ndarray, weights: np.ndarray) -> float:
    num = np.trapezoid(reflectance * weights, WAVELENGTH_GRID)
    den = np.trapezoid(weights, WAVELENGTH_GRID)
    if den == 0:
        return 0.0
    return float(num / den)


def sample_intensity(curve: ReflectanceCurve, band: SpectralBand) -> float:
    """Mean reflectance under the band's transmission profile, in [0, 1]."""
    refl = curve.at(WAVELENGTH_GRID)
    weights = band_transmission(band, WAVELENGTH_GRID)
    return _weighted_mean(refl, weights)


def sample_visible(curve: ReflectanceCurve) -> tuple[float, float, float]:
    """(R, G, B) intensities under the three fixed channel sensitivities."""
    refl = curve.at(WAVELENGTH_GRID)
    return tuple(_weighted_mean(refl, visible_channel_weights(c)) for c in range(3))


# --- material presets -------------------------------------------------------
#
# Invented reflectance shapes, chosen so the 660 nm band (and the red visible
# channel) separates the three defect classes from healthy skin:
#   healthy skin  - low blue/green, high red plateau
#   bruise        - red plateau mildly depressed relative to healthy skin
#   stain         - strongly absorbing in the red: near-black speckles
#   rot           - broadband low reflectance
# Severity blends a defect curve over the base skin curve.

HEALTHY_SKIN = ReflectanceCurve((
    (400.0, 0.08), (480.0, 0.09), (540.0, 0.13), (580.0, 0.30),
    (620.0, 0.62), (650.0, 0.69), (700.0, 0.72),
))

BRUISE_CURVE = ReflectanceCurve((
    (400.0, 0.08), (480.0, 0.09), (540.0, 0.12), (580.0, 0.22),
    (620.0, 0.42), (650.0, 0.46), (700.0, 0.48),
))

STAIN_CURVE = ReflectanceCurve((
    (400.0, 0.10), (500.0, 0.12), (560.0, 0.08), (620.0, 0.04),
    (660.0, 0.02), (700.0, 0.02),
))

# bright halo surrounding stain cores; the core/rim pair gives stains their
# characteristic high local contrast in the red band
STAIN_RIM_CURVE = ReflectanceCurve((
    (400.0, 0.20), (500.0, 0.30), (560.0, 0.55), (620.0, 0.88),
    (660.0, 0.94), (700.0, 0.95),
))

ROT_CURVE = ReflectanceCurve((
    (400.0, 0.06), (500.0, 0.06), (600.0, 0.05), (660.0, 0.04), (700.0, 0.04),
))

BACKGROUND = ReflectanceCurve(((400.0, 0.02), (700.0, 0.02)))

DEFECT_CURVES = {"bruise": BRUISE_CURVE, "stain": STAIN_CURVE, "rot": ROT_CURVE}
