"""Pattern centroid and inverse gnomonic projection onto the HEALPix sphere."""

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .errors import (
    CentroidUndefinedError,
    ContractError,
    CoverageGapWarning,
    InputError,
)
from .harmonics import SphericalSignal
from .healpix import CapMask, HealpixGrid, angles_to_vectors

EXACT_HIT = 1e-12


@dataclass(frozen=True, eq=False)
class ScatteringPattern:
    """Row-major raster of transmitted intensities, ``intensities[row, col]``."""

    intensities: np.ndarray = field(repr=False)

    def __post_init__(self):
        intensities = np.asarray(self.intensities, dtype=np.float64)
        if intensities.ndim != 2 or intensities.size == 0:
            raise InputError(
                f"pattern must be a non-empty 2D raster, got shape {intensities.shape}"
            )
        if not np.all(np.isfinite(intensities)) or np.any(intensities < 0):
            raise InputError("pattern intensities must be finite and non-negative")
        object.__setattr__(self, "intensities", intensities)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def center(self) -> "PatternCentroid":
        return PatternCentroid((self.width - 1) / 2, (self.height - 1) / 2)


@dataclass(frozen=True)
class MicroscopeGeometry:
    """Measurement setup. ``L_cm`` and ``r_led_mm`` are recorded, not used."""

    H_cm: float = 13.0
    L_cm: float = 40.0
    r_led_mm: float = 1.8
    d_mm: float = 3.6

    def __post_init__(self):
        if not self.H_cm > 0 or not self.d_mm > 0:
            raise InputError("geometry requires H > 0 and d > 0")

    @property
    def pitch_ratio(self) -> float:
        """``d / H`` in consistent units (radians of tangent per pattern pixel)."""
        return self.d_mm / (10.0 * self.H_cm)


@dataclass(frozen=True)
class PatternCentroid:
    x_c: float
    y_c: float


def find_centroid(pattern: ScatteringPattern, sigma_g: float = 1.0) -> PatternCentroid:
    """Maximum of the Gaussian-smoothed pattern.

    Ties break to the smallest ``(row, col)``.
    """
    if sigma_g < 0:
        raise InputError(f"sigma_g must be non-negative, got {sigma_g}")
    smoothed = pattern.intensities
    if sigma_g > 0:
        smoothed = gaussian_filter(smoothed, sigma_g, mode="reflect", truncate=4.0)
    peak = smoothed.max()
    if peak <= 0 or peak - smoothed.min() <= 1e-12 * peak:
        raise CentroidUndefinedError("pattern is constant, the centroid is undefined")
    # first index in row-major order among values equal to the maximum
    flat = int(np.flatnonzero(smoothed.ravel() >= peak * (1 - 1e-12))[0])
    row, col = divmod(flat, pattern.width)
    return PatternCentroid(float(col), float(row))


def find_centroid_or_center(
    pattern: ScatteringPattern, sigma_g: float = 1.0
) -> PatternCentroid:
    try:
        return find_centroid(pattern, sigma_g)
    except CentroidUndefinedError:
        warnings.warn("centroid undefined, using the raster center", stacklevel=2)
        return pattern.center


def inverse_gnomonic(dx, dy, geometry: MicroscopeGeometry):
    """Angles ``(theta, phi)`` of raster offsets ``(dx, dy)`` from the centroid.

    ``phi = atan2(dx, dy)`` in ``[0, 2 pi)`` and
    ``theta = arctan(d / H * sqrt(dx^2 + dy^2))``.
    """
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    theta = np.arctan(geometry.pitch_ratio * np.hypot(dx, dy))
    phi = np.mod(np.arctan2(dx, dy), 2 * np.pi)
    if theta.ndim == 0:
        return float(theta), float(phi)
    return theta, phi


def forward_gnomonic(theta, phi, geometry: MicroscopeGeometry):
    """Raster offsets ``(dx, dy)`` of sphere angles, inverse of `inverse_gnomonic`."""
    radius = np.tan(np.asarray(theta, dtype=np.float64)) / geometry.pitch_ratio
    return radius * np.sin(phi), radius * np.cos(phi)


def sample_vectors(
    pattern: ScatteringPattern, centroid: PatternCentroid, geometry: MicroscopeGeometry
) -> np.ndarray:
    """Unit vectors of every raster pixel, row-major, ``[height * width, 3]``."""
    rows, cols = np.mgrid[0 : pattern.height, 0 : pattern.width]
    theta, phi = inverse_gnomonic(
        cols.ravel() - centroid.x_c, rows.ravel() - centroid.y_c, geometry
    )
    return angles_to_vectors(theta, phi)


def _chord_to_angle(chord: np.ndarray) -> np.ndarray:
    return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


def project_to_sphere(
    pattern: ScatteringPattern,
    centroid: PatternCentroid,
    geometry: MicroscopeGeometry,
    grid: HealpixGrid,
    mask: CapMask,
    normalize: bool = False,
    k: int = 4,
    power: float = 2.0,
) -> SphericalSignal:
    """Inverse-angular-distance interpolation of the raster onto the mask.

    Pixels outside the mask, and masked-in pixels farther than three mean
    sample spacings from every raster sample, are zero and invalid.
    """
    if mask.grid != grid:
        raise ContractError("mask was not built on the given grid")
    if not (0 <= centroid.x_c <= pattern.width - 1) or not (
        0 <= centroid.y_c <= pattern.height - 1
    ):
        raise InputError(f"centroid {centroid} lies outside the pattern")

    intensities = pattern.intensities.ravel()
    if normalize and intensities.max() > 0:
        intensities = intensities / intensities.max()

    samples = sample_vectors(pattern, centroid, geometry)
    tree = cKDTree(samples)
    spacing = _chord_to_angle(tree.query(samples, k=2)[0][:, 1]).mean()

    pixels = mask.indices
    chords, neighbours = tree.query(grid.vectors[pixels], k=k)
    angles = _chord_to_angle(chords)

    weights = 1.0 / np.maximum(angles, EXACT_HIT) ** power
    hits = angles[:, 0] < EXACT_HIT
    weights[hits] = 0.0
    weights[hits, 0] = 1.0
    weights /= weights.sum(axis=1, keepdims=True)
    masked_values = (weights * intensities[neighbours]).sum(axis=1)

    gaps = angles[:, 0] > 3.0 * spacing
    if gaps.any():
        warnings.warn(
            f"{int(gaps.sum())} of {pixels.size} masked pixels have no raster "
            "sample nearby and are left invalid",
            CoverageGapWarning,
            stacklevel=2,
        )
    masked_values[gaps] = 0.0

    values = np.zeros(grid.n_pix)
    valid = np.zeros(grid.n_pix, dtype=bool)
    values[pixels] = masked_values
    valid[pixels] = ~gaps
    return SphericalSignal(grid, values, valid)
