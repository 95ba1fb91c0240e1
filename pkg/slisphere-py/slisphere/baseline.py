"""In-plane fibre directions from the azimuthal line profile of a pattern.

The pattern is integrated along radii from the centroid into a circular
profile, peaks of the profile are picked by prominence, and antipodal peak
pairs give one fibre direction each, perpendicular to the pair axis.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.signal import find_peaks

from .errors import InputError
from .forward_model import FODF, mixture_directions
from .harmonics import SHSmoother
from .metrics import axial_angle
from .projection import PatternCentroid, ScatteringPattern

RADIAL_STEP = 0.5
RAYS_PER_BIN = 5


def polar_line_profile(
    pattern: ScatteringPattern, centroid: PatternCentroid, n_bins: int = 72
) -> np.ndarray:
    """Mean intensity per azimuth bin; bin ``b`` is centred on ``b * 360 / n_bins``.

    Each bin averages `RAYS_PER_BIN` rays sampled bilinearly every half pixel
    out to the largest radius that stays inside the raster.
    """
    if n_bins < 1:
        raise InputError(f"n_bins must be positive, got {n_bins}")
    x_c, y_c = centroid.x_c, centroid.y_c
    if not (0 <= x_c <= pattern.width - 1 and 0 <= y_c <= pattern.height - 1):
        raise InputError(f"centroid {centroid} lies outside the pattern")
    radius = min(x_c, pattern.width - 1 - x_c, y_c, pattern.height - 1 - y_c)
    radii = np.arange(0.0, radius + 1e-9, RADIAL_STEP)

    width = 2 * np.pi / n_bins
    offsets = ((np.arange(RAYS_PER_BIN) + 0.5) / RAYS_PER_BIN - 0.5) * width
    phi = (np.arange(n_bins)[:, None] * width + offsets[None, :]).ravel()
    rows = y_c + radii[None, :] * np.cos(phi)[:, None]
    cols = x_c + radii[None, :] * np.sin(phi)[:, None]
    samples = map_coordinates(
        pattern.intensities, [rows.ravel(), cols.ravel()], order=1, mode="nearest"
    )
    return samples.reshape(n_bins, -1).mean(axis=1)


@dataclass(frozen=True)
class Peak:
    azimuth: float
    prominence: float
    value: float
    bin: int


@dataclass(frozen=True)
class PeakSet:
    """Profile peaks sorted by descending prominence."""

    peaks: tuple[Peak, ...] = ()

    def __len__(self) -> int:
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    @property
    def azimuths(self) -> np.ndarray:
        return np.array([p.azimuth for p in self.peaks])


def pick_peaks(profile, min_prominence: float = 0.1) -> PeakSet:
    """Circular local maxima whose prominence reaches a fraction of the range."""
    profile = np.asarray(profile, dtype=np.float64)
    n_bins = profile.size
    if profile.ndim != 1 or n_bins < 8:
        raise InputError(f"profile needs at least 8 bins, got shape {profile.shape}")
    span = profile.max() - profile.min()
    if span <= 0:
        return PeakSet()

    # three copies make the middle one see the full circle on both sides
    tiled = np.tile(profile, 3)
    indices, properties = find_peaks(tiled, prominence=min_prominence * span)
    middle = (indices >= n_bins) & (indices < 2 * n_bins)
    peaks = [
        Peak(
            azimuth=float(2 * np.pi * (i - n_bins) / n_bins),
            prominence=float(prominence),
            value=float(tiled[i]),
            bin=int(i - n_bins),
        )
        for i, prominence in zip(
            indices[middle], properties["prominences"][middle]
        )
    ]
    peaks.sort(key=lambda p: -p.prominence)
    return PeakSet(tuple(peaks))


def _wrap(angle):
    return (angle + np.pi) % (2 * np.pi) - np.pi


def slix_directions(peaks: PeakSet, tolerance: float = np.radians(35.0)) -> list[float]:
    """In-plane fibre azimuths in ``[0, pi)`` from antipodal peak pairs.

    Peaks are paired greedily in prominence order with the unpaired partner
    closest to the opposite side; unpaired peaks are dropped.
    """
    remaining = list(peaks)
    directions = []
    while remaining:
        peak = remaining.pop(0)
        gaps = [
            abs(abs(_wrap(other.azimuth - peak.azimuth)) - np.pi)
            for other in remaining
        ]
        candidates = [j for j, gap in enumerate(gaps) if gap <= tolerance]
        if not candidates:
            continue
        partner = remaining.pop(min(candidates, key=lambda j: gaps[j]))
        opposite = partner.azimuth - np.pi
        mean = peak.azimuth + _wrap(opposite - peak.azimuth) / 2
        directions.append(float(np.mod(mean + np.pi / 2, np.pi)))
    return directions


def slix_fodf(directions, n_side: int = 4, l_max: int = 8) -> FODF:
    """fODF with one unit spike per direction at its nearest mixture atom."""
    axes = np.array([d.axis for d in mixture_directions(n_side)])
    raw = np.zeros(axes.shape[0])
    for phi in directions:
        target = np.array([np.cos(phi), np.sin(phi), 0.0])
        raw[int(np.argmin(axial_angle(axes, target)))] += 1.0
    if raw.sum() > 0:
        raw /= raw.sum()
    theta = np.arccos(np.clip(axes[:, 2], -1.0, 1.0))
    smoother = SHSmoother(theta, np.arctan2(axes[:, 1], axes[:, 0]), l_max)
    sh = smoother.sh_coeffs(raw)
    return FODF(smoother.basis @ sh.values, sh, axes, raw)
