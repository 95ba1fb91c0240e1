"""Synthetic scattering patterns with known fibre groundtruth.

A synthetic pattern is a weighted mixture of fibre kernels on the measurement
cap, optionally with relative Gaussian noise, rendered onto a raster by the
forward gnomonic mapping that `project_to_sphere` inverts.
"""

from dataclasses import dataclass, field

import healpy as hp
import numpy as np

from .errors import InputError
from .forward_model import (
    FODF,
    EllipsoidKernelParams,
    FibreOrientation,
    fibre_kernel,
    mixture_directions,
    mixture_pixels,
)
from .harmonics import SHSmoother, SphericalSignal
from .healpix import CapMask, HealpixGrid, build_grid
from .projection import (
    MicroscopeGeometry,
    PatternCentroid,
    ScatteringPattern,
    inverse_gnomonic,
)

MAX_FIBRES = 3


@dataclass(frozen=True)
class SyntheticSpec:
    """Groundtruth of one synthetic pattern. Weights are normalised to sum 1."""

    fibres: tuple[tuple[FibreOrientation, float], ...] = ()
    noise: float = 0.0
    kernel: EllipsoidKernelParams = field(default_factory=EllipsoidKernelParams)
    geometry: MicroscopeGeometry = field(default_factory=MicroscopeGeometry)
    seed: int = 0

    def __post_init__(self):
        fibres = tuple((orientation, float(w)) for orientation, w in self.fibres)
        if len(fibres) > MAX_FIBRES:
            raise InputError(f"at most {MAX_FIBRES} fibres, got {len(fibres)}")
        if any(not w > 0 for _, w in fibres):
            raise InputError("fibre weights must be positive")
        if not 0 <= self.noise < 1:
            raise InputError(f"noise level must lie in [0, 1), got {self.noise}")
        total = sum(w for _, w in fibres)
        if fibres and abs(total - 1.0) > 1e-12:
            fibres = tuple((o, w / total) for o, w in fibres)
        object.__setattr__(self, "fibres", fibres)

    @property
    def n_fibres(self) -> int:
        return len(self.fibres)

    @property
    def axes(self) -> np.ndarray:
        return np.array([o.axis for o, _ in self.fibres]).reshape(-1, 3)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.fibres])


@dataclass(frozen=True)
class SynthConfig:
    """Random synthetic dataset. Angles are in degrees."""

    count: int = 1024
    min_fibres: int = 1
    max_fibres: int = 3
    noise: float = 0.0
    max_inclination: float = 90.0
    in_plane: bool = False
    # 0 draws independent directions; otherwise two fibres at this angle
    crossing_angle: float = 0.0
    min_separation: float = 30.0
    height: int = 81
    width: int = 81
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise InputError("synthetic count must be positive")
        if not 1 <= self.min_fibres <= self.max_fibres <= MAX_FIBRES:
            raise InputError(
                f"fibre counts must satisfy 1 <= min <= max <= {MAX_FIBRES}"
            )
        if self.height < 1 or self.width < 1:
            raise InputError("raster shape must be positive")


def render_signal(
    signal: SphericalSignal,
    geometry: MicroscopeGeometry,
    shape: tuple[int, int] = (81, 81),
    centroid: PatternCentroid | None = None,
) -> ScatteringPattern:
    """Raster whose pixels sample ``signal`` bilinearly at their sphere angles.

    Invalid pixels of the signal count as zero.
    """
    height, width = shape
    if centroid is None:
        centroid = PatternCentroid((width - 1) / 2, (height - 1) / 2)
    rows, cols = np.mgrid[0:height, 0:width]
    theta, phi = inverse_gnomonic(cols - centroid.x_c, rows - centroid.y_c, geometry)
    sphere_map = np.where(signal.valid, signal.values, 0.0)
    raster = hp.get_interp_val(sphere_map, theta.ravel(), phi.ravel(), nest=True)
    return ScatteringPattern(np.maximum(raster, 0.0).reshape(height, width))


def mixture_signal(
    spec: SyntheticSpec, grid: HealpixGrid, mask: CapMask
) -> SphericalSignal:
    """Noiseless weighted kernel mixture on the mask."""
    values = np.zeros(mask.n_included)
    for orientation, weight in spec.fibres:
        kernel = fibre_kernel(orientation, spec.kernel, grid, mask)
        values += weight * kernel.signal.values[mask.indices]
    return SphericalSignal.from_mask(mask, values)


def generate_synthetic(
    spec: SyntheticSpec,
    grid: HealpixGrid,
    mask: CapMask,
    shape: tuple[int, int] = (81, 81),
) -> tuple[ScatteringPattern, SphericalSignal]:
    signal = mixture_signal(spec, grid, mask)
    values = signal.values[mask.indices]
    if spec.noise > 0 and values.size:
        rng = np.random.default_rng(spec.seed)
        sigma = spec.noise * values.max()
        values = np.maximum(values + sigma * rng.standard_normal(values.size), 0.0)
        signal = SphericalSignal.from_mask(mask, values)
    return render_signal(signal, spec.geometry, shape), signal


def _random_axis(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    phi = rng.uniform(0.0, 2 * np.pi)
    if config.in_plane:
        theta = 0.0
    else:
        # uniform on the sphere, restricted to the inclination range
        theta = np.arcsin(rng.uniform(0.0, np.sin(np.radians(config.max_inclination))))
    return FibreOrientation(phi, theta).axis


def _perpendicular(rng: np.random.Generator, axis: np.ndarray, in_plane: bool):
    if in_plane:
        return np.cross([0.0, 0.0, 1.0], axis)
    while True:
        candidate = np.cross(axis, rng.standard_normal(3))
        norm = np.linalg.norm(candidate)
        if norm > 1e-6:
            return candidate / norm


def _axial_angle(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.arccos(np.clip(abs(u @ v), 0.0, 1.0)))


def random_spec(
    config: SynthConfig,
    index: int,
    kernel: EllipsoidKernelParams = EllipsoidKernelParams(),
    geometry: MicroscopeGeometry = MicroscopeGeometry(),
) -> SyntheticSpec:
    """Spec of pattern ``index`` of the dataset described by ``config``."""
    rng = np.random.default_rng([config.seed, index])
    if config.crossing_angle > 0:
        first = _random_axis(rng, config)
        angle = np.radians(config.crossing_angle)
        second = np.cos(angle) * first + np.sin(angle) * _perpendicular(
            rng, first, config.in_plane
        )
        axes = [first, second]
    else:
        n_fibres = int(rng.integers(config.min_fibres, config.max_fibres + 1))
        separation = np.radians(config.min_separation)
        axes = []
        for _ in range(100 * n_fibres):
            if len(axes) == n_fibres:
                break
            candidate = _random_axis(rng, config)
            if all(_axial_angle(candidate, a) >= separation for a in axes):
                axes.append(candidate)
    weights = rng.uniform(0.5, 1.0, len(axes))
    fibres = tuple(
        (FibreOrientation.from_vector(a), w) for a, w in zip(axes, weights)
    )
    noise_seed = int(np.random.SeedSequence([config.seed, index]).generate_state(1)[0])
    return SyntheticSpec(fibres, config.noise, kernel, geometry, noise_seed)


def synthetic_dataset(
    config: SynthConfig,
    grid: HealpixGrid,
    mask: CapMask,
    kernel: EllipsoidKernelParams = EllipsoidKernelParams(),
    geometry: MicroscopeGeometry = MicroscopeGeometry(),
):
    """``(spec, pattern, signal)`` for every pattern of the dataset, in order."""
    shape = (config.height, config.width)
    for index in range(config.count):
        spec = random_spec(config, index, kernel, geometry)
        yield (spec, *generate_synthetic(spec, grid, mask, shape))


def groundtruth_fodf(
    spec: SyntheticSpec, n_side: int = 4, l_max: int = 8, concentration: float = 20.0
) -> FODF:
    """Reference fODF: one Watson lobe per fibre, scaled by its weight.

    The lobes are sampled on the full grid at ``n_side`` and fitted with even
    SH; the weights view holds the lobe values on the mixture atoms.
    """
    grid = build_grid(n_side)
    values = np.zeros(grid.n_pix)
    for orientation, weight in spec.fibres:
        cosine = grid.vectors @ orientation.axis
        values += weight * np.exp(concentration * (cosine**2 - 1.0))
    atoms = mixture_pixels(n_side)
    smoother = SHSmoother(grid.theta, grid.phi, l_max, atom_rows=atoms)
    axes = np.array([d.axis for d in mixture_directions(n_side)])
    return FODF(values[atoms], smoother.sh_coeffs(values), axes, values)
