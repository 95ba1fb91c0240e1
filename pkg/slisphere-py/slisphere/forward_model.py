"""Rotated-ellipsoid scattering kernels and their non-negative mixtures.

A fibre with axis ``f`` scatters light into the band of directions ``v`` on the
measurement sphere where the quadric

    Q(v) = (v - x_c)^T R^T diag(alpha, 1, 1) R (v - x_c)

stays close to one. The kernel is ``exp(-(Q - 1)^2 / (2 sigma_k^2))``; with
``x_c = 0`` this is a soft great-circle band perpendicular to the fibre, which
the measurement cap truncates into a C-shape for inclined fibres.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
import warnings

import numpy as np

from .errors import (
    ContractError,
    DegenerateKernelWarning,
    InputError,
    NegativeWeightWarning,
)
from .harmonics import SHCoeffs, SphericalSignal
from .healpix import CapMask, GridResolution, HealpixGrid, build_grid

DEGENERATE_LEVEL = 1e-6
_EQUATOR_TOL = 1e-9


@dataclass(frozen=True)
class FibreOrientation:
    """Fibre axis with in-plane azimuth ``phi`` and inclination ``theta``.

    The axis is ``(cos theta cos phi, cos theta sin phi, sin theta)``. Axes are
    undirected, so the stored representative has a non-negative z component,
    and ``phi`` lies in ``[0, pi)`` for in-plane fibres.
    """

    phi: float
    theta: float

    def __post_init__(self):
        if not (np.isfinite(self.phi) and np.isfinite(self.theta)):
            raise InputError("fibre angles must be finite")
        phi, theta = float(self.phi), float(self.theta)
        if not _is_canonical(phi, theta):
            phi, theta = _canonical_angles(_axis(phi, theta))
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_vector(cls, vector) -> "FibreOrientation":
        vector = np.asarray(vector, dtype=np.float64)
        phi, theta = _canonical_angles(vector / np.linalg.norm(vector))
        return cls(phi, theta)

    @property
    def axis(self) -> np.ndarray:
        return _axis(self.phi, self.theta)


def _axis(phi: float, theta: float) -> np.ndarray:
    return np.array(
        [np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)]
    )


def _is_canonical(phi: float, theta: float) -> bool:
    if theta == 0.0:
        return 0.0 <= phi < np.pi
    if theta == np.pi / 2:
        return phi == 0.0
    return _EQUATOR_TOL < theta < np.pi / 2 and 0.0 <= phi < 2 * np.pi


def _canonical_angles(axis: np.ndarray) -> tuple[float, float]:
    if axis[2] < 0:
        axis = -axis
    if abs(axis[2]) < _EQUATOR_TOL:
        return float(np.mod(np.arctan2(axis[1], axis[0]), np.pi)), 0.0
    theta = float(np.arcsin(min(axis[2], 1.0)))
    if np.hypot(axis[0], axis[1]) < _EQUATOR_TOL:
        return 0.0, float(np.pi / 2)
    return float(np.mod(np.arctan2(axis[1], axis[0]), 2 * np.pi)), theta


@dataclass(frozen=True)
class EllipsoidKernelParams:
    alpha: float = 20.0
    sigma_k: float = 0.5
    x_c: tuple[float, float, float] = (0.0, 0.0, 0.0)
    normalize: bool = True

    def __post_init__(self):
        if not self.alpha > 1 or not self.sigma_k > 0:
            raise InputError(
                f"kernel requires alpha > 1 and sigma_k > 0, "
                f"got alpha={self.alpha}, sigma_k={self.sigma_k}"
            )
        object.__setattr__(self, "x_c", tuple(float(c) for c in self.x_c))


def rotation_matrix(orientation: FibreOrientation) -> np.ndarray:
    """``R = R_y(theta) R_z(phi)``, so that ``R^T e_x`` is the fibre axis.

    ``R_z`` rotates the coordinate frame about z, ``R_y`` is the usual
    rotation matrix about y.
    """
    c_phi, s_phi = np.cos(orientation.phi), np.sin(orientation.phi)
    c_theta, s_theta = np.cos(orientation.theta), np.sin(orientation.theta)
    r_z = np.array([[c_phi, s_phi, 0.0], [-s_phi, c_phi, 0.0], [0.0, 0.0, 1.0]])
    r_y = np.array([[c_theta, 0.0, s_theta], [0.0, 1.0, 0.0], [-s_theta, 0.0, c_theta]])
    return r_y @ r_z


def quadric_matrix(orientation: FibreOrientation, params: EllipsoidKernelParams):
    rotation = rotation_matrix(orientation)
    return rotation.T @ np.diag([params.alpha, 1.0, 1.0]) @ rotation


def quadric_value(v, orientation: FibreOrientation, params: EllipsoidKernelParams):
    """``Q(v)`` for unit vector(s) ``v`` of shape ``[..., 3]``."""
    v = np.asarray(v, dtype=np.float64)
    if not np.allclose(np.linalg.norm(v, axis=-1), 1.0, atol=1e-9):
        raise InputError("quadric_value expects unit vectors")
    offset = v - np.asarray(params.x_c)
    value = np.einsum(
        "...i,ij,...j->...", offset, quadric_matrix(orientation, params), offset
    )
    return float(value) if value.ndim == 0 else value


def _kernel_values(
    orientation: FibreOrientation,
    params: EllipsoidKernelParams,
    vectors: np.ndarray,
) -> tuple[np.ndarray, bool]:
    q = quadric_value(vectors, orientation, params)
    values = np.exp(-((q - 1.0) ** 2) / (2.0 * params.sigma_k**2))
    degenerate = bool(values.max(initial=0.0) < DEGENERATE_LEVEL)
    if params.normalize and values.max(initial=0.0) > 0:
        values = values / values.max()
    return values, degenerate


@dataclass(frozen=True, eq=False)
class FibreKernel:
    orientation: FibreOrientation
    signal: SphericalSignal


def fibre_kernel(
    orientation: FibreOrientation,
    params: EllipsoidKernelParams,
    grid: HealpixGrid,
    mask: CapMask,
) -> FibreKernel:
    if mask.grid != grid:
        raise ContractError("mask was not built on the given grid")
    values, degenerate = _kernel_values(orientation, params, grid.vectors[mask.indices])
    if degenerate:
        warnings.warn(
            f"kernel of {orientation} is below {DEGENERATE_LEVEL} on the whole mask",
            DegenerateKernelWarning,
            stacklevel=2,
        )
    return FibreKernel(orientation, SphericalSignal.from_mask(mask, values))


def mixture_pixels(n_side: int) -> np.ndarray:
    """Upper-hemisphere pixels used as mixture atoms at resolution ``n_side``.

    Pixels with ``z > 0`` are kept, and of the equatorial antipodal pairs only
    the member with ``phi < pi``.
    """
    grid = build_grid(GridResolution(n_side).n_side)
    z = grid.vectors[:, 2]
    upper = z > _EQUATOR_TOL
    equator = (np.abs(z) <= _EQUATOR_TOL) & (grid.phi < np.pi - _EQUATOR_TOL)
    return np.flatnonzero(upper | equator)


def mixture_directions(
    resolution: GridResolution | int = 4,
) -> list[FibreOrientation]:
    if isinstance(resolution, GridResolution):
        resolution = resolution.n_side
    vectors = build_grid(resolution).vectors
    return [
        FibreOrientation.from_vector(vectors[i]) for i in mixture_pixels(resolution)
    ]


@dataclass(frozen=True, eq=False)
class KernelBank:
    """Kernels of every mixture atom, one column per direction.

    ``matrix`` has shape ``[n_masked, n_directions]``; rows follow ``pixels``,
    the included pixels of ``mask`` in ascending order.
    """

    directions: tuple[FibreOrientation, ...]
    params: EllipsoidKernelParams
    mask: CapMask
    matrix: np.ndarray = field(repr=False)

    @property
    def grid(self) -> HealpixGrid:
        return self.mask.grid

    @property
    def pixels(self) -> np.ndarray:
        return self.mask.indices

    @property
    def n_directions(self) -> int:
        return len(self.directions)

    @property
    def axes(self) -> np.ndarray:
        return np.array([d.axis for d in self.directions])

    @property
    def cache_key(self) -> tuple:
        return _cache_key(self.directions, self.params, self.mask)


def _cache_key(directions, params, mask) -> tuple:
    return (
        mask.grid.n_side,
        mask.theta_max,
        params,
        tuple((d.phi, d.theta) for d in directions),
    )


# least recently used banks, oldest first
_BANKS: OrderedDict[tuple, KernelBank] = OrderedDict()
BANK_CACHE_SIZE = 8


def _remember(bank: KernelBank) -> KernelBank:
    _BANKS[bank.cache_key] = bank
    _BANKS.move_to_end(bank.cache_key)
    while len(_BANKS) > BANK_CACHE_SIZE:
        _BANKS.popitem(last=False)
    return bank


def build_kernel_bank(
    directions,
    params: EllipsoidKernelParams,
    grid: HealpixGrid,
    mask: CapMask,
) -> KernelBank:
    """Stacked kernels of ``directions``, computed once per configuration."""
    directions = tuple(directions)
    if not directions:
        raise InputError("a kernel bank needs at least one direction")
    if mask.grid != grid:
        raise ContractError("mask was not built on the given grid")
    key = _cache_key(directions, params, mask)
    if key in _BANKS:
        return _remember(_BANKS[key])

    vectors = grid.vectors[mask.indices]
    matrix = np.empty((vectors.shape[0], len(directions)))
    for j, orientation in enumerate(directions):
        matrix[:, j], degenerate = _kernel_values(orientation, params, vectors)
        if degenerate:
            warnings.warn(
                f"kernel of direction {j} ({orientation}) is below "
                f"{DEGENERATE_LEVEL} on the whole mask",
                DegenerateKernelWarning,
                stacklevel=2,
            )
    matrix.setflags(write=False)
    return _remember(KernelBank(directions, params, mask, matrix))


def register_kernel_bank(bank: KernelBank):
    """Make a bank loaded from disk available to `build_kernel_bank`."""
    _remember(bank)


def reconstruct(weights, bank: KernelBank, strict: bool = False) -> SphericalSignal:
    """Mixture ``S_r = K w`` on the bank's mask."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (bank.n_directions,):
        raise ContractError(
            f"expected {bank.n_directions} weights, got shape {weights.shape}"
        )
    if strict and np.any(weights < 0):
        warnings.warn(
            f"{int((weights < 0).sum())} negative mixture weights",
            NegativeWeightWarning,
            stacklevel=2,
        )
    return SphericalSignal.from_mask(bank.mask, bank.matrix @ weights)


@dataclass(frozen=True, eq=False)
class FODF:
    """Fibre orientation distribution over the mixture atoms.

    ``weights`` are the (smoothed) per-atom values, ``sh`` their even SH
    coefficients, ``axes`` the unit atom directions and ``raw`` the values
    before SH smoothing, on whatever grid produced them.
    """

    weights: np.ndarray = field(repr=False)
    sh: SHCoeffs
    axes: np.ndarray = field(repr=False)
    raw: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        axes = np.asarray(self.axes, dtype=np.float64)
        if axes.shape != (weights.size, 3):
            raise ContractError(
                f"expected {weights.size} atom axes, got shape {axes.shape}"
            )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "axes", axes)

    @property
    def clamped(self) -> np.ndarray:
        return np.maximum(self.weights, 0.0)
