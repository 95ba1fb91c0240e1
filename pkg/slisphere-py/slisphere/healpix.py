"""Nested HEALPix grids: indexing, coordinates, adjacency, hierarchy and cap masks.

Every grid in the package uses the nested ordering, so the children of pixel
``i`` are ``4i .. 4i + 3`` one level finer and its parent is ``i // 4``.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import healpy as hp
import numpy as np

from .errors import (
    InvalidAngleError,
    InvalidResolutionError,
    NoParentError,
    PixelIndexError,
)

# points closer than this to a pixel boundary are assigned to the lowest index
BOUNDARY_EPS = 1e-11


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridResolution:
    n_side: int

    def __post_init__(self):
        n_side = self.n_side
        if (
            isinstance(n_side, bool)
            or not isinstance(n_side, (int, np.integer))
            or n_side < 1
            or n_side & (n_side - 1) != 0
        ):
            raise InvalidResolutionError(
                f"n_side must be a positive power of two, got {n_side!r}"
            )
        object.__setattr__(self, "n_side", int(n_side))

    @property
    def n_pix(self) -> int:
        return 12 * self.n_side**2

    @property
    def pixel_area(self) -> float:
        return 4.0 * np.pi / self.n_pix


@dataclass(frozen=True, eq=False)
class HealpixGrid:
    """Pixel centers of a nested HEALPix grid, immutable after construction."""

    resolution: GridResolution
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)

    @property
    def n_side(self) -> int:
        return self.resolution.n_side

    @property
    def n_pix(self) -> int:
        return self.resolution.n_pix

    @property
    def vectors(self) -> np.ndarray:
        """Unit vectors of the pixel centers, shape ``[n_pix, 3]``."""
        return _vectors(self.n_side)

    def __eq__(self, other) -> bool:
        return isinstance(other, HealpixGrid) and self.n_side == other.n_side

    def __hash__(self) -> int:
        return hash(("HealpixGrid", self.n_side))


@dataclass(frozen=True, eq=False)
class CapMask:
    """Pixels of ``grid`` whose center colatitude is at most ``theta_max``."""

    grid: HealpixGrid
    included: np.ndarray = field(repr=False)
    theta_max: float

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.included)

    @property
    def n_included(self) -> int:
        return int(self.included.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CapMask)
            and self.grid == other.grid
            and self.theta_max == other.theta_max
        )

    def __hash__(self) -> int:
        return hash(("CapMask", self.grid.n_side, self.theta_max))


@lru_cache(maxsize=None)
def build_grid(n_side: int) -> HealpixGrid:
    resolution = GridResolution(n_side)
    theta, phi = hp.pix2ang(resolution.n_side, np.arange(resolution.n_pix), nest=True)
    return HealpixGrid(resolution, _frozen(theta), _frozen(np.mod(phi, 2 * np.pi)))


@lru_cache(maxsize=None)
def _vectors(n_side: int) -> np.ndarray:
    grid = build_grid(n_side)
    return _frozen(angles_to_vectors(grid.theta, grid.phi))


def angles_to_vectors(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    sin_theta = np.sin(theta)
    return np.stack(
        [sin_theta * np.cos(phi), sin_theta * np.sin(phi), np.cos(theta)], axis=-1
    )


def vectors_to_angles(vectors) -> tuple[np.ndarray, np.ndarray]:
    vectors = np.asarray(vectors, dtype=np.float64)
    norm = np.linalg.norm(vectors, axis=-1)
    theta = np.arccos(np.clip(vectors[..., 2] / norm, -1.0, 1.0))
    phi = np.mod(np.arctan2(vectors[..., 1], vectors[..., 0]), 2 * np.pi)
    return theta, phi


def _check_index(grid: HealpixGrid, idx):
    idx_array = np.asarray(idx)
    if not np.issubdtype(idx_array.dtype, np.integer):
        raise PixelIndexError(f"pixel index must be an integer, got {idx!r}")
    if np.any(idx_array < 0) or np.any(idx_array >= grid.n_pix):
        raise PixelIndexError(
            f"pixel index out of range [0, {grid.n_pix}) for n_side={grid.n_side}"
        )
    return idx_array


def pix2ang(grid: HealpixGrid, idx):
    """Center ``(theta, phi)`` of pixel(s) ``idx``."""
    idx_array = _check_index(grid, idx)
    theta, phi = grid.theta[idx_array], grid.phi[idx_array]
    if idx_array.ndim == 0:
        return float(theta), float(phi)
    return theta, phi


def ang2pix(grid: HealpixGrid, theta, phi):
    """Index of the pixel containing ``(theta, phi)``.

    Points within `BOUNDARY_EPS` of a region boundary go to the lowest of the
    pixels sharing that boundary.
    """
    theta_array = np.asarray(theta, dtype=np.float64)
    phi_array = np.asarray(phi, dtype=np.float64)
    if not (np.all(np.isfinite(theta_array)) and np.all(np.isfinite(phi_array))):
        raise InvalidAngleError("angles must be finite")
    if np.any(theta_array < 0.0) or np.any(theta_array > np.pi):
        raise InvalidAngleError("theta must lie in [0, pi]")

    v = angles_to_vectors(theta_array, phi_array).reshape(-1, 3)
    pixels = hp.vec2pix(grid.n_side, v[:, 0], v[:, 1], v[:, 2], nest=True)

    # tangent frame at each point, falling back to x/y at the poles
    e1 = np.cross(np.array([0.0, 0.0, 1.0]), v)
    norm = np.linalg.norm(e1, axis=1)
    polar = norm < 1e-12
    e1[polar] = np.array([1.0, 0.0, 0.0])
    e1[~polar] /= norm[~polar, None]
    e2 = np.cross(v, e1)
    for angle in np.arange(8) * np.pi / 4:
        w = v + BOUNDARY_EPS * (np.cos(angle) * e1 + np.sin(angle) * e2)
        pixels = np.minimum(
            pixels, hp.vec2pix(grid.n_side, w[:, 0], w[:, 1], w[:, 2], nest=True)
        )

    pixels = pixels.reshape(np.broadcast(theta_array, phi_array).shape)
    if pixels.ndim == 0:
        return int(pixels)
    return pixels.astype(np.int64)


def neighbors(grid: HealpixGrid, idx: int) -> list[int]:
    """Edge and corner neighbours of pixel ``idx``, sorted ascending.

    Pixels next to a corner where only three pixels meet have seven
    neighbours; at ``n_side = 1`` every base pixel has six.
    """
    idx = int(_check_index(grid, idx))
    return list(_neighbor_table(grid.n_side)[idx])


@lru_cache(maxsize=None)
def _neighbor_table(n_side: int) -> tuple[tuple[int, ...], ...]:
    n_pix = 12 * n_side**2
    raw = hp.get_all_neighbours(n_side, np.arange(n_pix), nest=True).T
    table = []
    for i, row in enumerate(raw):
        table.append(tuple(sorted({int(j) for j in row if j >= 0 and j != i})))
    return tuple(table)


def neighbor_edges(grid: HealpixGrid) -> np.ndarray:
    """All neighbour pairs ``(i, j)`` with ``i < j``, shape ``[n_edges, 2]``."""
    table = _neighbor_table(grid.n_side)
    edges = [(i, j) for i, row in enumerate(table) for j in row if i < j]
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def parent(grid: HealpixGrid, idx):
    """Index at ``n_side / 2`` of the pixel containing pixel ``idx``."""
    idx_array = _check_index(grid, idx)
    if grid.n_side == 1:
        raise NoParentError("base pixels (n_side=1) have no parent")
    return idx_array // 4 if idx_array.ndim else int(idx_array) // 4


def children(grid: HealpixGrid, idx: int) -> list[int]:
    """Indices at ``2 n_side`` of the four sub-pixels of pixel ``idx``."""
    idx = int(_check_index(grid, idx))
    return [4 * idx + k for k in range(4)]


def cap_mask(grid: HealpixGrid, theta_max: float) -> CapMask:
    theta_max = float(theta_max)
    if not np.isfinite(theta_max) or not 0.0 < theta_max <= np.pi:
        raise InvalidAngleError(f"theta_max must lie in (0, pi], got {theta_max}")
    return CapMask(grid, _frozen(grid.theta <= theta_max), theta_max)


def full_mask(grid: HealpixGrid) -> CapMask:
    return cap_mask(grid, np.pi)


def azimuthal_permutation(grid: HealpixGrid, delta: float) -> np.ndarray:
    """Nearest-pixel resampling index for an azimuthal rotation by ``delta``.

    ``values[perm]`` is the signal ``values`` rotated by ``delta`` about z.
    """
    return ang2pix(grid, grid.theta, np.mod(grid.phi - delta, 2 * np.pi))
