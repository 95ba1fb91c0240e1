"""Even-degree real spherical harmonics on HEALPix signals.

Coefficients are ordered by degree ``l = 0, 2, ..., l_max`` and, within a
degree, by order ``m = -l .. l``. Restricting to even degrees makes every
synthesised function antipodally symmetric.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import torch
from scipy.special import lpmv

from .errors import ContractError, InputError, RankError
from .healpix import CapMask, HealpixGrid


@dataclass(frozen=True, eq=False)
class SphericalSignal:
    """Real values on a HEALPix grid, with a per-pixel validity flag."""

    grid: HealpixGrid
    values: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.shape != (self.grid.n_pix,) or valid.shape != (self.grid.n_pix,):
            raise ContractError(
                f"signal arrays must have shape ({self.grid.n_pix},), "
                f"got {values.shape} and {valid.shape}"
            )
        if not np.all(np.isfinite(values[valid])):
            raise InputError("signal values must be finite on valid pixels")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_mask(cls, mask: CapMask, masked_values) -> "SphericalSignal":
        """Signal equal to ``masked_values`` on the mask and zero elsewhere."""
        values = np.zeros(mask.grid.n_pix)
        values[mask.included] = masked_values
        return cls(mask.grid, values, mask.included.copy())

    @property
    def masked_values(self) -> np.ndarray:
        return self.values[self.valid]


def n_coeffs(l_max: int) -> int:
    return (l_max + 1) * (l_max + 2) // 2


def _check_l_max(l_max: int):
    if isinstance(l_max, bool) or not isinstance(l_max, (int, np.integer)):
        raise ContractError(f"l_max must be an integer, got {l_max!r}")
    if l_max < 0 or l_max % 2 != 0:
        raise ContractError(f"l_max must be even and non-negative, got {l_max}")


def sh_degrees(l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Degrees and orders ``(l, m)`` of every coefficient, in file order."""
    _check_l_max(l_max)
    degrees, orders = [], []
    for degree in range(0, l_max + 1, 2):
        for order in range(-degree, degree + 1):
            degrees.append(degree)
            orders.append(order)
    return np.array(degrees), np.array(orders)


@dataclass(frozen=True, eq=False)
class SHCoeffs:
    l_max: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_l_max(self.l_max)
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (n_coeffs(self.l_max),):
            raise ContractError(
                f"expected {n_coeffs(self.l_max)} coefficients for "
                f"l_max={self.l_max}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("SH coefficients must be finite")
        object.__setattr__(self, "values", values)

    @property
    def degrees(self) -> np.ndarray:
        return sh_degrees(self.l_max)[0]


def real_sh(l_max: int, theta, phi) -> np.ndarray:
    """Orthonormal even real SH evaluated at ``(theta, phi)``, ``[n, n_coeffs]``."""
    degrees, orders = sh_degrees(l_max)
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    cos_theta = np.cos(theta)
    basis = np.empty((theta.size, degrees.size))
    for j, (degree, order) in enumerate(zip(degrees, orders)):
        m = abs(order)
        ratio = factorial(degree - m) / factorial(degree + m)
        norm = np.sqrt((2 * degree + 1) / (4 * np.pi) * ratio)
        # lpmv carries the Condon-Shortley phase, removed here
        legendre = (-1) ** m * lpmv(m, degree, cos_theta)
        if order == 0:
            basis[:, j] = norm * legendre
        elif order > 0:
            basis[:, j] = np.sqrt(2) * norm * legendre * np.cos(m * phi)
        else:
            basis[:, j] = np.sqrt(2) * norm * legendre * np.sin(m * phi)
    return basis


@dataclass(frozen=True, eq=False)
class SHBasis:
    """Basis matrix ``B[i, j] = Y_j(pixel_i)`` over the pixels of a mask."""

    grid: HealpixGrid
    l_max: int
    pixels: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)


def basis_matrix(
    grid: HealpixGrid, l_max: int = 8, mask: CapMask | None = None
) -> SHBasis:
    pixels = np.arange(grid.n_pix) if mask is None else mask.indices
    if pixels.size < n_coeffs(l_max):
        raise RankError(
            f"{pixels.size} pixels cannot determine {n_coeffs(l_max)} "
            f"coefficients (l_max={l_max})"
        )
    matrix = real_sh(l_max, grid.theta[pixels], grid.phi[pixels])
    matrix.setflags(write=False)
    return SHBasis(grid, l_max, pixels, matrix)


def fit_coeffs(signal: SphericalSignal, basis: SHBasis) -> SHCoeffs:
    """Least-squares SH fit over the valid pixels of ``signal``.

    Rank-deficient systems get the minimum-norm solution.
    """
    if signal.grid != basis.grid:
        raise ContractError("signal and basis live on different grids")
    rows = signal.valid[basis.pixels]
    values = signal.values[basis.pixels][rows]
    if not np.all(np.isfinite(values)):
        raise InputError("cannot fit non-finite signal values")
    if rows.sum() < n_coeffs(basis.l_max):
        raise RankError(
            f"only {int(rows.sum())} valid pixels for {n_coeffs(basis.l_max)} "
            "coefficients"
        )
    coeffs, *_ = np.linalg.lstsq(basis.matrix[rows], values, rcond=None)
    return SHCoeffs(basis.l_max, coeffs)


def evaluate(
    coeffs: SHCoeffs, grid: HealpixGrid, mask: CapMask | None = None
) -> SphericalSignal:
    basis = real_sh(coeffs.l_max, grid.theta, grid.phi)
    valid = np.ones(grid.n_pix, dtype=bool) if mask is None else mask.included.copy()
    values = np.where(valid, basis @ coeffs.values, 0.0)
    return SphericalSignal(grid, values, valid)


def evaluate_at(coeffs: SHCoeffs, theta, phi) -> np.ndarray:
    return real_sh(coeffs.l_max, theta, phi) @ coeffs.values


class SHSmoother:
    """SH compression as a differentiable linear layer.

    Raw fODF values sampled on ``n_fit`` directions are fitted with even real
    SH (``coeffs = pinv(B) @ raw``) and re-synthesised, both on the fit
    directions (``smooth``) and on the mixture atoms (``atoms``), which are a
    subset of the fit directions given by ``atom_rows``.
    """

    def __init__(self, theta, phi, l_max: int = 8, atom_rows=None):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size < n_coeffs(l_max):
            raise RankError(
                f"{theta.size} directions cannot determine {n_coeffs(l_max)} "
                f"coefficients (l_max={l_max})"
            )
        self.l_max = l_max
        self.basis = real_sh(l_max, theta, phi)
        self.fit_matrix = np.linalg.pinv(self.basis)
        self.atom_rows = (
            np.arange(theta.size) if atom_rows is None else np.asarray(atom_rows)
        )
        self._basis_t = torch.from_numpy(self.basis)
        self._fit_t = torch.from_numpy(self.fit_matrix)
        self._atom_basis_t = torch.from_numpy(self.basis[self.atom_rows])

    @property
    def n_fit(self) -> int:
        return self.basis.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atom_rows.size

    @property
    def projection(self) -> np.ndarray:
        """Dense ``[n_fit, n_fit]`` fit-then-synthesise operator."""
        return self.basis @ self.fit_matrix

    def coeffs(self, raw: torch.Tensor) -> torch.Tensor:
        return raw @ self._fit_t.T

    def smooth(self, raw: torch.Tensor) -> torch.Tensor:
        return self.coeffs(raw) @ self._basis_t.T

    def atoms(self, raw: torch.Tensor) -> torch.Tensor:
        return self.coeffs(raw) @ self._atom_basis_t.T

    def sh_coeffs(self, raw) -> SHCoeffs:
        raw = np.asarray(raw, dtype=np.float64)
        return SHCoeffs(self.l_max, self.fit_matrix @ raw)
