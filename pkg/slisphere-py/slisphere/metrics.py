"""Agreement measures between fODFs and against fibre groundtruth."""

from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError, UndefinedMetricError
from .forward_model import FODF, FibreOrientation, mixture_pixels
from .harmonics import SHCoeffs, evaluate, real_sh
from .healpix import azimuthal_permutation, build_grid, neighbor_edges
from .projection import ScatteringPattern


def acc(a: SHCoeffs, b: SHCoeffs) -> float:
    """Angular correlation coefficient over degrees ``l >= 2``."""
    if a.l_max != b.l_max:
        raise ContractError(f"l_max differs: {a.l_max} and {b.l_max}")
    angular = a.degrees >= 2
    x, y = a.values[angular], b.values[angular]
    norm_x, norm_y = np.linalg.norm(x), np.linalg.norm(y)
    if norm_x == 0 or norm_y == 0:
        raise UndefinedMetricError("ACC of a function without angular content")
    return float(np.clip(x @ y / (norm_x * norm_y), -1.0, 1.0))


def _distribution(fodf: FODF) -> np.ndarray:
    mass = fodf.clamped
    total = mass.sum()
    if not total > 0:
        raise UndefinedMetricError("fODF has no positive mass")
    return mass / total


def jsd(a: FODF, b: FODF) -> float:
    """Jensen-Shannon divergence in nats, bounded by ``ln 2``."""
    if a.weights.shape != b.weights.shape:
        raise ContractError(
            f"fODFs have {a.weights.size} and {b.weights.size} atoms"
        )
    p, q = _distribution(a), _distribution(b)
    m = 0.5 * (p + q)

    def kl(x):
        support = x > 0
        return float((x[support] * np.log(x[support] / m[support])).sum())

    return float(np.clip(0.5 * kl(p) + 0.5 * kl(q), 0.0, np.log(2)))


def axial_angle(u, v) -> np.ndarray:
    """Angle between undirected axes, in ``[0, pi / 2]``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cosine = np.abs((u * v).sum(axis=-1))
    cosine /= np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
    return np.arccos(np.clip(cosine, 0.0, 1.0))


def atom_spacing(n_side: int) -> float:
    """Typical angular distance between neighbouring atoms (radians)."""
    return float(np.sqrt(build_grid(n_side).resolution.pixel_area))


# resolution at which evaluation samples the SH fODF for peaks
PEAK_N_SIDE = 32


@lru_cache(maxsize=4)
def _peak_sphere(n_side: int, l_max: int):
    grid = build_grid(n_side)
    return (
        mixture_pixels(n_side),
        grid.vectors,
        real_sh(l_max, grid.theta, grid.phi),
        neighbor_edges(grid),
    )


def _local_maxima(fodf: FODF, n_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Axes and clamped values of the SH fODF maxima on the upper hemisphere."""
    pixels, vectors, basis, edges = _peak_sphere(n_side, fodf.sh.l_max)
    values = basis @ fodf.sh.values
    neighbour_max = np.full(values.size, -np.inf)
    np.maximum.at(neighbour_max, edges[:, 0], values[edges[:, 1]])
    np.maximum.at(neighbour_max, edges[:, 1], values[edges[:, 0]])
    pixels = pixels[values[pixels] >= neighbour_max[pixels]]
    return vectors[pixels], np.maximum(values[pixels], 0.0)


def extract_fodf_peaks(
    fodf: FODF,
    top_k: int = 3,
    min_separation: float = np.radians(20.0),
    n_side: int | None = None,
) -> list[FibreOrientation]:
    """Greedy non-maximum suppression over the clamped atom weights.

    With ``n_side`` the candidates are instead the local maxima of the SH fODF
    sampled on the upper hemisphere of the grid at that resolution.
    """
    if n_side is None:
        axes, values = fodf.axes, fodf.clamped
    else:
        axes, values = _local_maxima(fodf, n_side)
    order = np.argsort(-values, kind="stable")
    chosen: list[int] = []
    for index in order:
        if len(chosen) == top_k or values[index] <= 0:
            break
        axis = axes[index]
        if all(axial_angle(axis, axes[j]) >= min_separation for j in chosen):
            chosen.append(int(index))
    return [FibreOrientation.from_vector(axes[j]) for j in chosen]


def match_peaks(peaks: list[FibreOrientation], truth) -> np.ndarray:
    """Per-truth angular error after optimal one-to-one matching.

    Groundtruth axes left without a peak get the maximal error ``pi / 2``.
    """
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    errors = np.full(truth.shape[0], np.pi / 2)
    if not peaks or truth.shape[0] == 0:
        return errors
    axes = np.array([p.axis for p in peaks])
    cost = axial_angle(truth[:, None, :], axes[None, :, :])
    rows, cols = linear_sum_assignment(cost)
    errors[rows] = cost[rows, cols]
    return errors


def dominant_direction_error(
    fodf: FODF, truth_axis, n_side: int | None = None
) -> float:
    peaks = extract_fodf_peaks(fodf, top_k=1, n_side=n_side)
    if not peaks:
        return float(np.pi / 2)
    return float(axial_angle(peaks[0].axis, truth_axis))


def equivariance_defect(
    predictor: Callable[[ScatteringPattern], FODF],
    pattern: ScatteringPattern,
    quarter_turns: int = 1,
    n_side: int = 4,
) -> float:
    """Relative change of the prediction under a quarter-turn pattern rotation.

    The SH view of the prediction on the rotated pattern is compared, on the
    full grid at ``n_side``, with the SH view of the original prediction
    rotated by the same azimuth. Zero for an exactly equivariant predictor.
    """
    grid = build_grid(n_side)
    original = evaluate(predictor(pattern).sh, grid).values
    rotated_pattern = ScatteringPattern(np.rot90(pattern.intensities, quarter_turns))
    rotated = evaluate(predictor(rotated_pattern).sh, grid).values
    expected = original[azimuthal_permutation(grid, quarter_turns * np.pi / 2)]
    scale = np.linalg.norm(expected)
    if scale == 0:
        raise UndefinedMetricError("prediction vanishes on the grid")
    return float(np.linalg.norm(rotated - expected) / scale)
