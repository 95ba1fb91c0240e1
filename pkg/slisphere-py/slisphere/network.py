"""Chebyshev graph convolutions on the HEALPix cap and the spherical U-Net.

The network maps a projected pattern, sampled on the measurement cap at the
input resolution, to raw fODF values on the full fODF grid. Training is
unsupervised: the raw fODF is SH-smoothed, mixed through the kernel bank and
compared with the input signal by the estimation losses.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence
import warnings

import numpy as np
import scipy.sparse as sp
import torch
from scipy.sparse.csgraph import connected_components
from torch import nn
from tqdm import tqdm

from .errors import (
    ContractError,
    DisconnectedGraphWarning,
    InputError,
    NumericalError,
)
from .estimation import LossBreakdown, LossWeights, MixtureModel
from .forward_model import FODF, KernelBank, mixture_directions, mixture_pixels
from .harmonics import SHSmoother, SphericalSignal
from .healpix import (
    CapMask,
    HealpixGrid,
    build_grid,
    cap_mask,
    neighbor_edges,
    parent,
)
from .projection import (
    MicroscopeGeometry,
    PatternCentroid,
    ScatteringPattern,
    find_centroid_or_center,
    project_to_sphere,
)


def _sparse_tensor(matrix: sp.spmatrix) -> torch.Tensor:
    coo = matrix.tocoo()
    indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    values = torch.from_numpy(coo.data.astype(np.float64))
    return torch.sparse_coo_tensor(indices, values, coo.shape).coalesce()


def estimate_lambda_max(laplacian: sp.spmatrix, steps: int = 100, seed: int = 0):
    """Largest Laplacian eigenvalue by power iteration (Rayleigh quotient)."""
    x = np.random.default_rng(seed).standard_normal(laplacian.shape[0])
    for _ in range(steps):
        y = laplacian @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
    return float(x @ (laplacian @ x))


@dataclass(frozen=True, eq=False)
class SphereGraph:
    """Gaussian-weighted neighbour graph over a set of HEALPix pixels.

    ``laplacian`` is the combinatorial ``D - W``; `operator` is the rescaled
    ``2 L / lambda_max - I`` used by the Chebyshev recurrence.
    """

    grid: HealpixGrid
    pixels: np.ndarray = field(repr=False)
    adjacency: sp.csr_matrix = field(repr=False)
    laplacian: sp.csr_matrix = field(repr=False)
    lambda_max: float
    rho: float

    @property
    def n_nodes(self) -> int:
        return self.pixels.size

    @cached_property
    def scaled_laplacian(self) -> sp.csr_matrix:
        identity = sp.identity(self.n_nodes, format="csr")
        return (2.0 / max(self.lambda_max, 1e-12)) * self.laplacian - identity

    @cached_property
    def operator(self) -> torch.Tensor:
        return _sparse_tensor(self.scaled_laplacian)


def graph_on_pixels(
    grid: HealpixGrid, pixels, rho: float | None = None
) -> SphereGraph:
    pixels = np.unique(np.asarray(pixels, dtype=np.int64))
    if pixels.size == 0:
        raise InputError("cannot build a graph on an empty pixel set")
    position = np.full(grid.n_pix, -1)
    position[pixels] = np.arange(pixels.size)

    edges = neighbor_edges(grid)
    edges = edges[(position[edges[:, 0]] >= 0) & (position[edges[:, 1]] >= 0)]
    rows, cols = position[edges[:, 0]], position[edges[:, 1]]
    vectors = grid.vectors
    chord2 = ((vectors[edges[:, 0]] - vectors[edges[:, 1]]) ** 2).sum(axis=1)
    if rho is None:
        rho = float(np.sqrt(chord2).mean()) if chord2.size else 1.0
    weights = np.exp(-chord2 / (2.0 * rho**2))

    adjacency = sp.coo_matrix(
        (
            np.concatenate([weights, weights]),
            (np.concatenate([rows, cols]), np.concatenate([cols, rows])),
        ),
        shape=(pixels.size, pixels.size),
    ).tocsr()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    laplacian = (sp.diags(degree) - adjacency).tocsr()

    n_components, _ = connected_components(adjacency, directed=False)
    if n_components > 1:
        warnings.warn(
            f"graph on {pixels.size} pixels has {n_components} components",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
    return SphereGraph(
        grid, pixels, adjacency, laplacian, estimate_lambda_max(laplacian), rho
    )


def build_graph(
    grid: HealpixGrid, mask: CapMask, rho: float | None = None
) -> SphereGraph:
    if mask.grid != grid:
        raise ContractError("mask was not built on the given grid")
    return graph_on_pixels(grid, mask.indices, rho)


class ChebConv(nn.Module):
    """``y = sum_k T_k(L) x Theta_k + b`` with Chebyshev polynomials ``T_k``."""

    def __init__(self, in_channels: int, out_channels: int, order: int = 5):
        super().__init__()
        if order < 1:
            raise ContractError(f"Chebyshev order must be >= 1, got {order}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.order = order
        self.weight = nn.Parameter(
            torch.empty(order, in_channels, out_channels, dtype=torch.float64)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels, dtype=torch.float64))
        nn.init.normal_(self.weight, std=np.sqrt(2.0 / (in_channels * order)))

    def forward(self, x: torch.Tensor, laplacian: torch.Tensor) -> torch.Tensor:
        """``x`` has shape ``[batch, nodes, in_channels]``."""
        if x.dim() != 3 or x.shape[-1] != self.in_channels:
            raise ContractError(
                f"expected input [batch, nodes, {self.in_channels}], "
                f"got {tuple(x.shape)}"
            )
        batch, nodes, channels = x.shape
        if laplacian.shape != (nodes, nodes):
            raise ContractError(
                f"Laplacian of shape {tuple(laplacian.shape)} does not match "
                f"{nodes} nodes"
            )
        x0 = x.permute(1, 0, 2).reshape(nodes, batch * channels)
        terms = [x0]
        if self.order > 1:
            x1 = torch.sparse.mm(laplacian, x0)
            terms.append(x1)
            for _ in range(2, self.order):
                x0, x1 = x1, 2.0 * torch.sparse.mm(laplacian, x1) - x0
                terms.append(x1)
        stacked = torch.stack(terms).reshape(self.order, nodes, batch, channels)
        return torch.einsum("knbi,kio->bno", stacked, self.weight) + self.bias


class NodeNorm(nn.InstanceNorm1d):
    """Per-pattern channel normalisation over the graph nodes."""

    def __init__(self, channels: int):
        super().__init__(channels, affine=True, dtype=torch.float64)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # [batch, nodes, channels] <-> [batch, channels, nodes]
        return super().forward(x.transpose(1, 2)).transpose(1, 2)


def cheb_conv(graph: SphereGraph, x: torch.Tensor, layer: ChebConv) -> torch.Tensor:
    """Apply ``layer`` on ``graph``; ``x`` is ``[nodes, in]`` or batched."""
    if x.dim() == 2:
        return layer(x.unsqueeze(0), graph.operator).squeeze(0)
    return layer(x, graph.operator)


@dataclass(frozen=True, eq=False)
class Pooling:
    """Nested hierarchy between a pixel set and the set of its parents.

    Pooling averages the children present in the fine set; unpooling copies
    each parent value to those children.
    """

    fine_grid: HealpixGrid
    fine_pixels: np.ndarray = field(repr=False)
    coarse_grid: HealpixGrid
    coarse_pixels: np.ndarray = field(repr=False)
    parent_position: np.ndarray = field(repr=False)

    @cached_property
    def pool_matrix(self) -> torch.Tensor:
        counts = np.bincount(self.parent_position)
        matrix = sp.coo_matrix(
            (
                1.0 / counts[self.parent_position],
                (self.parent_position, np.arange(self.fine_pixels.size)),
            ),
            shape=(self.coarse_pixels.size, self.fine_pixels.size),
        )
        return _sparse_tensor(matrix)

    @cached_property
    def unpool_matrix(self) -> torch.Tensor:
        matrix = sp.coo_matrix(
            (
                np.ones(self.fine_pixels.size),
                (np.arange(self.fine_pixels.size), self.parent_position),
            ),
            shape=(self.fine_pixels.size, self.coarse_pixels.size),
        )
        return _sparse_tensor(matrix)


def build_pooling(grid: HealpixGrid, pixels) -> Pooling:
    pixels = np.unique(np.asarray(pixels, dtype=np.int64))
    coarse_pixels, parent_position = np.unique(
        parent(grid, pixels), return_inverse=True
    )
    return Pooling(
        grid, pixels, build_grid(grid.n_side // 2), coarse_pixels, parent_position
    )


def _apply_nodes(matrix: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    batch, nodes, channels = x.shape
    flat = x.permute(1, 0, 2).reshape(nodes, batch * channels)
    out = torch.sparse.mm(matrix, flat)
    return out.reshape(-1, batch, channels).permute(1, 0, 2)


def pool(pooling: Pooling, x: torch.Tensor) -> torch.Tensor:
    """``[batch, fine nodes, channels]`` -> ``[batch, coarse nodes, channels]``."""
    return _apply_nodes(pooling.pool_matrix, x)


def unpool(pooling: Pooling, x: torch.Tensor) -> torch.Tensor:
    return _apply_nodes(pooling.unpool_matrix, x)


@dataclass(frozen=True)
class NetParams:
    """Architecture of the spherical U-Net."""

    input_n_side: int = 16
    levels: int = 3
    widths: tuple[int, ...] = (16, 32, 64)
    cheb_order: int = 5
    fodf_n_side: int = 4
    theta_max: float = float(np.pi / 3)
    l_max: int = 8
    negative_slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != self.levels or self.levels < 1:
            raise ContractError(
                f"{self.levels} levels need {self.levels} widths, got {self.widths}"
            )
        if self.input_n_side < 2 ** (self.levels - 1):
            raise ContractError(
                f"n_side {self.input_n_side} is too coarse for {self.levels} levels"
            )

    @property
    def n_side_chain(self) -> tuple[int, ...]:
        return tuple(self.input_n_side // 2**level for level in range(self.levels))


def _block_layers(in_channels: int, out_channels: int, order: int) -> nn.ModuleList:
    """Two Chebyshev layers, each followed by node normalisation."""
    return nn.ModuleList(
        [
            ChebConv(in_channels, out_channels, order),
            NodeNorm(out_channels),
            ChebConv(out_channels, out_channels, order),
            NodeNorm(out_channels),
        ]
    )


class SphericalUNet(nn.Module):
    def __init__(self, params: NetParams = NetParams()):
        super().__init__()
        self.params = params
        grid = build_grid(params.input_n_side)
        self.input_grid = grid
        self.input_mask = cap_mask(grid, params.theta_max)
        pixels = self.input_mask.indices

        self.graphs: list[SphereGraph] = []
        self.poolings: list[Pooling] = []
        for level in range(params.levels):
            self.graphs.append(graph_on_pixels(grid, pixels))
            if level < params.levels - 1:
                pooling = build_pooling(grid, pixels)
                self.poolings.append(pooling)
                grid, pixels = pooling.coarse_grid, pooling.coarse_pixels

        order = params.cheb_order
        widths = params.widths
        self.encoder = nn.ModuleList()
        channels = 1
        for width in widths:
            self.encoder.append(_block_layers(channels, width, order))
            channels = width
        self.decoder = nn.ModuleList()
        for level in reversed(range(params.levels - 1)):
            channels = widths[level + 1] + widths[level]
            self.decoder.append(_block_layers(channels, widths[level], order))
        self.reduce = ChebConv(widths[0], 1, 1)

        fodf_grid = build_grid(params.fodf_n_side)
        self.head = nn.Linear(
            self.input_pixels.size, fodf_grid.n_pix, dtype=torch.float64
        )
        self.atom_pixels = mixture_pixels(params.fodf_n_side)
        self.atom_axes = np.array(
            [d.axis for d in mixture_directions(params.fodf_n_side)]
        )
        self.smoother = SHSmoother(
            fodf_grid.theta, fodf_grid.phi, params.l_max, atom_rows=self.atom_pixels
        )

    @property
    def input_pixels(self) -> np.ndarray:
        return self.input_mask.indices

    def _block(self, layers: nn.ModuleList, x: torch.Tensor, graph: SphereGraph):
        slope = self.params.negative_slope
        for layer in layers:
            if isinstance(layer, ChebConv):
                x = layer(x, graph.operator)
            else:
                x = nn.functional.leaky_relu(layer(x), slope)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``[batch, input nodes]`` -> raw fODF ``[batch, fODF pixels]``."""
        if x.dim() == 2:
            x = x.unsqueeze(-1)
        if x.shape[1] != self.input_pixels.size:
            raise ContractError(
                f"expected {self.input_pixels.size} input nodes, got {x.shape[1]}"
            )
        skips = []
        for level, convs in enumerate(self.encoder):
            if level > 0:
                x = pool(self.poolings[level - 1], x)
            x = self._block(convs, x, self.graphs[level])
            skips.append(x)
        for step, convs in enumerate(self.decoder):
            level = self.params.levels - 2 - step
            x = unpool(self.poolings[level], x)
            x = torch.cat([x, skips[level]], dim=-1)
            x = self._block(convs, x, self.graphs[level])
        x = self.reduce(x, self.graphs[0].operator).squeeze(-1)
        # weights act through their mean over the cap, so one optimiser step
        # moves each raw value by at most about the learning rate
        weighted = nn.functional.linear(x, self.head.weight) / x.shape[-1]
        return weighted + self.head.bias


def network_input(
    signals: Sequence[SphericalSignal], net: SphericalUNet
) -> tuple[torch.Tensor, torch.Tensor]:
    """Max-normalised input values and validity on the net's input pixels."""
    pixels = net.input_pixels
    values = np.zeros((len(signals), pixels.size))
    valid = np.zeros((len(signals), pixels.size))
    for i, signal in enumerate(signals):
        if signal.grid != net.input_grid:
            raise ContractError(
                f"signal {i} is on n_side={signal.grid.n_side}, the network "
                f"expects n_side={net.input_grid.n_side}"
            )
        mask = signal.valid[pixels]
        row = np.where(mask, signal.values[pixels], 0.0)
        peak = row.max(initial=0.0)
        values[i] = row / peak if peak > 0 else row
        valid[i] = mask
    return torch.from_numpy(values), torch.from_numpy(valid)


def forward(net: SphericalUNet, signal: SphericalSignal) -> np.ndarray:
    """Raw fODF values of one projected pattern on the full fODF grid."""
    x, _ = network_input([signal], net)
    with torch.no_grad():
        return net(x)[0].numpy()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 15
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.batch_size < 1 or self.epochs < 1:
            raise InputError("training needs positive learning rate, batch, epochs")


@dataclass(eq=False)
class TrainResult:
    net: SphericalUNet
    history: list[float]
    breakdowns: list[LossBreakdown]


def check_bank(net: SphericalUNet, bank: KernelBank):
    if bank.grid != net.input_grid or not np.array_equal(
        bank.pixels, net.input_pixels
    ):
        raise ContractError("kernel bank is not built on the network's input cap")
    if bank.n_directions != net.smoother.n_atoms or not np.allclose(
        bank.axes, net.atom_axes
    ):
        raise ContractError("kernel bank atoms differ from the network's fODF atoms")


def train(
    dataset: Sequence[SphericalSignal],
    config: TrainConfig,
    losses: LossWeights,
    bank: KernelBank,
    net: SphericalUNet | None = None,
    params: NetParams = NetParams(),
    progress: bool = False,
) -> TrainResult:
    """AdamW on the batch-mean total loss; deterministic given ``config.seed``."""
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    torch.manual_seed(config.seed)
    if net is None:
        net = SphericalUNet(params)
    check_bank(net, bank)
    model = MixtureModel(bank, net.smoother)
    x, valid = network_input(dataset, net)

    optimizer = torch.optim.AdamW(
        net.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    generator = torch.Generator().manual_seed(config.seed)
    history, breakdowns = [], []
    n = x.shape[0]
    for epoch in tqdm(range(config.epochs), desc="train", disable=not progress):
        order = torch.randperm(n, generator=generator)
        sums = torch.zeros(3, dtype=torch.float64)
        for batch, start in enumerate(range(0, n, config.batch_size)):
            index = order[start : start + config.batch_size]
            terms = model.terms(net(x[index]), x[index], valid[index], losses)
            loss = sum(terms).mean()
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss in epoch {epoch}, batch {batch}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            sums += torch.stack([t.detach().sum() for t in terms])
        breakdown = LossBreakdown(*(float(s) / n for s in sums))
        breakdowns.append(breakdown)
        history.append(breakdown.l_total)
    return TrainResult(net, history, breakdowns)


def fodf_from_raw(net: SphericalUNet, raw) -> FODF:
    raw = np.asarray(raw, dtype=np.float64)
    weights = net.smoother.atoms(torch.from_numpy(raw)).numpy()
    return FODF(weights, net.smoother.sh_coeffs(raw), net.atom_axes, raw)


def predict(
    net: SphericalUNet,
    pattern: ScatteringPattern,
    geometry: MicroscopeGeometry,
    sigma_g: float = 1.0,
    normalize: bool = False,
    centroid: PatternCentroid | None = None,
) -> FODF:
    """Pattern -> fODF with the trained network alone."""
    if centroid is None:
        centroid = find_centroid_or_center(pattern, sigma_g)
    signal = project_to_sphere(
        pattern, centroid, geometry, net.input_grid, net.input_mask, normalize
    )
    return fodf_from_raw(net, forward(net, signal))


def predict_stack(
    net: SphericalUNet,
    patterns: Sequence[ScatteringPattern],
    geometry: MicroscopeGeometry,
    sigma_g: float = 1.0,
    normalize: bool = False,
    centroids: Sequence[PatternCentroid | None] | None = None,
) -> list[FODF]:
    if centroids is None:
        centroids = [None] * len(patterns)
    return [
        predict(net, pattern, geometry, sigma_g, normalize, centroid)
        for pattern, centroid in zip(patterns, centroids)
    ]
