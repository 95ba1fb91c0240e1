"""Reconstruction, sparsity and non-negativity losses and the direct solver.

The losses are written once, on batched float64 tensors, and shared by the
per-pattern solver and by network training. The numpy-facing functions wrap
them for single signals.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np
import torch

from .errors import (
    ContractError,
    CorrelationSubstitutionWarning,
    InputError,
    NonConvergenceWarning,
    UndefinedCorrelationError,
)
from .forward_model import FODF, KernelBank
from .harmonics import SHSmoother, SphericalSignal

_VARIANCE_EPS = 1e-24


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_s: float = 0.1
    sigma_s: float = 0.05
    # evaluate the sparsity and non-negativity priors on the SH-smoothed atoms
    smoothed_priors: bool = True

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_s < 0 or not self.sigma_s > 0:
            raise InputError(
                "loss weights require lambda_r, lambda_s >= 0 and sigma_s > 0"
            )


@dataclass(frozen=True)
class LossBreakdown:
    l_r: float
    l_s: float
    l_n: float
    l_total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "l_total", self.l_r + self.l_s + self.l_n)


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 500
    step: float = 0.05
    tol: float = 1e-6
    seed: int = 0
    # relative jitter of the 1e-3 initial weights, drawn from `seed`
    jitter: float = 0.0
    max_halvings: int = 40
    max_step: float = 10.0
    smooth: bool = True
    l_max: int = 8

    def __post_init__(self):
        if self.max_iters < 1 or not self.step > 0 or not self.tol > 0:
            raise InputError("solver options require positive iterations, step, tol")
        if self.max_halvings < 1 or self.max_step < self.step:
            raise InputError(
                "solver options require max_halvings >= 1 and max_step >= step"
            )


# Batched tensor losses. Signals have shape [..., n_pixels]; `valid` is a 0/1
# tensor broadcastable to them.


def pcc_tensor(a, b, valid) -> tuple[torch.Tensor, torch.Tensor]:
    """Pearson correlation over valid pixels and a flag for zero variance.

    Degenerate entries are returned as zero.
    """
    count = torch.clamp(valid.sum(dim=-1, keepdim=True), min=1.0)
    a_centered = (a - (a * valid).sum(-1, keepdim=True) / count) * valid
    b_centered = (b - (b * valid).sum(-1, keepdim=True) / count) * valid
    var_a = (a_centered**2).sum(-1)
    var_b = (b_centered**2).sum(-1)
    degenerate = (var_a <= _VARIANCE_EPS) | (var_b <= _VARIANCE_EPS)
    denominator = torch.where(
        degenerate, torch.ones_like(var_a), torch.sqrt(var_a * var_b)
    )
    value = (a_centered * b_centered).sum(-1) / denominator
    return torch.where(degenerate, torch.zeros_like(value), value), degenerate


def reconstruction_loss_tensor(S, S_r, valid, weights: LossWeights):
    correlation, degenerate = pcc_tensor(S, S_r, valid)
    if bool(degenerate.any()):
        warnings.warn(
            f"{int(degenerate.sum())} signal(s) without variance, Pearson term "
            "replaced by PCC = 0",
            CorrelationSubstitutionWarning,
            stacklevel=2,
        )
    squared = (((S - S_r) * valid) ** 2).sum(-1)
    return squared + weights.lambda_r * (1.0 - correlation)


def sparsity_loss_tensor(fodf, weights: LossWeights):
    return weights.lambda_s * torch.log1p(fodf**2 / (2.0 * weights.sigma_s**2)).sum(-1)


def nonnegativity_loss_tensor(fodf):
    return (torch.clamp(fodf, max=0.0) ** 2).sum(-1)


def loss_terms(S, S_r, fodf, valid, weights: LossWeights):
    """``(l_r, l_s, l_n)`` tensors of shape ``[...]``."""
    return (
        reconstruction_loss_tensor(S, S_r, valid, weights),
        sparsity_loss_tensor(fodf, weights),
        nonnegativity_loss_tensor(fodf),
    )


class MixtureModel:
    """Raw fODF -> smoothed fODF, atom weights and reconstructed signal.

    Without a smoother the raw values are the atom weights themselves.
    """

    def __init__(self, bank: KernelBank, smoother: SHSmoother | None = None):
        if smoother is not None and smoother.n_atoms != bank.n_directions:
            raise ContractError(
                f"smoother has {smoother.n_atoms} atoms, bank has "
                f"{bank.n_directions} directions"
            )
        self.bank = bank
        self.smoother = smoother
        self.kernels = torch.from_numpy(np.array(bank.matrix))

    def __call__(self, raw: torch.Tensor):
        if self.smoother is None:
            smoothed, atoms = raw, raw
        else:
            smoothed, atoms = self.smoother.smooth(raw), self.smoother.atoms(raw)
        return smoothed, atoms, atoms @ self.kernels.T

    def terms(self, raw, S, valid, weights: LossWeights):
        _, atoms, S_r = self(raw)
        prior_input = atoms if weights.smoothed_priors else raw
        return loss_terms(S, S_r, prior_input, valid, weights)


def atom_smoother(bank: KernelBank, l_max: int = 8) -> SHSmoother:
    """SH smoothing layer fitted on the bank's own mixture atoms."""
    axes = bank.axes
    theta = np.arccos(np.clip(axes[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(axes[:, 1], axes[:, 0]), 2 * np.pi)
    return SHSmoother(theta, phi, l_max)


def bank_signal(S: SphericalSignal, bank: KernelBank, normalize: bool = True):
    """Values and validity of ``S`` on the bank's pixels as tensors.

    With ``normalize`` the values are divided by their maximum over valid
    pixels, pairing the signal with max-one kernels.
    """
    if S.grid != bank.grid:
        raise ContractError("signal and kernel bank live on different grids")
    values = S.values[bank.pixels]
    valid = S.valid[bank.pixels]
    if normalize and valid.any():
        peak = values[valid].max()
        if peak > 0:
            values = values / peak
    return (
        torch.from_numpy(np.where(valid, values, 0.0)),
        torch.from_numpy(valid.astype(np.float64)),
    )


def _check_pair(a: SphericalSignal, b: SphericalSignal):
    if a.grid != b.grid:
        raise ContractError("signals live on different grids")
    valid = a.valid & b.valid
    return (
        torch.from_numpy(a.values),
        torch.from_numpy(b.values),
        torch.from_numpy(valid.astype(np.float64)),
    )


def pcc(a: SphericalSignal, b: SphericalSignal) -> float:
    """Pearson correlation of two signals over their common valid pixels."""
    a_t, b_t, valid = _check_pair(a, b)
    value, degenerate = pcc_tensor(a_t, b_t, valid)
    if bool(degenerate):
        raise UndefinedCorrelationError("correlation of a signal without variance")
    return float(value)


def reconstruction_loss(
    S: SphericalSignal, S_r: SphericalSignal, weights: LossWeights = LossWeights()
) -> float:
    return float(reconstruction_loss_tensor(*_check_pair(S, S_r), weights))


def sparsity_loss(fodf_values, weights: LossWeights = LossWeights()) -> float:
    values = torch.as_tensor(np.asarray(fodf_values, dtype=np.float64))
    return float(sparsity_loss_tensor(values, weights))


def nonnegativity_loss(fodf_values) -> float:
    values = torch.as_tensor(np.asarray(fodf_values, dtype=np.float64))
    return float(nonnegativity_loss_tensor(values))


def total_loss(
    S: SphericalSignal,
    S_r: SphericalSignal,
    fodf_smoothed,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    return LossBreakdown(
        reconstruction_loss(S, S_r, weights),
        sparsity_loss(fodf_smoothed, weights),
        nonnegativity_loss(fodf_smoothed),
    )


def _breakdown(terms) -> LossBreakdown:
    return LossBreakdown(*(float(t.detach()) for t in terms))


def loss_gradient(
    w_atoms,
    S: SphericalSignal,
    bank: KernelBank,
    weights: LossWeights = LossWeights(),
    sh_projection: SHSmoother | None = None,
) -> np.ndarray:
    """Gradient of the total loss with respect to the raw atom weights.

    ``S`` is used as given (no normalisation); the reconstruction composes the
    optional SH smoothing with the kernel mixture.
    """
    w = torch.tensor(np.asarray(w_atoms, dtype=np.float64), requires_grad=True)
    if w.shape != (bank.n_directions,):
        raise ContractError(
            f"expected {bank.n_directions} atom weights, got shape {tuple(w.shape)}"
        )
    signal, valid = bank_signal(S, bank, normalize=False)
    terms = MixtureModel(bank, sh_projection).terms(w, signal, valid, weights)
    (gradient,) = torch.autograd.grad(sum(terms), w)
    return gradient.numpy()


@dataclass(frozen=True, eq=False)
class SolveResult:
    fodf: FODF
    trace: list[LossBreakdown] = field(repr=False)
    converged: bool
    iterations: int


def _initial_weights(n_atoms: int, options: SolveOptions) -> np.ndarray:
    initial = np.full(n_atoms, 1e-3)
    if options.jitter > 0:
        rng = np.random.default_rng(options.seed)
        initial *= 1.0 + options.jitter * rng.random(n_atoms)
    return initial


def solve_direct(
    S: SphericalSignal,
    bank: KernelBank,
    weights: LossWeights = LossWeights(),
    options: SolveOptions = SolveOptions(),
    smoother: SHSmoother | None = None,
    initial=None,
) -> SolveResult:
    """Projected gradient descent on the total loss for one pattern.

    A step is accepted only if it lowers the loss; otherwise the step size is
    halved, so the loss trace never increases. After an accepted step the step
    size doubles again. Running out of halvings stops the search unconverged.
    """
    if smoother is None:
        smoother = atom_smoother(bank, options.l_max)
    model = MixtureModel(bank, smoother if options.smooth else None)
    signal, valid = bank_signal(S, bank)

    def evaluate(w: torch.Tensor, with_grad: bool):
        w = w.detach().requires_grad_(with_grad)
        with torch.set_grad_enabled(with_grad):
            terms = model.terms(w, signal, valid, weights)
            total = sum(terms)
        if not with_grad:
            return total.detach(), None, terms
        (gradient,) = torch.autograd.grad(total, w)
        return total.detach(), gradient, terms

    if initial is None:
        initial = _initial_weights(bank.n_directions, options)
    w = torch.tensor(np.asarray(initial, dtype=np.float64))
    loss, gradient, terms = evaluate(w, True)
    if not torch.isfinite(loss):
        raise InputError("loss is not finite at the initial weights")
    trace = [_breakdown(terms)]

    step = options.step
    converged = False
    stalled = False
    iterations = 0
    for iterations in range(1, options.max_iters + 1):
        for _ in range(options.max_halvings):
            candidate = torch.clamp(w - step * gradient, min=0.0)
            candidate_loss, _, _ = evaluate(candidate, False)
            if candidate_loss < loss:
                break
            step *= 0.5
        else:
            stalled = True
            break
        change = float((loss - candidate_loss) / max(float(loss), 1e-300))
        w = candidate
        loss, gradient, terms = evaluate(w, True)
        trace.append(_breakdown(terms))
        if change < options.tol:
            converged = True
            break
        step = min(2.0 * step, options.max_step)

    if stalled:
        warnings.warn(
            f"direct solver found no descent step after {options.max_halvings} "
            f"halvings at iteration {iterations}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    elif not converged:
        warnings.warn(
            f"direct solver stopped after {options.max_iters} iterations without "
            "reaching the tolerance",
            NonConvergenceWarning,
            stacklevel=2,
        )
    raw = w.numpy()
    fodf = FODF(
        weights=smoother.atoms(w).numpy() if options.smooth else raw.copy(),
        sh=smoother.sh_coeffs(raw),
        axes=bank.axes,
        raw=raw,
    )
    return SolveResult(fodf, trace, converged, iterations)
