"""
Differentiable expected-exposure objectives.

Gumbel noise turns scores into sampled rankings; smooth ranks give those
rankings a gradient, and the straight-through estimator keeps the forward
value on the true integer ranks.
"""

from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from src.exceptions import ConfigurationError
from src.exposure import BrowsingModel, ExposureVector

TensorLike = Union[torch.Tensor, np.ndarray, ExposureVector, list, tuple]


def _as_tensor(values: TensorLike, like: Optional[torch.Tensor] = None) -> torch.Tensor:
    if isinstance(values, ExposureVector):
        values = values.values
    if isinstance(values, torch.Tensor):
        return values
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(values), dtype=dtype)


def gumbel_noise(
    shape: Tuple[int, ...],
    generator: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """G = -log(-log(u)) with u ~ Uniform(0, 1)."""
    u = torch.rand(shape, generator=generator, dtype=dtype)
    u = u.clamp(min=torch.finfo(dtype).tiny, max=1.0 - torch.finfo(dtype).eps)
    return -torch.log(-torch.log(u))


def gumbel_perturbed_probs(
    scores: torch.Tensor,
    generator: Optional[torch.Generator] = None,
    n_samples: Optional[int] = None,
    noise: Optional[torch.Tensor] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Softmax over Gumbel-perturbed scores.

    Args:
        scores: (n,) document scores
        generator: Torch generator for the noise
        n_samples: Draw this many independent perturbations; a single one if None
        noise: Fixed noise to use instead of drawing (zeros disable it)

    Returns:
        (probs, perturbed): probabilities and perturbed scores, same shape as the noise
    """
    if noise is None:
        shape = tuple(scores.shape) if n_samples is None else (n_samples, *scores.shape)
        noise = gumbel_noise(shape, generator, scores.dtype)
    perturbed = scores + noise
    return torch.softmax(perturbed, dim=-1), perturbed


def true_ranks(perturbed: torch.Tensor) -> torch.Tensor:
    """Base-0 rank of every document when sorted by descending score."""
    order = torch.argsort(perturbed.detach(), dim=-1, descending=True, stable=True)
    return torch.argsort(order, dim=-1, stable=True)


def pairwise_above(probs: torch.Tensor, tau: float) -> torch.Tensor:
    """[..., d, d'] = sigmoid((p(d') - p(d)) / tau), zero on the diagonal."""
    if tau <= 0.0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    above = torch.sigmoid((probs.unsqueeze(-2) - probs.unsqueeze(-1)) / tau)
    eye = torch.eye(probs.shape[-1], dtype=torch.bool, device=probs.device)
    return above.masked_fill(eye, 0.0)


def smooth_ranks(probs: torch.Tensor, tau: float) -> torch.Tensor:
    """
    Fractional rank sum_{d' != d} sigmoid((p(d') - p(d)) / tau).

    Args:
        probs: (..., n) perturbed probabilities
        tau: Temperature; ranks approach the integer ranks as tau -> 0

    Returns:
        (..., n) smooth ranks in (0, n - 1)
    """
    return pairwise_above(probs, tau).sum(dim=-1)


def exposure_from_ranks(
    true_rank: torch.Tensor,
    smooth_rank: torch.Tensor,
    model: BrowsingModel,
    stop_probs: Optional[torch.Tensor] = None,
    soft_above: Optional[torch.Tensor] = None,
    straight_through: bool = True
) -> torch.Tensor:
    """
    Per-document exposure with a straight-through gradient.

    The forward value is the exposure of the true ranking; the gradient is
    that of the smooth-rank surrogate. Ranks at or beyond the depth give 0.

    Args:
        true_rank: (..., n) integer ranks
        smooth_rank: (..., n) differentiable ranks
        model: Browsing model
        stop_probs: (n,) stop probability of every document (ERR)
        soft_above: (..., n, n) soft probability that d' sits above d (ERR surrogate)
        straight_through: When False, return the smooth surrogate itself

    Returns:
        (..., n) exposure
    """
    dtype = smooth_rank.dtype
    hard_rank = true_rank.to(dtype)
    gamma = torch.as_tensor(model.gamma, dtype=dtype)
    hard = gamma ** hard_rank
    soft = gamma ** smooth_rank

    if model.kind == "err":
        if stop_probs is None:
            raise ConfigurationError("ERR exposure needs per-document stop probabilities")
        log_stay = torch.log1p(-_as_tensor(stop_probs, smooth_rank).to(dtype))
        hard_above = (true_rank.unsqueeze(-2) < true_rank.unsqueeze(-1)).to(dtype)
        hard = hard * torch.exp(hard_above @ log_stay)
        if soft_above is not None:
            soft = soft * torch.exp(soft_above @ log_stay)
        else:
            soft = soft * torch.exp(hard_above @ log_stay)

    exposure = soft + (hard - soft).detach() if straight_through else soft
    if model.depth is not None:
        exposure = exposure * (true_rank < model.depth).to(dtype)
    return exposure


def sampled_exposure(
    scores: torch.Tensor,
    model: BrowsingModel,
    tau: float,
    n_samples: Optional[int] = None,
    generator: Optional[torch.Generator] = None,
    noise: Optional[torch.Tensor] = None,
    stop_probs: Optional[torch.Tensor] = None,
    straight_through: bool = True
) -> torch.Tensor:
    """
    Expected exposure over Gumbel-sampled rankings of one query.

    Returns:
        (n,) exposure averaged over the sampled rankings
    """
    probs, perturbed = gumbel_perturbed_probs(scores, generator, n_samples, noise)
    above = pairwise_above(probs, tau)
    exposure = exposure_from_ranks(
        true_ranks(perturbed), above.sum(dim=-1), model, stop_probs, above, straight_through
    )
    return exposure.reshape(-1, scores.shape[-1]).mean(dim=0)


def _check_tradeoff(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lambda must lie in [0, 1], got {lam}")


def ee_objective(exposure: TensorLike, target: TensorLike, lam: float) -> torch.Tensor:
    """lam * ||e||^2 - (1 - lam) * e.e*"""
    _check_tradeoff(lam)
    exposure = _as_tensor(exposure)
    target = _as_tensor(target, exposure)
    return lam * (exposure * exposure).sum(-1) - (1.0 - lam) * (exposure * target).sum(-1)


def group_exposure(exposure: TensorLike, membership: Optional[TensorLike]) -> torch.Tensor:
    """xi = A^T e for a (documents x groups) membership matrix A."""
    if membership is None:
        raise ConfigurationError("Group attribution is missing")
    exposure = _as_tensor(exposure)
    return exposure @ _as_tensor(membership, exposure)


def group_objective(
    exposure: TensorLike,
    group_exposure_values: Optional[TensorLike],
    target: TensorLike,
    lam: float
) -> torch.Tensor:
    """lam * ||xi||^2 - (1 - lam) * e.e*"""
    _check_tradeoff(lam)
    if group_exposure_values is None:
        raise ConfigurationError("Group attribution is missing")
    exposure = _as_tensor(exposure)
    xi = _as_tensor(group_exposure_values, exposure)
    target = _as_tensor(target, exposure)
    return lam * (xi * xi).sum(-1) - (1.0 - lam) * (exposure * target).sum(-1)


def pointwise_loss(scores: torch.Tensor, grades: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(scores, grades.to(scores.dtype))


def pairwise_loss(scores: torch.Tensor, grades: torch.Tensor) -> Optional[torch.Tensor]:
    """
    Cross-entropy on preference pairs of one query.

    Only pairs with differing grades count; None when there are none.
    """
    preferred = grades.unsqueeze(-1) > grades.unsqueeze(-2)
    if not preferred.any():
        return None
    margins = scores.unsqueeze(-1) - scores.unsqueeze(-2)
    return F.softplus(-margins[preferred]).mean()
