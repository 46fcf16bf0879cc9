"""Adversarial, variety, latent-distribution and total losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import torch

from .model import DiagonalGaussian

_EPS = 1e-7


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 10.0
    variety_m: int = 20

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.variety_m < 1:
            raise ValueError("variety_m must be >= 1")


def discriminator_loss(scores_real, scores_fake) -> torch.Tensor:
    real = torch.as_tensor(scores_real).clamp(_EPS, 1 - _EPS)
    fake = torch.as_tensor(scores_fake).clamp(_EPS, 1 - _EPS)
    return -torch.log(real).mean() - torch.log1p(-fake).mean()


def generator_adversarial_loss(scores_fake) -> torch.Tensor:
    """Non-saturating form, -log D(G(z))."""
    return -torch.log(torch.as_tensor(scores_fake).clamp(_EPS, 1 - _EPS)).mean()


def adversarial_losses(scores_real, scores_fake) -> Tuple[torch.Tensor, torch.Tensor]:
    return discriminator_loss(scores_real, scores_fake), generator_adversarial_loss(scores_fake)


def per_sample_l2(ground_truth: torch.Tensor, samples: torch.Tensor) -> torch.Tensor:
    """``[m, n]`` L2 norms of the flattened per-pedestrian errors."""
    err = samples - ground_truth[None]
    return err.flatten(start_dim=2).norm(dim=-1)


def variety_loss(ground_truth, samples) -> torch.Tensor:
    """Mean over pedestrians of the best (minimum) L2 error across samples.

    ``samples`` is either a list of ``[n, T, 2]`` arrays or a stacked
    ``[m, n, T, 2]`` tensor.
    """
    gt = torch.as_tensor(ground_truth)
    if isinstance(samples, (list, tuple)):
        if not samples:
            raise ValueError("need at least one sample")
        samples = torch.stack([torch.as_tensor(s, dtype=gt.dtype) for s in samples])
    if samples.shape[1:] != gt.shape:
        raise ValueError(f"sample shape {tuple(samples.shape[1:])} does not match truth {tuple(gt.shape)}")
    return per_sample_l2(gt, samples).min(dim=0).values.mean()


def gaussian_kl(p: DiagonalGaussian, q: DiagonalGaussian) -> torch.Tensor:
    """Per-row KL(p || q) summed over dimensions, ``[n]``."""
    if (p.std <= 0).any() or (q.std <= 0).any():
        raise ValueError("standard deviations must be strictly positive")
    var_p, var_q = p.std ** 2, q.std ** 2
    kl = torch.log(q.std / p.std) + (var_p + (p.mean - q.mean) ** 2) / (2 * var_q) - 0.5
    return kl.sum(dim=-1)


def kl_loss(observed: Sequence[DiagonalGaussian], groundtruth: Sequence[DiagonalGaussian]) -> torch.Tensor:
    """KL(observed || ground truth), summed over kinds, averaged over pedestrians."""
    if len(observed) != len(groundtruth):
        raise ValueError("observed and ground-truth lists differ in length")
    if not observed:
        return torch.tensor(0.0)
    total = sum(gaussian_kl(p, q) for p, q in zip(observed, groundtruth))
    return total.mean()


def total_loss(adv_g, variety, kl, weights: LossWeights = LossWeights()):
    return adv_g + weights.alpha * variety + weights.beta * kl
