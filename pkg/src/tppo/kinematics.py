"""Kinematic features and bearing-angle attention weights.

All functions take and return torch tensors so they can sit inside the
generator's autograd graph; numpy inputs are converted.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

DEGENERATE_FILL = 1.0
HARD_THRESHOLD = -0.2
_MIN_SPEED = 1e-6


@dataclass
class KinematicFeatures:
    positions: torch.Tensor  # [n, L, 2]
    velocities: torch.Tensor
    accelerations: torch.Tensor

    def kinds(self, names):
        return [getattr(self, name) for name in names]


@dataclass
class AttentionWeights:
    weights: torch.Tensor  # [n, n]
    kind: str


def _as_tensor(x, dtype=None):
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(x, dtype=dtype or torch.float64)


def _diff_copy_first(x: torch.Tensor, dt: float) -> torch.Tensor:
    d = (x[:, 1:] - x[:, :-1]) / dt
    return torch.cat([d[:, :1], d], dim=1)


def kinematic_features(positions, dt: float) -> KinematicFeatures:
    """Finite-difference velocities and accelerations; step 0 copies step 1."""
    positions = _as_tensor(positions)
    if positions.ndim != 3 or positions.shape[-1] != 2:
        raise ValueError(f"positions must be [n, L, 2], got {tuple(positions.shape)}")
    if positions.shape[1] < 2:
        raise ValueError("need at least 2 steps to define a velocity")
    if not dt > 0:
        raise ValueError("dt must be positive")
    vel = _diff_copy_first(positions, dt)
    acc = _diff_copy_first(vel, dt)
    return KinematicFeatures(positions, vel, acc)


def bearing_cosines(last_positions, last_velocities) -> torch.Tensor:
    """cos of the angle between v_i and p_j - p_i, as an [n, n] matrix.

    Entries with a stationary i, co-located i and j, or i == j are filled
    with ``DEGENERATE_FILL``.
    """
    p = _as_tensor(last_positions)
    v = _as_tensor(last_velocities, p.dtype)
    rel = p[None, :, :] - p[:, None, :]  # rel[i, j] = p_j - p_i
    dist = rel.norm(dim=-1)
    speed = v.norm(dim=-1)
    dot = (v[:, None, :] * rel).sum(-1)
    n = p.shape[0]
    degenerate = (speed[:, None] < _MIN_SPEED) | (dist <= 0) | torch.eye(n, dtype=torch.bool, device=p.device)
    denom = torch.where(degenerate, torch.ones_like(dist), speed[:, None] * dist)
    cos = (dot / denom).clamp(-1.0, 1.0)
    return torch.where(degenerate, torch.full_like(cos, DEGENERATE_FILL), cos)


def hard_attention(cosines, threshold: float = HARD_THRESHOLD) -> AttentionWeights:
    if not -1.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [-1, 1]")
    cosines = _as_tensor(cosines)
    return AttentionWeights((cosines > threshold).to(cosines.dtype), "hard")


def soft_attention(cosines, conv_weight, conv_bias) -> AttentionWeights:
    # a 1x1 convolution over a one-channel map is a scalar affine map
    cosines = _as_tensor(cosines)
    return AttentionWeights(torch.sigmoid(conv_weight * cosines + conv_bias), "soft")


def no_attention(cosines) -> AttentionWeights:
    cosines = _as_tensor(cosines)
    return AttentionWeights(torch.ones_like(cosines), "none")
