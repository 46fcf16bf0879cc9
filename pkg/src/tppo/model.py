"""Generator, latent variable predictor and discriminator.

Tensors are pedestrian-major: trajectories are ``[n, L, 2]``. A batch packs
several windows along the pedestrian axis; ``group`` holds each row's window
index so social pooling never mixes pedestrians from different windows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from . import kinematics as kin

ATTENTION_KINDS = ("none", "hard", "soft")
LVP_KINDS = ("none", "single", "multi")
LATENT_SOURCES = ("observed", "groundtruth", "noise_only")
_LVP_INPUTS = {"none": (), "single": ("velocities",), "multi": ("positions", "velocities", "accelerations")}
_LOGVAR_RANGE = (-10.0, 10.0)


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    embed_dim: int = 32
    pool_mlp1: Tuple[int, ...] = (2, 32, 32)
    pool_mlp2: Tuple[int, ...] = (64, 32, 16)
    latent_dim_per_kind: int = 4
    noise_dim: int = 4
    noise_dim_total: int = 16  # z width when there is no latent predictor
    lvp_hidden: int = 64
    disc_hidden: int = 32
    disc_mlp: int = 16
    obs_len: int = 8
    pred_len: int = 12
    attention: str = "hard"
    lvp: str = "multi"
    hard_threshold: float = kin.HARD_THRESHOLD
    dt: float = 0.4

    def __post_init__(self):
        self.pool_mlp1 = tuple(self.pool_mlp1)
        self.pool_mlp2 = tuple(self.pool_mlp2)
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if self.lvp not in LVP_KINDS:
            raise ValueError(f"lvp must be one of {LVP_KINDS}, got {self.lvp!r}")
        if self.obs_len < 2 or self.pred_len < 2:
            raise ValueError("obs_len and pred_len must be >= 2")
        if self.pool_mlp1[0] != 2:
            raise ValueError("first pooling MLP must take 2-d relative positions")
        if self.pool_mlp2[0] != self.pool_mlp1[-1] + self.hidden_dim:
            raise ValueError("second pooling MLP input must equal pool_mlp1 output + hidden_dim")

    @property
    def lvp_inputs(self) -> Tuple[str, ...]:
        return _LVP_INPUTS[self.lvp]

    @property
    def latent_width(self) -> int:
        return self.latent_dim_per_kind * len(self.lvp_inputs)

    @property
    def noise_width(self) -> int:
        return self.noise_dim_total if self.lvp == "none" else self.noise_dim

    @property
    def z_dim(self) -> int:
        return self.latent_width + self.noise_width

    @property
    def pool_dim(self) -> int:
        return self.pool_mlp2[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pool_mlp1"] = list(self.pool_mlp1)
        d["pool_mlp2"] = list(self.pool_mlp2)
        return d


@dataclass
class DiagonalGaussian:
    mean: torch.Tensor
    std: torch.Tensor

    @classmethod
    def from_logvar(cls, mean, logvar):
        return cls(mean, torch.exp(0.5 * logvar))


@dataclass
class PredictionSample:
    displacements: torch.Tensor  # [n, T, 2]
    absolute_positions: torch.Tensor  # [n, T, 2]


@dataclass
class Batch:
    observed: torch.Tensor  # [N, obs_len, 2]
    future: Optional[torch.Tensor]  # [N, pred_len, 2]
    group: torch.Tensor  # [N] window index
    seq_start_end: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.observed.shape[0]

    @property
    def full(self) -> torch.Tensor:
        return torch.cat([self.observed, self.future], dim=1)


def collate(windows: Sequence, dtype=torch.float32) -> Batch:
    """Pack ``ObservationWindow`` objects into one batch."""
    obs, fut, group, sse = [], [], [], []
    start = 0
    for i, w in enumerate(windows):
        n = w.observed.shape[0]
        obs.append(np.asarray(w.observed))
        if w.future is not None:
            fut.append(np.asarray(w.future))
        group.extend([i] * n)
        sse.append((start, start + n))
        start += n
    future = None
    if fut:
        if len(fut) != len(obs):
            raise ValueError("either all or no windows may carry a future segment")
        future = torch.as_tensor(np.concatenate(fut), dtype=dtype)
    return Batch(
        observed=torch.as_tensor(np.concatenate(obs), dtype=dtype),
        future=future,
        group=torch.as_tensor(group, dtype=torch.long),
        seq_start_end=sse,
    )


def displacements_of(positions: torch.Tensor) -> torch.Tensor:
    """Per-step displacements with a zero vector at step 0."""
    d = positions[:, 1:] - positions[:, :-1]
    return torch.cat([torch.zeros_like(positions[:, :1]), d], dim=1)


def make_mlp(dims: Sequence[int]) -> nn.Sequential:
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        layers += [nn.Linear(d_in, d_out), nn.ReLU()]
    return nn.Sequential(*layers)


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
            nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.LSTM, nn.LSTMCell)):
            for name, p in m.named_parameters():
                if "weight_hh" in name:
                    for chunk in p.data.chunk(4, dim=0):
                        nn.init.orthogonal_(chunk)
                elif "weight_ih" in name:
                    nn.init.kaiming_uniform_(p, a=math.sqrt(5))
                else:
                    nn.init.zeros_(p)


class Generator(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = cfg = config
        self.input_embedding = nn.Linear(2, cfg.embed_dim)
        self.encoder = nn.LSTM(cfg.embed_dim, cfg.hidden_dim, batch_first=True)
        self.pool_mlp1 = make_mlp(cfg.pool_mlp1)
        self.pool_mlp2 = make_mlp(cfg.pool_mlp2)
        self.attn_conv_weight = nn.Parameter(torch.tensor(1.0))
        self.attn_conv_bias = nn.Parameter(torch.tensor(0.0))
        out = 2 * cfg.latent_dim_per_kind
        self.lvp_observed = nn.ModuleDict({
            k: nn.Sequential(nn.Linear(2 * cfg.obs_len, cfg.lvp_hidden), nn.ReLU(), nn.Linear(cfg.lvp_hidden, out))
            for k in cfg.lvp_inputs
        })
        self.lvp_groundtruth = nn.ModuleDict({
            k: nn.Sequential(nn.Linear(2 * cfg.pred_len, cfg.lvp_hidden), nn.ReLU(), nn.Linear(cfg.lvp_hidden, out))
            for k in cfg.lvp_inputs
        })
        self.decoder_init = nn.Linear(cfg.hidden_dim + cfg.pool_dim + cfg.z_dim, cfg.hidden_dim)
        self.decoder = nn.LSTMCell(cfg.embed_dim, cfg.hidden_dim)
        self.output_head = nn.Linear(cfg.hidden_dim, 2)
        _init_weights(self)

    def embed(self, disp: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.input_embedding(disp))

    def encode(self, displacements: torch.Tensor) -> torch.Tensor:
        """Final encoder hidden state for each pedestrian, ``[n, hidden_dim]``."""
        if not torch.isfinite(displacements).all():
            raise ValueError("non-finite displacement in encoder input")
        _, (h, _) = self.encoder(self.embed(displacements))
        return h[0]

    def attention(self, last_pos: torch.Tensor, last_vel: torch.Tensor) -> kin.AttentionWeights:
        cos = kin.bearing_cosines(last_pos, last_vel)
        kind = self.config.attention
        if kind == "hard":
            return kin.hard_attention(cos, self.config.hard_threshold)
        if kind == "soft":
            return kin.soft_attention(cos, self.attn_conv_weight, self.attn_conv_bias)
        return kin.no_attention(cos)

    def social_pool(self, hidden: torch.Tensor, last_pos: torch.Tensor, attn: kin.AttentionWeights,
                    group: Optional[torch.Tensor] = None) -> torch.Tensor:
        n = hidden.shape[0]
        rel = last_pos[None, :, :] - last_pos[:, None, :]  # [i, j] = p_j - p_i
        pair = torch.cat([self.pool_mlp1(rel), hidden[None, :, :].expand(n, n, -1)], dim=-1)
        feats = self.pool_mlp2(pair) * attn.weights[:, :, None]
        valid = ~torch.eye(n, dtype=torch.bool, device=hidden.device)
        if group is not None:
            valid &= group[:, None] == group[None, :]
        feats = feats.masked_fill(~valid[:, :, None], float("-inf"))
        pooled = feats.max(dim=1).values
        has_neighbor = valid.any(dim=1)[:, None]
        return torch.where(has_neighbor, pooled, torch.zeros_like(pooled))

    def lvp_forward(self, features: kin.KinematicFeatures, branch: str) -> List[DiagonalGaussian]:
        if self.config.lvp == "none":
            raise ValueError("latent variable predictor disabled (lvp='none')")
        nets = {"observed": self.lvp_observed, "groundtruth": self.lvp_groundtruth}[branch]
        expected = self.config.obs_len if branch == "observed" else self.config.pred_len
        if features.positions.shape[1] != expected:
            raise ValueError(f"{branch} branch expects {expected} steps, got {features.positions.shape[1]}")
        d = self.config.latent_dim_per_kind
        out = []
        for name in self.config.lvp_inputs:
            x = getattr(features, name)
            stats = nets[name](x.reshape(x.shape[0], -1))
            logvar = stats[:, d:].clamp(*_LOGVAR_RANGE)
            out.append(DiagonalGaussian.from_logvar(stats[:, :d], logvar))
        return out

    def decode_rollout(self, hidden, pooled, z, last_obs_position, last_obs_displacement) -> PredictionSample:
        h = self.decoder_init(torch.cat([hidden, pooled, z], dim=-1))
        c = torch.zeros_like(h)
        disp = last_obs_displacement
        steps = []
        for _ in range(self.config.pred_len):
            h, c = self.decoder(self.embed(disp), (h, c))
            disp = self.output_head(h)
            steps.append(disp)
        disp = torch.stack(steps, dim=1)
        return PredictionSample(disp, last_obs_position[:, None, :] + torch.cumsum(disp, dim=1))

    def features(self, positions: torch.Tensor, origin: torch.Tensor) -> kin.KinematicFeatures:
        # positions are taken relative to the last observed point so the
        # latent stays translation invariant
        return kin.kinematic_features(positions - origin[:, None, :], self.config.dt)

    def context(self, batch: Batch, need_groundtruth: bool = False) -> "Context":
        """Everything that does not depend on the latent sample."""
        obs = batch.observed
        obs_disp = displacements_of(obs)
        last_pos = obs[:, -1]
        last_vel = obs_disp[:, -1] / self.config.dt
        hidden = self.encode(obs_disp)
        pooled = self.social_pool(hidden, last_pos, self.attention(last_pos, last_vel), batch.group)
        g_obs = g_gt = None
        if self.config.lvp != "none":
            g_obs = self.lvp_forward(self.features(obs, last_pos), "observed")
            if need_groundtruth:
                if batch.future is None:
                    raise ValueError("ground-truth latent requires the future segment")
                g_gt = self.lvp_forward(self.features(batch.future, last_pos), "groundtruth")
        return Context(hidden, pooled, last_pos, obs_disp[:, -1], g_obs, g_gt)

    def sample(self, ctx: "Context", rng: Optional[torch.Generator], latent_source: str,
               n_samples: int = 1, stochastic: bool = True) -> PredictionSample:
        """Roll out ``n_samples`` futures; results are ``[n_samples * n, T, 2]``
        with the sample index as the outer block."""
        if latent_source not in LATENT_SOURCES:
            raise ValueError(f"latent_source must be one of {LATENT_SOURCES}")
        if latent_source == "noise_only" or self.config.lvp == "none":
            gaussians = []
        elif latent_source == "groundtruth":
            if ctx.groundtruth is None:
                raise ValueError("context built without the ground-truth branch")
            gaussians = ctx.groundtruth
        else:
            gaussians = ctx.observed
        rep = lambda t: t.repeat(n_samples, 1)  # noqa: E731
        gaussians = [DiagonalGaussian(rep(g.mean), rep(g.std)) for g in gaussians]
        n = ctx.hidden.shape[0] * n_samples
        z = sample_latent(gaussians, rng, self.config, n=n, stochastic=stochastic,
                          dtype=ctx.hidden.dtype, zero_latent=latent_source == "noise_only")
        return self.decode_rollout(rep(ctx.hidden), rep(ctx.pooled), z, rep(ctx.last_pos), rep(ctx.last_disp))

    def forward(self, batch: Batch, rng=None, latent_source: str = "observed", n_samples: int = 1,
                stochastic: bool = True) -> PredictionSample:
        ctx = self.context(batch, need_groundtruth=latent_source == "groundtruth")
        return self.sample(ctx, rng, latent_source, n_samples, stochastic)


@dataclass
class Context:
    hidden: torch.Tensor
    pooled: torch.Tensor
    last_pos: torch.Tensor
    last_disp: torch.Tensor
    observed: Optional[List[DiagonalGaussian]]
    groundtruth: Optional[List[DiagonalGaussian]]


def sample_latent(gaussians: Sequence[DiagonalGaussian], rng: Optional[torch.Generator], config: ModelConfig,
                  n: Optional[int] = None, stochastic: bool = True, dtype=None,
                  zero_latent: bool = False) -> torch.Tensor:
    """Reparameterized latent: ``mean + std * eps`` per kind, then a noise tail.

    With no gaussians the latent part is zero-filled when ``zero_latent`` is
    set (noise-only rollouts of an LVP model) and omitted otherwise.
    ``stochastic=False`` replaces every draw with zero.
    """
    if gaussians:
        n = gaussians[0].mean.shape[0]
        dtype = gaussians[0].mean.dtype
    if n is None:
        raise ValueError("n is required when no gaussians are given")
    dtype = dtype or torch.get_default_dtype()

    def draw(d):
        if not stochastic:
            return torch.zeros(n, d, dtype=dtype)
        return torch.randn(n, d, generator=rng, dtype=dtype)

    parts = [g.mean + g.std * draw(g.mean.shape[1]) for g in gaussians]
    if not gaussians and zero_latent and config.latent_width:
        parts.append(torch.zeros(n, config.latent_width, dtype=dtype))
    parts.append(draw(config.noise_width))
    z = torch.cat(parts, dim=1)
    if z.shape[1] != config.z_dim:
        raise ValueError(f"latent width {z.shape[1]} != z_dim {config.z_dim}")
    return z


class Discriminator(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Linear(2, config.embed_dim)
        self.encoder = nn.LSTM(config.embed_dim, config.disc_hidden, batch_first=True)
        self.classifier = nn.Sequential(
            nn.Linear(config.disc_hidden, config.disc_mlp), nn.ReLU(), nn.Linear(config.disc_mlp, 1)
        )
        _init_weights(self)

    def forward(self, full_trajectory: torch.Tensor) -> torch.Tensor:
        """Realness probability per pedestrian, shape ``[n]``."""
        e = torch.relu(self.embedding(displacements_of(full_trajectory)))
        _, (h, _) = self.encoder(e)
        return torch.sigmoid(self.classifier(h[0]))[:, 0]


class TPPOParams(nn.Module):
    """All learnable weights: generator and discriminator."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.generator = Generator(config)
        self.discriminator = Discriminator(config)


def build_params(config: ModelConfig, seed: int = 0, dtype=torch.float32) -> TPPOParams:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        params = TPPOParams(config)
    return params.to(dtype)


def _param_dtype(params: nn.Module):
    return next(params.parameters()).dtype


# Functional entry points mirroring the component operations.

def encode(displacements, params: TPPOParams, config: Optional[ModelConfig] = None) -> torch.Tensor:
    return params.generator.encode(torch.as_tensor(displacements, dtype=_param_dtype(params)))


def social_pool(hidden, last_positions, attn: kin.AttentionWeights, params: TPPOParams,
                config: Optional[ModelConfig] = None) -> torch.Tensor:
    dtype = _param_dtype(params)
    return params.generator.social_pool(torch.as_tensor(hidden, dtype=dtype),
                                        torch.as_tensor(last_positions, dtype=dtype), attn)


def lvp_forward(features: kin.KinematicFeatures, branch: str, params: TPPOParams,
                config: Optional[ModelConfig] = None) -> List[DiagonalGaussian]:
    return params.generator.lvp_forward(features, branch)


def decode_rollout(hidden, pooled, z, last_obs_position, last_obs_displacement, params: TPPOParams,
                   config: Optional[ModelConfig] = None) -> PredictionSample:
    return params.generator.decode_rollout(hidden, pooled, z, last_obs_position, last_obs_displacement)


def generator_forward(window, params: TPPOParams, config: Optional[ModelConfig] = None, rng=None,
                      latent_source: str = "observed", stochastic: bool = True) -> PredictionSample:
    batch = collate([window], dtype=_param_dtype(params))
    return params.generator(batch, rng, latent_source, 1, stochastic)


def discriminator_score(full_trajectory, params: TPPOParams, config: Optional[ModelConfig] = None) -> torch.Tensor:
    traj = torch.as_tensor(full_trajectory, dtype=_param_dtype(params))
    if not torch.isfinite(traj).all():
        raise ValueError("non-finite trajectory")
    return params.discriminator(traj)
