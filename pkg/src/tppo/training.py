"""Adversarial training loop and checkpoint I/O."""

from __future__ import annotations

import csv
import json
import logging
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .data import SplitSpec
from .losses import LossWeights, discriminator_loss, generator_adversarial_loss, kl_loss, total_loss, variety_loss
from .model import ModelConfig, TPPOParams, build_params, collate

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_MAGIC = b"TPPOCKPT\n"
LOG_COLUMNS = ("epoch", "d_loss", "g_loss", "variety", "kl", "wall_seconds")


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 600
    learning_rate: float = 1e-3
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    d_steps_per_g_step: int = 2
    clip_norm: float = 10.0
    seed: int = 0
    dtype: str = "float32"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    split: Optional[SplitSpec] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["model"] = self.model.to_dict()
        if self.split is not None:
            d["split"] = {"train_sets": list(self.split.train_sets), "test_set": self.split.test_set}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam_betas"] = tuple(d.get("adam_betas", (0.9, 0.999)))
        d["loss_weights"] = LossWeights(**d.get("loss_weights", {}))
        d["model"] = ModelConfig(**d.get("model", {}))
        if d.get("split"):
            d["split"] = SplitSpec(tuple(d["split"]["train_sets"]), d["split"]["test_set"])
        return cls(**d)


@dataclass
class TrainingLog:
    rows: List[Dict[str, float]] = field(default_factory=list)
    d_updates: int = 0
    g_updates: int = 0

    def column(self, name: str) -> List[float]:
        return [r[name] for r in self.rows]


def make_batches(windows: Sequence, batch_size: int, rng: np.random.Generator) -> List[List]:
    """Shuffle windows and group them until each group holds >= batch_size pedestrians."""
    order = rng.permutation(len(windows))
    batches, cur, n = [], [], 0
    for i in order:
        cur.append(windows[i])
        n += windows[i].n_peds
        if n >= batch_size:
            batches.append(cur)
            cur, n = [], 0
    if cur:
        batches.append(cur)
    return batches


def _check_finite(name: str, value: torch.Tensor, epoch: int) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDiverged(f"{name} became non-finite in epoch {epoch}")


def _step(optimizer, loss, parameters, clip_norm):
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(parameters, clip_norm)
    optimizer.step()


def train(train_windows: Sequence, cfg: TrainConfig, params: Optional[TPPOParams] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> Tuple[TPPOParams, TrainingLog]:
    """Train generator and discriminator; deterministic for a given seed."""
    if not train_windows:
        raise ValueError("no training windows")
    mcfg = cfg.model
    for w in train_windows:
        if w.obs_len != mcfg.obs_len or w.pred_len != mcfg.pred_len:
            raise ValueError(f"window horizons ({w.obs_len}, {w.pred_len}) do not match model "
                             f"({mcfg.obs_len}, {mcfg.pred_len})")
    dtype = cfg.torch_dtype
    if params is None:
        params = build_params(mcfg, cfg.seed, dtype)
    gen, disc = params.generator, params.discriminator
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps)
    np_rng = np.random.default_rng(cfg.seed)
    rng = torch.Generator().manual_seed(cfg.seed)
    m = cfg.loss_weights.variety_m
    use_lvp = mcfg.lvp != "none"
    log = TrainingLog()

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = dict(d_loss=0.0, g_loss=0.0, variety=0.0, kl=0.0)
        batches = make_batches(train_windows, cfg.batch_size, np_rng)
        for group in batches:
            batch = collate(group, dtype)
            real = batch.full
            for _ in range(cfg.d_steps_per_g_step):
                with torch.no_grad():
                    fake = gen(batch, rng, "groundtruth").absolute_positions
                scores_real = disc(real)
                scores_fake = disc(torch.cat([batch.observed, fake], dim=1))
                d_loss = discriminator_loss(scores_real, scores_fake)
                _check_finite("d_loss", d_loss, epoch)
                _step(opt_d, d_loss, disc.parameters(), cfg.clip_norm)
                log.d_updates += 1

            ctx = gen.context(batch, need_groundtruth=use_lvp)
            pred = gen.sample(ctx, rng, "groundtruth", n_samples=m)
            samples = pred.absolute_positions.view(m, batch.n, mcfg.pred_len, 2)
            variety = variety_loss(batch.future, samples)
            scores = disc(torch.cat([batch.observed.repeat(m, 1, 1), pred.absolute_positions], dim=1))
            g_adv = generator_adversarial_loss(scores)
            kl = kl_loss(ctx.observed, ctx.groundtruth) if use_lvp else torch.zeros((), dtype=dtype)
            loss = total_loss(g_adv, variety, kl, cfg.loss_weights)
            for name, val in (("g_loss", g_adv), ("variety", variety), ("kl", kl)):
                _check_finite(name, val, epoch)
            _step(opt_g, loss, gen.parameters(), cfg.clip_norm)
            log.g_updates += 1

            sums["d_loss"] += d_loss.item()
            sums["g_loss"] += g_adv.item()
            sums["variety"] += variety.item()
            sums["kl"] += kl.item()

        for p in params.parameters():
            _check_finite("parameter", p.detach(), epoch)
        row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()},
               "wall_seconds": time.perf_counter() - t0}
        log.rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        logger.debug("epoch %d d=%.4f g=%.4f var=%.4f kl=%.4f", epoch, row["d_loss"], row["g_loss"],
                     row["variety"], row["kl"])
    return params, log


def write_log_csv(log: TrainingLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log.rows:
            writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


# --------------------------------------------------------------------------
# Checkpoints: magic, 8-byte header length, JSON header, raw tensor bytes.
# --------------------------------------------------------------------------


def save_checkpoint(params: TPPOParams, cfg: TrainConfig, path) -> None:
    state = params.state_dict()
    entries, blobs = [], []
    for name in sorted(state):
        arr = state[name].detach().cpu().contiguous().numpy()
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                        "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        blobs.append(raw)
    header = json.dumps({"version": CHECKPOINT_VERSION, "train_config": cfg.to_dict(), "tensors": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, expected: Optional[Dict[str, object]] = None) -> Tuple[TPPOParams, TrainConfig]:
    """Read a checkpoint; ``expected`` maps model-config fields to required values."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_MAGIC):
        raise CheckpointError("magic: not a checkpoint file")
    off = len(_MAGIC)
    if len(data) < off + 8:
        raise CheckpointError("header: file truncated before header length")
    (hlen,) = struct.unpack("<Q", data[off:off + 8])
    off += 8
    if len(data) < off + hlen:
        raise CheckpointError("header: file truncated inside header")
    try:
        header = json.loads(data[off:off + hlen])
    except ValueError as exc:
        raise CheckpointError(f"header: corrupt JSON ({exc})") from exc
    off += hlen
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"version: checkpoint version {header.get('version')} != supported {CHECKPOINT_VERSION}")
    try:
        cfg = TrainConfig.from_dict(header["train_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"config: {exc}") from exc
    for key, want in (expected or {}).items():
        have = getattr(cfg.model, key)
        if have != want:
            raise CheckpointError(f"config: checkpoint has {key}={have!r}, expected {want!r}")

    params = build_params(cfg.model, cfg.seed, cfg.torch_dtype)
    own = params.state_dict()
    state = {}
    for entry in header["tensors"]:
        name = entry["name"]
        raw = data[off:off + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"tensor {name}: file truncated")
        if zlib.crc32(raw) != entry["crc32"]:
            raise CheckpointError(f"tensor {name}: checksum mismatch")
        off += entry["nbytes"]
        if name not in own:
            raise CheckpointError(f"tensor {name}: unknown parameter")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        if tuple(arr.shape) != tuple(own[name].shape):
            raise CheckpointError(f"tensor {name}: shape {arr.shape} != expected {tuple(own[name].shape)}")
        state[name] = torch.from_numpy(arr.copy())
    missing = set(own) - set(state)
    if missing:
        raise CheckpointError(f"tensors: missing {sorted(missing)}")
    if off != len(data):
        raise CheckpointError("tensors: trailing bytes after last tensor")
    params.load_state_dict(state)
    return params, cfg


def params_finite(params: TPPOParams) -> bool:
    return all(bool(torch.isfinite(p).all()) for p in params.parameters())


def count_parameters(params: TPPOParams) -> int:
    return sum(p.numel() for p in params.parameters())

