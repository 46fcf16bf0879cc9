"""ADE/FDE metrics, best-of-K evaluation, sampling sweeps and density maps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from .model import PredictionSample, TPPOParams, collate, sample_latent


@dataclass
class MetricReport:
    ade: float
    fde: float
    k: int
    pred_len: int
    n_pedestrians: int


@dataclass
class DensityGrid:
    origin: Tuple[float, float]
    cell: float
    counts: np.ndarray  # [n_peds, H, W], rows along y
    n_samples: int

    def cell_of(self, xy) -> Tuple[int, int]:
        col = math.floor((xy[0] - self.origin[0]) / self.cell)
        row = math.floor((xy[1] - self.origin[1]) / self.cell)
        return row, col


def _check_shapes(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def ade(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    return float(np.linalg.norm(pred[:, -1] - gt[:, -1], axis=-1).mean())


def best_of_k_errors(samples: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pedestrian ADE of the ADE-best sample and the FDE of that same sample.

    ``samples`` is ``[k, n, T, 2]``, ``gt`` is ``[n, T, 2]``.
    """
    dist = np.linalg.norm(samples - gt[None], axis=-1)  # [k, n, T]
    per_ade = dist.mean(axis=-1)
    best = per_ade.argmin(axis=0)
    idx = np.arange(gt.shape[0])
    return per_ade[best, idx], dist[best, idx, -1]


def window_generator(seed: int, index: int) -> torch.Generator:
    state = np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint32)
    return torch.Generator().manual_seed(int(state[0]) << 32 | int(state[1]))


@torch.no_grad()
def sample_futures(params: TPPOParams, window, n_samples: int, rng: torch.Generator,
                   latent_source: str = "observed", stochastic: bool = True) -> np.ndarray:
    """``[n_samples, n, T, 2]`` absolute futures.

    Latents are drawn one sample at a time so the first k samples of a
    longer stream equal a k-sample stream with the same generator.
    """
    gen = params.generator
    cfg = gen.config
    dtype = next(params.parameters()).dtype
    batch = collate([window], dtype)
    ctx = gen.context(batch, need_groundtruth=latent_source == "groundtruth")
    gaussians = {"observed": ctx.observed, "groundtruth": ctx.groundtruth}.get(latent_source) or []
    n = batch.n
    zs = [sample_latent(gaussians, rng, cfg, n=n, stochastic=stochastic, dtype=dtype,
                        zero_latent=latent_source == "noise_only") for _ in range(n_samples)]
    rep = lambda t: t.repeat(n_samples, 1)  # noqa: E731
    out = gen.decode_rollout(rep(ctx.hidden), rep(ctx.pooled), torch.cat(zs), rep(ctx.last_pos), rep(ctx.last_disp))
    return out.absolute_positions.reshape(n_samples, n, cfg.pred_len, 2).double().numpy()


def _check_windows(params, windows):
    if not windows:
        raise ValueError("no windows to evaluate")
    pred_len = params.config.pred_len
    for w in windows:
        if w.pred_len != pred_len or w.obs_len != params.config.obs_len:
            raise ValueError(f"window horizons ({w.obs_len}, {w.pred_len}) do not match model "
                             f"({params.config.obs_len}, {pred_len})")


def sampling_sweep(params: TPPOParams, windows: Sequence, ks: Sequence[int], seed: int = 0,
                   latent_source: str = "observed", stochastic: bool = True) -> List[MetricReport]:
    """Best-of-k reports for every k in ``ks`` from one nested sample stream per window."""
    if not ks:
        raise ValueError("ks must be non-empty")
    if min(ks) < 1:
        raise ValueError("every k must be >= 1")
    _check_windows(params, windows)
    kmax = max(ks)
    ade_parts = {k: [] for k in ks}
    fde_parts = {k: [] for k in ks}
    for i, w in enumerate(windows):
        samples = sample_futures(params, w, kmax, window_generator(seed, i), latent_source, stochastic)
        for k in ks:
            a, f = best_of_k_errors(samples[:k], np.asarray(w.future, dtype=np.float64))
            ade_parts[k].append(a)
            fde_parts[k].append(f)
    reports = []
    for k in ks:
        a, f = np.concatenate(ade_parts[k]), np.concatenate(fde_parts[k])
        reports.append(MetricReport(float(a.mean()), float(f.mean()), k, params.config.pred_len, len(a)))
    return reports


def best_of_k_eval(params: TPPOParams, windows: Sequence, k: int = 20, seed: int = 0,
                   latent_source: str = "observed", stochastic: bool = True) -> MetricReport:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sampling_sweep(params, windows, [k], seed, latent_source, stochastic)[0]


def density_map(params: TPPOParams, window, n_samples: int = 300, grid_cell: float = 0.1, seed: int = 0,
                stochastic: bool = True) -> DensityGrid:
    """Histogram every predicted position of ``n_samples`` futures per pedestrian."""
    if not grid_cell > 0:
        raise ValueError("grid_cell must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = sample_futures(params, window, n_samples, window_generator(seed, 0), stochastic=stochastic)
    pts = samples.reshape(-1, 2)
    origin = pts.min(axis=0) - grid_cell
    ix = np.floor((samples[..., 0] - origin[0]) / grid_cell).astype(np.int64)
    iy = np.floor((samples[..., 1] - origin[1]) / grid_cell).astype(np.int64)
    width = int(ix.max()) + 2
    height = int(iy.max()) + 2
    n_peds = samples.shape[1]
    counts = np.zeros((n_peds, height, width), dtype=np.int64)
    for p in range(n_peds):
        np.add.at(counts[p], (iy[:, p].ravel(), ix[:, p].ravel()), 1)
    return DensityGrid((float(origin[0]), float(origin[1])), float(grid_cell), counts, n_samples)


def constant_velocity_baseline(window) -> PredictionSample:
    """Extrapolate each pedestrian with its mean observed per-step displacement."""
    obs = np.asarray(window.observed, dtype=np.float64)
    if obs.shape[1] < 2:
        raise ValueError("need at least 2 observed steps")
    step = (obs[:, -1] - obs[:, 0]) / (obs.shape[1] - 1)
    disp = np.repeat(step[:, None, :], window.pred_len, axis=1)
    pos = obs[:, -1:, :] + np.cumsum(disp, axis=1)
    return PredictionSample(torch.from_numpy(disp), torch.from_numpy(pos))


def baseline_report(windows: Sequence) -> MetricReport:
    ades, fdes = [], []
    for w in windows:
        pred = constant_velocity_baseline(w).absolute_positions.numpy()
        d = np.linalg.norm(pred - w.future, axis=-1)
        ades.append(d.mean(axis=1))
        fdes.append(d[:, -1])
    a, f = np.concatenate(ades), np.concatenate(fdes)
    return MetricReport(float(a.mean()), float(f.mean()), 1, windows[0].pred_len, len(a))


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("set", "k", "pred_len", "ade", "fde", "n_peds")


def write_reports_csv(rows: Sequence[Tuple[str, MetricReport]], path) -> None:
    """One CSV line per ``(set_name, report)`` pair."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for name, r in rows:
            writer.writerow([name, r.k, r.pred_len, f"{r.ade:.6f}", f"{r.fde:.6f}", r.n_pedestrians])


def write_density_grid(grid: DensityGrid, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"origin_x {grid.origin[0]!r}\n")
        fh.write(f"origin_y {grid.origin[1]!r}\n")
        fh.write(f"cell {grid.cell!r}\n")
        fh.write(f"n_samples {grid.n_samples}\n")
        for p, channel in enumerate(grid.counts):
            fh.write(f"channel {p} {channel.shape[0]} {channel.shape[1]}\n")
            for row in channel:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_density_grid(path) -> DensityGrid:
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = {}
    for line in lines[:4]:
        key, value = line.split()
        header[key] = value
    channels = []
    i = 4
    while i < len(lines):
        _, _, h, w = lines[i].split()
        h, w = int(h), int(w)
        rows = [[int(v) for v in lines[i + 1 + r].split()] for r in range(h)]
        channels.append(np.asarray(rows, dtype=np.int64).reshape(h, w))
        i += 1 + h
    counts = np.stack(channels) if channels else np.zeros((0, 0, 0), dtype=np.int64)
    return DensityGrid((float(header["origin_x"]), float(header["origin_y"])), float(header["cell"]),
                       counts, int(header["n_samples"]))
