"""Command-line entry point: ``tppo {train,eval,density,synth}``.

Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from . import data as D
from .evaluation import (baseline_report, density_map, sampling_sweep, write_density_grid, write_reports_csv)
from .model import ModelConfig
from .training import (CheckpointError, TrainConfig, TrainingDiverged, load_checkpoint, save_checkpoint, train,
                       write_log_csv)

logger = logging.getLogger("tppo")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
CHECKPOINT_NAME = "checkpoint.tppo"
CONFIG_NAME = "config.txt"
LOG_NAME = "train_log.csv"
_SKIP_ECHO = {"command", "config", "func"}


class UsageError(Exception):
    pass


def read_flat_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_flat_config(args: argparse.Namespace, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# tppo {args.command}\n")
        for key in sorted(vars(args)):
            if key in _SKIP_ECHO:
                continue
            value = getattr(args, key)
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key}={'' if value is None else value}\n")


def _samples_list(text: str):
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid sample counts {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("sample counts must be positive integers")
    return ks


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tppo", description="Generative pedestrian trajectory prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value file whose values become defaults")
        p.add_argument("--threads", type=_positive_int, default=1, help="torch threads (1 = reference mode)")

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--data-dir", default=os.environ.get("TPPO_DATA_DIR"))
    t.add_argument("--leave-out", choices=list(D.DATASET_NAMES) + ["synth"], required=False)
    t.add_argument("--pred-len", type=int, choices=[8, 12], default=12)
    t.add_argument("--obs-len", type=int, default=8)
    t.add_argument("--attention", choices=["none", "soft", "hard"], default="hard")
    t.add_argument("--lvp", choices=["none", "single", "multi"], default="multi")
    t.add_argument("--epochs", type=_positive_int, default=600)
    t.add_argument("--batch-size", type=_positive_int, default=64)
    t.add_argument("--lr", type=_positive_float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    t.add_argument("--out-dir", default="runs/tppo")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="best-of-K ADE/FDE on one set")
    common(e)
    e.add_argument("--checkpoint", required=False)
    e.add_argument("--data-dir", default=os.environ.get("TPPO_DATA_DIR"))
    e.add_argument("--set", dest="set_name", required=False)
    e.add_argument("--samples", type=_samples_list, default="20")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--pred-len", type=int, choices=[8, 12], default=None,
                   help="required horizon; mismatch with the checkpoint fails")
    e.add_argument("--baseline", action="store_true", help="also report the constant-velocity baseline")
    e.add_argument("--out", default=None, help="metric CSV (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("density", help="density map of sampled futures for one window")
    common(d)
    d.add_argument("--checkpoint", required=False)
    d.add_argument("--data-dir", default=os.environ.get("TPPO_DATA_DIR"))
    d.add_argument("--set", dest="set_name", default="synth")
    d.add_argument("--window-id", type=int, default=0)
    d.add_argument("--samples", type=_positive_int, default=300)
    d.add_argument("--cell", type=_positive_float, default=0.1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--deterministic", action="store_true", help="disable latent and noise sampling")
    d.add_argument("--out", default="density.txt")
    d.add_argument("--image", default=None, help="optional PNG rendering")
    d.set_defaults(func=cmd_density)

    s = sub.add_parser("synth", help="write synthetic scenes")
    common(s)
    s.add_argument("--scenario", choices=list(D.SCENARIOS), required=False)
    s.add_argument("--n", type=_positive_int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=_positive_int, default=20)
    s.add_argument("--jitter", type=float, default=0.02)
    s.add_argument("--out-dir", default="synth")
    s.set_defaults(func=cmd_synth)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_flat_config(args.config)
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        defaults = {}
        for key, value in values.items():
            if key not in known or key in _SKIP_ECHO:
                parser.error(f"unknown config key {key!r} for {args.command}")
            defaults[key] = None if value == "" else value
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    for key in ("deterministic", "baseline"):
        if hasattr(args, key):
            setattr(args, key, _bool(getattr(args, key)))
    if isinstance(getattr(args, "samples", None), str):
        args.samples = _samples_list(args.samples)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_set_windows(data_dir, name, obs_len, pred_len):
    try:
        scenes = D.load_named_set(data_dir, name)
    except FileNotFoundError as exc:
        raise UsageError(str(exc))
    return D.windows_from_scenes(scenes, obs_len, pred_len)


def cmd_train(args) -> int:
    _require(args, "data_dir", "leave_out")
    if args.leave_out == "synth":
        split = None
        windows = _load_set_windows(args.data_dir, "synth", args.obs_len, args.pred_len)
    else:
        split = D.leave_one_out_split(args.leave_out)
        windows = []
        for name in split.train_sets:
            windows += _load_set_windows(args.data_dir, name, args.obs_len, args.pred_len)
    if not windows:
        raise UsageError("no training windows found")
    cfg = TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs, learning_rate=args.lr, seed=args.seed, dtype=args.dtype,
        model=ModelConfig(obs_len=args.obs_len, pred_len=args.pred_len, attention=args.attention, lvp=args.lvp),
        split=split,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_flat_config(args, out / CONFIG_NAME)
    logger.info("training on %d windows (%d pedestrians)", len(windows), sum(w.n_peds for w in windows))
    try:
        params, log = train(windows, cfg, on_epoch=lambda r: logger.info(
            "epoch %d d=%.4f g=%.4f variety=%.4f kl=%.5f", r["epoch"], r["d_loss"], r["g_loss"], r["variety"],
            r["kl"]))
    except TrainingDiverged as exc:
        logger.error("training diverged: %s", exc)
        return EXIT_RUNTIME
    save_checkpoint(params, cfg, out / CHECKPOINT_NAME)
    write_log_csv(log, out / LOG_NAME)
    print(f"wrote {out / CHECKPOINT_NAME}")
    return EXIT_OK


def _load_ckpt(args, expected=None):
    _require(args, "checkpoint")
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    return load_checkpoint(args.checkpoint, expected)


def cmd_eval(args) -> int:
    _require(args, "checkpoint", "data_dir", "set_name")
    expected = {"pred_len": args.pred_len} if args.pred_len else None
    params, cfg = _load_ckpt(args, expected)
    m = cfg.model
    windows = _load_set_windows(args.data_dir, args.set_name, m.obs_len, m.pred_len)
    if not windows:
        raise UsageError(f"set {args.set_name!r} yields no windows")
    reports = sampling_sweep(params, windows, args.samples, args.seed)
    rows = [(args.set_name, r) for r in reports]
    if args.baseline:
        rows.append((f"{args.set_name}/cv", baseline_report(windows)))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"metrics_{args.set_name}.csv"
    for name, r in rows:
        print(f"{name:>12s}  k={r.k:<3d} T={r.pred_len:<3d} ADE={r.ade:.4f}  FDE={r.fde:.4f}  n={r.n_pedestrians}")
    write_reports_csv(rows, out)
    write_flat_config(args, out.with_suffix(".config.txt"))
    return EXIT_OK


def cmd_density(args) -> int:
    _require(args, "checkpoint", "data_dir")
    params, cfg = _load_ckpt(args)
    windows = _load_set_windows(args.data_dir, args.set_name, cfg.model.obs_len, cfg.model.pred_len)
    if not 0 <= args.window_id < len(windows):
        raise UsageError(f"unknown window id {args.window_id}; set has {len(windows)} windows")
    window = windows[args.window_id]
    grid = density_map(params, window, args.samples, args.cell, args.seed, stochastic=not args.deterministic)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_density_grid(grid, out)
    write_flat_config(args, out.with_suffix(".config.txt"))
    if args.image:
        render_density(grid, window, args.image)
    print(f"wrote {out} ({grid.counts.shape[0]} channels, {grid.counts.shape[1]}x{grid.counts.shape[2]} cells)")
    return EXIT_OK


def render_density(grid, window, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    h, w = grid.counts.shape[1:]
    extent = (grid.origin[0], grid.origin[0] + w * grid.cell, grid.origin[1], grid.origin[1] + h * grid.cell)
    fig, ax = plt.subplots(figsize=(6, 6))
    total = grid.counts.sum(axis=0).astype(float)
    ax.imshow(np.ma.masked_equal(total, 0), origin="lower", extent=extent, cmap="viridis", alpha=0.8)
    for p in range(window.n_peds):
        ax.plot(window.observed[p, :, 0], window.observed[p, :, 1], "w.-", lw=1)
        ax.plot(window.future[p, :, 0], window.future[p, :, 1], "r.--", lw=1)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def cmd_synth(args) -> int:
    _require(args, "scenario")
    scenes = D.synth_generate(args.scenario, args.n, args.seed, n_frames=args.frames, jitter=args.jitter)
    paths = D.export_scenes(scenes, args.out_dir)
    write_flat_config(args, Path(args.out_dir) / f"{args.scenario}.config")
    print(f"wrote {len(paths)} scenes to {args.out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tppo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"tppo {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
