"""Trajectory datasets: loading, resampling, windowing, splits and synthetic scenes.

Scene files hold one observation per row, ``frame ped_id x y``, whitespace
separated, positions in world meters.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DATASET_NAMES = ("ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2")
SCENARIOS = ("straight", "turn90", "cross2", "group3", "still_obstacle")
DEFAULT_DT = 0.4


class DataFormatError(ValueError):
    """Raised when a scene file row cannot be parsed."""

    def __init__(self, path, line_no: int, line: str, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}: line {line_no}: {reason}: {line.strip()!r}")


class ResampleWarning(UserWarning):
    pass


@dataclass
class TrajectoryScene:
    """Pedestrian tracks of one scene.

    ``dt`` is the duration of one frame index unit in seconds, so the sample
    of a track at frame ``f`` was taken at time ``f * dt``.
    """

    scene_id: str
    dt: float = DEFAULT_DT
    tracks: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def pedestrians(self) -> List[int]:
        return sorted(self.tracks)

    def frame_range(self) -> Tuple[int, int]:
        firsts = [int(f[0]) for f, _ in self.tracks.values() if len(f)]
        lasts = [int(f[-1]) for f, _ in self.tracks.values() if len(f)]
        if not firsts:
            return 0, -1
        return min(firsts), max(lasts)


@dataclass
class ObservationWindow:
    obs_len: int
    pred_len: int
    pedestrians: List[int]
    observed: np.ndarray  # [n, obs_len, 2]
    future: Optional[np.ndarray]  # [n, pred_len, 2]
    scene_id: str = ""
    start_frame: int = 0
    dt: float = DEFAULT_DT

    @property
    def n_peds(self) -> int:
        return len(self.pedestrians)

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.observed, self.future], axis=1)


@dataclass(frozen=True)
class SplitSpec:
    train_sets: Tuple[str, ...]
    test_set: str


# --------------------------------------------------------------------------
# Loading and export
# --------------------------------------------------------------------------


def parse_rows(lines: Iterable[str], path="<memory>") -> np.ndarray:
    rows = []
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 4:
            raise DataFormatError(path, line_no, line, f"expected 4 columns, got {len(parts)}")
        try:
            frame = float(parts[0])
            ped = float(parts[1])
            x, y = float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise DataFormatError(path, line_no, line, "non-numeric field") from exc
        if frame != int(frame) or ped != int(ped):
            raise DataFormatError(path, line_no, line, "frame and ped_id must be integers")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataFormatError(path, line_no, line, "non-finite position")
        rows.append((frame, ped, x, y))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def scene_from_rows(rows: np.ndarray, scene_id: str, dt: Optional[float] = None) -> TrajectoryScene:
    """Group ``(frame, ped, x, y)`` rows into a scene.

    When ``dt`` is None the smallest frame step found in the tracks is taken
    to be one ``DEFAULT_DT`` interval (ETH/UCY files step frames by 10).
    """
    tracks = {}
    for ped in np.unique(rows[:, 1]).astype(int):
        sel = rows[rows[:, 1] == ped]
        order = np.argsort(sel[:, 0], kind="stable")
        sel = sel[order]
        frames = sel[:, 0].astype(np.int64)
        if np.any(np.diff(frames) <= 0):
            raise ValueError(f"{scene_id}: duplicate frame for pedestrian {ped}")
        tracks[int(ped)] = (frames, sel[:, 2:4].copy())
    if dt is None:
        steps = [np.diff(f) for f, _ in tracks.values() if len(f) > 1]
        step = reduce(math.gcd, (int(s) for arr in steps for s in arr), 0)
        dt = DEFAULT_DT / step if step > 0 else DEFAULT_DT
    return TrajectoryScene(scene_id=scene_id, dt=dt, tracks=tracks)


def load_scene_file(path, dt: Optional[float] = None) -> Optional[TrajectoryScene]:
    path = Path(path)
    with open(path) as fh:
        rows = parse_rows(fh, path)
    if len(rows) == 0:
        return None
    return scene_from_rows(rows, path.stem, dt)


def load_dataset(path, fmt: str = "tsv_frame_ped_xy", dt: Optional[float] = None) -> List[TrajectoryScene]:
    """Load one scene file, or every ``*.txt`` file in a directory (sorted)."""
    if fmt != "tsv_frame_ped_xy":
        raise ValueError(f"unsupported format {fmt!r}")
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".txt")
    elif path.exists():
        files = [path]
    else:
        raise FileNotFoundError(path)
    scenes = []
    for f in files:
        scene = load_scene_file(f, dt)
        if scene is not None:
            scenes.append(scene)
    return scenes


def scene_to_text(scene: TrajectoryScene) -> str:
    rows = []
    for ped in scene.pedestrians:
        frames, pos = scene.tracks[ped]
        for f, (x, y) in zip(frames, pos):
            rows.append((int(f), ped, x, y))
    rows.sort(key=lambda r: (r[0], r[1]))
    return "".join(f"{f}\t{p}\t{x:.8f}\t{y:.8f}\n" for f, p, x, y in rows)


def write_scene(scene: TrajectoryScene, path) -> None:
    with open(path, "w") as fh:
        fh.write(scene_to_text(scene))


def load_named_set(data_dir, name: str) -> List[TrajectoryScene]:
    """Scenes of one named set: ``data_dir/NAME`` (case-insensitive) or,
    for ``synth``, the directory itself when it has no ``synth`` subfolder."""
    data_dir = Path(data_dir)
    for cand in (data_dir / name, data_dir / name.lower(), data_dir / name.upper()):
        if cand.is_dir():
            return load_dataset(cand)
    if name.lower() == "synth" and data_dir.is_dir():
        return load_dataset(data_dir)
    raise FileNotFoundError(f"no directory for set {name!r} under {data_dir}")


# --------------------------------------------------------------------------
# Resampling and windowing
# --------------------------------------------------------------------------


def resample_interpolate(scene: TrajectoryScene, dt: float = DEFAULT_DT) -> TrajectoryScene:
    """Linearly interpolate every track onto the grid ``t = k * dt``.

    Output frame ``k`` corresponds to time ``k * dt``; tracks are never
    extrapolated past their first or last sample. Single-sample tracks are
    dropped with a ``ResampleWarning``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    tracks = {}
    dropped = 0
    for ped in scene.pedestrians:
        frames, pos = scene.tracks[ped]
        if len(frames) < 2:
            dropped += 1
            continue
        t = frames.astype(np.float64) * scene.dt
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"{scene.scene_id}: non-monotone timestamps for pedestrian {ped}")
        eps = 1e-6 * dt
        k0 = math.ceil(t[0] / dt - 1e-6)
        k1 = math.floor(t[-1] / dt + 1e-6)
        if k1 < k0:
            dropped += 1
            continue
        ks = np.arange(k0, k1 + 1, dtype=np.int64)
        tq = np.clip(ks * dt, t[0], t[-1])
        # snap grid points that coincide with samples to avoid interpolation roundoff
        idx = np.searchsorted(t, tq - eps)
        exact = (idx < len(t)) & (np.abs(t[np.minimum(idx, len(t) - 1)] - tq) <= eps)
        new = np.stack([np.interp(tq, t, pos[:, 0]), np.interp(tq, t, pos[:, 1])], axis=1)
        new[exact] = pos[idx[exact]]
        tracks[ped] = (ks, new)
    if dropped:
        warnings.warn(f"{scene.scene_id}: dropped {dropped} track(s) too short to resample", ResampleWarning)
        logger.warning("%s: dropped %d short track(s)", scene.scene_id, dropped)
    return TrajectoryScene(scene_id=scene.scene_id, dt=dt, tracks=tracks)


def make_windows(scene: TrajectoryScene, obs_len: int = 8, pred_len: int = 12, stride: int = 1) -> List[ObservationWindow]:
    if obs_len < 2:
        raise ValueError("obs_len must be >= 2")
    if pred_len < 1 or stride < 1:
        raise ValueError("pred_len and stride must be >= 1")
    seq_len = obs_len + pred_len
    lo, hi = scene.frame_range()
    if hi - lo + 1 < seq_len:
        return []
    # dense [n_peds, n_frames, 2] table with NaN gaps
    peds = scene.pedestrians
    table = np.full((len(peds), hi - lo + 1, 2), np.nan)
    for row, ped in enumerate(peds):
        frames, pos = scene.tracks[ped]
        table[row, frames - lo] = pos
    present = ~np.isnan(table[..., 0])

    windows = []
    for start in range(0, hi - lo + 2 - seq_len, stride):
        keep = present[:, start:start + seq_len].all(axis=1)
        if not keep.any():
            continue
        seg = table[keep, start:start + seq_len]
        windows.append(ObservationWindow(
            obs_len=obs_len,
            pred_len=pred_len,
            pedestrians=[peds[i] for i in np.flatnonzero(keep)],
            observed=seg[:, :obs_len].copy(),
            future=seg[:, obs_len:].copy(),
            scene_id=scene.scene_id,
            start_frame=lo + start,
            dt=scene.dt,
        ))
    return windows


def windows_from_scenes(scenes: Sequence[TrajectoryScene], obs_len: int = 8, pred_len: int = 12,
                        stride: int = 1, dt: float = DEFAULT_DT) -> List[ObservationWindow]:
    out = []
    for scene in scenes:
        if not math.isclose(scene.dt, dt) or not _is_uniform(scene):
            scene = resample_interpolate(scene, dt)
        out.extend(make_windows(scene, obs_len, pred_len, stride))
    return out


def _is_uniform(scene: TrajectoryScene) -> bool:
    return all(len(f) > 0 and np.all(np.diff(f) == 1) for f, _ in scene.tracks.values())


def leave_one_out_split(test_set: str) -> SplitSpec:
    key = test_set.upper()
    if key not in DATASET_NAMES:
        raise ValueError(f"unknown set {test_set!r}; valid names: {', '.join(DATASET_NAMES)}")
    return SplitSpec(train_sets=tuple(n for n in DATASET_NAMES if n != key), test_set=key)


# --------------------------------------------------------------------------
# Synthetic scenes
# --------------------------------------------------------------------------


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _straight_tracks(rng, n_frames, dt):
    n = 2
    tracks = []
    for _ in range(n):
        start = rng.uniform(-5.0, 5.0, size=2)
        heading = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(0.8, 1.6)
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        tracks.append(start + vel * dt * np.arange(n_frames)[:, None])
    return tracks


def _turn90_tracks(rng, n_frames, dt):
    speed = rng.uniform(0.8, 1.6)
    heading = rng.uniform(0, 2 * math.pi)
    side = rng.choice([-1.0, 1.0])
    turn_at = int(rng.integers(n_frames // 3, 2 * n_frames // 3 + 1))
    d0 = np.array([math.cos(heading), math.sin(heading)])
    d1 = _rot(side * math.pi / 2) @ d0
    pos = np.zeros((n_frames, 2))
    pos[0] = rng.uniform(-5.0, 5.0, size=2)
    for t in range(1, n_frames):
        pos[t] = pos[t - 1] + speed * dt * (d0 if t <= turn_at else d1)
    return [pos]


def _cross2_tracks(rng, n_frames, dt):
    centre = rng.uniform(-2.0, 2.0, size=2)
    theta = rng.uniform(0, 2 * math.pi)
    duration = (n_frames - 1) * dt
    tracks = []
    # distinct arrival times at the crossing point so the agents never meet
    arrive = rng.uniform(0.3, 0.45) * duration
    arrivals = [arrive, arrive + rng.uniform(1.2, 2.0)]
    rng.shuffle(arrivals)
    for k, axis in enumerate((np.array([1.0, 0.0]), np.array([0.0, 1.0]))):
        speed = rng.uniform(0.8, 1.6)
        direction = _rot(theta) @ axis
        t = dt * np.arange(n_frames)
        tracks.append(centre + direction * speed * (t - arrivals[k])[:, None])
    return tracks


def _group3_tracks(rng, n_frames, dt):
    speed = rng.uniform(0.8, 1.6)
    heading = rng.uniform(0, 2 * math.pi)
    d = np.array([math.cos(heading), math.sin(heading)])
    normal = np.array([-d[1], d[0]])
    start = rng.uniform(-5.0, 5.0, size=2)
    spacing = rng.uniform(0.6, 0.9)
    t = dt * np.arange(n_frames)
    return [start + off * spacing * normal + speed * t[:, None] * d for off in (-1.0, 0.0, 1.0)]


def _still_obstacle_tracks(rng, n_frames, dt):
    obstacle = rng.uniform(-2.0, 2.0, size=2)
    theta = rng.uniform(0, 2 * math.pi)
    speed = rng.uniform(0.8, 1.6)
    side = rng.choice([-1.0, 1.0])
    duration = (n_frames - 1) * dt
    t = dt * np.arange(n_frames)
    # walker passes the obstacle mid-scene, bulging sideways to keep ~1 m clearance
    along = speed * (t - rng.uniform(0.4, 0.6) * duration)
    lateral = side * (rng.uniform(0.0, 0.3) + 1.0 * np.exp(-(along / 1.5) ** 2))
    local = np.stack([along, lateral], axis=1)
    walker = obstacle + local @ _rot(theta).T
    still = np.repeat(obstacle[None, :], n_frames, axis=0)
    return [walker, still]


_SCENARIO_BUILDERS = {
    "straight": _straight_tracks,
    "turn90": _turn90_tracks,
    "cross2": _cross2_tracks,
    "group3": _group3_tracks,
    "still_obstacle": _still_obstacle_tracks,
}


def synth_generate(scenario: str, n_scenes: int, seed: int, n_frames: int = 20,
                   dt: float = DEFAULT_DT, jitter: float = 0.02) -> List[TrajectoryScene]:
    """Deterministic synthetic scenes with known ground truth.

    ``jitter`` is the per-step Gaussian position noise in meters. It is not
    applied to the ``straight`` scenario (exact constant velocity) nor to
    stationary agents.
    """
    if scenario not in _SCENARIO_BUILDERS:
        raise ValueError(f"unknown scenario {scenario!r}; valid: {', '.join(SCENARIOS)}")
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n_scenes):
        tracks = _SCENARIO_BUILDERS[scenario](rng, n_frames, dt)
        out = {}
        for ped, pos in enumerate(tracks, start=1):
            moving = np.abs(np.diff(pos, axis=0)).max() > 0
            if scenario != "straight" and moving and jitter > 0:
                pos = pos + rng.normal(0.0, jitter, size=pos.shape)
            out[ped] = (np.arange(n_frames, dtype=np.int64), pos)
        scenes.append(TrajectoryScene(scene_id=f"{scenario}_{seed}_{i:04d}", dt=dt, tracks=out))
    return scenes


def export_scenes(scenes: Sequence[TrajectoryScene], out_dir) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for scene in scenes:
        p = os.path.join(out_dir, f"{scene.scene_id}.txt")
        write_scene(scene, p)
        paths.append(p)
    return paths


def segments_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """True if polylines ``a`` and ``b`` (each [L, 2]) cross anywhere."""
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    for i in range(len(a) - 1):
        for j in range(len(b) - 1):
            p1, p2, q1, q2 = a[i], a[i + 1], b[j], b[j + 1]
            d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
            d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
            if d1 * d2 <= 0 and d3 * d4 <= 0:
                return True
    return False
