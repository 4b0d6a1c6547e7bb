"""Pedestrian trajectory scenes: loading, rectification, cleaning, synthesis.

Raw tracks are pixel-space samples on a fixed frame grid.  A homography fitted
from manifest correspondences maps them to world meters; cleaning drops tracks
that leave the region of interest or pass closer than a collision threshold to
another pedestrian at a shared frame.  A synthetic generator produces
collision-free scenes for desk-scale experiments, and expert feature
trajectories are replayed once per scene and cached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features


class DegenerateCorrespondences(ValueError):
    """The homography system is singular (collinear or repeated points)."""


class PointAtInfinity(ValueError):
    """Projective denominator underflow when applying a homography."""


class EmptyScene(ValueError):
    """No tracks survived cleaning, or a scene was requested with none."""


class OutOfTrackRange(ValueError):
    """Interpolation time outside the track's time span."""


class GenerationFailed(RuntimeError):
    """Collision-free synthetic placement failed within the retry budget."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in meters."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def contains(self, xy: np.ndarray, margin: float = 0.0) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return ((xy[:, 0] >= self.x_min + margin) & (xy[:, 0] <= self.x_max - margin)
                & (xy[:, 1] >= self.y_min + margin) & (xy[:, 1] <= self.y_max - margin))

    @property
    def diag(self) -> float:
        return float(np.hypot(self.x_max - self.x_min, self.y_max - self.y_min))


@dataclass
class RawTrack:
    """Pixel-space samples (frame, x, y) for one pedestrian."""

    ped_id: int
    frames: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if len(self.frames) != len(self.xy):
            raise ValueError("frames and positions must align")
        if len(self.frames) > 1 and not np.all(np.diff(self.frames) > 0):
            raise ValueError(f"track {self.ped_id}: frames must strictly increase")


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so h[2,2] == 1."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(h)) <= 1e-9:
            raise DegenerateCorrespondences("homography matrix is singular")
        if abs(h[2, 2]) <= 1e-12:
            raise DegenerateCorrespondences("cannot normalize h[2,2] to 1")
        object.__setattr__(self, "h", h / h[2, 2])

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))


def fit_homography(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Direct linear transform with h33 fixed to 1.

    Each correspondence contributes two rows; 4 points give the exact-fit
    8x8 system, more points a least-squares fit.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) < 4 or len(src) != len(dst):
        raise ValueError("need at least 4 matched point pairs")
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u])
        rhs.append(u)
        rows.append([0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v])
        rhs.append(v)
    a = np.array(rows)
    b = np.array(rhs)
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 8:
        raise DegenerateCorrespondences(f"correspondence system has rank {rank} < 8")
    return Homography(np.append(sol, 1.0).reshape(3, 3))


def apply_homography(h: Homography, point) -> tuple[float, float]:
    x, y = float(point[0]), float(point[1])
    p = h.h @ (x, y, 1.0)
    if abs(p[2]) <= 1e-12:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    return float(p[0] / p[2]), float(p[1] / p[2])


def _apply_homography_batch(h: Homography, xy: np.ndarray) -> np.ndarray:
    pts = np.hstack([xy, np.ones((len(xy), 1))]) @ h.h.T
    if np.any(np.abs(pts[:, 2]) <= 1e-12):
        raise PointAtInfinity("track contains a point mapping to infinity")
    return pts[:, :2] / pts[:, 2:3]


@dataclass
class WorldTrack:
    """World-frame samples (seconds, meters) for one pedestrian."""

    ped_id: int
    times: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def start(self) -> np.ndarray:
        return self.xy[0]

    @property
    def goal(self) -> np.ndarray:
        return self.xy[-1]


@dataclass
class Scene:
    tracks: list[WorldTrack]
    frame_dt: float
    roi: Rect

    def __post_init__(self):
        self._by_id = {t.ped_id: t for t in self.tracks}
        if len(self._by_id) != len(self.tracks):
            raise ValueError("duplicate ped_id in scene")

    def track(self, ped_id: int) -> WorldTrack:
        return self._by_id[ped_id]

    @property
    def ped_ids(self) -> list[int]:
        return [t.ped_id for t in self.tracks]

    @property
    def duration(self) -> float:
        return max(t.end_time for t in self.tracks) if self.tracks else 0.0


@dataclass
class CleaningReport:
    kept: int = 0
    too_short: int = 0
    outside_roi: int = 0
    unmappable: int = 0
    collision: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def interpolate_position(track: WorldTrack, t: float) -> np.ndarray:
    """Linear interpolation between bracketing samples; exact at sample times."""
    t0, t1 = track.start_time, track.end_time
    if t < t0 - 1e-9 or t > t1 + 1e-9:
        raise OutOfTrackRange(
            f"t={t} outside track {track.ped_id} span [{t0}, {t1}]")
    t = min(max(t, t0), t1)
    i = int(np.searchsorted(track.times, t, side="right"))
    if i >= len(track.times):
        return track.xy[-1].copy()
    if i == 0:
        return track.xy[0].copy()
    lo, hi = track.times[i - 1], track.times[i]
    if t == lo:
        return track.xy[i - 1].copy()
    w = (t - lo) / (hi - lo)
    return (1.0 - w) * track.xy[i - 1] + w * track.xy[i]


def track_velocity(track: WorldTrack, t: float, frame_dt: float) -> np.ndarray:
    """Finite-difference velocity over one dataset frame, zero if undefined."""
    if t + frame_dt <= track.end_time + 1e-9:
        return (interpolate_position(track, t + frame_dt)
                - interpolate_position(track, t)) / frame_dt
    if t - frame_dt >= track.start_time - 1e-9:
        return (interpolate_position(track, t)
                - interpolate_position(track, t - frame_dt)) / frame_dt
    return np.zeros(2)


def pedestrian_states(scene: Scene, t: float,
                      exclude: int | None = None) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """(ped_id, position, velocity) of every pedestrian whose track spans t."""
    out = []
    for track in scene.tracks:
        if track.ped_id == exclude:
            continue
        if track.start_time - 1e-9 <= t <= track.end_time + 1e-9:
            out.append((track.ped_id, interpolate_position(track, t),
                        track_velocity(track, t, scene.frame_dt)))
    return out


def _collision_marks(tracks: list[WorldTrack], frame_dt: float,
                     threshold: float) -> set[int]:
    """Indices of tracks that come closer than `threshold` to any other track
    at a shared frame."""
    by_frame: dict[int, list[tuple[int, np.ndarray]]] = {}
    for idx, track in enumerate(tracks):
        frames = np.rint(track.times / frame_dt).astype(np.int64)
        for f, p in zip(frames, track.xy):
            by_frame.setdefault(int(f), []).append((idx, p))
    marked: set[int] = set()
    for entries in by_frame.values():
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                a, pa = entries[i]
                b, pb = entries[j]
                if a != b and np.hypot(*(pa - pb)) < threshold:
                    marked.add(a)
                    marked.add(b)
    return marked


def clean_scene(raw: list[RawTrack], h: Homography, roi: Rect,
                collision_threshold: float,
                frame_dt: float = 0.04) -> tuple[Scene, CleaningReport]:
    """Rectify tracks to world space and drop short, out-of-ROI, and mutually
    colliding tracks.  Both members of a colliding pair are removed."""
    if collision_threshold <= 0:
        raise ValueError("collision_threshold must be positive")
    report = CleaningReport()
    world: list[WorldTrack] = []
    for track in raw:
        if len(track.frames) < 2:
            report.too_short += 1
            continue
        try:
            xy = _apply_homography_batch(h, track.xy)
        except PointAtInfinity:
            report.unmappable += 1
            continue
        if not np.all(roi.contains(xy)):
            report.outside_roi += 1
            continue
        world.append(WorldTrack(track.ped_id, track.frames * frame_dt, xy))
    marked = _collision_marks(world, frame_dt, collision_threshold)
    report.collision = len(marked)
    survivors = [t for i, t in enumerate(world) if i not in marked]
    report.kept = len(survivors)
    if not survivors:
        raise EmptyScene(f"no tracks survived cleaning ({report.to_json()})")
    return Scene(survivors, frame_dt, roi), report


@dataclass
class SyntheticSceneConfig:
    ped_count: int
    roi: Rect
    speed_range: tuple[float, float] = (0.8, 1.4)
    duration: float = 10.0
    frame_dt: float = 0.04
    start_stagger: float = 0.0     # seconds between consecutive track starts
    pattern: str = "random"        # "random" or "crossing"
    min_separation: float = 0.4    # clearance enforced between tracks
    margin: float = 0.3            # keep tracks this far inside the roi
    curvature: float = 0.1         # max |heading rate| in rad/s for random tracks
    max_attempts: int = 200


def _roll_track(start: np.ndarray, heading: float, speed: float, curv: float,
                n_steps: int, dt: float, roi: Rect, margin: float) -> np.ndarray:
    pts = [start.copy()]
    p = start.copy()
    for _ in range(n_steps):
        heading += curv * dt
        p = p + speed * dt * np.array([np.cos(heading), np.sin(heading)])
        if not roi.contains(p, margin=margin)[0]:
            break
        pts.append(p.copy())
    return np.array(pts)


def generate_synthetic_scene(config: SyntheticSceneConfig, seed: int) -> Scene:
    """Deterministic collision-free scene; raises GenerationFailed if the
    rejection sampler cannot place a track within the retry budget."""
    if config.ped_count == 0:
        raise EmptyScene("synthetic scene requested with 0 pedestrians")
    rng = np.random.default_rng(seed)
    dt = config.frame_dt
    stagger_frames = int(round(config.start_stagger / dt))
    tracks: list[WorldTrack] = []
    if config.pattern == "crossing":
        speed = 0.5 * (config.speed_range[0] + config.speed_range[1])
        for i in range(config.ped_count):
            lane = i // 2 + 1
            horizontal = i % 2 == 0
            if horizontal:
                n_lanes = (config.ped_count + 1) // 2 + 1
                y = config.roi.y_min + lane * (config.roi.y_max - config.roi.y_min) / n_lanes
                a = np.array([config.roi.x_min + config.margin, y])
                b = np.array([config.roi.x_max - config.margin, y])
            else:
                n_lanes = config.ped_count // 2 + 1
                x = config.roi.x_min + lane * (config.roi.x_max - config.roi.x_min) / n_lanes
                a = np.array([x, config.roi.y_min + config.margin])
                b = np.array([x, config.roi.y_max - config.margin])
            if (i // 2) % 2 == 1:
                a, b = b, a
            n_steps = int(np.ceil(np.hypot(*(b - a)) / (speed * dt)))
            frac = np.linspace(0.0, 1.0, n_steps + 1)[:, None]
            xy = a + frac * (b - a)
            t0 = i * stagger_frames
            times = (t0 + np.arange(len(xy))) * dt
            tracks.append(WorldTrack(i, times, xy))
    else:
        n_steps = int(round(config.duration / dt))
        for i in range(config.ped_count):
            placed = False
            for _ in range(config.max_attempts):
                start = np.array([
                    rng.uniform(config.roi.x_min + config.margin,
                                config.roi.x_max - config.margin),
                    rng.uniform(config.roi.y_min + config.margin,
                                config.roi.y_max - config.margin),
                ])
                heading = rng.uniform(-np.pi, np.pi)
                speed = rng.uniform(*config.speed_range)
                curv = rng.uniform(-config.curvature, config.curvature)
                xy = _roll_track(start, heading, speed, curv, n_steps, dt,
                                 config.roi, config.margin)
                if len(xy) < 2:
                    continue
                t0 = i * stagger_frames
                cand = WorldTrack(i, (t0 + np.arange(len(xy))) * dt, xy)
                if _collision_marks(tracks + [cand], dt, config.min_separation):
                    continue
                tracks.append(cand)
                placed = True
                break
            if not placed:
                raise GenerationFailed(
                    f"could not place pedestrian {i} after {config.max_attempts} attempts")
    return Scene(tracks, dt, config.roi)


def load_tracks(path: Path) -> list[RawTrack]:
    """Plain-text track file, one sample per line: `ped_id frame x y`."""
    rows: dict[int, list[tuple[int, float, float]]] = {}
    with Path(path).open() as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"bad track line: {line!r}")
            pid, frame = int(float(parts[0])), int(float(parts[1]))
            rows.setdefault(pid, []).append((frame, float(parts[2]), float(parts[3])))
    tracks = []
    for pid in sorted(rows):
        samples = sorted(rows[pid])
        frames = np.array([s[0] for s in samples])
        xy = np.array([[s[1], s[2]] for s in samples])
        tracks.append(RawTrack(pid, frames, xy))
    return tracks


def save_tracks(path: Path, tracks: list[RawTrack]) -> None:
    with Path(path).open("w") as fh:
        for track in tracks:
            for f, (x, y) in zip(track.frames, track.xy):
                fh.write(f"{track.ped_id} {int(f)} {float(x)!r} {float(y)!r}\n")


def scene_to_raw_tracks(scene: Scene) -> list[RawTrack]:
    """World tracks back onto the frame grid (for re-cleaning and export)."""
    return [RawTrack(t.ped_id, np.rint(t.times / scene.frame_dt).astype(np.int64), t.xy)
            for t in scene.tracks]


@dataclass
class ExpertTrajectory:
    """State-feature rows of one expert episode; row k has step index t0 + k."""

    features: np.ndarray
    t0: int = 0

    def __len__(self) -> int:
        return len(self.features)


@dataclass
class ExpertSet:
    trajectories: list[ExpertTrajectory]

    def __len__(self) -> int:
        return len(self.trajectories)


def build_expert_set(scene: Scene, dt: float = 0.04) -> ExpertSet:
    """Replay each pedestrian through the feature extractor.

    Tracks are resampled at the simulator timestep so expert step indices are
    commensurate with replay-buffer step indices (states only; this is
    learning from observation).
    """
    roi_diag = scene.roi.diag
    trajectories = []
    for track in scene.tracks:
        n = int(np.floor((track.end_time - track.start_time) / dt + 1e-9)) + 1
        times = track.start_time + dt * np.arange(n)
        pos = np.array([interpolate_position(track, t) for t in times])
        vel = np.zeros_like(pos)
        if n > 1:
            vel[:-1] = (pos[1:] - pos[:-1]) / dt
            vel[-1] = vel[-2]
        rows = np.empty((n, features.FEATURE_DIM))
        for k, t in enumerate(times):
            speed = min(float(np.hypot(*vel[k])), features.MAX_SPEED)
            heading = float(np.arctan2(vel[k][1], vel[k][0])) if speed > 1e-9 else 0.0
            peds = [(p[0], p[1], v[0], v[1])
                    for _, p, v in pedestrian_states(scene, t, exclude=track.ped_id)]
            rows[k] = features.extract(
                features.AgentKinematics(pos[k][0], pos[k][1], heading, speed),
                peds, (track.goal[0], track.goal[1]), roi_diag)
        trajectories.append(ExpertTrajectory(rows, t0=0))
    return ExpertSet(trajectories)


def save_expert_set(path: Path, expert_set: ExpertSet) -> None:
    arrays = {f"traj_{i}": t.features for i, t in enumerate(expert_set.trajectories)}
    arrays["t0"] = np.array([t.t0 for t in expert_set.trajectories], dtype=np.int64)
    np.savez(path, **arrays)


def load_expert_set(path: Path) -> ExpertSet:
    with np.load(path) as data:
        t0 = data["t0"]
        trajs = [ExpertTrajectory(data[f"traj_{i}"], int(t0[i]))
                 for i in range(len(t0))]
    return ExpertSet(trajs)


def save_scene(path: Path, scene: Scene) -> None:
    arrays = {"ped_ids": np.array(scene.ped_ids, dtype=np.int64),
              "frame_dt": np.array([scene.frame_dt]),
              "roi": np.array([scene.roi.x_min, scene.roi.y_min,
                               scene.roi.x_max, scene.roi.y_max])}
    for i, t in enumerate(scene.tracks):
        arrays[f"times_{i}"] = t.times
        arrays[f"xy_{i}"] = t.xy
    np.savez(path, **arrays)


def load_scene(path: Path) -> Scene:
    with np.load(path) as data:
        ped_ids = data["ped_ids"]
        tracks = [WorldTrack(int(pid), data[f"times_{i}"], data[f"xy_{i}"])
                  for i, pid in enumerate(ped_ids)]
        roi = Rect(*data["roi"].tolist())
        return Scene(tracks, float(data["frame_dt"][0]), roi)


@dataclass
class SceneManifest:
    """Flat key-value description of a scene source.

    `kind` is "tracks" (pixel track file + homography correspondences) or
    "synthetic" (generator parameters).
    """

    kind: str
    frame_dt: float = 0.04
    roi: Rect = Rect(0.0, 0.0, 10.0, 10.0)
    collision_threshold: float = 0.2
    tracks_path: str | None = None
    homography_src: np.ndarray | None = None
    homography_dst: np.ndarray | None = None
    ped_count: int = 8
    pattern: str = "crossing"
    speed_range: tuple[float, float] = (1.0, 1.5)
    duration: float = 10.0
    stagger: float = 60.0
    seed: int = 0


def parse_manifest(path: Path) -> SceneManifest:
    """`key = value` lines with `#` comments; point lists are flat number rows."""
    values: dict[str, str] = {}
    with Path(path).open() as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad manifest line: {line!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    kind = values.get("type", "tracks")
    m = SceneManifest(kind=kind)
    if "frame_dt" in values:
        m.frame_dt = float(values["frame_dt"])
    if "roi" in values:
        m.roi = Rect(*(float(v) for v in values["roi"].split()))
    if "collision_threshold" in values:
        m.collision_threshold = float(values["collision_threshold"])
    if kind == "tracks":
        if "tracks" not in values:
            raise ValueError("track manifest needs a `tracks` path")
        m.tracks_path = values["tracks"]
        for key in ("homography_src", "homography_dst"):
            if key in values:
                nums = [float(v) for v in values[key].split()]
                setattr(m, key, np.array(nums).reshape(-1, 2))
    elif kind == "synthetic":
        m.ped_count = int(values.get("ped_count", m.ped_count))
        m.pattern = values.get("pattern", m.pattern)
        if "speed_range" in values:
            lo, hi = (float(v) for v in values["speed_range"].split())
            m.speed_range = (lo, hi)
        m.duration = float(values.get("duration", m.duration))
        m.stagger = float(values.get("stagger", m.stagger))
        m.seed = int(values.get("seed", m.seed))
    else:
        raise ValueError(f"unknown manifest type {kind!r}")
    return m


def scene_from_manifest(manifest: SceneManifest,
                        base_dir: Path) -> tuple[Scene, CleaningReport | None]:
    """Build (and clean, for track sources) the scene a manifest describes."""
    if manifest.kind == "synthetic":
        config = SyntheticSceneConfig(
            ped_count=manifest.ped_count, roi=manifest.roi,
            speed_range=manifest.speed_range, duration=manifest.duration,
            frame_dt=manifest.frame_dt, start_stagger=manifest.stagger,
            pattern=manifest.pattern,
            min_separation=max(0.4, 2.0 * manifest.collision_threshold))
        return generate_synthetic_scene(config, manifest.seed), None
    raw = load_tracks(Path(base_dir) / manifest.tracks_path)
    if manifest.homography_src is not None and manifest.homography_dst is not None:
        h = fit_homography(manifest.homography_src, manifest.homography_dst)
    else:
        h = Homography.identity()
    scene, report = clean_scene(raw, h, manifest.roi,
                                manifest.collision_threshold, manifest.frame_dt)
    return scene, report
