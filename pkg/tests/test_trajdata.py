"""Scenes, homographies, cleaning, synthesis, and the expert feature cache."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socnav import trajdata
from socnav.trajdata import (DegenerateCorrespondences, EmptyScene,
                             GenerationFailed, Homography, OutOfTrackRange,
                             PointAtInfinity, RawTrack, Rect, Scene,
                             SyntheticSceneConfig, WorldTrack, apply_homography,
                             clean_scene, fit_homography,
                             generate_synthetic_scene, interpolate_position)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def gaussian_elimination_solve(a, b):
    """Independent linear solver: partial-pivot elimination, no numpy.linalg."""
    a = [list(map(float, row)) for row in a]
    b = list(map(float, b))
    n = len(b)
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        if abs(a[pivot][col]) < 1e-12:
            raise ZeroDivisionError("singular system")
        a[col], a[pivot] = a[pivot], a[col]
        b[col], b[pivot] = b[pivot], b[col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            for c in range(col, n):
                a[r][c] -= f * a[col][c]
            b[r] -= f * b[col]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        acc = b[r] - sum(a[r][c] * x[c] for c in range(r + 1, n))
        x[r] = acc / a[r][r]
    return np.array(x)


def homography_oracle(src, dst):
    """Solve the exact 4-point 8x8 DLT system with the elimination oracle."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -x * u, -y * u])
        rhs.append(u)
        rows.append([0, 0, 0, x, y, 1, -x * v, -y * v])
        rhs.append(v)
    return np.append(gaussian_elimination_solve(rows, rhs), 1.0).reshape(3, 3)


def brute_force_min_pairwise(tracks, frame_dt):
    """O(n^2) distance scan over every shared frame of every track pair."""
    best = np.inf
    for i in range(len(tracks)):
        fi = {int(round(t / frame_dt)): p
              for t, p in zip(tracks[i].times, tracks[i].xy)}
        for j in range(i + 1, len(tracks)):
            for t, p in zip(tracks[j].times, tracks[j].xy):
                q = fi.get(int(round(t / frame_dt)))
                if q is not None:
                    best = min(best, float(np.hypot(*(p - q))))
    return best


class TestHomography:
    def test_identity_from_unit_square(self):
        h = fit_homography(UNIT_SQUARE, UNIT_SQUARE)
        assert np.allclose(h.h, np.eye(3), atol=1e-9)

    def test_pure_scaling(self):
        h = fit_homography(UNIT_SQUARE, 2.0 * UNIT_SQUARE)
        assert np.allclose(h.h, np.diag([2.0, 2.0, 1.0]), atol=1e-9)

    def test_random_quad_matches_elimination_oracle(self, rng):
        for _ in range(10):
            src = UNIT_SQUARE + rng.uniform(-0.2, 0.2, size=(4, 2))
            dst = rng.uniform(-3.0, 3.0, size=(4, 2))
            try:
                expected = homography_oracle(src, dst)
            except ZeroDivisionError:
                continue
            h = fit_homography(src, dst)
            assert np.allclose(h.h, expected, atol=1e-6)
            for s, d in zip(src, dst):
                assert np.allclose(apply_homography(h, s), d, atol=1e-6)

    def test_exact_fit_within_tolerance(self, rng):
        src = UNIT_SQUARE * 100.0
        dst = np.array([[0.0, 0.0], [12.0, 0.5], [11.5, 9.0], [-0.5, 8.5]])
        h = fit_homography(src, dst)
        for s, d in zip(src, dst):
            assert np.allclose(apply_homography(h, s), d, atol=1e-6)

    def test_collinear_points_degenerate(self):
        src = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        with pytest.raises(DegenerateCorrespondences):
            fit_homography(src, src)

    def test_apply_identity(self):
        assert apply_homography(Homography.identity(), (3.0, 4.0)) == (3.0, 4.0)

    def test_apply_scaling(self):
        h = Homography(np.diag([0.5, 0.5, 1.0]))
        assert apply_homography(h, (2.0, 6.0)) == (1.0, 3.0)

    def test_held_out_point_matches_oracle(self, rng):
        src = UNIT_SQUARE * 10.0
        dst = np.array([[1.0, 1.0], [9.0, 0.0], [10.0, 8.0], [0.0, 9.0]])
        h = fit_homography(src, dst)
        expected = homography_oracle(src, dst)
        p = np.array([3.7, 6.1])
        hp = expected @ np.array([p[0], p[1], 1.0])
        assert np.allclose(apply_homography(h, p),
                           (hp[0] / hp[2], hp[1] / hp[2]), atol=1e-6)

    def test_point_at_infinity(self):
        h = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 1.0]]))
        with pytest.raises(PointAtInfinity):
            apply_homography(h, (-1.0, 0.0))

    def test_normalized_h22(self):
        h = Homography(2.0 * np.eye(3))
        assert h.h[2, 2] == 1.0

    @given(seed=st.integers(0, 5000))
    @settings(max_examples=20, deadline=None)
    def test_roundtrip_through_inverse(self, seed):
        gen = np.random.default_rng(seed)
        src = UNIT_SQUARE + gen.uniform(-0.2, 0.2, size=(4, 2))
        dst = UNIT_SQUARE * 3.0 + gen.uniform(-0.3, 0.3, size=(4, 2))
        try:
            h = fit_homography(src, dst)
        except DegenerateCorrespondences:
            return
        p = gen.uniform(0.0, 1.0, size=2)
        there = apply_homography(h, p)
        back = apply_homography(h.inverse(), there)
        assert np.allclose(back, p, atol=1e-6)


class TestCleanScene:
    def _track(self, pid, points, start_frame=0):
        points = np.asarray(points, dtype=float)
        return RawTrack(pid, start_frame + np.arange(len(points)), points)

    def test_track_outside_roi_dropped_and_empty_raises(self):
        track = self._track(0, [[20.0, 20.0], [21.0, 20.0]])
        with pytest.raises(EmptyScene):
            clean_scene([track], Homography.identity(), Rect(0, 0, 10, 10), 0.2)

    def test_colliding_pair_both_dropped(self):
        near = [self._track(0, [[1.0, 1.0], [1.0, 1.0]]),
                self._track(1, [[1.05, 1.0], [1.05, 1.0]]),
                self._track(2, [[5.0, 5.0], [5.5, 5.0]])]
        scene, report = clean_scene(near, Homography.identity(),
                                    Rect(0, 0, 10, 10), 0.2)
        assert scene.ped_ids == [2]
        assert report.collision == 2
        assert report.kept == 1

    def test_clean_track_retained_unchanged(self):
        track = self._track(3, [[1.0, 1.0], [2.0, 1.0], [3.0, 1.0]])
        scene, report = clean_scene([track], Homography.identity(),
                                    Rect(0, 0, 10, 10), 0.2, frame_dt=0.5)
        assert report.kept == 1 and report.collision == 0
        t = scene.tracks[0]
        assert np.allclose(t.times, [0.0, 0.5, 1.0])
        assert np.allclose(t.xy, [[1, 1], [2, 1], [3, 1]])

    def test_short_track_dropped(self):
        tracks = [self._track(0, [[1.0, 1.0]]),
                  self._track(1, [[2.0, 2.0], [2.5, 2.0]])]
        scene, report = clean_scene(tracks, Homography.identity(),
                                    Rect(0, 0, 10, 10), 0.2)
        assert report.too_short == 1
        assert scene.ped_ids == [1]

    def test_idempotent(self, rng):
        cfg = SyntheticSceneConfig(ped_count=6, roi=Rect(0, 0, 10, 10))
        scene = generate_synthetic_scene(cfg, seed=3)
        raw = trajdata.scene_to_raw_tracks(scene)
        cleaned, report = clean_scene(raw, Homography.identity(), scene.roi,
                                      0.2, frame_dt=scene.frame_dt)
        assert report.kept == len(scene.tracks)
        raw2 = trajdata.scene_to_raw_tracks(cleaned)
        cleaned2, report2 = clean_scene(raw2, Homography.identity(), scene.roi,
                                        0.2, frame_dt=scene.frame_dt)
        assert report2.kept == report.kept
        for a, b in zip(cleaned.tracks, cleaned2.tracks):
            assert np.array_equal(a.xy, b.xy)

    def test_min_pairwise_distance_oracle(self):
        cfg = SyntheticSceneConfig(ped_count=8, roi=Rect(0, 0, 12, 12))
        scene = generate_synthetic_scene(cfg, seed=11)
        assert brute_force_min_pairwise(scene.tracks, scene.frame_dt) >= 0.2


class TestInterpolation:
    def _world(self):
        return WorldTrack(0, np.array([0.0, 1.0, 2.0]),
                          np.array([[0.0, 0.0], [4.0, 8.0], [4.0, 10.0]]))

    def test_exact_at_frame_times(self):
        track = self._world()
        assert np.allclose(interpolate_position(track, 1.0), [4.0, 8.0])

    def test_midpoint(self):
        track = WorldTrack(0, np.array([0.0, 1.0]),
                           np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert np.allclose(interpolate_position(track, 0.5), [1.0, 0.0])

    def test_quarter_point(self):
        track = WorldTrack(0, np.array([0.0, 1.0]),
                           np.array([[0.0, 0.0], [4.0, 8.0]]))
        assert np.allclose(interpolate_position(track, 0.25), [1.0, 2.0])

    def test_out_of_range(self):
        with pytest.raises(OutOfTrackRange):
            interpolate_position(self._world(), 2.5)
        with pytest.raises(OutOfTrackRange):
            interpolate_position(self._world(), -0.5)


class TestSyntheticScene:
    def test_deterministic(self):
        cfg = SyntheticSceneConfig(ped_count=1, roi=Rect(0, 0, 10, 10),
                                   duration=10.0)
        a = generate_synthetic_scene(cfg, seed=7)
        b = generate_synthetic_scene(cfg, seed=7)
        assert len(a.tracks) == len(b.tracks) == 1
        assert np.array_equal(a.tracks[0].xy, b.tracks[0].xy)
        assert np.array_equal(a.tracks[0].times, b.tracks[0].times)

    def test_zero_pedestrians(self):
        cfg = SyntheticSceneConfig(ped_count=0, roi=Rect(0, 0, 10, 10))
        with pytest.raises(EmptyScene):
            generate_synthetic_scene(cfg, seed=0)

    def test_twenty_pedestrians_survive_cleaning(self):
        cfg = SyntheticSceneConfig(ped_count=20, roi=Rect(0, 0, 20, 20))
        scene = generate_synthetic_scene(cfg, seed=5)
        raw = trajdata.scene_to_raw_tracks(scene)
        _, report = clean_scene(raw, Homography.identity(), scene.roi, 0.2,
                                frame_dt=scene.frame_dt)
        assert report.kept == 20
        assert report.collision == 0

    def test_generation_failure_when_too_dense(self):
        cfg = SyntheticSceneConfig(ped_count=50, roi=Rect(0, 0, 1.2, 1.2),
                                   min_separation=0.5, max_attempts=5)
        with pytest.raises(GenerationFailed):
            generate_synthetic_scene(cfg, seed=1)

    def test_crossing_pattern_stagger_keeps_tracks_disjoint(self):
        cfg = SyntheticSceneConfig(ped_count=8, roi=Rect(0, 0, 10, 10),
                                   pattern="crossing", start_stagger=60.0)
        scene = generate_synthetic_scene(cfg, seed=0)
        assert len(scene.tracks) == 8
        spans = sorted((t.start_time, t.end_time) for t in scene.tracks)
        for (_, end_a), (start_b, _) in zip(spans, spans[1:]):
            assert end_a < start_b


class TestTrackIO:
    def test_roundtrip(self, tmp_path):
        tracks = [RawTrack(4, np.array([0, 1, 2]),
                           np.array([[0.5, 1.5], [1.0, 2.0], [1.5, 2.5]])),
                  RawTrack(7, np.array([5, 6]),
                           np.array([[3.25, 4.125], [3.5, 4.25]]))]
        path = tmp_path / "tracks.txt"
        trajdata.save_tracks(path, tracks)
        loaded = trajdata.load_tracks(path)
        assert [t.ped_id for t in loaded] == [4, 7]
        for a, b in zip(tracks, loaded):
            assert np.array_equal(a.frames, b.frames)
            assert np.array_equal(a.xy, b.xy)

    def test_scene_roundtrip(self, tmp_path):
        cfg = SyntheticSceneConfig(ped_count=3, roi=Rect(0, 0, 10, 10))
        scene = generate_synthetic_scene(cfg, seed=2)
        trajdata.save_scene(tmp_path / "scene.npz", scene)
        loaded = trajdata.load_scene(tmp_path / "scene.npz")
        assert loaded.ped_ids == scene.ped_ids
        assert loaded.frame_dt == scene.frame_dt
        for a, b in zip(scene.tracks, loaded.tracks):
            assert np.array_equal(a.xy, b.xy)

    def test_strictly_increasing_frames_enforced(self):
        with pytest.raises(ValueError):
            RawTrack(0, np.array([0, 0, 1]), np.zeros((3, 2)))


class TestExpertSet:
    def test_expert_cache_roundtrip(self, tmp_path):
        cfg = SyntheticSceneConfig(ped_count=4, roi=Rect(0, 0, 10, 10),
                                   pattern="crossing", start_stagger=30.0)
        scene = generate_synthetic_scene(cfg, seed=1)
        expert = trajdata.build_expert_set(scene)
        assert len(expert) == 4
        path = tmp_path / "expert.npz"
        trajdata.save_expert_set(path, expert)
        loaded = trajdata.load_expert_set(path)
        assert len(loaded) == 4
        for a, b in zip(expert.trajectories, loaded.trajectories):
            assert np.array_equal(a.features, b.features)
            assert a.t0 == b.t0

    def test_expert_features_are_states_only(self):
        # The expert cache carries feature rows and step indices, nothing else.
        cfg = SyntheticSceneConfig(ped_count=2, roi=Rect(0, 0, 10, 10),
                                   pattern="crossing", start_stagger=30.0)
        scene = generate_synthetic_scene(cfg, seed=1)
        expert = trajdata.build_expert_set(scene)
        traj = expert.trajectories[0]
        assert traj.features.ndim == 2
        assert traj.features.shape[1] == 20
        assert traj.t0 == 0

    def test_expert_goal_distance_decreases_to_zero(self):
        cfg = SyntheticSceneConfig(ped_count=1, roi=Rect(0, 0, 10, 10),
                                   pattern="crossing")
        scene = generate_synthetic_scene(cfg, seed=1)
        expert = trajdata.build_expert_set(scene)
        dist = expert.trajectories[0].features[:, 16]
        assert dist[0] > 0.5
        assert dist[-1] < 0.01
        assert np.all(np.diff(dist) <= 1e-9)


class TestManifest:
    def test_synthetic_manifest(self, tmp_path):
        m = tmp_path / "scene.manifest"
        m.write_text("type = synthetic\npattern = crossing\nped_count = 4\n"
                     "roi = 0 0 10 10\nstagger = 60\nseed = 3\n")
        manifest = trajdata.parse_manifest(m)
        scene, report = trajdata.scene_from_manifest(manifest, tmp_path)
        assert report is None
        assert len(scene.tracks) == 4

    def test_tracks_manifest_with_homography(self, tmp_path):
        # Pixel tracks scaled 100 px/m; homography maps them into meters.
        tracks = [RawTrack(0, np.array([0, 1]),
                           np.array([[100.0, 100.0], [200.0, 100.0]]))]
        trajdata.save_tracks(tmp_path / "tracks.txt", tracks)
        m = tmp_path / "scene.manifest"
        m.write_text(
            "type = tracks\ntracks = tracks.txt\nframe_dt = 0.5\n"
            "roi = 0 0 10 10\n"
            "homography_src = 0 0 1000 0 1000 1000 0 1000\n"
            "homography_dst = 0 0 10 0 10 10 0 10\n")
        manifest = trajdata.parse_manifest(m)
        scene, report = trajdata.scene_from_manifest(manifest, tmp_path)
        assert report.kept == 1
        assert np.allclose(scene.tracks[0].xy, [[1.0, 1.0], [2.0, 1.0]])

    def test_bad_manifest_line(self, tmp_path):
        m = tmp_path / "bad.manifest"
        m.write_text("just a line without equals\n")
        with pytest.raises(ValueError):
            trajdata.parse_manifest(m)
