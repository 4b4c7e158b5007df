"""Analysis: heatmap exactness, curve smoothing, frame rendering."""

import hashlib
import os

import numpy as np
import pytest

from bof.analysis import (
    AnalysisError,
    bin_of,
    count_normalized,
    heatmap_image,
    moving_average,
    reach_error_heatmap,
    read_return_csv,
    render_frames,
    reward_curve,
    save_heatmap,
    visit_heatmap,
    write_ppm,
)
from bof.errors import ContractError
from bof.replay import EpisodeLog
from bof.tasks import TASK_IDS


def synth_log(positions, task_id=0, n_balls=1, goal=None, episode_len=None):
    """positions: (steps, n_balls, 2) ground-truth pixels."""
    pts = np.asarray(positions, dtype=np.float32)
    steps = pts.shape[0]
    episode_len = episode_len or steps
    obs_dim = n_balls * 2 * 4 + (2 if task_id == TASK_IDS["reach"] else 0)
    obs = np.zeros((steps, obs_dim), dtype=np.float32)
    if goal is not None:
        obs[:, -2:] = np.asarray(goal, dtype=np.float32)
    return EpisodeLog(
        n_balls=n_balls, history_len=4, task_id=task_id,
        pixels=pts,
        action=np.zeros((steps, 9), dtype=np.float32),
        reward=np.zeros(steps, dtype=np.float32),
        done=np.zeros(steps, dtype=bool),
        episode=(np.arange(steps) // episode_len).astype(np.uint32),
        step=(np.arange(steps) % episode_len).astype(np.uint32),
        obs=obs,
        next_obs=obs.copy(),
    )


class TestBinning:
    def test_exhaustive_exclusive(self):
        for px in range(700):
            b = bin_of(float(px), 35, 20)
            assert 0 <= b < 20
            assert b == min(px // 35, 19)

    def test_boundary_goes_to_higher_bin(self):
        assert bin_of(35.0, 35, 20) == 1
        assert bin_of(34.999, 35, 20) == 0
        assert bin_of(80.0, 80, 9) == 1

    def test_last_partial_bin_absorbs_edge(self):
        assert bin_of(699.0, 80, 9) == 8


class TestVisitHeatmap:
    def test_fixed_ball_single_bin(self):
        log = synth_log(np.tile([[100.0, 200.0]], (500, 1)).reshape(500, 1, 2))
        h = visit_heatmap(log, "orange", last_k=1)
        norm = h.normalized()
        assert norm[bin_of(200, 35, 20), bin_of(100, 35, 20)] == 1.0
        assert norm.sum() == 1.0

    def test_mass_conservation(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 699, (2000, 1, 2))
        log = synth_log(pts, episode_len=500)
        h = visit_heatmap(log, "orange", last_k=4)
        assert h.grid.sum() == 2000

    def test_last_k_selects_episodes(self):
        a = np.tile([[10.0, 10.0]], (100, 1)).reshape(100, 1, 2)
        b = np.tile([[600.0, 600.0]], (100, 1)).reshape(100, 1, 2)
        log = synth_log(np.concatenate([a, b]), episode_len=100)
        h = visit_heatmap(log, "orange", last_k=1)
        assert h.grid[bin_of(600, 35, 20), bin_of(600, 35, 20)] == 100
        assert h.grid.sum() == 100

    def test_uniform_positions_low_variation(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 700, (1_000_000, 1, 2))
        pts = np.clip(pts, 0, 699.999)
        log = synth_log(pts)
        h = visit_heatmap(log, "orange", last_k=1, bin_px=70)
        cv = h.grid.std() / h.grid.mean()
        assert cv < 0.05

    def test_too_many_episodes_requested(self):
        log = synth_log(np.zeros((100, 1, 2)))
        with pytest.raises(AnalysisError):
            visit_heatmap(log, "orange", last_k=2)

    def test_missing_ball_color(self):
        log = synth_log(np.zeros((10, 1, 2)))
        with pytest.raises(AnalysisError):
            visit_heatmap(log, "green", last_k=1)
        with pytest.raises(AnalysisError):
            visit_heatmap(log, "cyan", last_k=1)


class TestReachErrorHeatmap:
    def _reach_log(self, ball_xy, goal, steps=1000):
        pts = np.tile(np.asarray(ball_xy, dtype=np.float32), (steps, 1, 1))
        return synth_log(pts, task_id=TASK_IDS["reach"], goal=goal,
                         episode_len=steps)

    def test_perfect_tracker_all_black(self):
        log = self._reach_log([[300.0, 300.0]], goal=[300.0, 300.0])
        h = reach_error_heatmap(log)
        assert h.grid.sum() == 0.0

    def test_constant_error_lands_in_goal_bin(self):
        goal = [200.0, 300.0]  # bin (3, 2) at 80 px
        log = self._reach_log([[100.0, 300.0]], goal=goal)
        h = reach_error_heatmap(log)
        r, c = bin_of(300, 80, 9), bin_of(200, 80, 9)
        assert abs(h.grid[r, c] - 100.0) < 1e-5
        assert h.counts[r, c] == 1
        assert np.count_nonzero(h.grid) == 1

    def test_two_episodes_same_bin_accumulate(self):
        goal = [200.0, 300.0]
        l1 = self._reach_log([[100.0, 300.0]], goal=goal)
        pts = np.concatenate([l1.pixels, self._reach_log([[150.0, 300.0]],
                                                         goal=goal).pixels])
        log = synth_log(pts, task_id=TASK_IDS["reach"], goal=goal,
                        episode_len=1000)
        h = reach_error_heatmap(log)
        r, c = bin_of(300, 80, 9), bin_of(200, 80, 9)
        assert abs(h.grid[r, c] - 150.0) < 1e-4  # 100 + 50 cumulative
        norm = count_normalized(h)
        assert abs(norm.grid[r, c] - 75.0) < 1e-4

    def test_error_uses_last_200_steps(self):
        # ball far for the first 800 steps, exactly on goal for the last 200
        goal = np.array([400.0, 400.0])
        pts = np.concatenate([
            np.tile([[0.0, 0.0]], (800, 1)).reshape(800, 1, 2),
            np.tile([[400.0, 400.0]], (200, 1)).reshape(200, 1, 2),
        ])
        log = synth_log(pts, task_id=TASK_IDS["reach"], goal=goal,
                        episode_len=1000)
        h = reach_error_heatmap(log)
        assert h.grid.sum() == 0.0

    def test_non_reach_log_rejected(self):
        log = synth_log(np.zeros((10, 1, 2)), task_id=0)
        with pytest.raises(AnalysisError):
            reach_error_heatmap(log)


class TestRewardCurve:
    def _csv(self, tmp_path, name, rows):
        p = tmp_path / name
        with open(p, "w") as f:
            f.write("env_steps,mean_episode_return\n")
            for s, v in rows:
                f.write(f"{s},{v}\n")
        return str(p)

    def test_constant_series_flat(self, tmp_path):
        p = self._csv(tmp_path, "a.csv", [(i, 0.5) for i in range(20)])
        c = reward_curve([p], window=10)
        np.testing.assert_allclose(c["mean"], 0.5)

    def test_window_one_is_identity(self, tmp_path):
        vals = [(i, float(i) ** 1.5) for i in range(10)]
        p = self._csv(tmp_path, "a.csv", vals)
        c = reward_curve([p], window=1)
        np.testing.assert_allclose(c["mean"], [v for _, v in vals])

    def test_ramp_matches_analytic_average(self, tmp_path):
        p = self._csv(tmp_path, "a.csv", [(i, float(i)) for i in range(10)])
        c = reward_curve([p], window=3)
        want = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        np.testing.assert_allclose(c["mean"], want)

    def test_multi_seed_mean_and_range(self, tmp_path):
        p1 = self._csv(tmp_path, "a.csv", [(i, 0.0) for i in range(5)])
        p2 = self._csv(tmp_path, "b.csv", [(i, 1.0) for i in range(5)])
        c = reward_curve([p1, p2], window=1)
        np.testing.assert_allclose(c["mean"], 0.5)
        np.testing.assert_allclose(c["low"], 0.0)
        np.testing.assert_allclose(c["high"], 1.0)

    def test_malformed_row_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("h,h\n1,0.5\nnot,a number\n")
        with pytest.raises(AnalysisError) as e:
            read_return_csv(str(p))
        assert "line 3" in str(e.value)

    def test_window_zero_rejected(self):
        with pytest.raises(ContractError):
            moving_average(np.ones(3), 0)


class TestRendering:
    def test_frame_count_with_stride(self, tmp_path):
        log = synth_log(np.tile([[100.0, 100.0]], (1000, 1)).reshape(1000, 1, 2))
        paths = render_frames(log, 0, tmp_path / "f", stride=100)
        assert len(paths) == 10
        assert all(os.path.exists(p) for p in paths)

    def test_deterministic_output_hash(self, tmp_path):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 699, (200, 1, 2)).astype(np.float32)
        log = synth_log(pts)
        h = []
        for sub in ("x", "y"):
            paths = render_frames(log, 0, tmp_path / sub, stride=50)
            digest = hashlib.sha256()
            for p in paths:
                digest.update(open(p, "rb").read())
            h.append(digest.hexdigest())
        assert h[0] == h[1]

    def test_balls_near_edges_stay_in_canvas(self, tmp_path):
        pts = np.array([[[1.0, 1.0]], [[698.0, 698.0]]], dtype=np.float32)
        log = synth_log(pts)
        paths = render_frames(log, 0, tmp_path / "e", stride=1)
        img = open(paths[0], "rb").read()
        assert img.startswith(b"P6\n700 700\n255\n")
        assert len(img) == len(b"P6\n700 700\n255\n") + 700 * 700 * 3

    def test_missing_episode_rejected(self, tmp_path):
        log = synth_log(np.zeros((10, 1, 2)))
        with pytest.raises(AnalysisError):
            render_frames(log, 5, tmp_path / "m")

    def test_goal_cross_rendered(self, tmp_path):
        log = synth_log(np.tile([[100.0, 100.0]], (10, 1)).reshape(10, 1, 2),
                        task_id=TASK_IDS["reach"], goal=[400.0, 300.0])
        paths = render_frames(log, 0, tmp_path / "g", stride=1)
        raw = open(paths[0], "rb").read()
        header = b"P6\n700 700\n255\n"
        img = np.frombuffer(raw[len(header):], dtype=np.uint8).reshape(700, 700, 3)
        assert np.array_equal(img[300, 400], [0, 0, 0])

    def test_save_heatmap_writes_ppm_and_csv(self, tmp_path):
        log = synth_log(np.tile([[100.0, 200.0]], (50, 1)).reshape(50, 1, 2))
        h = visit_heatmap(log, "orange", last_k=1)
        save_heatmap(h, tmp_path, "visits_orange")
        assert (tmp_path / "visits_orange.ppm").exists()
        assert (tmp_path / "visits_orange.csv").exists()
        grid = np.loadtxt(tmp_path / "visits_orange.csv", delimiter=",")
        assert grid.shape == (20, 20)
        assert grid.sum() == 50
