"""Figure reproduction from episode logs: visitation heatmaps, reaching-error
heatmaps, smoothed reward curves, and episode filmstrips.

Every image is written as a binary PPM with a CSV of the underlying grid
next to it, so results are reproducible without plotting dependencies.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import BofError, ContractError
from .replay import EpisodeLog
from .tasks import BALL_COLORS, TASK_IDS

VISIT_BIN_PX = 35  # 20x20 grid over the 700px field
ERROR_BIN_PX = 80  # 9x9 grid
_BALL_RGB = {
    "orange": (255, 140, 0),
    "purple": (128, 0, 160),
    "green": (40, 160, 40),
}


class AnalysisError(BofError):
    category = "analysis-error"


@dataclass
class Heatmap:
    """Accumulated per-bin values over the pixel grid.

    grid[r, c] covers pixel rows [r*bin_px, (r+1)*bin_px) etc.; boundary
    pixels land in the higher-index bin by the floor rule.
    """

    grid: np.ndarray
    counts: np.ndarray
    bin_px: int
    mode: str  # "max-normalized" | "min-black-max-red"

    @property
    def n_samples(self) -> float:
        return float(self.counts.sum())

    def normalized(self) -> np.ndarray:
        top = self.grid.max()
        return self.grid / top if top > 0 else self.grid.copy()


def _grid_shape(pixel_grid: int, bin_px: int):
    n = (pixel_grid + bin_px - 1) // bin_px
    return n, n


def bin_of(px: float, bin_px: int, n_bins: int) -> int:
    return min(int(px // bin_px), n_bins - 1)


def visit_heatmap(log: EpisodeLog, ball: str, last_k: int,
                  bin_px: int = VISIT_BIN_PX, pixel_grid: int = 700) -> Heatmap:
    """Where the chosen ball spent time over the last K episodes."""
    if ball not in BALL_COLORS:
        raise AnalysisError(f"unknown ball color {ball!r}")
    idx = BALL_COLORS.index(ball)
    if idx >= log.n_balls:
        raise AnalysisError(f"log has {log.n_balls} balls; no {ball!r} data")
    episodes = log.episode_ids()
    if last_k > len(episodes):
        raise AnalysisError(f"log has {len(episodes)} episodes < requested {last_k}")
    keep = set(episodes[-last_k:].tolist())
    rows, cols = _grid_shape(pixel_grid, bin_px)
    grid = np.zeros((rows, cols))
    mask = np.isin(log.episode, list(keep))
    pts = log.pixels[mask, idx, :].astype(np.float64)
    for x, y in pts:
        grid[bin_of(y, bin_px, rows), bin_of(x, bin_px, cols)] += 1.0
    return Heatmap(grid=grid, counts=grid.copy(), bin_px=bin_px, mode="max-normalized")


def episode_goal(log: EpisodeLog, episode: int) -> np.ndarray:
    """Goal pixel of one episode, recovered from the observation tail."""
    if log.task_id != TASK_IDS["reach"]:
        raise AnalysisError("log is not from the goal-conditioned task")
    idx = np.nonzero(log.episode == episode)[0]
    if idx.size == 0:
        raise AnalysisError(f"episode {episode} not in log")
    return log.obs[idx[0], -2:].astype(np.float64)


def reach_error_heatmap(log: EpisodeLog, bin_px: int = ERROR_BIN_PX,
                        pixel_grid: int = 700, tail_steps: int = 200) -> Heatmap:
    """Cumulative reaching error binned by each episode's goal location.

    Error of an episode is the mean ball-goal distance over its final
    tail_steps steps; the heatmap accumulates (sums) episode errors into
    the bin containing the goal, normalized black (min) to red (max) when
    rendered.  A count grid rides along for the count-normalized variant.
    """
    rows, cols = _grid_shape(pixel_grid, bin_px)
    grid = np.zeros((rows, cols))
    counts = np.zeros((rows, cols))
    length = int(np.max(log.step)) + 1 if log.n_steps else 0
    for ep in log.episode_ids():
        goal = episode_goal(log, int(ep))
        idx = np.nonzero(log.episode == ep)[0]
        steps = log.step[idx]
        tail = idx[steps >= length - tail_steps]
        ball = log.pixels[tail, 0, :].astype(np.float64)
        err = float(np.mean(np.linalg.norm(ball - goal, axis=1)))
        r, c = bin_of(goal[1], bin_px, rows), bin_of(goal[0], bin_px, cols)
        grid[r, c] += err
        counts[r, c] += 1.0
    return Heatmap(grid=grid, counts=counts, bin_px=bin_px, mode="min-black-max-red")


def count_normalized(h: Heatmap) -> Heatmap:
    grid = np.where(h.counts > 0, h.grid / np.maximum(h.counts, 1.0), 0.0)
    return Heatmap(grid=grid, counts=h.counts.copy(), bin_px=h.bin_px, mode=h.mode)


# ---------------------------------------------------------------------------
# reward curves
# ---------------------------------------------------------------------------

def read_return_csv(path):
    steps, values = [], []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if not header.strip():
            raise AnalysisError(f"{path}: empty csv")
        for lineno, line in enumerate(f, 2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                steps.append(float(parts[0]))
                values.append(float(parts[1]))
            except (IndexError, ValueError):
                raise AnalysisError(f"{path}: malformed row at line {lineno}")
    return np.asarray(steps), np.asarray(values)


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; the first entries average what exists."""
    if window < 1:
        raise ContractError("window must be >= 1")
    out = np.empty_like(values, dtype=np.float64)
    csum = np.cumsum(values, dtype=np.float64)
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        total = csum[i] - (csum[lo - 1] if lo > 0 else 0.0)
        out[i] = total / (i - lo + 1)
    return out


def reward_curve(paths, window: int = 10):
    """Smoothed return curves; multiple runs are combined into mean and
    min/max range (runs must share their step axis)."""
    if not paths:
        raise AnalysisError("reward_curve needs at least one csv")
    all_steps, all_smoothed = [], []
    for p in paths:
        steps, values = read_return_csv(p)
        all_steps.append(steps)
        all_smoothed.append(moving_average(values, window))
    base = all_steps[0]
    for s in all_steps[1:]:
        if len(s) != len(base) or not np.array_equal(s, base):
            raise AnalysisError("runs have mismatched step axes")
    stack = np.stack(all_smoothed)
    return {
        "steps": base,
        "mean": stack.mean(axis=0),
        "low": stack.min(axis=0),
        "high": stack.max(axis=0),
    }


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 portable pixmap."""
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.astype(np.uint8).tobytes())


def write_grid_csv(path, grid: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in grid:
            f.write(",".join(f"{v:.10g}" for v in row) + "\n")


def heatmap_image(h: Heatmap, pixel_grid: int = 700) -> np.ndarray:
    """Expand bins to pixels: white->color ramp for visit maps, black->red
    for error maps."""
    norm = h.normalized()
    img = np.zeros((pixel_grid, pixel_grid, 3), dtype=np.uint8)
    rows, cols = norm.shape
    for r in range(rows):
        y0, y1 = r * h.bin_px, min((r + 1) * h.bin_px, pixel_grid)
        for c in range(cols):
            x0, x1 = c * h.bin_px, min((c + 1) * h.bin_px, pixel_grid)
            v = norm[r, c]
            if h.mode == "min-black-max-red":
                rgb = (int(255 * v), 0, 0)
            else:
                rgb = (255, int(255 * (1 - v)), int(255 * (1 - v)))
            img[y0:y1, x0:x1] = rgb
    return img


def save_heatmap(h: Heatmap, out_dir, name: str, pixel_grid: int = 700) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_ppm(os.path.join(out_dir, f"{name}.ppm"), heatmap_image(h, pixel_grid))
    write_grid_csv(os.path.join(out_dir, f"{name}.csv"), h.grid)


def _disc(img, cx, cy, radius, rgb):
    h, w, _ = img.shape
    x0, x1 = max(0, int(cx - radius)), min(w - 1, int(cx + radius))
    y0, y1 = max(0, int(cy - radius)), min(h - 1, int(cy + radius))
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            if (x - cx) ** 2 + (y - cy) ** 2 <= radius * radius:
                img[y, x] = rgb


def _cross(img, cx, cy, arm, rgb):
    h, w, _ = img.shape
    cx, cy = int(cx), int(cy)
    for d in range(-arm, arm + 1):
        if 0 <= cx + d < w and 0 <= cy < h:
            img[cy, cx + d] = rgb
        if 0 <= cx < w and 0 <= cy + d < h:
            img[cy + d, cx] = rgb


def render_frames(log: EpisodeLog, episode: int, out_dir, stride: int = 100,
                  pixel_grid: int = 700, radius_px: int = 20):
    """One PPM per control step (subsampled by stride); balls as filled
    circles, the goal (when present) as a cross."""
    idx = np.nonzero(log.episode == episode)[0]
    if idx.size == 0:
        raise AnalysisError(f"episode {episode} not in log")
    os.makedirs(out_dir, exist_ok=True)
    goal = None
    if log.task_id == TASK_IDS["reach"]:
        goal = episode_goal(log, episode)
    order = idx[np.argsort(log.step[idx])]
    paths = []
    for k, i in enumerate(order[::stride]):
        img = np.full((pixel_grid, pixel_grid, 3), 255, dtype=np.uint8)
        if goal is not None:
            _cross(img, goal[0], goal[1], 12, (0, 0, 0))
        for b in range(log.n_balls):
            x, y = log.pixels[i, b, :]
            _disc(img, float(x), float(y), radius_px, _BALL_RGB[BALL_COLORS[b]])
        path = os.path.join(out_dir, f"frame_{int(log.step[i]):04d}.ppm")
        write_ppm(path, img)
        paths.append(path)
    return paths
