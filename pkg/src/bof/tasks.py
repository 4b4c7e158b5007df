"""Task definitions: reward functions over ground-truth ball pixels, goal
sampling for the reaching task, and per-task observation layout.

Rewards are pure functions of pixel coordinates (origin top-left, y grows
downward) and always land in [0, 1].  Ball color order is fixed:
orange (index 0, the target ball), purple (1), green (2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .sim import SimConfig

ORANGE, PURPLE, GREEN = 0, 1, 2
BALL_COLORS = ("orange", "purple", "green")

TASK_IDS = {"hover": 0, "rearrange": 1, "stack": 2, "reach": 3, "hover-center": 4}
TASK_NAMES = {v: k for k, v in TASK_IDS.items()}
_N_BALLS = {"hover": 3, "rearrange": 3, "stack": 2, "reach": 1, "hover-center": 3}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    task_id: int
    n_balls: int
    target_ball: int
    goal_conditioned: bool
    episode_len: int
    pixel_grid: int
    radius_px: float
    stack_offset_px: float
    stack_sigma_px: float

    @property
    def y_top(self) -> float:
        # highest reachable ball-center pixel row used for normalization
        return self.radius_px

    @property
    def y_bottom(self) -> float:
        return (self.pixel_grid - 1) - self.radius_px

    @property
    def x_mid(self) -> float:
        return self.pixel_grid / 2.0

    def obs_dim(self, history_len: int) -> int:
        return self.n_balls * 2 * history_len + (2 if self.goal_conditioned else 0)


def make_task(name: str, sim_config: SimConfig | None = None) -> TaskSpec:
    if name not in TASK_IDS:
        raise ConfigError(f"unknown task {name!r}; choose from {sorted(TASK_IDS)}")
    c = sim_config or SimConfig()
    r_px = c.radius_px
    return TaskSpec(
        name=name,
        task_id=TASK_IDS[name],
        n_balls=_N_BALLS[name],
        target_ball=ORANGE,
        goal_conditioned=(name == "reach"),
        episode_len=c.episode_len,
        pixel_grid=c.pixel_grid,
        radius_px=r_px,
        stack_offset_px=2.0 * r_px,
        stack_sigma_px=20.0,
    )


def _clip01(r: float) -> float:
    return float(min(1.0, max(0.0, r)))


def hover_reward(spec: TaskSpec, pixels: np.ndarray) -> float:
    """Higher is higher: linear in the target ball's pixel y, distractors
    ignored."""
    y = pixels[spec.target_ball, 1]
    return _clip01((spec.y_bottom - y) / (spec.y_bottom - spec.y_top))


def rearrange_reward(spec: TaskSpec, pixels: np.ndarray) -> float:
    """Orange in the right half times purple in the left half.

    Each factor is 1 inside the ball's target half (boundary counts as
    inside) and decays linearly with horizontal distance to the boundary;
    the product is 1 iff both placements succeed.
    """
    if pixels.shape[0] < 2:
        raise ContractError("rearrange needs orange and purple pixels")
    w = float(spec.pixel_grid)
    xo = pixels[ORANGE, 0]
    xp = pixels[PURPLE, 0]
    r_o = 1.0 if xo >= spec.x_mid else 1.0 - (spec.x_mid - xo) / w
    r_p = 1.0 if xp <= spec.x_mid else 1.0 - (xp - spec.x_mid) / w
    return _clip01(r_o * r_p)


def stack_reward(spec: TaskSpec, pixels: np.ndarray) -> float:
    """Gaussian kernels on (orange one diameter above purple) and
    (x alignment)."""
    if pixels.shape[0] < 2:
        raise ContractError("stack needs orange and purple pixels")
    dy = (pixels[PURPLE, 1] - pixels[ORANGE, 1]) - spec.stack_offset_px
    dx = pixels[ORANGE, 0] - pixels[PURPLE, 0]
    s2 = 2.0 * spec.stack_sigma_px ** 2
    return _clip01(np.exp(-dy * dy / s2) * np.exp(-dx * dx / s2))


def reach_reward(spec: TaskSpec, pixels: np.ndarray, goal: np.ndarray) -> float:
    """1 at the goal, decaying linearly with distance over the box diagonal."""
    if goal is None:
        raise ContractError("reach reward requires a goal pixel")
    d = float(np.linalg.norm(pixels[spec.target_ball] - np.asarray(goal, dtype=np.float64)))
    diag = spec.pixel_grid * np.sqrt(2.0)
    return _clip01(1.0 - d / diag)


def hover_center_reward(spec: TaskSpec, pixels: np.ndarray) -> float:
    """Hover reward shrunk by horizontal distance from the center line."""
    x = pixels[spec.target_ball, 0]
    center = 1.0 - abs(x - spec.x_mid) / spec.x_mid
    return _clip01(hover_reward(spec, pixels) * center)


_REWARDS = {
    "hover": hover_reward,
    "rearrange": rearrange_reward,
    "stack": stack_reward,
    "hover-center": hover_center_reward,
}


def task_reward(spec: TaskSpec, pixels: np.ndarray, goal: np.ndarray | None = None) -> float:
    """Reward of a pixel configuration under the given task."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if spec.name == "reach":
        return reach_reward(spec, pixels, goal)
    return _REWARDS[spec.name](spec, pixels)


def sample_goal(spec: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform goal pixel over the reachable interior."""
    lo = spec.radius_px
    hi = (spec.pixel_grid - 1) - spec.radius_px
    return rng.uniform(lo, hi, size=2)
