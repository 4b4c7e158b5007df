"""Seeded 2D surrogate of the jet-box: 9 bottom nozzles, shared air supply,
rigid balls under gravity, quadratic drag and turbulent forcing.

The jet field is a classical round-jet surrogate (Gaussian lateral profile,
1/(y+y0) centerline decay, linearly growing width) superposed over the
nozzles, with an outward entrainment term so balls can be pushed sideways.
The real apparatus is not simulable at control rates; this model keeps its
qualitative structure: actuator coupling through the shared supply,
under-observation (pixel coordinates only) and stochastic non-steady
forcing.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import BofError, ConfigError, ContractError, NumericsError
from .kernels import advance_control_step


class SimError(BofError):
    category = "sim-error"


# drag_coeff below was frozen from scripts/calibrate_drag.py: bisect the
# quadratic-drag constant until a single ball hovering over one fully open
# valve (others closed) settles at ~0.55 m.
@dataclass(frozen=True)
class SimConfig:
    box_width: float = 0.70
    box_height: float = 0.70
    ball_radius: float = 0.020
    ball_mass: float = 0.0027
    gravity: float = 9.81
    control_rate_hz: float = 20.0
    substeps: int = 10
    n_balls: int = 3
    episode_len: int = 1000
    u0_max: float = 6.0
    jet_y0: float = 0.05
    jet_sigma0: float = 0.020
    jet_spread: float = 0.10
    jet_entrain: float = 0.15
    kappa: float = 2.0
    drag_coeff: float = 1.906212
    restitution: float = 0.70
    rest_speed: float = 0.05
    ou_theta: float = 5.0
    ou_sigma_rel: float = 0.20
    pixel_grid: int = 700
    pixel_noise: float = 1.0
    history_len: int = 4
    reset_burst_steps: int = 40
    reset_burst_hold: int = 20
    nozzle_gains: tuple = (1.0,) * 9

    def __post_init__(self):
        positive = (
            "box_width", "box_height", "ball_radius", "ball_mass", "gravity",
            "control_rate_hz", "substeps", "episode_len", "u0_max", "jet_y0",
            "jet_sigma0", "drag_coeff", "pixel_grid", "history_len",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"sim config: {name} must be positive")
        if self.kappa < 0 or self.ou_theta < 0 or self.ou_sigma_rel < 0 or self.pixel_noise < 0:
            raise ConfigError("sim config: kappa/ou/pixel_noise must be non-negative")
        if not (0.0 <= self.restitution <= 1.0):
            raise ConfigError("sim config: restitution must be in [0, 1]")
        if len(self.nozzle_gains) != 9:
            raise ConfigError("sim config: nozzle_gains needs exactly 9 entries")
        if self.n_balls < 1 or self.n_balls > 3:
            raise ConfigError("sim config: n_balls must be 1..3")
        if 2.0 * self.ball_radius * self.n_balls >= self.box_width:
            raise ConfigError("sim config: balls do not fit in the box")

    @property
    def nozzle_x(self) -> np.ndarray:
        # cell-centered, strictly inside (0, width)
        return (np.arange(9) + 0.5) * self.box_width / 9.0

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_rate_hz

    @property
    def substep_dt(self) -> float:
        return self.control_dt / self.substeps

    @property
    def px_per_m(self) -> float:
        return self.pixel_grid / self.box_width

    @property
    def radius_px(self) -> float:
        return self.ball_radius * self.px_per_m


@dataclass
class SimState:
    """Full Markov state of one simulator episode."""

    pos: np.ndarray  # (n, 2) meters
    vel: np.ndarray  # (n, 2) m/s
    ou: np.ndarray  # (n, 2) turbulence state
    last_action: np.ndarray  # (9,)
    rng: np.random.Generator
    step_index: int = 0

    def copy(self) -> "SimState":
        return SimState(
            pos=self.pos.copy(),
            vel=self.vel.copy(),
            ou=self.ou.copy(),
            last_action=self.last_action.copy(),
            rng=copy.deepcopy(self.rng),
            step_index=self.step_index,
        )


class BoxSim:
    """One simulator instance; single-threaded, deterministic per seed."""

    def __init__(self, config: SimConfig | None = None):
        self.config = config or SimConfig()
        self._nozzle_x = self.config.nozzle_x
        self._gains = np.asarray(self.config.nozzle_gains, dtype=np.float64)
        self.clamp_events = 0

    # -- actuation ---------------------------------------------------------

    def effective_flows(self, action: np.ndarray) -> np.ndarray:
        """Per-valve drive after shared-supply coupling.

        f_i = a_i / (1 + kappa * sum_j a_j): opening more valves drops the
        flow through each one.  Out-of-range inputs are clamped (counted).
        """
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (9,):
            raise ContractError(f"action must have shape (9,), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericsError("action contains NaN/Inf")
        clipped = np.clip(a, 0.0, 1.0)
        if not np.array_equal(clipped, a):
            self.clamp_events += 1
        return clipped / (1.0 + self.config.kappa * clipped.sum())

    def air_velocity(self, x: float, y: float, flows: np.ndarray) -> np.ndarray:
        """Mean air velocity (no turbulence) at a point inside the box."""
        c = self.config
        if not (0.0 <= x <= c.box_width and 0.0 <= y <= c.box_height):
            raise SimError(f"air_velocity query outside box: ({x}, {y})")
        f = np.asarray(flows, dtype=np.float64) * self._gains
        sig = c.jet_sigma0 + c.jet_spread * y
        decay = c.jet_y0 / (y + c.jet_y0)
        dx = x - self._nozzle_x
        u_y = c.u0_max * f * decay * np.exp(-(dx * dx) / (2.0 * sig * sig))
        u_x = u_y * dx / (y + c.jet_y0) * c.jet_entrain
        return np.array([u_x.sum(), u_y.sum()])

    # -- dynamics ----------------------------------------------------------

    def reset(self, seed: int) -> SimState:
        """Seeded episode start: balls settle on the floor, then random air
        bursts scramble them, then the valves close."""
        c = self.config
        rng = np.random.default_rng(seed)
        xs = self._floor_positions(rng)
        pos = np.stack([xs, np.full(c.n_balls, c.ball_radius)], axis=1)
        state = SimState(
            pos=pos,
            vel=np.zeros((c.n_balls, 2)),
            ou=np.zeros((c.n_balls, 2)),
            last_action=np.zeros(9),
            rng=rng,
            step_index=0,
        )
        # sparse strong patterns: a few valves wide open beats many half-open
        # ones under the shared-supply coupling
        burst = np.zeros(9)
        for t in range(c.reset_burst_steps):
            if t % c.reset_burst_hold == 0:
                on = state.rng.random(9) < 0.3
                burst = np.where(on, state.rng.uniform(0.5, 1.0, 9), 0.0)
            self._advance(state, burst)
        state.last_action = np.zeros(9)
        state.step_index = 0
        return state

    def _floor_positions(self, rng: np.random.Generator) -> np.ndarray:
        c = self.config
        lo, hi = c.ball_radius, c.box_width - c.ball_radius
        for _ in range(1000):
            xs = rng.uniform(lo, hi, size=c.n_balls)
            order = np.sort(xs)
            if c.n_balls == 1 or np.min(np.diff(order)) >= 2.0 * c.ball_radius:
                return xs
        raise SimError("could not place non-overlapping balls on the floor")

    def step(self, state: SimState, action: np.ndarray):
        """Advance one control step; returns the (mutated) state and the
        ground-truth per-ball pixel coordinates after the step."""
        if state.step_index >= self.config.episode_len:
            raise ContractError(
                f"step called past episode end (index {state.step_index})"
            )
        self._advance(state, action)
        state.step_index += 1
        return state, self.ground_truth_pixels(state)

    def _advance(self, state: SimState, action: np.ndarray) -> None:
        c = self.config
        flows = self.effective_flows(action)
        state.last_action = np.clip(np.asarray(action, dtype=np.float64), 0.0, 1.0)
        normals = state.rng.standard_normal((c.substeps, c.n_balls, 2))
        bad = advance_control_step(
            state.pos, state.vel, state.ou, flows, normals,
            self._nozzle_x, self._gains,
            c.substep_dt, c.substeps,
            c.box_width, c.box_height, c.ball_radius, c.ball_mass, c.gravity,
            c.u0_max, c.jet_y0, c.jet_sigma0, c.jet_spread, c.jet_entrain,
            c.drag_coeff, c.restitution, c.rest_speed,
            c.ou_theta, c.ou_sigma_rel,
        )
        if bad != 0:
            raise NumericsError(f"non-finite ball state in physics substep {bad - 1}")

    # -- observation -------------------------------------------------------

    def ground_truth_pixels(self, state: SimState) -> np.ndarray:
        """Exact pixel coordinates of ball centers (origin top-left, y down)."""
        c = self.config
        px = state.pos[:, 0] * c.px_per_m
        py = (c.pixel_grid - 1) - state.pos[:, 1] * c.px_per_m
        out = np.stack([px, py], axis=1)
        return np.clip(out, 0.0, c.pixel_grid - 1)

    def observe(self, state: SimState) -> np.ndarray:
        """Noisy pixel frame, mimicking blob-detector jitter."""
        frame = self.ground_truth_pixels(state)
        if self.config.pixel_noise > 0:
            frame = frame + self.config.pixel_noise * state.rng.standard_normal(frame.shape)
        return np.clip(frame, 0.0, self.config.pixel_grid - 1)


class ObsHistory:
    """Fixed-length frame history; episode start fills every slot with the
    first frame (no zero padding)."""

    def __init__(self, history_len: int, first_frame: np.ndarray):
        self.h = history_len
        self.frames = [np.asarray(first_frame, dtype=np.float64)] * history_len

    def push(self, frame: np.ndarray) -> None:
        self.frames.pop(0)
        self.frames.append(np.asarray(frame, dtype=np.float64))

    def vector(self) -> np.ndarray:
        """Ball-major flat layout: per ball, its (x, y) over the H slots,
        oldest first, most recent last."""
        arr = np.stack(self.frames, axis=0)  # (H, n, 2)
        return arr.transpose(1, 0, 2).reshape(-1).copy()
