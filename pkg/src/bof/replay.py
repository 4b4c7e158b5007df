"""Experience storage: in-memory replay ring, bit-exact episode logs on
disk (magic "BOFL"), and reward relabeling of logged data.

Log layout, little-endian:
    magic "BOFL" | u32 version=1 | u32 n_balls | u32 history_len |
    u32 action_dim=9 | u32 task_id
    per step: f32 gt_pixels[n_balls*2] | f32 action[9] | f32 reward |
              u8 done | u32 episode | u32 step |
              f32 obs[obs_dim] | f32 next_obs[obs_dim]

Rewards are computed from the ground-truth pixels stored in the same
record, so any record can be relabeled in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BofError, ContractError

MAGIC = b"BOFL"
VERSION = 1
ACTION_DIM = 9
HEADER_BYTES = 24


class LogError(BofError):
    category = "log-error"


class LogBadMagic(LogError):
    category = "log-bad-magic"


class LogBadVersion(LogError):
    category = "log-bad-version"


class LogTruncated(LogError):
    category = "log-truncated"


@dataclass
class Transition:
    """One control step of experience plus the ground truth that makes its
    reward recomputable."""

    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    pixels: np.ndarray  # ground-truth ball pixels at t, shape (n_balls, 2)
    next_pixels: np.ndarray
    episode: int
    step: int


class ReplayBuffer:
    """Uniform-sampling FIFO ring over packed transition arrays.

    Single writer, single sampling reader; sampled batches are copies.
    Storage grows on demand up to the fixed capacity.
    """

    def __init__(self, capacity: int = 1_000_000, seed: int = 0):
        if capacity < 1:
            raise ContractError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self._fields = None  # dict name -> array once first transition arrives
        self._alloc = 0
        self.size = 0
        self.cursor = 0
        self.total_appended = 0

    def _ensure(self, t: Transition):
        if self._fields is None:
            self._alloc = min(self.capacity, 4096)
            self._fields = {
                "obs": np.empty((self._alloc, t.obs.size)),
                "action": np.empty((self._alloc, ACTION_DIM)),
                "reward": np.empty(self._alloc),
                "next_obs": np.empty((self._alloc, t.next_obs.size)),
                "done": np.empty(self._alloc, dtype=bool),
                "pixels": np.empty((self._alloc, t.pixels.size)),
                "next_pixels": np.empty((self._alloc, t.next_pixels.size)),
                "episode": np.empty(self._alloc, dtype=np.int64),
                "step": np.empty(self._alloc, dtype=np.int64),
            }
        elif self.size == self._alloc and self._alloc < self.capacity:
            new_alloc = min(self.capacity, self._alloc * 2)
            for k, a in self._fields.items():
                grown = np.empty((new_alloc,) + a.shape[1:], dtype=a.dtype)
                grown[: self._alloc] = a
                self._fields[k] = grown
            self._alloc = new_alloc

    def append(self, t: Transition) -> None:
        self._ensure(t)
        i = self.cursor
        f = self._fields
        f["obs"][i] = t.obs
        f["action"][i] = t.action
        f["reward"][i] = t.reward
        f["next_obs"][i] = t.next_obs
        f["done"][i] = t.done
        f["pixels"][i] = np.asarray(t.pixels).reshape(-1)
        f["next_pixels"][i] = np.asarray(t.next_pixels).reshape(-1)
        f["episode"][i] = t.episode
        f["step"][i] = t.step
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_appended += 1

    def get(self, i: int) -> Transition:
        """i-th stored transition in insertion order (0 = oldest retained)."""
        if not (0 <= i < self.size):
            raise ContractError(f"replay index {i} out of range (size {self.size})")
        if self.size == self.capacity:
            i = (self.cursor + i) % self.capacity
        f = self._fields
        return Transition(
            obs=f["obs"][i].copy(),
            action=f["action"][i].copy(),
            reward=float(f["reward"][i]),
            next_obs=f["next_obs"][i].copy(),
            done=bool(f["done"][i]),
            pixels=f["pixels"][i].reshape(-1, 2).copy(),
            next_pixels=f["next_pixels"][i].reshape(-1, 2).copy(),
            episode=int(f["episode"][i]),
            step=int(f["step"][i]),
        )

    def sample(self, n: int, rng: np.random.Generator | None = None) -> dict:
        """Uniform with replacement; returns copied field arrays.

        With replacement any n is valid from a non-empty buffer (callers
        that need a minimum fill, like the learners, enforce it themselves).
        """
        if self.size == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        r = rng if rng is not None else self.rng
        idx = r.integers(0, self.size, size=n)
        if self.size == self.capacity:
            idx = (self.cursor + idx) % self.capacity
        return {k: a[idx].copy() for k, a in self._fields.items()}


# ---------------------------------------------------------------------------
# episode logs
# ---------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    """Decoded log: header fields plus per-step record arrays."""

    n_balls: int
    history_len: int
    task_id: int
    pixels: np.ndarray  # (steps, n_balls, 2) float32
    action: np.ndarray  # (steps, 9) float32
    reward: np.ndarray  # (steps,) float32
    done: np.ndarray  # (steps,) bool
    episode: np.ndarray  # (steps,) uint32
    step: np.ndarray  # (steps,) uint32
    obs: np.ndarray  # (steps, obs_dim) float32
    next_obs: np.ndarray  # (steps, obs_dim) float32

    @property
    def n_steps(self) -> int:
        return self.pixels.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]

    def episode_ids(self) -> np.ndarray:
        return np.unique(self.episode)


def _record_dtype(n_balls: int, obs_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("pixels", "<f4", (n_balls * 2,)),
            ("action", "<f4", (ACTION_DIM,)),
            ("reward", "<f4"),
            ("done", "u1"),
            ("episode", "<u4"),
            ("step", "<u4"),
            ("obs", "<f4", (obs_dim,)),
            ("next_obs", "<f4", (obs_dim,)),
        ]
    )


class LogWriter:
    """Streams per-step records; header written on open."""

    def __init__(self, path, n_balls: int, history_len: int, task_id: int, obs_dim: int):
        self.path = path
        self.n_balls = n_balls
        self.obs_dim = obs_dim
        self._dtype = _record_dtype(n_balls, obs_dim)
        self._f = open(path, "wb")
        header = MAGIC + np.asarray(
            [VERSION, n_balls, history_len, ACTION_DIM, task_id], dtype="<u4"
        ).tobytes()
        self._f.write(header)

    def append(self, t: Transition) -> None:
        rec = np.zeros(1, dtype=self._dtype)
        rec["pixels"][0] = np.asarray(t.pixels, dtype=np.float32).reshape(-1)
        rec["action"][0] = np.asarray(t.action, dtype=np.float32)
        rec["reward"][0] = np.float32(t.reward)
        rec["done"][0] = 1 if t.done else 0
        rec["episode"][0] = t.episode
        rec["step"][0] = t.step
        rec["obs"][0] = np.asarray(t.obs, dtype=np.float32)
        rec["next_obs"][0] = np.asarray(t.next_obs, dtype=np.float32)
        self._f.write(rec.tobytes())

    def close(self) -> None:
        if not self._f.closed:
            self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_log(path, log: EpisodeLog) -> None:
    """Write a whole decoded log back out (bit-exact with what read_log saw)."""
    with LogWriter(path, log.n_balls, log.history_len, log.task_id, log.obs_dim) as w:
        recs = np.zeros(log.n_steps, dtype=w._dtype)
        recs["pixels"] = log.pixels.reshape(log.n_steps, -1).astype("<f4")
        recs["action"] = log.action.astype("<f4")
        recs["reward"] = log.reward.astype("<f4")
        recs["done"] = log.done.astype("u1")
        recs["episode"] = log.episode.astype("<u4")
        recs["step"] = log.step.astype("<u4")
        recs["obs"] = log.obs.astype("<f4")
        recs["next_obs"] = log.next_obs.astype("<f4")
        w._f.write(recs.tobytes())


def read_log(path, expected_episode_len: int | None = None) -> EpisodeLog:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < HEADER_BYTES:
        raise LogTruncated(f"{path}: shorter than log header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise LogBadMagic(f"{path}: bad magic {buf[:4]!r}")
    version, n_balls, history_len, action_dim, task_id = np.frombuffer(
        buf, dtype="<u4", count=5, offset=4
    )
    if version != VERSION:
        raise LogBadVersion(f"{path}: unsupported version {version}")
    if action_dim != ACTION_DIM:
        raise LogError(f"{path}: unexpected action dim {action_dim}")
    body = len(buf) - HEADER_BYTES
    # obs_dim is implied by the header: ball history, plus a goal pixel for
    # the goal-conditioned task
    obs_dim = int(n_balls) * 2 * int(history_len) + (2 if int(task_id) == 3 else 0)
    dtype = _record_dtype(int(n_balls), obs_dim)
    n_rec = body // dtype.itemsize
    if n_rec * dtype.itemsize != body:
        raise LogTruncated(
            f"{path}: truncated after {n_rec} complete records "
            f"({body - n_rec * dtype.itemsize} trailing bytes)"
        )
    recs = np.frombuffer(buf, dtype=dtype, count=n_rec, offset=HEADER_BYTES)
    if expected_episode_len and recs.shape[0] % expected_episode_len != 0:
        raise LogError(
            f"{path}: record count {recs.shape[0]} is not a multiple of the "
            f"episode length {expected_episode_len}"
        )
    return EpisodeLog(
        n_balls=int(n_balls),
        history_len=int(history_len),
        task_id=int(task_id),
        pixels=recs["pixels"].reshape(-1, int(n_balls), 2).copy(),
        action=recs["action"].copy(),
        reward=recs["reward"].copy(),
        done=recs["done"].astype(bool),
        episode=recs["episode"].copy(),
        step=recs["step"].copy(),
        obs=recs["obs"].copy(),
        next_obs=recs["next_obs"].copy(),
    )


def relabel(log: EpisodeLog, reward_fn, task_id: int | None = None) -> EpisodeLog:
    """New log with rewards recomputed from the stored ground-truth pixels.

    ``reward_fn(pixels)`` maps one (n_balls, 2) pixel frame to a scalar.
    Every other field is carried over unchanged.
    """
    new_rewards = np.empty(log.n_steps, dtype=np.float32)
    pix = log.pixels.astype(np.float64)
    for i in range(log.n_steps):
        new_rewards[i] = reward_fn(pix[i])
    return EpisodeLog(
        n_balls=log.n_balls,
        history_len=log.history_len,
        task_id=log.task_id if task_id is None else task_id,
        pixels=log.pixels,
        action=log.action,
        reward=new_rewards,
        done=log.done,
        episode=log.episode,
        step=log.step,
        obs=log.obs,
        next_obs=log.next_obs,
    )
