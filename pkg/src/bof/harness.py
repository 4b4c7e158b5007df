"""Experiment orchestration: configuration files, derived RNG streams, the
deterministic actor/learner interleave, evaluation, and artifact output.

Deterministic mode (the only mode used by tests) runs everything on one
thread with a fixed schedule: one 1000-step episode of acting, then a
block of learner updates, evaluation every few episodes.  All randomness
derives from the root seed through labeled splits, so a (config, seed)
pair maps to a bit-identical artifact directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .actor_critic import Policy, act
from .crr import CrrConfig, LogDataset, crr_from_arrays, crr_to_arrays, init_crr, offline_train
from .errors import BofError, ConfigError
from .mpo import (
    LearnerState,
    MpoConfig,
    init_learner,
    learner_from_arrays,
    learner_step,
    learner_to_arrays,
    policy_from_arrays,
    policy_to_arrays,
)
from .replay import LogWriter, ReplayBuffer, Transition, read_log
from .seeding import seed_split, split_rng
from .sim import BoxSim, ObsHistory, SimConfig
from .tasks import TASK_IDS, make_task, sample_goal, task_reward

ALGORITHMS = ("mpo", "crr", "bc", "random")


class RunError(BofError):
    category = "run-error"


@dataclass
class ExperimentConfig:
    task: str = "hover"
    algorithm: str = "mpo"
    total_steps: int = 300_000  # env steps online; learner steps offline
    seed: int = 0
    out_dir: str = "runs/out"
    data_path: str | None = None
    replay_capacity: int = 1_000_000
    eval_every_episodes: int = 10
    eval_episodes: int = 10
    checkpoint_every_evals: int = 5
    warmup_episodes: int = 10  # scripted sparse-burst episodes seeding replay
    explore_ou_steps: int = 10  # actor noise correlation (control steps)
    sim: SimConfig = field(default_factory=SimConfig)
    mpo: MpoConfig = field(default_factory=MpoConfig)
    crr: CrrConfig = field(default_factory=CrrConfig)

    def __post_init__(self):
        if self.task not in TASK_IDS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")


_EXPERIMENT_KEYS = ("task", "algorithm", "total_steps", "seed", "data_path",
                    "replay_capacity", "eval_every_episodes", "eval_episodes",
                    "checkpoint_every_evals", "warmup_episodes", "explore_ou_steps")
_SIM_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}
_MPO_FIELDS = {f.name: f for f in dataclasses.fields(MpoConfig)}
_CRR_FIELDS = {f.name: f for f in dataclasses.fields(CrrConfig)}


def _parse_value(text: str, example):
    text = text.strip()
    if isinstance(example, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(example, int):
        return int(text)
    if isinstance(example, float):
        return float(text)
    if isinstance(example, tuple):
        return tuple(float(v) if "." in v or "e" in v.lower() else int(v)
                     for v in text.split(","))
    if example is None or isinstance(example, str):
        return text
    raise ConfigError(f"unsupported config value type for {text!r}")


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """key = value lines; '#' comments; unknown keys rejected.

    Simulator keys use their bare names, learner keys are prefixed with
    ``mpo_`` / ``crr_``.
    """
    cfg = base or ExperimentConfig()
    exp: dict = {}
    sim: dict = {}
    mpo: dict = {}
    crr: dict = {}
    defaults = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in _EXPERIMENT_KEYS:
            exp[key] = _parse_value(val, getattr(defaults, key))
        elif key in _SIM_FIELDS:
            sim[key] = _parse_value(val, getattr(defaults.sim, key))
        elif key.startswith("mpo_") and key[4:] in _MPO_FIELDS:
            name = key[4:]
            example = getattr(defaults.mpo, name)
            mpo[name] = _parse_value(val, example if example is not None else 0.0)
        elif key.startswith("crr_") and key[4:] in _CRR_FIELDS:
            name = key[4:]
            crr[name] = _parse_value(val, getattr(defaults.crr, name))
        else:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
    return ExperimentConfig(
        **{**{k: getattr(cfg, k) for k in _EXPERIMENT_KEYS}, **exp},
        out_dir=cfg.out_dir,
        sim=dataclasses.replace(cfg.sim, **sim),
        mpo=dataclasses.replace(cfg.mpo, **mpo),
        crr=dataclasses.replace(cfg.crr, **crr),
    )


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), base)


def config_echo(cfg: ExperimentConfig) -> str:
    """Full resolved configuration, out_dir excluded so artifact trees hash
    identically wherever they are written."""
    lines = []
    for k in _EXPERIMENT_KEYS:
        v = getattr(cfg, k)
        if v is not None:
            lines.append(f"{k} = {v}")
    for name in _SIM_FIELDS:
        v = getattr(cfg.sim, name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{name} = {v}")
    for name in _MPO_FIELDS:
        v = getattr(cfg.mpo, name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"mpo_{name} = {v}")
    for name in _CRR_FIELDS:
        v = getattr(cfg.crr, name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"crr_{name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# episode rollout
# ---------------------------------------------------------------------------

def compose_obs(history: ObsHistory, goal: np.ndarray | None) -> np.ndarray:
    vec = history.vector()
    if goal is not None:
        vec = np.concatenate([vec, goal])
    return vec


def run_episode(sim: BoxSim, task, act_fn, episode_seed: int, episode_index: int,
                goal: np.ndarray | None, collect: bool = True):
    """One fixed-length episode; returns (mean step reward, transitions).

    ``act_fn(obs_vector, t)`` supplies the action.  Rewards are computed
    from ground-truth pixels of the state in which the action is taken.
    """
    length = sim.config.episode_len
    state = sim.reset(episode_seed)
    hist = ObsHistory(sim.config.history_len, sim.observe(state))
    obs_vec = compose_obs(hist, goal)
    transitions = []
    reward_sum = 0.0
    for t in range(length):
        action = act_fn(obs_vec, t)
        pix_t = sim.ground_truth_pixels(state)
        r = task_reward(task, pix_t, goal)
        reward_sum += r
        sim.step(state, action)
        hist.push(sim.observe(state))
        next_obs = compose_obs(hist, goal)
        if collect:
            transitions.append(Transition(
                obs=obs_vec, action=np.asarray(action, dtype=np.float64),
                reward=r, next_obs=next_obs, done=(t == length - 1),
                pixels=pix_t, next_pixels=sim.ground_truth_pixels(state),
                episode=episode_index, step=t,
            ))
        obs_vec = next_obs
    return reward_sum / length, transitions


def make_act_fn(policy: Policy | None, mode: str, rng: np.random.Generator | None,
                explore_ou_steps: int = 10):
    """Actor for one episode.

    Sampling mode draws the exploration noise from a unit-variance OU
    process over the pre-squash space (correlation time explore_ou_steps
    control steps): per-step marginals match the policy's Gaussian, but
    valve patterns persist long enough to actually move the balls.
    explore_ou_steps=0 gives plain white-noise sampling.
    """
    if mode == "warmup":
        if rng is None:
            raise RunError("warmup actor needs an rng")
        state = {"pattern": np.zeros(9)}

        def act_warmup(obs, t):
            if t % 15 == 0:
                on = rng.random(9) < 0.2
                state["pattern"] = np.where(on, rng.uniform(0.4, 1.0, 9), 0.0)
            return state["pattern"]

        return act_warmup
    if policy is None:
        if rng is None:
            raise RunError("random actor needs an rng")
        return lambda obs, t: rng.uniform(0.0, 1.0, size=9)
    if mode == "mean":
        return lambda obs, t: act(policy, obs, "mean")
    if explore_ou_steps <= 0:
        return lambda obs, t: act(policy, obs, "sample", rng)

    from .actor_critic import policy_stats_np, norm_obs, squash

    keep = 1.0 - 1.0 / explore_ou_steps
    kick = np.sqrt(1.0 - keep * keep)
    state = {"x": rng.standard_normal(9)}

    def act_ou(obs, t):
        mu, log_std = policy_stats_np(policy, norm_obs(obs, policy.pixel_grid))
        state["x"] = keep * state["x"] + kick * rng.standard_normal(9)
        return squash(mu + np.exp(log_std) * state["x"])

    return act_ou


def evaluate_policy(cfg: ExperimentConfig, policy: Policy | None, episodes: int,
                    seed_label: str, log_writer: LogWriter | None = None) -> np.ndarray:
    """Mean-mode policy (or uniform-random when policy is None) for a batch
    of eval episodes; returns per-episode mean rewards."""
    task = make_task(cfg.task, cfg.sim)
    sim = BoxSim(dataclasses.replace(cfg.sim, n_balls=task.n_balls))
    returns = np.empty(episodes)
    for j in range(episodes):
        goal = None
        if task.goal_conditioned:
            goal = sample_goal(task, split_rng(cfg.seed, f"{seed_label}-goal-{j}"))
        rng = split_rng(cfg.seed, f"{seed_label}-act-{j}")
        fn = make_act_fn(policy, "mean", rng)
        ret, transitions = run_episode(
            sim, task, fn, seed_split(cfg.seed, f"{seed_label}-sim-{j}"), j, goal,
            collect=log_writer is not None)
        returns[j] = ret
        if log_writer is not None:
            for tr in transitions:
                log_writer.append(tr)
    return returns


# ---------------------------------------------------------------------------
# online training
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(f"{v:.10g}" if isinstance(v, float) else str(v)
                             for v in row) + "\n")


class _CsvStream:
    """Appends rows as they arrive so partial runs remain inspectable."""

    def __init__(self, path, header):
        self._f = open(path, "w", encoding="utf-8")
        self._f.write(",".join(header) + "\n")
        self._f.flush()

    def row(self, values):
        self._f.write(",".join(f"{v:.10g}" if isinstance(v, float) else str(v)
                               for v in values) + "\n")
        self._f.flush()

    def close(self):
        self._f.close()


def run_online(cfg: ExperimentConfig) -> dict:
    """Full online run: episodes + learner updates + eval + artifacts.

    Artifacts: train_log.bofl, train_returns.csv, eval_returns.csv,
    policy checkpoints, learner checkpoint, config.txt, provenance.txt.
    """
    if cfg.algorithm not in ("mpo", "random"):
        raise ConfigError("run_online handles the mpo and random algorithms")
    os.makedirs(cfg.out_dir, exist_ok=True)
    task = make_task(cfg.task, cfg.sim)
    sim_cfg = dataclasses.replace(cfg.sim, n_balls=task.n_balls)
    sim = BoxSim(sim_cfg)
    obs_dim = task.obs_dim(sim_cfg.history_len)
    length = sim_cfg.episode_len
    episodes = cfg.total_steps // length
    updates_per_episode = int(round(length * cfg.mpo.updates_per_env_step))

    ls = None
    if cfg.algorithm == "mpo":
        ls = init_learner(obs_dim, cfg.mpo, sim_cfg.pixel_grid,
                          seed_split(cfg.seed, "learner-init"))
    buf = ReplayBuffer(cfg.replay_capacity, seed=seed_split(cfg.seed, "replay"))

    train_rows, eval_rows = [], []
    train_csv = _CsvStream(os.path.join(cfg.out_dir, "train_returns.csv"),
                           ("env_steps", "mean_episode_return"))
    eval_csv = _CsvStream(os.path.join(cfg.out_dir, "eval_returns.csv"),
                          ("env_steps", "mean_episode_return"))
    learn_calls = 0
    log_path = os.path.join(cfg.out_dir, "train_log.bofl")
    with LogWriter(log_path, task.n_balls, sim_cfg.history_len, task.task_id,
                   obs_dim) as log:
        for ep in range(episodes):
            goal = None
            if task.goal_conditioned:
                goal = sample_goal(task, split_rng(cfg.seed, f"goal-{ep}"))
            actor_rng = split_rng(cfg.seed, f"actor-{ep}")
            policy = ls.policy if ls is not None else None
            if policy is not None and ep < cfg.warmup_episodes:
                fn = make_act_fn(policy, "warmup", actor_rng)
            else:
                fn = make_act_fn(policy, "sample", actor_rng, cfg.explore_ou_steps)
            ep_return, transitions = run_episode(
                sim, task, fn, seed_split(cfg.seed, f"episode-{ep}"), ep, goal)
            for tr in transitions:
                buf.append(tr)
                log.append(tr)
            env_steps = (ep + 1) * length
            train_rows.append((env_steps, float(ep_return)))
            train_csv.row(train_rows[-1])

            if ls is not None and buf.size >= cfg.mpo.batch_size:
                for _ in range(updates_per_episode):
                    learner_step(ls, buf, cfg.mpo,
                                 split_rng(cfg.seed, f"learn-{learn_calls}"))
                    learn_calls += 1

            if (ep + 1) % cfg.eval_every_episodes == 0:
                rets = evaluate_policy(cfg, ls.policy if ls else None,
                                       cfg.eval_episodes, f"eval-{env_steps}")
                eval_rows.append((env_steps, float(rets.mean())))
                eval_csv.row(eval_rows[-1])
                n_evals = len(eval_rows)
                if ls is not None and n_evals % cfg.checkpoint_every_evals == 0:
                    ckpt.save_tensors(
                        os.path.join(cfg.out_dir, f"policy_ep{ep + 1}.bofp"),
                        policy_to_arrays(ls.policy))

    train_csv.close()
    eval_csv.close()
    if ls is not None:
        ckpt.save_tensors(os.path.join(cfg.out_dir, "policy_final.bofp"),
                          policy_to_arrays(ls.policy))
        ckpt.save_tensors(os.path.join(cfg.out_dir, "learner_final.bofp"),
                          learner_to_arrays(ls))
    _write_provenance(cfg, extra={"episodes": episodes,
                                  "env_steps": episodes * length,
                                  "learner_updates": learn_calls})
    return {
        "episodes": episodes,
        "env_steps": episodes * length,
        "train_returns": train_rows,
        "eval_returns": eval_rows,
    }


# ---------------------------------------------------------------------------
# offline training
# ---------------------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_offline(cfg: ExperimentConfig, resume: bool = False) -> dict:
    """Offline run on a logged dataset; evaluation episodes on the simulator.

    Artifacts: eval_returns.csv (learner_steps, mean_eval_return),
    crr checkpoints at each evaluation, config.txt, provenance.txt with the
    dataset hash.
    """
    if cfg.algorithm not in ("crr", "bc"):
        raise ConfigError("run_offline handles the crr and bc algorithms")
    if not cfg.data_path or not os.path.exists(cfg.data_path):
        raise RunError(f"offline dataset not found: {cfg.data_path}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    log = read_log(cfg.data_path)
    dataset = LogDataset(log)
    task = make_task(cfg.task, cfg.sim)
    crr_cfg = cfg.crr if cfg.algorithm == "crr" else dataclasses.replace(
        cfg.crr, bc_mode=True)

    state = None
    start_step = 0
    if resume:
        state, start_step = _latest_crr_checkpoint(cfg.out_dir)

    eval_rows = []

    def evaluator(policy: Policy) -> float:
        step_label = f"offline-eval-{evaluator.calls}"
        rets = evaluate_policy(cfg, policy, cfg.crr.eval_episodes, step_label)
        evaluator.calls += 1
        return float(rets.mean())

    evaluator.calls = start_step // crr_cfg.eval_period

    def checkpoint_cb(step: int, st):
        ckpt.save_tensors(os.path.join(cfg.out_dir, f"crr_step{step}.bofp"),
                          crr_to_arrays(st))

    obs_dim = log.obs.shape[1]
    state, stats = offline_train(
        dataset, crr_cfg, cfg.total_steps,
        seed_split(cfg.seed, "offline"),
        evaluator=evaluator, checkpoint_cb=checkpoint_cb,
        state=state, start_step=start_step,
        obs_dim=obs_dim, pixel_grid=cfg.sim.pixel_grid,
    )
    for step, ret in stats["evals"]:
        eval_rows.append((step, ret))
    ckpt.save_tensors(os.path.join(cfg.out_dir, "policy_final.bofp"),
                      policy_to_arrays(state.policy))
    _write_csv(os.path.join(cfg.out_dir, "eval_returns.csv"),
               ("learner_steps", "mean_eval_return"), eval_rows)
    np.savetxt(os.path.join(cfg.out_dir, "policy_loss_trace.csv"),
               stats["policy_loss_trace"], fmt="%.10g",
               header="policy_loss", comments="")
    _write_provenance(cfg, extra={
        "dataset": os.path.basename(cfg.data_path),
        "dataset_sha256": file_sha256(cfg.data_path),
        "dataset_steps": log.n_steps,
        "learner_steps": cfg.total_steps,
    })
    return {"state": state, "eval_returns": eval_rows, "stats": stats}


def _latest_crr_checkpoint(out_dir):
    best_step, best_path = -1, None
    for name in os.listdir(out_dir):
        if name.startswith("crr_step") and name.endswith(".bofp"):
            step = int(name[len("crr_step"):-len(".bofp")])
            if step > best_step:
                best_step, best_path = step, os.path.join(out_dir, name)
    if best_path is None:
        return None, 0
    return crr_from_arrays(ckpt.load_tensors(best_path)), best_step


def _write_provenance(cfg: ExperimentConfig, extra: dict):
    with open(os.path.join(cfg.out_dir, "config.txt"), "w", encoding="utf-8") as f:
        f.write(config_echo(cfg))
    with open(os.path.join(cfg.out_dir, "provenance.txt"), "w", encoding="utf-8") as f:
        for k, v in sorted(extra.items()):
            f.write(f"{k} = {v}\n")


def hash_artifact_dir(path) -> str:
    """Order-independent content hash of a run directory."""
    h = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs.sort()
        for name in sorted(files):
            full = os.path.join(root, name)
            rel = os.path.relpath(full, path)
            h.update(rel.encode())
            h.update(file_sha256(full).encode())
    return h.hexdigest()


def load_policy_checkpoint(path) -> Policy:
    return policy_from_arrays(ckpt.load_tensors(path))
