"""Offline learner: the actor update restricted to dataset states and
actions, with exponentiated-advantage weights (critic-regularized
regression).  The critic is the same TD update as the online learner, with
bootstrap actions from the current policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .actor_critic import (
    ACTION_DIM,
    Policy,
    clone_params,
    critic_init,
    critic_q_np,
    norm_obs,
    policy_init,
    policy_stats_graph,
    policy_stats_np,
    squash,
    weighted_logp_graph,
)
from .errors import ContractError
from .mpo import critic_loss
from .replay import EpisodeLog
from .seeding import split_rng

_ACTION_EPS = 1e-6  # keep logit() finite on float32-rounded logged actions


@dataclass(frozen=True)
class CrrConfig:
    beta: float = 1.0  # advantage temperature
    weight_clip: float = 20.0
    baseline_samples: int = 10  # policy samples for the advantage baseline
    batch_size: int = 256
    eval_period: int = 10_000
    eval_episodes: int = 10
    discount: float = 0.99
    hidden: tuple = (256, 256)
    lr_policy: float = 3e-4
    lr_critic: float = 3e-4
    target_period: int = 200
    init_log_std: float = -0.5
    init_action: float = 0.25
    bc_mode: bool = False  # force unit weights (pure behavior cloning)

    def __post_init__(self):
        if self.beta <= 0:
            raise ContractError("beta must be positive")
        if self.weight_clip < 1:
            raise ContractError("weight_clip must be >= 1")
        if self.baseline_samples < 1:
            raise ContractError("baseline_samples must be >= 1")


@dataclass
class CrrState:
    policy: Policy
    critic: nn.MlpParams
    target_critic: nn.MlpParams
    opt_policy: nn.AdamState
    opt_critic: nn.AdamState
    updates: int = 0


def init_crr(obs_dim: int, cfg: CrrConfig, pixel_grid: int, seed: int) -> CrrState:
    rng = np.random.default_rng(seed)
    policy = policy_init(obs_dim, cfg.hidden, pixel_grid, rng, cfg.init_log_std,
                         cfg.init_action)
    critic = critic_init(obs_dim, cfg.hidden, rng)
    return CrrState(
        policy=policy,
        critic=critic,
        target_critic=clone_params(critic),
        opt_policy=nn.AdamState.init(policy.params.arrays(), lr=cfg.lr_policy),
        opt_critic=nn.AdamState.init(critic.arrays(), lr=cfg.lr_critic),
    )


class LogDataset:
    """Uniform sampling view over a decoded episode log (float64 copies)."""

    def __init__(self, log: EpisodeLog):
        if log.n_steps == 0:
            raise ContractError("offline dataset is empty")
        self._fields = {
            "obs": log.obs.astype(np.float64),
            "action": log.action.astype(np.float64),
            "reward": log.reward.astype(np.float64),
            "next_obs": log.next_obs.astype(np.float64),
            "done": log.done.copy(),
        }
        self.size = log.n_steps
        self.n_balls = log.n_balls

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=n)
        return {k: a[idx].copy() for k, a in self._fields.items()}


def advantage(critic: nn.MlpParams, obs_n: np.ndarray, actions: np.ndarray,
              policy: Policy, m: int, rng: np.random.Generator) -> np.ndarray:
    """Q(s, a) minus a Monte-Carlo baseline of Q over m policy samples."""
    b = obs_n.shape[0]
    q_a = critic_q_np(critic, obs_n, actions)
    mu, log_std = policy_stats_np(policy, obs_n)
    z = mu[:, None, :] + np.exp(log_std)[:, None, :] * rng.standard_normal(
        (b, m, ACTION_DIM))
    q_base = critic_q_np(
        critic, np.repeat(obs_n, m, axis=0), squash(z.reshape(b * m, ACTION_DIM))
    ).reshape(b, m).mean(axis=1)
    return q_a - q_base


def crr_weights(adv: np.ndarray, cfg: CrrConfig) -> np.ndarray:
    if cfg.bc_mode:
        return np.ones_like(adv)
    return np.minimum(np.exp(adv / cfg.beta), cfg.weight_clip)


def crr_policy_loss(batch: dict, state: CrrState, cfg: CrrConfig,
                    rng: np.random.Generator):
    """Advantage-weighted negative log likelihood of the dataset actions.

    Returns (loss tensor, weights); gradient flows through the policy only.
    """
    if batch["obs"].shape[0] == 0:
        raise ContractError("crr_policy_loss: empty batch")
    obs_n = norm_obs(batch["obs"], state.policy.pixel_grid)
    a = np.clip(batch["action"], _ACTION_EPS, 1.0 - _ACTION_EPS)
    z_data = np.log(a / (1.0 - a))  # invert the logistic squash
    if cfg.bc_mode:
        w = np.ones(obs_n.shape[0])
    else:
        adv = advantage(state.critic, obs_n, batch["action"], state.policy,
                        cfg.baseline_samples, rng)
        w = crr_weights(adv, cfg)
    mu_t, log_std_t = policy_stats_graph(state.policy, obs_n)
    wlogp = weighted_logp_graph(mu_t, log_std_t, z_data, w, 1)
    return ad.neg(wlogp), w


def crr_step(state: CrrState, dataset, cfg: CrrConfig,
             rng: np.random.Generator) -> dict:
    """One critic Adam step and one CRR policy Adam step on a fresh batch."""
    batch = dataset.sample(cfg.batch_size, rng)

    closs_t, _ = critic_loss(batch, state.policy, state.critic,
                             state.target_critic, cfg.discount, rng)
    ct = state.critic.tensors()
    for p in ct:
        p.grad = None
    closs_t.backward()
    cgrads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in ct]
    arrays, state.opt_critic = nn.adam_step([p.data for p in ct], cgrads,
                                            state.opt_critic)
    for p, a in zip(ct, arrays):
        p.data = a

    ploss_t, w = crr_policy_loss(batch, state, cfg, rng)
    pt = state.policy.params.tensors()
    for p in pt:
        p.grad = None
    ploss_t.backward()
    pgrads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in pt]
    arrays, state.opt_policy = nn.adam_step([p.data for p in pt], pgrads,
                                            state.opt_policy)
    for p, a in zip(pt, arrays):
        p.data = a

    state.updates += 1
    if state.updates % cfg.target_period == 0:
        for t, s in zip(state.target_critic.tensors(), state.critic.tensors()):
            t.data = s.data.copy()

    return {
        "critic_loss": float(closs_t.data),
        "policy_loss": float(ploss_t.data),
        "mean_weight": float(np.mean(w)),
        "max_weight": float(np.max(w)),
    }


def offline_train(dataset, cfg: CrrConfig, total_steps: int, seed: int,
                  evaluator=None, checkpoint_cb=None, state: CrrState | None = None,
                  start_step: int = 0, obs_dim: int | None = None,
                  pixel_grid: int = 700):
    """Alternating critic/CRR-policy updates with intermittent evaluation.

    ``evaluator(policy) -> float`` runs evaluation episodes (typically on
    the simulator, mean-mode policy); called every eval_period steps.
    ``checkpoint_cb(step, state)`` is called at each evaluation and at the
    end.  Per-step RNG streams are derived from the seed, so a run resumed
    from (state, start_step) continues bit-identically.
    """
    if state is None:
        if obs_dim is None:
            obs_dim = dataset._fields["obs"].shape[1]
        state = init_crr(obs_dim, cfg, pixel_grid, seed)
    evals = []
    policy_losses = np.empty(max(total_steps - start_step, 0))
    critic_losses = np.empty(max(total_steps - start_step, 0))
    for k in range(start_step, total_steps):
        rng = split_rng(seed, f"crr-step-{k}")
        stats = crr_step(state, dataset, cfg, rng)
        policy_losses[k - start_step] = stats["policy_loss"]
        critic_losses[k - start_step] = stats["critic_loss"]
        if (k + 1) % cfg.eval_period == 0:
            if evaluator is not None:
                evals.append((k + 1, float(evaluator(state.policy))))
            if checkpoint_cb is not None:
                checkpoint_cb(k + 1, state)
    if checkpoint_cb is not None:
        checkpoint_cb(total_steps, state)
    return state, {
        "evals": evals,
        "policy_loss_trace": policy_losses,
        "critic_loss_trace": critic_losses,
    }


# serialization mirrors the online learner's container
def crr_to_arrays(state: CrrState) -> list:
    p, c, t = state.policy.params, state.critic, state.target_critic
    header = np.array([
        len(p.tensors()), len(c.tensors()), state.policy.pixel_grid, state.updates,
        state.opt_policy.step, state.opt_critic.step,
        state.opt_policy.lr, state.opt_critic.lr,
    ], dtype=np.float64)
    out = [header]
    out += p.arrays() + c.arrays() + t.arrays()
    out += state.opt_policy.m + state.opt_policy.v
    out += state.opt_critic.m + state.opt_critic.v
    return out


def crr_from_arrays(arrays: list) -> CrrState:
    header = arrays[0]
    n_p, n_c, grid, updates, sp, sc = (int(header[i]) for i in range(6))
    lrp, lrc = float(header[6]), float(header[7])
    i = 1

    def take(n):
        nonlocal i
        part = arrays[i:i + n]
        i += n
        return part

    def rebuild(flat):
        ws, bs = flat[0::2], flat[1::2]
        sizes = tuple([ws[0].shape[0]] + [w.shape[1] for w in ws])
        return nn.MlpParams(sizes, [ad.parameter(w) for w in ws],
                            [ad.parameter(b) for b in bs])

    policy_params = rebuild(take(n_p))
    critic = rebuild(take(n_c))
    target = rebuild(take(n_c))
    pm, pv = take(n_p), take(n_p)
    cm, cv = take(n_c), take(n_c)
    return CrrState(
        policy=Policy(policy_params, grid),
        critic=critic,
        target_critic=target,
        opt_policy=nn.AdamState(pm, pv, sp, lrp, 0.9, 0.999, 1e-8),
        opt_critic=nn.AdamState(cm, cv, sc, lrc, 0.9, 0.999, 1e-8),
        updates=updates,
    )
