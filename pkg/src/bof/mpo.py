"""Online MPO learner.

Each learner step performs, in order: one Adam step on the TD critic, one
gradient step on the temperature dual, one Adam step on the policy against
the nonparametric improved policy (softmax of Q over sampled actions) under
decoupled mean/covariance KL trust regions, plus a periodic target-network
refresh.
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
    critic_q_graph,
    critic_q_np,
    kl_terms_graph,
    norm_obs,
    policy_init,
    policy_stats_graph,
    policy_stats_np,
    squash,
    td_targets,
    weighted_logp_graph,
)
from .errors import ContractError

ETA_FLOOR = 1e-6
ALPHA_FLOOR = 1e-8


@dataclass(frozen=True)
class MpoConfig:
    discount: float = 0.99
    epsilon_eta: float = 0.1  # E-step KL budget for the temperature dual
    epsilon_mu: float = 0.01  # M-step mean KL bound
    epsilon_sigma: float = 1e-5  # M-step covariance KL bound
    n_action_samples: int = 20
    batch_size: int = 256
    updates_per_env_step: float = 0.25
    target_period: int = 200
    hidden: tuple = (256, 256)
    lr_policy: float = 3e-4
    lr_critic: float = 3e-4
    lr_eta: float = 0.01
    lr_alpha: float = 0.01
    init_eta: float = 1.0
    init_log_std: float = -0.5
    init_action: float = 0.25
    fixed_beta: float | None = None  # freeze the temperature instead of the dual
    avg_q: bool = False  # average N_a next-action Q values in the TD target

    def __post_init__(self):
        if not (0.0 < self.discount < 1.0):
            raise ContractError("discount must be in (0, 1)")
        if self.epsilon_eta <= 0 or self.epsilon_mu <= 0 or self.epsilon_sigma <= 0:
            raise ContractError("KL bounds must be positive")
        if self.n_action_samples < 2:
            raise ContractError("need at least 2 action samples per state")


@dataclass
class LearnerState:
    """Everything the updates touch: networks, optimizers, duals, counter.

    The frozen snapshot (target policy + target critic) advances every
    target_period updates; it is both the bootstrap/proposal distribution
    and the reference point of the M-step trust region, so the KL bounds
    constrain the cumulative policy movement per period.
    """

    policy: Policy
    target_policy: Policy
    critic: nn.MlpParams
    target_critic: nn.MlpParams
    opt_policy: nn.AdamState
    opt_critic: nn.AdamState
    opt_alpha: nn.AdamState
    eta: float
    alpha_mu: float
    alpha_sigma: float
    updates: int = 0


def init_learner(obs_dim: int, cfg: MpoConfig, pixel_grid: int, seed: int) -> LearnerState:
    rng = np.random.default_rng(seed)
    policy = policy_init(obs_dim, cfg.hidden, pixel_grid, rng, cfg.init_log_std,
                         cfg.init_action)
    critic = critic_init(obs_dim, cfg.hidden, rng)
    return LearnerState(
        policy=policy,
        target_policy=Policy(clone_params(policy.params), pixel_grid),
        critic=critic,
        target_critic=clone_params(critic),
        opt_policy=nn.AdamState.init(policy.params.arrays(), lr=cfg.lr_policy),
        opt_critic=nn.AdamState.init(critic.arrays(), lr=cfg.lr_critic),
        opt_alpha=nn.AdamState.init([np.zeros(1), np.zeros(1)], lr=cfg.lr_alpha),
        eta=cfg.init_eta if cfg.fixed_beta is None else cfg.fixed_beta,
        alpha_mu=10.0,
        alpha_sigma=10.0,
    )


# ---------------------------------------------------------------------------
# losses and duals
# ---------------------------------------------------------------------------

def critic_loss(batch: dict, policy: Policy, critic: nn.MlpParams,
                target_critic: nn.MlpParams, gamma: float,
                rng: np.random.Generator, avg_q: bool = False,
                n_avg: int = 20):
    """Mean squared TD error with a bootstrap action sampled from the
    current policy and Q' from the target critic.

    Returns (loss tensor, targets); gradient flows only through the critic.
    """
    if batch["obs"].shape[0] == 0:
        raise ContractError("critic_loss: empty batch")
    grid = policy.pixel_grid
    obs_n = norm_obs(batch["obs"], grid)
    nobs_n = norm_obs(batch["next_obs"], grid)
    mu, log_std = policy_stats_np(policy, nobs_n)
    if avg_q:
        b = nobs_n.shape[0]
        z = mu[:, None, :] + np.exp(log_std)[:, None, :] * rng.standard_normal(
            (b, n_avg, ACTION_DIM))
        q_next = critic_q_np(
            target_critic, np.repeat(nobs_n, n_avg, axis=0),
            squash(z.reshape(b * n_avg, ACTION_DIM)),
        ).reshape(b, n_avg).mean(axis=1)
    else:
        z = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        q_next = critic_q_np(target_critic, nobs_n, squash(z))
    targets = td_targets(batch["reward"], batch["done"], q_next, gamma)
    q_pred = critic_q_graph(critic, obs_n, batch["action"])
    loss = ad.tmean(ad.square(ad.sub(q_pred, ad.constant(targets))))
    return loss, targets


def estep_weights(q_values: np.ndarray, eta: float) -> np.ndarray:
    """Per-state softmax of Q/eta over the sampled actions; rows sum to 1."""
    if eta <= 0:
        raise ContractError("estep temperature must be positive")
    q = np.asarray(q_values, dtype=np.float64)
    scaled = q / eta
    scaled -= scaled.max(axis=-1, keepdims=True)
    w = np.exp(scaled)
    w /= w.sum(axis=-1, keepdims=True)
    return w


def estep_kl_to_uniform(q_values: np.ndarray, eta: float) -> float:
    """Mean over states of KL(softmax(Q/eta) || uniform)."""
    w = estep_weights(q_values, eta)
    n = w.shape[-1]
    wl = np.where(w > 0.0, w * np.log(np.maximum(w, 1e-300)), 0.0).sum(axis=-1)
    return float(np.mean(wl) + np.log(n))


def temperature_dual_gradient(q_values: np.ndarray, eta: float, eps_eta: float) -> float:
    """d/d_eta of the E-step dual; equals eps_eta - mean KL(weights || uniform)."""
    return eps_eta - estep_kl_to_uniform(q_values, eta)


def temperature_dual_step(q_values: np.ndarray, eta: float, eps_eta: float,
                          lr: float = 0.01) -> float:
    """One projected gradient step on the temperature dual."""
    g = temperature_dual_gradient(q_values, eta, eps_eta)
    return max(eta - lr * g, ETA_FLOOR)


def policy_loss(obs_n: np.ndarray, z_samples: np.ndarray, weights: np.ndarray,
                policy: Policy, mu_old: np.ndarray, log_std_old: np.ndarray,
                alpha_mu: float, alpha_sigma: float):
    """Weighted negative log likelihood plus KL trust-region penalties.

    z_samples: (B, N, 9) pre-squash actions; weights: (B, N) from the
    E-step (treated as constants).  Returns (loss tensor, kl_mu value,
    kl_sigma value, nll value).
    """
    b, n, _ = z_samples.shape
    if weights.shape != (b, n):
        raise ContractError("policy_loss: weights/actions shape mismatch")
    mu_t, log_std_t = policy_stats_graph(policy, obs_n)
    wlogp = weighted_logp_graph(
        mu_t, log_std_t,
        z_samples.reshape(b * n, ACTION_DIM),
        weights.reshape(b * n),
        n,
    )
    kl_mu_t, kl_sigma_t = kl_terms_graph(mu_t, log_std_t, mu_old, log_std_old)
    loss = ad.add(ad.add(ad.neg(wlogp), ad.mul(kl_mu_t, float(alpha_mu))),
                  ad.mul(kl_sigma_t, float(alpha_sigma)))
    return loss, float(kl_mu_t.data), float(kl_sigma_t.data), -float(wlogp.data)


# ---------------------------------------------------------------------------
# one full learner step
# ---------------------------------------------------------------------------

def learner_step(ls: LearnerState, buffer, cfg: MpoConfig,
                 rng: np.random.Generator) -> dict:
    """Critic Adam step, temperature dual step, policy Adam step, dual-alpha
    steps, periodic target refresh.  Deterministic given (state, buffer,
    rng)."""
    batch = buffer.sample(cfg.batch_size, rng) if not isinstance(buffer, dict) else buffer
    grid = ls.policy.pixel_grid
    obs_n = norm_obs(batch["obs"], grid)
    b = obs_n.shape[0]

    # 1) critic
    closs_t, _ = critic_loss(batch, ls.policy, ls.critic, ls.target_critic,
                             cfg.discount, rng, cfg.avg_q, cfg.n_action_samples)
    critic_tensors = ls.critic.tensors()
    for p in critic_tensors:
        p.grad = None
    closs_t.backward()
    cgrads = [p.grad if p.grad is not None else np.zeros_like(p.data)
              for p in critic_tensors]
    new_arrays, ls.opt_critic = nn.adam_step(
        [p.data for p in critic_tensors], cgrads, ls.opt_critic)
    for p, a in zip(critic_tensors, new_arrays):
        p.data = a

    # 2) E-step: actions proposed by the frozen snapshot policy, scored by
    # the fresh critic
    mu_old, log_std_old = policy_stats_np(ls.target_policy, obs_n)
    eps = rng.standard_normal((b, cfg.n_action_samples, ACTION_DIM))
    z = mu_old[:, None, :] + np.exp(log_std_old)[:, None, :] * eps
    z_flat = z.reshape(b * cfg.n_action_samples, ACTION_DIM)
    q_matrix = critic_q_np(
        ls.critic, np.repeat(obs_n, cfg.n_action_samples, axis=0), squash(z_flat)
    ).reshape(b, cfg.n_action_samples)

    if cfg.fixed_beta is None:
        ls.eta = temperature_dual_step(q_matrix, ls.eta, cfg.epsilon_eta, cfg.lr_eta)
    weights = estep_weights(q_matrix, ls.eta)

    # 3) M-step
    ploss_t, kl_mu, kl_sigma, nll = policy_loss(
        obs_n, z, weights, ls.policy, mu_old, log_std_old,
        ls.alpha_mu, ls.alpha_sigma)
    policy_tensors = ls.policy.params.tensors()
    for p in policy_tensors:
        p.grad = None
    ploss_t.backward()
    pgrads = [p.grad if p.grad is not None else np.zeros_like(p.data)
              for p in policy_tensors]
    new_arrays, ls.opt_policy = nn.adam_step(
        [p.data for p in policy_tensors], pgrads, ls.opt_policy)
    for p, a in zip(policy_tensors, new_arrays):
        p.data = a

    # 4) trust-region multipliers chase their bounds
    new_alphas, ls.opt_alpha = nn.adam_step(
        [np.array([ls.alpha_mu]), np.array([ls.alpha_sigma])],
        [np.array([cfg.epsilon_mu - kl_mu]), np.array([cfg.epsilon_sigma - kl_sigma])],
        ls.opt_alpha,
    )
    ls.alpha_mu = max(float(new_alphas[0][0]), ALPHA_FLOOR)
    ls.alpha_sigma = max(float(new_alphas[1][0]), ALPHA_FLOOR)

    ls.updates += 1
    if ls.updates % cfg.target_period == 0:
        for t, s in zip(ls.target_critic.tensors(), ls.critic.tensors()):
            t.data = s.data.copy()
        for t, s in zip(ls.target_policy.params.tensors(), ls.policy.params.tensors()):
            t.data = s.data.copy()

    return {
        "critic_loss": float(closs_t.data),
        "policy_nll": nll,
        "kl_mu": kl_mu,
        "kl_sigma": kl_sigma,
        "eta": ls.eta,
        "alpha_mu": ls.alpha_mu,
        "alpha_sigma": ls.alpha_sigma,
        "mean_q": float(q_matrix.mean()),
    }


# ---------------------------------------------------------------------------
# learner-state serialization (built on the BOFP tensor container)
# ---------------------------------------------------------------------------

def learner_to_arrays(ls: LearnerState) -> list:
    """Flatten the full learner state into an ordered float64 array list."""
    p = ls.policy.params
    c = ls.critic
    t = ls.target_critic
    header = np.array([
        len(p.tensors()), len(c.tensors()), ls.policy.pixel_grid, ls.updates,
        ls.eta, ls.alpha_mu, ls.alpha_sigma,
        ls.opt_policy.step, ls.opt_critic.step, ls.opt_alpha.step,
        ls.opt_policy.lr, ls.opt_critic.lr, ls.opt_alpha.lr,
    ], dtype=np.float64)
    out = [header]
    out += p.arrays() + ls.target_policy.params.arrays() + c.arrays() + t.arrays()
    out += ls.opt_policy.m + ls.opt_policy.v
    out += ls.opt_critic.m + ls.opt_critic.v
    out += ls.opt_alpha.m + ls.opt_alpha.v
    return out


def learner_from_arrays(arrays: list) -> LearnerState:
    header = arrays[0]
    n_p, n_c, grid, updates = (int(header[i]) for i in range(4))
    eta, alpha_mu, alpha_sigma = (float(header[i]) for i in range(4, 7))
    steps = [int(header[i]) for i in range(7, 10)]
    lrs = [float(header[i]) for i in range(10, 13)]
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
                            [ad.parameter(bias) for bias in bs])

    policy_params = rebuild(take(n_p))
    target_policy_params = rebuild(take(n_p))
    critic = rebuild(take(n_c))
    target = rebuild(take(n_c))
    om, ov = take(n_p), take(n_p)
    cm, cv = take(n_c), take(n_c)
    am, av = take(2), take(2)
    return LearnerState(
        policy=Policy(policy_params, grid),
        target_policy=Policy(target_policy_params, grid),
        critic=critic,
        target_critic=target,
        opt_policy=nn.AdamState(om, ov, steps[0], lrs[0], 0.9, 0.999, 1e-8),
        opt_critic=nn.AdamState(cm, cv, steps[1], lrs[1], 0.9, 0.999, 1e-8),
        opt_alpha=nn.AdamState(am, av, steps[2], lrs[2], 0.9, 0.999, 1e-8),
        eta=eta,
        alpha_mu=alpha_mu,
        alpha_sigma=alpha_sigma,
        updates=updates,
    )


def policy_to_arrays(policy: Policy) -> list:
    return [np.array([float(policy.pixel_grid)])] + policy.params.arrays()


def policy_from_arrays(arrays: list) -> Policy:
    grid = int(arrays[0][0])
    flat = arrays[1:]
    ws, bs = flat[0::2], flat[1::2]
    sizes = tuple([ws[0].shape[0]] + [w.shape[1] for w in ws])
    params = nn.MlpParams(sizes, [ad.parameter(w) for w in ws],
                          [ad.parameter(b) for b in bs])
    return Policy(params, grid)
