"""Shared policy/critic machinery for the online and offline learners.

The policy is an MLP emitting a diagonal Gaussian over pre-squash action
space; a per-dimension logistic map squashes samples onto (0, 1), the valve
range.  The critic is an MLP over (normalized observation, normalized
action).  Pixel observations are mapped to roughly [-1, 1] before entering
either network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ContractError

ACTION_DIM = 9
_LN_2PI = float(np.log(2.0 * np.pi))

# log_std head range matches the DiagGaussian clamp
_LS_CENTER = 0.5 * (nn.LOG_STD_MIN + nn.LOG_STD_MAX)
_LS_HALF = 0.5 * (nn.LOG_STD_MAX - nn.LOG_STD_MIN)


def norm_obs(obs: np.ndarray, pixel_grid: int) -> np.ndarray:
    """Pixel-valued observation -> network input in about [-1, 1]."""
    return np.asarray(obs, dtype=np.float64) * (2.0 / pixel_grid) - 1.0


def norm_action(a: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(a, dtype=np.float64) - 1.0


@dataclass
class Policy:
    """Policy network plus the observation scaling baked into checkpoints."""

    params: nn.MlpParams
    pixel_grid: int

    @property
    def obs_dim(self) -> int:
        return self.params.sizes[0]


def policy_init(obs_dim: int, hidden, pixel_grid: int, rng: np.random.Generator,
                init_log_std: float = -0.5, init_action: float = 0.25) -> Policy:
    sizes = (obs_dim, *hidden, 2 * ACTION_DIM)
    params = nn.mlp_init(sizes, rng, out_scale=0.01)
    # bias the heads: valves start mostly closed (the supply coupling makes
    # wide-open everything useless) with exploration stddev init_log_std
    params.biases[-1].data[:ACTION_DIM] = float(np.log(init_action / (1.0 - init_action)))
    raw = float(np.arctanh((init_log_std - _LS_CENTER) / _LS_HALF))
    params.biases[-1].data[ACTION_DIM:] = raw
    return Policy(params=params, pixel_grid=pixel_grid)


def policy_stats_np(policy: Policy, obs_n: np.ndarray):
    """(mean, log_std) of the pre-squash Gaussian; no graph."""
    out = nn.mlp_forward_np(policy.params, obs_n)
    mu = out[..., :ACTION_DIM].copy()  # detach from the reused buffer
    log_std = _LS_CENTER + _LS_HALF * np.tanh(out[..., ACTION_DIM:])
    return mu, log_std


def policy_stats_graph(policy: Policy, obs_n: np.ndarray):
    """(mean, log_std) Tensors for loss building."""
    out = nn.mlp_forward(policy.params, ad.constant(obs_n))
    mu = ad.slice_cols(out, 0, ACTION_DIM)
    log_std = ad.add(ad.mul(ad.tanh(ad.slice_cols(out, ACTION_DIM, 2 * ACTION_DIM)),
                            _LS_HALF), _LS_CENTER)
    return mu, log_std


def squash(z: np.ndarray) -> np.ndarray:
    return ad._sigmoid_np(z)


def act(policy: Policy, observation: np.ndarray, mode: str = "sample",
        rng: np.random.Generator | None = None) -> np.ndarray:
    """Action in [0,1]^9; 'sample' draws from the squashed Gaussian, 'mean'
    squashes the mean (evaluation)."""
    obs_n = norm_obs(observation, policy.pixel_grid)
    mu, log_std = policy_stats_np(policy, obs_n)
    if mode == "mean":
        return squash(mu)
    if mode != "sample":
        raise ContractError(f"act mode must be 'sample' or 'mean', got {mode!r}")
    if rng is None:
        raise ContractError("sample mode requires an rng")
    z = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    return squash(z)


def sample_presquash(policy: Policy, obs_n: np.ndarray, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """n pre-squash action samples per row of obs_n; shape (B, n, 9)."""
    mu, log_std = policy_stats_np(policy, obs_n)
    eps = rng.standard_normal((obs_n.shape[0], n, ACTION_DIM))
    return mu[:, None, :] + np.exp(log_std)[:, None, :] * eps


def gaussian_logp_np(mu: np.ndarray, log_std: np.ndarray, z: np.ndarray) -> np.ndarray:
    d = (z - mu) * np.exp(-log_std)
    return -0.5 * np.sum(d * d + 2.0 * log_std + _LN_2PI, axis=-1)


def weighted_logp_graph(mu: Tensor, log_std: Tensor, z_flat: np.ndarray,
                        w_flat: np.ndarray, n_per_state: int) -> Tensor:
    """mean over states of sum_j w_j * log N(z_j | mu(s), sigma(s)).

    z_flat/w_flat are (B*n, 9)/(B*n,) constants grouped state-major.
    """
    b = mu.data.shape[0]
    mu_rep = ad.repeat_rows(mu, n_per_state)
    ls_rep = ad.repeat_rows(log_std, n_per_state)
    diff = ad.sub(ad.constant(z_flat), mu_rep)
    quad = ad.mul(ad.square(diff), ad.exp(ad.mul(ls_rep, -2.0)))
    per_dim = ad.add(ad.add(quad, ad.mul(ls_rep, 2.0)), _LN_2PI)
    logp = ad.mul(ad.tsum(per_dim, axis=1), -0.5)  # (B*n,)
    return ad.div(ad.tsum(ad.mul(logp, ad.constant(w_flat))), float(b))


def kl_terms_graph(mu: Tensor, log_std: Tensor, mu_old: np.ndarray,
                   log_std_old: np.ndarray):
    """Decoupled mean/covariance KL(old || new), averaged over the batch."""
    inv_2var_old = 0.5 * np.exp(-2.0 * log_std_old)
    kl_mu = ad.tmean(ad.tsum(ad.mul(ad.square(ad.sub(mu, ad.constant(mu_old))),
                                    ad.constant(inv_2var_old)), axis=1))
    ratio = ad.exp(ad.mul(ad.sub(ad.constant(log_std_old), log_std), 2.0))
    per_dim = ad.sub(ad.add(ad.sub(log_std, ad.constant(log_std_old)),
                            ad.mul(ratio, 0.5)), 0.5)
    kl_sigma = ad.tmean(ad.tsum(per_dim, axis=1))
    return kl_mu, kl_sigma


# ---------------------------------------------------------------------------
# critic
# ---------------------------------------------------------------------------

def critic_init(obs_dim: int, hidden, rng: np.random.Generator) -> nn.MlpParams:
    return nn.mlp_init((obs_dim + ACTION_DIM, *hidden, 1), rng)


def critic_input(obs_n: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([obs_n, norm_action(actions)], axis=-1)


def critic_q_np(critic: nn.MlpParams, obs_n: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return nn.mlp_forward_np(critic, critic_input(obs_n, actions))[..., 0].copy()


def critic_q_graph(critic: nn.MlpParams, obs_n: np.ndarray, actions: np.ndarray) -> Tensor:
    out = nn.mlp_forward(critic, ad.constant(critic_input(obs_n, actions)))
    return ad.reshape(out, (out.data.shape[0],))


def td_targets(rewards: np.ndarray, dones: np.ndarray, q_next: np.ndarray,
               gamma: float) -> np.ndarray:
    """r + gamma * (1 - done) * Q'(s', a'); plain numpy, never in the graph."""
    return rewards + gamma * (1.0 - dones.astype(np.float64)) * q_next


def clone_params(params: nn.MlpParams) -> nn.MlpParams:
    return nn.MlpParams(
        params.sizes,
        [ad.parameter(w.data.copy()) for w in params.weights],
        [ad.parameter(b.data.copy()) for b in params.biases],
    )
