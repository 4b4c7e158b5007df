"""Online learner: E-step algebra, temperature dual, losses vs oracles,
tiny-MDP critic convergence, determinism."""

import numpy as np
import pytest

from bof import autodiff as ad
from bof import nn
from bof.actor_critic import (
    ACTION_DIM,
    Policy,
    act,
    critic_init,
    critic_q_np,
    norm_obs,
    policy_init,
    policy_stats_np,
    squash,
)
from bof.errors import ContractError
from bof.mpo import (
    MpoConfig,
    critic_loss,
    estep_kl_to_uniform,
    estep_weights,
    init_learner,
    learner_from_arrays,
    learner_step,
    learner_to_arrays,
    policy_from_arrays,
    policy_to_arrays,
    temperature_dual_gradient,
    temperature_dual_step,
    policy_loss,
)
from bof.replay import ReplayBuffer, Transition


def small_cfg(**kw):
    defaults = dict(hidden=(32, 32), batch_size=32, n_action_samples=8)
    defaults.update(kw)
    return MpoConfig(**defaults)


def random_buffer(rng, n=200, obs_dim=10):
    buf = ReplayBuffer(capacity=100_000)
    for i in range(n):
        buf.append(Transition(
            obs=rng.uniform(0, 699, obs_dim), action=rng.uniform(0, 1, 9),
            reward=float(rng.uniform()), next_obs=rng.uniform(0, 699, obs_dim),
            done=(i % 50 == 49), pixels=rng.uniform(0, 699, (1, 2)),
            next_pixels=rng.uniform(0, 699, (1, 2)), episode=i // 50, step=i % 50,
        ))
    return buf


def zero_critic(obs_dim, bias=0.0):
    """Critic emitting a constant regardless of input."""
    sizes = (obs_dim + ACTION_DIM, 1)
    w = ad.parameter(np.zeros(sizes))
    b = ad.parameter(np.array([bias]))
    return nn.MlpParams(sizes, [w], [b])


class TestEstepWeights:
    def test_equal_q_uniform(self):
        w = estep_weights(np.zeros((5, 8)), eta=0.3)
        np.testing.assert_allclose(w, np.full((5, 8), 1 / 8), rtol=1e-15)

    def test_high_temperature_limit_uniform(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(4, 16))
        w = estep_weights(q, eta=1e9)
        assert np.abs(w - 1 / 16).max() < 1e-6

    def test_two_action_softmax_arithmetic(self):
        w = estep_weights(np.array([[1.0, 0.0]]), eta=1.0)
        e = np.e
        np.testing.assert_allclose(w[0], [e / (e + 1), 1 / (e + 1)], rtol=1e-12)
        np.testing.assert_allclose(w[0], [0.7311, 0.2689], atol=5e-5)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(64, 20)) * 10
        w = estep_weights(q, eta=0.37)
        np.testing.assert_allclose(w.sum(axis=1), np.ones(64), atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        q = rng.normal(size=(8, 12))
        w1 = estep_weights(q, eta=0.5)
        w2 = estep_weights(q + 123.456, eta=0.5)
        np.testing.assert_allclose(w1, w2, atol=1e-12)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(3)
        for eta in (1e-3, 0.1, 1.0, 50.0):
            q = rng.normal(size=(16, 10))
            w = estep_weights(q, eta)
            np.testing.assert_array_equal(np.argmax(w, axis=1), np.argmax(q, axis=1))

    def test_nonpositive_eta_rejected(self):
        with pytest.raises(ContractError):
            estep_weights(np.zeros((2, 2)), eta=0.0)


class TestTemperatureDual:
    def test_equal_q_gradient_is_epsilon(self):
        q = np.full((6, 10), 3.3)
        g = temperature_dual_gradient(q, eta=0.7, eps_eta=0.1)
        assert abs(g - 0.1) < 1e-12
        assert temperature_dual_step(q, 0.7, 0.1, lr=0.01) < 0.7

    def test_converges_to_bisection_oracle(self):
        rng = np.random.default_rng(4)
        q = rng.normal(size=(32, 20)) * 2.0
        eps = 0.1
        # oracle: bisection on the dual gradient (monotone increasing in eta)
        lo, hi = 1e-6, 1e3
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if temperature_dual_gradient(q, mid, eps) < 0:
                lo = mid
            else:
                hi = mid
        eta_star = 0.5 * (lo + hi)
        eta = 1.0
        for _ in range(20_000):
            eta = temperature_dual_step(q, eta, eps, lr=0.01)
        assert abs(estep_kl_to_uniform(q, eta) - eps) < 0.1 * eps
        assert abs(eta - eta_star) / eta_star < 0.1

    def test_floor_respected(self):
        q = np.full((2, 4), 1.0)
        eta = 1e-6
        for _ in range(100):
            eta = temperature_dual_step(q, eta, eps_eta=0.5, lr=10.0)
        assert eta >= 1e-6


class TestCriticLoss:
    def test_terminal_td_contribution(self):
        obs_dim = 6
        rng = np.random.default_rng(0)
        policy = policy_init(obs_dim, (8,), 700, rng)
        critic = zero_critic(obs_dim)
        batch = {
            "obs": np.zeros((1, obs_dim)), "action": np.full((1, 9), 0.5),
            "reward": np.array([1.0]), "next_obs": np.zeros((1, obs_dim)),
            "done": np.array([True]),
        }
        loss, _ = critic_loss(batch, policy, critic, zero_critic(obs_dim), 0.99,
                              np.random.default_rng(1))
        assert abs(loss.item() - 1.0) < 1e-12

    def test_constant_q_fixed_point(self):
        obs_dim = 4
        rng = np.random.default_rng(1)
        policy = policy_init(obs_dim, (8,), 700, rng)
        c, gamma = 4.0, 0.75
        critic = zero_critic(obs_dim, bias=c)
        target = zero_critic(obs_dim, bias=c)
        batch = {
            "obs": rng.uniform(0, 699, (16, obs_dim)),
            "action": rng.uniform(0, 1, (16, 9)),
            "reward": np.full(16, (1 - gamma) * c),
            "next_obs": rng.uniform(0, 699, (16, obs_dim)),
            "done": np.zeros(16, dtype=bool),
        }
        loss, _ = critic_loss(batch, policy, critic, target, gamma,
                              np.random.default_rng(2))
        assert abs(loss.item()) < 1e-24

    def test_matches_scripted_td_oracle(self):
        obs_dim = 8
        rng = np.random.default_rng(2)
        policy = policy_init(obs_dim, (16, 16), 700, rng)
        critic = critic_init(obs_dim, (16, 16), rng)
        target = critic_init(obs_dim, (16, 16), rng)
        batch = {
            "obs": rng.uniform(0, 699, (32, obs_dim)),
            "action": rng.uniform(0, 1, (32, 9)),
            "reward": rng.uniform(0, 1, 32),
            "next_obs": rng.uniform(0, 699, (32, obs_dim)),
            "done": rng.random(32) < 0.1,
        }
        loss, _ = critic_loss(batch, policy, critic, target, 0.9,
                              np.random.default_rng(77))
        # oracle replays the same draw order outside the graph
        r2 = np.random.default_rng(77)
        nobs_n = norm_obs(batch["next_obs"], 700)
        mu, ls = policy_stats_np(policy, nobs_n)
        z = mu + np.exp(ls) * r2.standard_normal(mu.shape)
        qn = critic_q_np(target, nobs_n, squash(z))
        tgt = batch["reward"] + 0.9 * (1 - batch["done"]) * qn
        qp = critic_q_np(critic, norm_obs(batch["obs"], 700), batch["action"])
        want = float(np.mean((qp - tgt) ** 2))
        assert abs(loss.item() - want) < 1e-10

    def test_empty_batch_rejected(self):
        obs_dim = 4
        policy = policy_init(obs_dim, (8,), 700, np.random.default_rng(0))
        critic = zero_critic(obs_dim)
        batch = {"obs": np.zeros((0, obs_dim)), "action": np.zeros((0, 9)),
                 "reward": np.zeros(0), "next_obs": np.zeros((0, obs_dim)),
                 "done": np.zeros(0, dtype=bool)}
        with pytest.raises(ContractError):
            critic_loss(batch, policy, critic, critic, 0.99, np.random.default_rng(0))


class TestPolicyLoss:
    def _setup(self, b=8, n=6, obs_dim=5, seed=0):
        rng = np.random.default_rng(seed)
        policy = policy_init(obs_dim, (16,), 700, rng)
        obs_n = rng.normal(size=(b, obs_dim)) * 0.5
        mu_old, ls_old = policy_stats_np(policy, obs_n)
        z = mu_old[:, None, :] + np.exp(ls_old)[:, None, :] * rng.standard_normal(
            (b, n, ACTION_DIM))
        return policy, obs_n, mu_old, ls_old, z

    def test_zero_kl_at_old_params(self):
        policy, obs_n, mu_old, ls_old, z = self._setup()
        w = np.full(z.shape[:2], 1 / z.shape[1])
        _, kl_mu, kl_sigma, _ = policy_loss(obs_n, z, w, policy, mu_old, ls_old,
                                            1.0, 1.0)
        assert kl_mu == 0.0 and kl_sigma == 0.0

    def test_one_hot_weights_is_behavior_cloning(self):
        policy, obs_n, mu_old, ls_old, z = self._setup()
        b, n, _ = z.shape
        w = np.zeros((b, n))
        w[:, 2] = 1.0
        loss, _, _, nll = policy_loss(obs_n, z, w, policy, mu_old, ls_old, 0.0, 0.0)
        # oracle: plain mean NLL of the selected actions
        d = (z[:, 2, :] - mu_old) * np.exp(-ls_old)
        logp = -0.5 * np.sum(d * d + 2 * ls_old + np.log(2 * np.pi), axis=1)
        assert abs(nll - (-logp.mean())) < 1e-12
        assert abs(loss.item() - nll) < 1e-15

    def test_uniform_weights_gradient_matches_mle_oracle(self):
        policy, obs_n, mu_old, ls_old, z = self._setup(b=6, n=5)
        b, n, _ = z.shape
        w = np.full((b, n), 1.0 / n)
        tensors = policy.params.tensors()

        def loss_fn():
            out, _, _, _ = policy_loss(obs_n, z, w, policy, mu_old, ls_old, 0.0, 0.0)
            return out

        got = ad.grad(loss_fn, tensors)

        # oracle: independent MLE graph over the flattened sample set
        z_flat = z.reshape(b * n, ACTION_DIM)
        obs_rep = np.repeat(obs_n, n, axis=0)

        def mle():
            out = nn.mlp_forward(policy.params, ad.constant(obs_rep))
            mu = ad.slice_cols(out, 0, ACTION_DIM)
            from bof.actor_critic import _LS_CENTER, _LS_HALF
            ls = ad.add(ad.mul(ad.tanh(ad.slice_cols(out, ACTION_DIM, 2 * ACTION_DIM)),
                               _LS_HALF), _LS_CENTER)
            dd = ad.sub(ad.constant(z_flat), mu)
            quad = ad.mul(ad.square(dd), ad.exp(ad.mul(ls, -2.0)))
            per = ad.add(ad.add(quad, ad.mul(ls, 2.0)), float(np.log(2 * np.pi)))
            logp = ad.mul(ad.tsum(per, axis=1), -0.5)
            return ad.neg(ad.div(ad.tsum(logp), float(b * n)))

        want = ad.grad(mle, tensors)
        for g1, g2 in zip(got, want):
            np.testing.assert_allclose(g1, g2 / n * n, atol=1e-8)

    def test_weight_shape_mismatch_rejected(self):
        policy, obs_n, mu_old, ls_old, z = self._setup()
        with pytest.raises(ContractError):
            policy_loss(obs_n, z, np.ones((2, 2)), policy, mu_old, ls_old, 1.0, 1.0)

    def test_first_term_decreases_over_50_steps(self):
        rng = np.random.default_rng(42)
        policy, obs_n, mu_old, ls_old, z = self._setup(b=16, n=8, seed=42)
        q = rng.normal(size=z.shape[:2])
        w = estep_weights(q, eta=0.5)
        opt = nn.AdamState.init(policy.params.arrays(), lr=3e-4)
        tensors = policy.params.tensors()
        nlls = []
        for _ in range(50):
            def loss_fn():
                out, _, _, _ = policy_loss(obs_n, z, w, policy, mu_old, ls_old,
                                           1.0, 1.0)
                return out
            for p in tensors:
                p.grad = None
            lt, _, _, nll = policy_loss(obs_n, z, w, policy, mu_old, ls_old, 1.0, 1.0)
            lt.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in tensors]
            arrays, opt = nn.adam_step([p.data for p in tensors], grads, opt)
            for p, a in zip(tensors, arrays):
                p.data = a
            nlls.append(nll)
        assert nlls[-1] < nlls[0]


class TestLearnerStep:
    def test_deterministic_given_state_and_seed(self):
        rng = np.random.default_rng(0)
        cfg = small_cfg()
        buf = random_buffer(rng)
        ls1 = init_learner(10, cfg, 700, seed=5)
        ls2 = learner_from_arrays(learner_to_arrays(ls1))
        s1 = learner_step(ls1, buf, cfg, np.random.default_rng(9))
        s2 = learner_step(ls2, buf, cfg, np.random.default_rng(9))
        assert s1 == s2
        for a, b in zip(ls1.policy.params.arrays(), ls2.policy.params.arrays()):
            assert np.array_equal(a, b)
        for a, b in zip(ls1.critic.arrays(), ls2.critic.arrays()):
            assert np.array_equal(a, b)

    def test_target_updates_only_at_period(self):
        rng = np.random.default_rng(1)
        cfg = small_cfg(target_period=5)
        buf = random_buffer(rng)
        ls = init_learner(10, cfg, 700, seed=3)
        snap = [a.copy() for a in ls.target_critic.arrays()]
        for k in range(1, 11):
            learner_step(ls, buf, cfg, np.random.default_rng(100 + k))
            same = all(np.array_equal(a, b)
                       for a, b in zip(snap, ls.target_critic.arrays()))
            if k % 5 == 0:
                assert not same
                snap = [a.copy() for a in ls.target_critic.arrays()]
            else:
                assert same

    def test_eta_positive_and_counter_increments(self):
        rng = np.random.default_rng(2)
        cfg = small_cfg()
        buf = random_buffer(rng)
        ls = init_learner(10, cfg, 700, seed=4)
        for k in range(10):
            learner_step(ls, buf, cfg, np.random.default_rng(k))
        assert ls.updates == 10
        assert ls.eta > 0

    def test_critic_converges_on_tiny_mdp(self):
        """Two states, two actions, uniform bootstrap policy: the critic
        should reach the policy-evaluation fixed point of a value-iteration
        oracle."""
        obs = np.array([[0.0] * 4, [600.0] * 4])
        acts = np.array([np.zeros(9), np.ones(9)])
        trans = [(0, 0, 1, 0.2), (0, 1, 0, 0.8), (1, 0, 0, 0.1), (1, 1, 1, 1.0)]
        gamma = 0.9
        q_star = np.zeros((2, 2))
        for _ in range(3000):
            v = q_star.mean(axis=1)
            q_star = np.array([r + gamma * v[sp] for (_, _, sp, r) in trans]).reshape(2, 2)

        rng = np.random.default_rng(0)
        critic = critic_init(4, (32, 32), rng)
        target = nn.MlpParams(critic.sizes,
                              [ad.parameter(w.data.copy()) for w in critic.weights],
                              [ad.parameter(b.data.copy()) for b in critic.biases])
        opt = nn.AdamState.init(critic.arrays(), lr=1e-2)
        obs_n = norm_obs(np.array([obs[s] for (s, _, _, _) in trans]), 700)
        act_b = np.array([acts[a] for (_, a, _, _) in trans])
        rew = np.array([r for (_, _, _, r) in trans])
        nobs_n = norm_obs(np.array([obs[sp] for (_, _, sp, _) in trans]), 700)
        for k in range(10_000):
            qn = 0.5 * (critic_q_np(target, nobs_n, np.tile(acts[0], (4, 1))) +
                        critic_q_np(target, nobs_n, np.tile(acts[1], (4, 1))))
            tgt = rew + gamma * qn
            ts = critic.tensors()

            def loss():
                q = nn.mlp_forward(critic, ad.constant(
                    np.concatenate([obs_n, 2 * act_b - 1], axis=1)))
                q = ad.reshape(q, (4,))
                return ad.tmean(ad.square(ad.sub(q, ad.constant(tgt))))

            _, grads = ad.value_and_grad(loss, ts)
            arrays, opt = nn.adam_step([t.data for t in ts], grads, opt)
            for t, a in zip(ts, arrays):
                t.data = a
            if k % 50 == 0:
                for t, s in zip(target.tensors(), critic.tensors()):
                    t.data = s.data.copy()
        got = np.array([critic_q_np(critic, obs_n[i:i + 1], act_b[i:i + 1])[0]
                        for i in range(4)]).reshape(2, 2)
        assert np.abs(got - q_star).max() < 1e-3


class TestAct:
    def test_mean_mode_deterministic(self):
        policy = policy_init(6, (8,), 700, np.random.default_rng(0))
        obs = np.random.default_rng(1).uniform(0, 699, 6)
        a = act(policy, obs, "mean")
        b = act(policy, obs, "mean")
        np.testing.assert_array_equal(a, b)

    def test_zero_network_gives_half_open(self):
        params = nn.MlpParams(
            (6, 2 * ACTION_DIM),
            [ad.parameter(np.zeros((6, 2 * ACTION_DIM)))],
            [ad.parameter(np.zeros(2 * ACTION_DIM))],
        )
        policy = Policy(params, 700)
        a = act(policy, np.full(6, 100.0), "mean")
        np.testing.assert_allclose(a, np.full(9, 0.5), atol=1e-15)

    def test_samples_stay_in_unit_cube(self):
        policy = policy_init(6, (8,), 700, np.random.default_rng(2))
        rng = np.random.default_rng(3)
        obs_n = norm_obs(rng.uniform(0, 699, (100_000, 6)), 700)
        mu, ls = policy_stats_np(policy, obs_n)
        z = mu + np.exp(ls) * rng.standard_normal(mu.shape)
        a = squash(z)
        assert np.all(a > 0) and np.all(a < 1)

    def test_sample_mode_needs_rng(self):
        policy = policy_init(6, (8,), 700, np.random.default_rng(4))
        with pytest.raises(ContractError):
            act(policy, np.zeros(6), "sample")

    def test_unknown_mode_rejected(self):
        policy = policy_init(6, (8,), 700, np.random.default_rng(5))
        with pytest.raises(ContractError):
            act(policy, np.zeros(6), "argmax", np.random.default_rng(0))


class TestPolicyCheckpoint:
    def test_round_trip(self):
        policy = policy_init(12, (16, 16), 700, np.random.default_rng(0))
        back = policy_from_arrays(policy_to_arrays(policy))
        assert back.pixel_grid == 700
        assert back.params.sizes == policy.params.sizes
        for a, b in zip(policy.params.arrays(), back.params.arrays()):
            assert np.array_equal(a, b)
