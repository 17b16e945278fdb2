"""Centralized critic: joint scoring, TD loss, replay, both body shapes."""
import numpy as np
import pytest

from cfcomm.critic import (DenseCritic, ReplayBuffer, TwinTrunkCritic,
                           critic_loss, encode_joint_actions)
from cfcomm.errors import ConfigError, UsageError
from cfcomm.nn import apply_gradients
from cfcomm.nn.checkpoint import load_checkpoint, save_checkpoint
from cfcomm.nn.gradcheck import check_loss_grads


def small_critic(seed=0):
    return DenseCritic(feat_dim=6, n_agents=2, n_actions=3, hidden=(16, 16),
                       rng=np.random.default_rng(seed))


def fill_buffer(n, rng, feat_dim=6, n_actions=3, reward=None, terminal=False):
    buf = ReplayBuffer(capacity=max(n, 1))
    for i in range(n):
        buf.push(rng.normal(size=feat_dim),
                 rng.integers(0, n_actions, size=2),
                 reward if reward is not None else rng.normal(),
                 rng.normal(size=feat_dim),
                 rng.integers(0, n_actions, size=2),
                 terminal)
    return buf


class TestActionEncoding:
    def test_hand_case(self):
        np.testing.assert_array_equal(
            encode_joint_actions([2, 0], 3), [0, 0, 1, 1, 0, 0])

    def test_batched(self):
        enc = encode_joint_actions([[1, 0], [0, 1]], 2)
        np.testing.assert_array_equal(enc, [[0, 1, 1, 0], [1, 0, 0, 1]])

    def test_one_block_per_agent(self):
        # changing one agent's action touches exactly its own block
        a = encode_joint_actions([1, 2], 4)
        b = encode_joint_actions([3, 2], 4)
        assert (a[:4] != b[:4]).any() and (a[4:] == b[4:]).all()


class TestDenseCritic:
    def test_shapes_and_eval_count(self, rng):
        critic = small_critic()
        feats = rng.normal(size=(7, 6))
        actions = rng.integers(0, 3, size=(7, 2))
        q = critic.q_values(feats, actions)
        assert q.shape == (7,)
        assert critic.eval_count == 7

    def test_embedding_path_matches_direct(self, rng):
        critic = small_critic()
        feats = rng.normal(size=(5, 6))
        actions = rng.integers(0, 3, size=(5, 2))
        emb = critic.state_embedding(feats)
        np.testing.assert_array_equal(emb, feats)
        np.testing.assert_array_equal(
            critic.q_from_embedding(emb, actions), critic.q_values(feats, actions))

    def test_action_sensitivity(self, rng):
        critic = small_critic(seed=3)
        feats = rng.normal(size=(1, 6))
        q0 = critic.q_values(feats, [[0, 0]])
        q1 = critic.q_values(feats, [[1, 0]])
        assert q0[0] != q1[0]

    def test_checkpoint_round_trip(self, tmp_path, rng):
        critic = small_critic(seed=5)
        path = str(tmp_path / "critic.npz")
        save_checkpoint(path, {"critic": critic}, {})
        models, _ = load_checkpoint(path)
        again = models["critic"]
        feats = rng.normal(size=(4, 6))
        actions = rng.integers(0, 3, size=(4, 2))
        np.testing.assert_array_equal(again.q_values(feats, actions),
                                      critic.q_values(feats, actions))


class TestCriticLoss:
    def test_exactly_two_batches_of_evals(self, rng):
        critic = small_critic()
        batch = fill_buffer(10, rng).sample(8, rng)
        before = critic.eval_count
        critic_loss(critic, batch, gamma=0.0, l1=0.0)
        assert critic.eval_count - before == 16

    def test_loss_value_hand_assembled(self, rng):
        critic = small_critic(seed=1)
        batch = fill_buffer(6, rng).sample(6, rng)
        gamma, l1 = 0.5, 1e-3
        q_next = critic.q_values(batch["next_feats"], batch["next_actions"])
        q = critic.q_values(batch["feats"], batch["actions"])
        target = batch["reward"] + gamma * q_next * (~batch["terminal"])
        want = np.mean((target - q) ** 2) + l1 * np.abs(critic.store.theta).sum()
        loss, _ = critic_loss(critic, batch, gamma=gamma, l1=l1)
        assert loss == pytest.approx(want, rel=1e-12)

    def test_terminal_rows_ignore_bootstrap(self, rng):
        critic = small_critic(seed=2)
        batch = fill_buffer(5, rng, terminal=True).sample(5, rng)
        loss_a, _ = critic_loss(critic, batch, gamma=0.0, l1=0.0)
        loss_b, _ = critic_loss(critic, batch, gamma=0.9, l1=0.0)
        assert loss_a == pytest.approx(loss_b, rel=1e-12)

    def test_l1_subgradient_included_in_grads(self, rng):
        critic = small_critic(seed=4)
        batch = fill_buffer(6, rng).sample(6, rng)
        l1 = 0.01
        _, g0 = critic_loss(critic, batch, gamma=0.0, l1=0.0)
        _, g1 = critic_loss(critic, batch, gamma=0.0, l1=l1)
        np.testing.assert_allclose(g1 - g0, l1 * np.sign(critic.store.theta),
                                   atol=1e-12)

    def test_gradients_match_central_differences(self, rng):
        # at gamma = 0 the target is parameter-free, so the held-fixed
        # bootstrap convention and the true gradient coincide exactly
        critic = small_critic(seed=6)
        batch = fill_buffer(8, rng).sample(8, rng)
        err = check_loss_grads(
            lambda: critic_loss(critic, batch, gamma=0.0, l1=1e-3),
            critic.store, sample=60, rng=np.random.default_rng(1))
        assert err < 1e-4

    def test_bootstrap_is_held_fixed(self, rng):
        # the returned gradient must be the gradient of the loss with the
        # TD target frozen at the current parameters: it equals the frozen
        # closure's finite differences, and differs from a probe that lets
        # the bootstrap move
        critic = small_critic(seed=7)
        batch = fill_buffer(8, rng).sample(8, rng)
        gamma, l1 = 0.9, 1e-3
        target0 = batch["reward"] + gamma * critic.q_values(
            batch["next_feats"], batch["next_actions"]) * (~batch["terminal"])
        n = len(target0)

        def frozen_loss():
            q, tape = critic.q_values(batch["feats"], batch["actions"],
                                      with_tape=True)
            residual = target0 - q
            loss = float(np.mean(residual ** 2)) \
                + l1 * float(np.abs(critic.store.theta).sum())
            grads = critic.backward(tape, -2.0 * residual / n)
            return loss, grads + l1 * np.sign(critic.store.theta)

        _, g_real = critic_loss(critic, batch, gamma=gamma, l1=l1)
        np.testing.assert_allclose(frozen_loss()[1], g_real, atol=1e-12)
        err = check_loss_grads(frozen_loss, critic.store, sample=60,
                               rng=np.random.default_rng(2))
        assert err < 1e-4

    def test_regression_to_constant(self, rng):
        # gamma = 0 turns the critic into an immediate-reward regressor
        critic = DenseCritic(feat_dim=4, n_agents=2, n_actions=2,
                             hidden=(16,), rng=np.random.default_rng(8))
        buf = ReplayBuffer(32)
        for _ in range(32):
            buf.push(rng.normal(size=4), rng.integers(0, 2, size=2), 1.5,
                     rng.normal(size=4), rng.integers(0, 2, size=2), False)
        for _ in range(800):
            loss, grads = critic_loss(critic, buf.sample(32, rng), 0.0, 0.0)
            apply_gradients(critic, grads, 0.05)
        batch = buf.sample(32, rng)
        q = critic.q_values(batch["feats"], batch["actions"])
        assert np.abs(q - 1.5).max() < 0.1


class TestTwinTrunkCritic:
    @pytest.fixture
    def twin(self):
        return TwinTrunkCritic(image_side=8, n_agents=2, n_actions=2,
                               trunk_channels=(2, 3), trunk_dense=8,
                               head_hidden=6, rng=np.random.default_rng(9))

    def test_requires_two_agents(self):
        with pytest.raises(ConfigError):
            TwinTrunkCritic(image_side=8, n_agents=3, n_actions=2)

    def test_embedding_path_matches_direct(self, twin, rng):
        feats = rng.normal(size=(4, 2 * 64))
        actions = rng.integers(0, 2, size=(4, 2))
        direct = twin.q_values(feats, actions)
        via_emb = twin.q_from_embedding(twin.state_embedding(feats), actions)
        np.testing.assert_allclose(via_emb, direct, atol=1e-12)

    def test_embedding_sweep_only_runs_head(self, twin, rng):
        feats = rng.normal(size=(3, 2 * 64))
        emb = twin.state_embedding(feats)
        before = twin.eval_count
        twin.q_from_embedding(emb, rng.integers(0, 2, size=(3, 2)))
        assert twin.eval_count - before == 3

    def test_trunk_is_shared_across_images(self, twin, rng):
        # swapping the two images permutes the embedding halves exactly
        img = rng.normal(size=(1, 64))
        other = rng.normal(size=(1, 64))
        ab = twin.state_embedding(np.concatenate([img, other], axis=1))
        ba = twin.state_embedding(np.concatenate([other, img], axis=1))
        np.testing.assert_array_equal(ab[:, :8], ba[:, 8:])
        np.testing.assert_array_equal(ab[:, 8:], ba[:, :8])

    def test_wrong_feature_width_refused(self, twin, rng):
        with pytest.raises(ConfigError):
            twin.q_values(rng.normal(size=(2, 100)), [[0, 0], [1, 1]])

    def test_gradients_match_central_differences(self, twin, rng):
        buf = ReplayBuffer(6)
        for _ in range(6):
            buf.push(rng.normal(size=2 * 64), rng.integers(0, 2, size=2),
                     rng.normal(), rng.normal(size=2 * 64),
                     rng.integers(0, 2, size=2), False)
        batch = buf.sample(6, rng)
        err = check_loss_grads(
            lambda: critic_loss(twin, batch, gamma=0.0, l1=1e-4),
            twin.store, sample=60, rng=np.random.default_rng(3))
        assert err < 1e-4

    def test_checkpoint_round_trip(self, twin, tmp_path, rng):
        path = str(tmp_path / "twin.npz")
        save_checkpoint(path, {"critic": twin}, {})
        models, _ = load_checkpoint(path)
        feats = rng.normal(size=(2, 2 * 64))
        actions = rng.integers(0, 2, size=(2, 2))
        np.testing.assert_array_equal(models["critic"].q_values(feats, actions),
                                      twin.q_values(feats, actions))


class TestReplayBuffer:
    def test_fifo_wraparound(self):
        buf = ReplayBuffer(capacity=3)
        for r in range(5):
            buf.push(np.zeros(2), [0, 0], float(r), np.zeros(2), [0, 0], False)
        assert len(buf) == 3
        rewards = sorted(item[2] for item in buf.items())
        assert rewards == [2.0, 3.0, 4.0]

    def test_sample_fields_and_shapes(self, rng):
        buf = fill_buffer(10, rng)
        batch = buf.sample(4, rng)
        assert set(batch) == set(ReplayBuffer.FIELDS)
        assert batch["feats"].shape == (4, 6)
        assert batch["actions"].shape == (4, 2)
        assert batch["reward"].shape == (4,)
        assert batch["terminal"].dtype == bool

    def test_sample_with_replacement_exceeds_population(self, rng):
        buf = fill_buffer(2, rng)
        assert buf.sample(50, rng)["feats"].shape[0] == 50

    def test_empty_buffer_refuses_sampling(self, rng):
        with pytest.raises(UsageError):
            ReplayBuffer(4).sample(1, rng)

    def test_zero_capacity_refused(self):
        with pytest.raises(ConfigError):
            ReplayBuffer(0)
