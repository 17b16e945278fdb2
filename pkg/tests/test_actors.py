"""Actor policies: heads, staged trunk evaluation, both loss functions."""
import numpy as np
import pytest

from cfcomm.actors import (ActorNetwork, avg_pairwise_kl,
                           avg_pairwise_kl_from_probs, build_digit_actor,
                           build_particle_actor, message_conditioned_probs,
                           policy_gradient_loss, social_loss)
from cfcomm.comm import Channel
from cfcomm.errors import ConfigError, TrainingFault, UsageError
from cfcomm.nn import apply_gradients
from cfcomm.nn.checkpoint import load_checkpoint, save_checkpoint
from cfcomm.nn.gradcheck import check_loss_grads
from cfcomm.nn.layers import Dense, Relu, Softmax
from cfcomm.probs import one_hot


def tiny_digit_actor(shared, seed=0):
    return build_digit_actor(Channel(2, 1), np.random.default_rng(seed),
                             shared_trunk=shared, image_side=10, head_hidden=8)


def deafen(actor):
    """Zero the action head's inbox weights so messages cannot matter."""
    first_dense_w = actor.store.params_for("action_head")[0][0]
    first_dense_w[actor.feat_dim:, :] = 0.0
    actor.store.bump()
    return actor


@pytest.fixture
def channel():
    return Channel(2, 2)


@pytest.fixture
def actor(channel):
    return build_particle_actor(channel, np.random.default_rng(3))


@pytest.fixture
def obs(rng):
    return rng.normal(size=(6, 13))


class TestBuilders:
    def test_particle_shape(self, actor, channel):
        assert actor.trunk == []
        assert actor.feat_dim == actor.obs_dim == 13
        assert actor.n_actions == 5
        assert actor.n_messages == channel.n_messages == 4
        assert isinstance(actor.action_head[-1], Softmax)
        assert isinstance(actor.comm_head[-1], Softmax)

    def test_particle_paths_disjoint_and_complete(self, actor):
        a = actor.path_mask("action")
        c = actor.path_mask("comm")
        assert not (a & c).any()
        assert (a | c).all()

    def test_digit_shared_trunk_in_both_paths(self):
        actor = tiny_digit_actor(shared=True)
        a, c = actor.path_mask("action"), actor.path_mask("comm")
        trunk = np.zeros(actor.store.size, dtype=bool)
        trunk[actor.store.group_slice("trunk")] = True
        np.testing.assert_array_equal(a & c, trunk)

    def test_digit_separate_trunks_disjoint(self):
        actor = tiny_digit_actor(shared=False)
        a, c = actor.path_mask("action"), actor.path_mask("comm")
        assert not (a & c).any()
        # same architecture, independently initialised parameters
        at = actor.store.theta[actor.store.group_slice("action_trunk")]
        ct = actor.store.theta[actor.store.group_slice("comm_trunk")]
        assert at.shape == ct.shape and not np.array_equal(at, ct)

    def test_shared_comm_head_is_deeper(self):
        shared = tiny_digit_actor(shared=True)
        separate = tiny_digit_actor(shared=False)
        assert len(shared.comm_head) == len(separate.comm_head) + 2

    def test_heads_must_end_in_softmax(self, channel, rng):
        with pytest.raises(ConfigError, match="softmax"):
            ActorNetwork(4, channel.inbox_dim, 3, channel.n_messages, [],
                         [Dense(4 + channel.inbox_dim, 3)],
                         [Dense(4, 4), Softmax()], False, rng)

    def test_checkpoint_round_trip(self, actor, tmp_path, rng, channel):
        path = str(tmp_path / "actor.npz")
        save_checkpoint(path, {"actor": actor}, {})
        models, _ = load_checkpoint(path)
        again = models["actor"]
        o = rng.normal(size=(3, 13))
        enc = one_hot(np.array([1, 0, 3]), 4)
        np.testing.assert_array_equal(again.action_probs(o, enc),
                                      actor.action_probs(o, enc))
        np.testing.assert_array_equal(again.comm_probs(o), actor.comm_probs(o))


class TestForward:
    def test_prob_rows_normalised(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        p = actor.action_probs(obs, enc)
        assert p.shape == (6, 5)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        q = actor.comm_probs(obs)
        assert q.shape == (6, 4)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)

    def test_wrong_widths_refused(self, actor, rng):
        with pytest.raises(ConfigError):
            actor.action_probs(rng.normal(size=(2, 10)), one_hot([0, 1], 4))
        with pytest.raises(ConfigError):
            actor.action_probs(rng.normal(size=(2, 13)), one_hot([0, 1], 3))
        with pytest.raises(ConfigError):
            actor.comm_probs(rng.normal(size=(2, 9)))

    def test_act_greedy_is_argmax(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        probs = actor.action_probs(obs, enc)
        np.testing.assert_array_equal(
            actor.act(obs, enc, rng, greedy=True), np.argmax(probs, axis=1))

    def test_non_finite_parameters_fault(self, actor, obs, rng):
        actor.store.theta[0] = np.nan      # lands in the action head
        actor.store.bump()
        enc = one_hot(np.zeros(6, dtype=np.int64), 4)
        with np.errstate(invalid="ignore"), pytest.raises(TrainingFault):
            actor.act(obs, enc, rng)
        comm_w = actor.store.params_for("comm_head")[0][0]
        comm_w[0, 0] = np.inf
        actor.store.bump()
        with np.errstate(invalid="ignore"), pytest.raises(TrainingFault):
            actor.communicate(obs, rng)

    def test_eval_counters(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        a0, c0 = actor.action_evals, actor.comm_evals
        actor.action_probs(obs, enc)
        actor.comm_probs(obs)
        assert actor.action_evals - a0 == 6
        assert actor.comm_evals - c0 == 6


class TestStagedEvaluation:
    def test_matches_direct_forward(self, actor, obs, channel):
        probs_k = message_conditioned_probs(actor, obs, channel)
        for m in range(channel.n_messages):
            enc = np.tile(one_hot(np.full(6, m), channel.n_messages), (1, 1))
            np.testing.assert_array_equal(
                probs_k[m], actor.action_probs(obs, enc))

    def test_digit_trunk_runs_once(self):
        actor = tiny_digit_actor(shared=True)
        rng = np.random.default_rng(1)
        o = rng.random((4, 100))
        ch = Channel(2, 1)
        before = actor.action_evals
        message_conditioned_probs(actor, o, ch)
        # the head ran once per symbol; a trunk re-run would not change the
        # counter, so check exactness against the direct path instead
        assert actor.action_evals - before == 2 * 4
        probs_k = message_conditioned_probs(actor, o, ch)
        for m in range(2):
            enc = one_hot(np.full(4, m), 2)
            np.testing.assert_allclose(probs_k[m], actor.action_probs(o, enc),
                                       atol=1e-14)

    def test_head_tape_markers_enforced(self, actor, obs, channel):
        feats, trunk_tape = actor.action_features(obs, with_tape=True)
        p, head_tape = actor.action_probs_from_features(
            feats, one_hot(np.zeros(6, dtype=np.int64), 4), with_tape=True)
        with pytest.raises(UsageError):
            actor.action_trunk_backward(head_tape, np.zeros_like(feats))
        with pytest.raises(UsageError):
            actor.action_head_backward(trunk_tape, np.zeros_like(p))

    def test_tapes_are_single_use(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        probs, tape = actor.action_probs(obs, enc, with_tape=True)
        actor.backward(tape, np.zeros_like(probs))
        with pytest.raises(UsageError):
            actor.backward(tape, np.zeros_like(probs))

    def test_stale_tape_refused(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        probs, tape = actor.action_probs(obs, enc, with_tape=True)
        apply_gradients(actor, np.zeros(actor.store.size), 0.1)
        with pytest.raises(UsageError):
            actor.backward(tape, np.zeros_like(probs))


class TestPolicyGradientLoss:
    def test_zero_advantages_zero_gradient(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        chosen = rng.integers(0, 5, size=6)
        loss, grads, stats = policy_gradient_loss(
            actor, "action", obs, enc, chosen, np.zeros(6),
            entropy_beta=0.0, reg=0.0)
        assert loss == 0.0
        assert not grads.any()
        assert stats["pg"] == 0.0

    def test_loss_value_hand_assembled(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        chosen = rng.integers(0, 5, size=6)
        adv = rng.normal(size=6)
        probs = actor.action_probs(obs, enc)
        p_chosen = probs[np.arange(6), chosen]
        ent = -np.sum(probs * np.log(probs), axis=1)
        beta, reg = 0.01, 0.001
        mask = actor.path_mask("action")
        want = np.sum(-np.log(p_chosen) * adv) - beta * np.sum(ent) \
            + 0.5 * reg * np.sum(actor.store.theta[mask] ** 2)
        loss, _, _ = policy_gradient_loss(actor, "action", obs, enc, chosen,
                                          adv, entropy_beta=beta, reg=reg)
        assert loss == pytest.approx(want, rel=1e-12)

    def test_ascent_increases_chosen_probability(self, actor, obs):
        enc = one_hot(np.zeros(6, dtype=np.int64), 4)
        chosen = np.full(6, 2)
        before = actor.action_probs(obs, enc)[np.arange(6), chosen]
        _, grads, _ = policy_gradient_loss(actor, "action", obs, enc, chosen,
                                           np.ones(6), entropy_beta=0.0, reg=0.0)
        apply_gradients(actor, grads, 0.5)
        after = actor.action_probs(obs, enc)[np.arange(6), chosen]
        assert (after > before).all()

    def test_l2_confined_to_trained_path(self, actor, obs, rng):
        chosen = rng.integers(0, 4, size=6)
        adv = rng.normal(size=6)
        reg = 0.01
        _, g0, _ = policy_gradient_loss(actor, "comm", obs, None, chosen, adv,
                                        entropy_beta=0.0, reg=0.0)
        _, g1, _ = policy_gradient_loss(actor, "comm", obs, None, chosen, adv,
                                        entropy_beta=0.0, reg=reg)
        mask = actor.path_mask("comm")
        np.testing.assert_allclose((g1 - g0)[mask],
                                   reg * actor.store.theta[mask], atol=1e-15)
        assert not (g1 - g0)[~mask].any()

    def test_comm_path_never_touches_action_parameters(self, actor, obs, rng):
        chosen = rng.integers(0, 4, size=6)
        _, grads, _ = policy_gradient_loss(actor, "comm", obs, None, chosen,
                                           rng.normal(size=6),
                                           entropy_beta=0.01, reg=0.01)
        assert not grads[actor.path_mask("action")].any()

    def test_input_validation(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        with pytest.raises(UsageError, match="path"):
            policy_gradient_loss(actor, "sideways", obs, enc,
                                 np.zeros(6, np.int64), np.zeros(6), 0.0, 0.0)
        with pytest.raises(UsageError, match="match"):
            policy_gradient_loss(actor, "action", obs, enc,
                                 np.zeros(4, np.int64), np.zeros(6), 0.0, 0.0)
        with pytest.raises(UsageError, match="outside"):
            policy_gradient_loss(actor, "action", obs, enc,
                                 np.full(6, 9), np.zeros(6), 0.0, 0.0)

    def test_gradients_match_central_differences(self, actor, obs, rng):
        enc = one_hot(rng.integers(0, 4, size=6), 4)
        chosen = rng.integers(0, 5, size=6)
        adv = rng.normal(size=6)
        err = check_loss_grads(
            lambda: policy_gradient_loss(actor, "action", obs, enc, chosen,
                                         adv, entropy_beta=0.01, reg=1e-3)[:2],
            actor.store, sample=80, rng=np.random.default_rng(5))
        assert err < 1e-4


class TestSocialAlgebra:
    def test_hand_case_two_symbols(self):
        probs_k = np.array([[[0.9, 0.1]], [[0.1, 0.9]]])
        kl = avg_pairwise_kl_from_probs(probs_k)
        assert abs(kl[0] - 0.8 * np.log(9.0)) <= 1e-9

    def test_single_symbol_refused(self):
        with pytest.raises(UsageError):
            avg_pairwise_kl_from_probs(np.array([[[0.5, 0.5]]]))

    def test_deaf_listener_exact_loss_no_gradient(self, channel, obs):
        # inbox-blind action head: all conditioned distributions identical,
        # so the per-sample hinge sits exactly at eta * target while the
        # pairwise-KL gradient vanishes (equal distributions are a saddle)
        actor = deafen(build_particle_actor(channel, np.random.default_rng(7)))
        eta, target = 0.05, 7.0
        loss, grads, stat = social_loss(actor, obs, channel, eta=eta,
                                        kl_target=target, mode="per_sample")
        assert loss == eta * target
        assert stat == 0.0
        assert not grads.any()

    def test_satisfied_hinge_exactly_zero(self, actor, obs, channel):
        kl_now = avg_pairwise_kl(actor, obs, channel)
        for mode, target in (("per_sample", float(kl_now.min())),
                             ("batch_sum", float(kl_now.sum()) * 0.5)):
            loss, grads, stat = social_loss(actor, obs, channel, eta=0.1,
                                            kl_target=target, mode=mode)
            assert loss == 0.0
            assert not grads.any()

    def test_batch_sum_weight_is_per_sample_times_n(self, actor, obs, channel):
        # with every row active, the only difference between the two modes is
        # the 1/n of the mean, so the gradients differ by exactly that factor
        n = obs.shape[0]
        _, g_ps, _ = social_loss(actor, obs, channel, eta=0.1,
                                 kl_target=1e6, mode="per_sample")
        _, g_bs, _ = social_loss(actor, obs, channel, eta=0.1,
                                 kl_target=1e6, mode="batch_sum")
        np.testing.assert_allclose(g_bs, n * g_ps, rtol=1e-12, atol=1e-18)

    def test_social_gradient_confined_to_action_path(self, actor, obs, channel):
        _, grads, _ = social_loss(actor, obs, channel, eta=0.1,
                                  kl_target=100.0, mode="per_sample")
        assert grads[actor.path_mask("action")].any()
        assert not grads[~actor.path_mask("action")].any()

    def test_unknown_mode_refused(self, actor, obs, channel):
        with pytest.raises(ConfigError):
            social_loss(actor, obs, channel, 0.1, 1.0, mode="sideways")

    def test_gradient_raises_divergence(self, channel, obs):
        actor = build_particle_actor(channel, np.random.default_rng(11))
        before = float(avg_pairwise_kl(actor, obs, channel).sum())
        for _ in range(20):
            _, grads, _ = social_loss(actor, obs, channel, eta=1e-3,
                                      kl_target=1e9, mode="batch_sum")
            apply_gradients(actor, grads, 1.0)
        after = float(avg_pairwise_kl(actor, obs, channel).sum())
        assert after > before

    @pytest.mark.parametrize("mode", ["per_sample", "batch_sum"])
    def test_gradients_match_central_differences(self, actor, obs, channel,
                                                 mode):
        err = check_loss_grads(
            lambda: social_loss(actor, obs, channel, eta=0.1,
                                kl_target=50.0, mode=mode)[:2],
            actor.store, sample=80, rng=np.random.default_rng(6))
        assert err < 1e-4

    def test_mixed_active_rows_gradcheck(self, actor, obs, channel):
        # a target strictly between the smallest and largest per-row
        # divergence leaves some rows active and others clamped
        kl_now = avg_pairwise_kl(actor, obs, channel)
        assert kl_now.min() < kl_now.max()
        target = float((kl_now.min() + kl_now.max()) / 2)
        err = check_loss_grads(
            lambda: social_loss(actor, obs, channel, eta=0.1,
                                kl_target=target, mode="per_sample")[:2],
            actor.store, sample=80, rng=np.random.default_rng(8))
        assert err < 1e-4


class TestCompositeActorLoss:
    @pytest.mark.parametrize("shared", [True, False])
    def test_digit_actor_total_loss_gradcheck(self, shared, rng):
        actor = tiny_digit_actor(shared, seed=13)
        ch = Channel(2, 1)
        obs = rng.random((4, 100))
        enc = one_hot(rng.integers(0, 2, size=4), 2)
        chosen = rng.integers(0, 2, size=4)
        sent = rng.integers(0, 2, size=4)
        adv = rng.normal(size=4)
        comm_adv = rng.normal(size=4)

        def total():
            l1, g1, _ = policy_gradient_loss(actor, "action", obs, enc,
                                             chosen, adv,
                                             entropy_beta=0.01, reg=1e-3)
            l2, g2, _ = social_loss(actor, obs, ch, eta=0.02,
                                    kl_target=40.0, mode="per_sample")
            l3, g3, _ = policy_gradient_loss(actor, "comm", obs, None,
                                             sent, comm_adv,
                                             entropy_beta=0.01, reg=1e-3)
            return l1 + l2 + l3, g1 + g2 + g3

        err = check_loss_grads(total, actor.store, sample=70,
                               rng=np.random.default_rng(9))
        assert err < 1e-4
