"""Per-agent policies: an action head and a communication head.

One ``ActorNetwork`` serves every agent (parameters are shared across the
team). The action head sees the agent's observation features plus the one-hot
encoded inbox of received messages; the communication head sees only the
observation features and never any message. Both heads may sit on top of a
feature trunk, either one shared trunk (gradients from both heads accumulate
into it) or two independent copies.

Loss functions return ``(loss, flat_grads, stats)`` with all regularisation
folded into the gradients, so the optimizer applies them with no extra decay:

* ``policy_gradient_loss``: mean of ``-log p(chosen) * advantage`` minus an
  entropy bonus, plus L2 on the parameters of the path it trains. Advantages
  are constants: no gradient flows through them.
* ``social_loss``: a hinge that pushes the action policy's message-conditioned
  distributions apart until their average pairwise KL reaches a target. The
  average is over all ordered pairs of distinct inbox symbols, ``1/(k(k-1))``
  times the sum. The hinge can compare per sample or against the batch-summed
  divergence ("batch_sum"), whichever the experiment configures; once the
  statistic is at or above the target the loss and its gradient are exactly
  zero.
"""
from __future__ import annotations

import numpy as np

from .comm import Channel
from .errors import ConfigError, TrainingFault, UsageError
from .nn.checkpoint import register_model_type
from .nn.layers import (
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    Relu,
    Reshape,
    Sigmoid,
    Softmax,
    layer_from_config,
)
from .nn.network import (
    ParameterStore,
    Tape,
    backprop_layers,
    flatten_group_grads,
    infer_shapes,
    run_layers,
)
from .probs import (
    entropy,
    entropy_grad,
    floor_mask,
    floored,
    greedy_categorical,
    one_hot,
    sample_categorical,
)


class ActorNetwork:
    """Shared-parameter policy pair over an optional feature trunk."""

    def __init__(self, obs_dim: int, inbox_dim: int, n_actions: int, n_messages: int,
                 trunk: list, action_head: list, comm_head: list,
                 shared_trunk: bool, rng: np.random.Generator):
        self.obs_dim = int(obs_dim)
        self.inbox_dim = int(inbox_dim)
        self.n_actions = int(n_actions)
        self.n_messages = int(n_messages)
        self.shared_trunk = bool(shared_trunk)
        self.trunk = list(trunk)
        self.action_head = list(action_head)
        self.comm_head = list(comm_head)

        if self.trunk:
            trunk_shapes = infer_shapes(self.trunk, (self.obs_dim,))
            feat_shape = trunk_shapes[-1]
            if len(feat_shape) != 1:
                raise ConfigError("actor trunks must end in a flat feature vector")
            self.feat_dim = feat_shape[0]
        else:
            self.feat_dim = self.obs_dim
        infer_shapes(self.action_head, (self.feat_dim + self.inbox_dim,))
        infer_shapes(self.comm_head, (self.feat_dim,))
        if not isinstance(self.action_head[-1], Softmax) or not isinstance(self.comm_head[-1], Softmax):
            raise ConfigError("both heads must end in a softmax")

        if not self.trunk:
            groups = {}
        elif self.shared_trunk:
            groups = {"trunk": self.trunk}
        else:
            # same architecture, independent parameters
            self._comm_trunk = [layer_from_config(l.config()) for l in self.trunk]
            groups = {"action_trunk": self.trunk, "comm_trunk": self._comm_trunk}
        groups["action_head"] = self.action_head
        groups["comm_head"] = self.comm_head
        self.store = ParameterStore(groups, rng)

        self.action_evals = 0
        self.comm_evals = 0
        self.comm_grad_count = 0

    # -- plumbing ----------------------------------------------------------

    def _trunk_group(self, path: str):
        if not self.trunk:
            return None
        if self.shared_trunk:
            return "trunk"
        return "action_trunk" if path == "action" else "comm_trunk"

    def _trunk_layers(self, path: str):
        if self.shared_trunk or path == "action":
            return self.trunk
        return self._comm_trunk

    def _features(self, obs, path: str):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[1] != self.obs_dim:
            raise ConfigError(f"actor expects {self.obs_dim} observation features")
        group = self._trunk_group(path)
        if group is None:
            return obs, None
        feats, caches = run_layers(self._trunk_layers(path), self.store.params_for(group), obs)
        return feats, caches

    def path_mask(self, path: str) -> np.ndarray:
        """Boolean mask over the flat parameters this path trains."""
        mask = np.zeros(self.store.size, dtype=bool)
        group = self._trunk_group(path)
        if group is not None:
            mask[self.store.group_slice(group)] = True
        mask[self.store.group_slice(f"{path}_head")] = True
        return mask

    # -- forward/backward --------------------------------------------------

    def action_probs(self, obs, inbox_enc, with_tape: bool = False):
        feats, trunk_caches = self._features(obs, "action")
        inbox_enc = np.atleast_2d(np.asarray(inbox_enc, dtype=np.float64))
        if inbox_enc.shape[1] != self.inbox_dim:
            raise ConfigError(f"actor expects {self.inbox_dim} inbox features")
        x = np.concatenate([feats, inbox_enc], axis=1)
        probs, head_caches = run_layers(
            self.action_head, self.store.params_for("action_head"), x)
        self.action_evals += x.shape[0]
        if with_tape:
            return probs, Tape(self.store, self.store.version,
                               ("action", trunk_caches, head_caches), x.shape[0])
        return probs

    def comm_probs(self, obs, with_tape: bool = False):
        feats, trunk_caches = self._features(obs, "comm")
        probs, head_caches = run_layers(
            self.comm_head, self.store.params_for("comm_head"), feats)
        self.comm_evals += feats.shape[0]
        if with_tape:
            return probs, Tape(self.store, self.store.version,
                               ("comm", trunk_caches, head_caches), feats.shape[0])
        return probs

    def backward(self, tape: Tape, grad_probs) -> np.ndarray:
        tape.check()
        path, trunk_caches, head_caches = tape.caches
        head_name = f"{path}_head"
        head_layers = self.action_head if path == "action" else self.comm_head
        grad_x, head_grads = backprop_layers(
            head_layers, self.store.params_for(head_name), head_caches,
            np.asarray(grad_probs, dtype=np.float64))
        grads = {head_name: head_grads}
        group = self._trunk_group(path)
        if group is not None:
            grad_feats = grad_x[:, :self.feat_dim]
            _, trunk_grads = backprop_layers(
                self._trunk_layers(path), self.store.params_for(group),
                trunk_caches, grad_feats)
            grads[group] = trunk_grads
        if path == "comm":
            self.comm_grad_count += 1
        return flatten_group_grads(self.store, grads)

    # -- staged evaluation ---------------------------------------------------
    # Sweeps that vary only the inbox (divergence loss, message lookahead)
    # share one trunk pass across all symbols. Backprop stays exact: the head
    # backward passes are summed into a single trunk backward, and backprop is
    # linear in the output gradient for a fixed forward pass.

    def action_features(self, obs, with_tape: bool = False):
        """Trunk features for the action path, reusable across inboxes."""
        feats, trunk_caches = self._features(obs, "action")
        if with_tape:
            return feats, Tape(self.store, self.store.version,
                               ("action_feats", trunk_caches), feats.shape[0])
        return feats

    def action_probs_from_features(self, feats, inbox_enc, with_tape: bool = False):
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        inbox_enc = np.atleast_2d(np.asarray(inbox_enc, dtype=np.float64))
        if feats.shape[1] != self.feat_dim:
            raise ConfigError(f"action head expects {self.feat_dim} features")
        if inbox_enc.shape[1] != self.inbox_dim:
            raise ConfigError(f"actor expects {self.inbox_dim} inbox features")
        x = np.concatenate([feats, inbox_enc], axis=1)
        probs, head_caches = run_layers(
            self.action_head, self.store.params_for("action_head"), x)
        self.action_evals += x.shape[0]
        if with_tape:
            return probs, Tape(self.store, self.store.version,
                               ("action_head_only", head_caches), x.shape[0])
        return probs

    def action_head_backward(self, tape: Tape, grad_probs):
        """Backprop one head-only tape: (grad wrt trunk features, flat grads)."""
        tape.check()
        marker, head_caches = tape.caches
        if marker != "action_head_only":
            raise UsageError("tape was not produced by action_probs_from_features")
        grad_x, head_grads = backprop_layers(
            self.action_head, self.store.params_for("action_head"), head_caches,
            np.asarray(grad_probs, dtype=np.float64))
        flat = flatten_group_grads(self.store, {"action_head": head_grads})
        return grad_x[:, :self.feat_dim], flat

    def action_trunk_backward(self, tape: Tape, grad_feats) -> np.ndarray:
        """Backprop accumulated feature gradients through the action trunk."""
        tape.check()
        marker, trunk_caches = tape.caches
        if marker != "action_feats":
            raise UsageError("tape was not produced by action_features")
        group = self._trunk_group("action")
        if group is None:
            return np.zeros(self.store.size)
        _, trunk_grads = backprop_layers(
            self.trunk, self.store.params_for(group), trunk_caches,
            np.asarray(grad_feats, dtype=np.float64))
        return flatten_group_grads(self.store, {group: trunk_grads})

    # -- acting ------------------------------------------------------------

    def act(self, obs, inbox_enc, rng, greedy: bool = False):
        probs = self.action_probs(obs, inbox_enc)
        if not np.isfinite(probs).all():
            raise TrainingFault("action policy produced non-finite probabilities")
        return greedy_categorical(probs) if greedy else sample_categorical(probs, rng)

    def communicate(self, obs, rng, greedy: bool = False):
        probs = self.comm_probs(obs)
        if not np.isfinite(probs).all():
            raise TrainingFault("communication policy produced non-finite probabilities")
        return greedy_categorical(probs) if greedy else sample_categorical(probs, rng)

    # -- checkpointing -----------------------------------------------------

    def spec(self) -> dict:
        return {
            "type": "actor",
            "obs_dim": self.obs_dim, "inbox_dim": self.inbox_dim,
            "n_actions": self.n_actions, "n_messages": self.n_messages,
            "shared_trunk": self.shared_trunk,
            "trunk": [l.config() for l in self.trunk],
            "action_head": [l.config() for l in self.action_head],
            "comm_head": [l.config() for l in self.comm_head],
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "ActorNetwork":
        return cls(
            spec["obs_dim"], spec["inbox_dim"], spec["n_actions"], spec["n_messages"],
            [layer_from_config(c) for c in spec["trunk"]],
            [layer_from_config(c) for c in spec["action_head"]],
            [layer_from_config(c) for c in spec["comm_head"]],
            spec["shared_trunk"], np.random.default_rng(0))


register_model_type("actor", ActorNetwork.from_spec)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_particle_actor(channel: Channel, rng: np.random.Generator,
                         obs_dim: int = 13, n_actions: int = 5) -> ActorNetwork:
    """Landmark world: two 256-unit ReLU layers for actions, linear for talk."""
    inbox_dim = channel.inbox_dim
    action_head = [Dense(obs_dim + inbox_dim, 256), Relu(),
                   Dense(256, 256), Relu(), Dense(256, n_actions), Softmax()]
    comm_head = [Dense(obs_dim, channel.n_messages), Softmax()]
    return ActorNetwork(obs_dim, inbox_dim, n_actions, channel.n_messages,
                        [], action_head, comm_head, shared_trunk=False, rng=rng)


def build_digit_actor(channel: Channel, rng: np.random.Generator,
                      shared_trunk: bool, image_side: int = 28,
                      head_hidden: int = 64) -> ActorNetwork:
    """Digit game: conv trunk to a 2-unit sigmoid code, small dense heads.

    The message joins only in the action head, after the trunk. With a shared
    trunk the communication head gets one extra hidden layer.
    """
    side = image_side
    trunk = [Reshape((side, side, 1)),
             Conv2d(1, 16), Relu(), Conv2d(16, 32), Relu(), MaxPool2d(2), Flatten()]
    pooled = (side - 4) // 2
    trunk += [Dense(pooled * pooled * 32, 128), Relu(), Dense(128, 2), Sigmoid()]
    inbox_dim = channel.inbox_dim
    action_head = [Dense(2 + inbox_dim, head_hidden), Relu(),
                   Dense(head_hidden, 2), Softmax()]
    comm_head = [Dense(2, head_hidden), Relu()]
    if shared_trunk:
        comm_head += [Dense(head_hidden, head_hidden), Relu()]
    comm_head += [Dense(head_hidden, channel.n_messages), Softmax()]
    return ActorNetwork(image_side * image_side, inbox_dim, 2, channel.n_messages,
                        trunk, action_head, comm_head, shared_trunk=shared_trunk, rng=rng)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _l2_terms(actor: ActorNetwork, path: str, reg: float):
    mask = actor.path_mask(path)
    theta = actor.store.theta
    loss = 0.5 * reg * float(np.sum(theta[mask] ** 2))
    grads = np.zeros_like(theta)
    grads[mask] = reg * theta[mask]
    return loss, grads


def policy_gradient_loss(actor: ActorNetwork, path: str, obs, inbox_enc,
                         chosen, advantages, entropy_beta: float, reg: float):
    """Score-function gradient for one head over a batch of decisions.

    ``loss = sum(-log p(chosen) * adv - beta * H(p)) + L2``. Per-decision
    losses accumulate over the whole update window (episodic accumulation),
    which is the convention the published step sizes are calibrated against:
    averaging instead would shrink every update by the row count (~1800 for
    the particle runs) and freeze the policies at those step sizes. Returns
    ``(loss, flat_grads, stats)``; stats carries the mean entropy and the
    total policy-gradient term for logging.
    """
    chosen = np.asarray(chosen, dtype=np.int64)
    adv = np.asarray(advantages, dtype=np.float64)
    if path == "action":
        probs, tape = actor.action_probs(obs, inbox_enc, with_tape=True)
    elif path == "comm":
        probs, tape = actor.comm_probs(obs, with_tape=True)
    else:
        raise UsageError(f"unknown policy path: {path!r}")
    n, k = probs.shape
    if chosen.shape != (n,) or adv.shape != (n,):
        raise UsageError("chosen indices and advantages must match the batch")
    if chosen.min() < 0 or chosen.max() >= k:
        raise UsageError(f"chosen index outside [0, {k})")

    pf = floored(probs)
    chosen_p = np.take_along_axis(pf, chosen[:, None], axis=1)[:, 0]
    ent = entropy(probs)
    pg_term = float(np.sum(-np.log(chosen_p) * adv))
    loss = pg_term - entropy_beta * float(np.sum(ent))

    dprobs = np.zeros_like(probs)
    passthrough = np.take_along_axis(floor_mask(probs), chosen[:, None], axis=1)[:, 0]
    np.put_along_axis(dprobs, chosen[:, None],
                      (-adv * passthrough / chosen_p)[:, None], axis=1)
    dprobs -= entropy_beta * entropy_grad(probs)
    grads = actor.backward(tape, dprobs)

    if reg:
        l2_loss, l2_grads = _l2_terms(actor, path, reg)
        loss += l2_loss
        grads += l2_grads
    return loss, grads, {"entropy": float(np.mean(ent)), "pg": pg_term}


def message_conditioned_probs(actor: ActorNetwork, obs, channel: Channel,
                              with_tapes: bool = False):
    """Action distributions under each possible inbox symbol (each peer
    saying the same thing, which for two agents is just the one message).

    The trunk runs once and is shared by all ``k`` head passes. With
    ``with_tapes`` the return is ``(probs, trunk_tape, head_tapes)`` for a
    staged backward pass.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    k = channel.n_messages
    n = obs.shape[0]
    if with_tapes:
        feats, trunk_tape = actor.action_features(obs, with_tape=True)
    else:
        feats, trunk_tape = actor.action_features(obs), None
    all_probs = np.empty((k, n, actor.n_actions))
    head_tapes = []
    for m in range(k):
        enc = np.tile(one_hot(np.full(n, m, dtype=np.int64), k),
                      (1, channel.n_agents - 1))
        if with_tapes:
            p, tape = actor.action_probs_from_features(feats, enc, with_tape=True)
            head_tapes.append(tape)
        else:
            p = actor.action_probs_from_features(feats, enc)
        all_probs[m] = p
    return (all_probs, trunk_tape, head_tapes) if with_tapes else all_probs


def avg_pairwise_kl_from_probs(probs_k: np.ndarray) -> np.ndarray:
    """Mean KL over ordered pairs of distinct rows: sum / (k(k-1)). Per sample."""
    k = probs_k.shape[0]
    if k < 2:
        raise UsageError("need at least two message symbols to compare")
    logs = np.log(floored(probs_k))
    total = np.zeros(probs_k.shape[1])
    for i in range(k):
        for j in range(k):
            if i != j:
                total += np.sum(floored(probs_k[i]) * (logs[i] - logs[j]), axis=-1)
    return total / (k * (k - 1))


def avg_pairwise_kl(actor: ActorNetwork, obs, channel: Channel) -> np.ndarray:
    """Message sensitivity of the action policy at these observations."""
    return avg_pairwise_kl_from_probs(message_conditioned_probs(actor, obs, channel))


def social_loss(actor: ActorNetwork, obs, channel: Channel, eta: float,
                kl_target: float, mode: str = "per_sample"):
    """Hinged divergence bonus; see the module docstring for the two modes.

    Returns ``(loss, flat_grads, divergence_stat)`` where the stat is the
    quantity the hinge compared against ``kl_target`` (per-sample mean, or the
    batch sum in "batch_sum" mode).
    """
    if mode not in ("per_sample", "batch_sum"):
        raise ConfigError(f"unknown social loss mode: {mode!r}")
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    n = obs.shape[0]
    probs_k, trunk_tape, head_tapes = message_conditioned_probs(
        actor, obs, channel, with_tapes=True)
    kl = avg_pairwise_kl_from_probs(probs_k)
    k = probs_k.shape[0]

    if mode == "per_sample":
        stat = float(np.mean(kl))
        active = kl < kl_target
        hinged = np.maximum(0.0, kl_target - kl)
        # np.mean rounds even over identical entries; the degenerate cases
        # (all divergences zero, or hinge everywhere clamped) must be exact
        mean_hinged = float(hinged[0]) if np.all(hinged == hinged[0]) \
            else float(np.mean(hinged))
        loss = eta * mean_hinged
        weight = np.where(active, -eta / n, 0.0)
    else:
        total = float(np.sum(kl))
        stat = total
        loss = eta * max(0.0, kl_target - total)
        weight = np.full(n, -eta if total < kl_target else 0.0)

    if not np.any(weight):
        return loss, np.zeros(actor.store.size), stat

    pf = floored(probs_k)
    logs = np.log(pf)
    masks = floor_mask(probs_k)
    scale = weight[:, None] / (k * (k - 1))
    grads = np.zeros(actor.store.size)
    grad_feats = None
    for i in range(k):
        dp = np.zeros_like(probs_k[i])
        for j in range(k):
            if j == i:
                continue
            dp += logs[i] - logs[j] + 1.0      # row i as first argument: KL(i||j)
            dp -= pf[j] / pf[i]                # row i as second argument: KL(j||i)
        dfeat, g_head = actor.action_head_backward(head_tapes[i], dp * masks[i] * scale)
        grads += g_head
        grad_feats = dfeat if grad_feats is None else grad_feats + dfeat
    grads += actor.action_trunk_backward(trunk_tape, grad_feats)
    return loss, grads, stat
