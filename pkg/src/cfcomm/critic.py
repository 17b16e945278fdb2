"""Centralized action-value critic and its training machinery.

The critic scores a *joint* state against a *joint* action. State features
are the concatenated per-agent observations (the worlds here are jointly
observable); joint actions are encoded as the concatenation of one agent-sized
one-hot block per agent, so changing one agent's action touches exactly its
own block.

Training is on-policy bootstrapping from a replay buffer of
(s, u, r, s', u', terminal) tuples: the loss is the squared temporal
difference ``(r + gamma * Q(s', u') - Q(s, u))**2`` averaged over the batch,
plus an L1 penalty on the parameters. The bootstrap term is a fixed target
(no gradient flows through it). Every experiment here uses gamma = 0, which
turns the critic into a plain regressor of the immediate team reward.

Two body shapes cover the environments:

* ``DenseCritic`` feeds features and action blocks into one fully connected
  stack (three ReLU hidden layers).
* ``TwinTrunkCritic`` runs each agent's image through a shared convolutional
  trunk, then joins both embeddings with the action blocks in a small dense
  head. The trunk parameters are shared across the two uses and receive the
  sum of both gradients.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, UsageError
from .nn.layers import Conv2d, Dense, Flatten, MaxPool2d, Relu, Reshape
from .nn.network import (
    ParameterStore,
    Tape,
    add_layer_grads,
    backprop_layers,
    flatten_group_grads,
    infer_shapes,
    run_layers,
)
from .nn.checkpoint import register_model_type
from .probs import one_hot


def encode_joint_actions(actions, n_actions: int) -> np.ndarray:
    """Concatenate one one-hot block per agent: (..., A) -> (..., A*n_actions)."""
    actions = np.asarray(actions, dtype=np.int64)
    enc = one_hot(actions, n_actions)
    return enc.reshape(actions.shape[:-1] + (actions.shape[-1] * n_actions,))


class DenseCritic:
    """Q(s, u) with observations and actions at the same input layer."""

    def __init__(self, feat_dim: int, n_agents: int, n_actions: int,
                 hidden: tuple = (128, 128, 128), rng: np.random.Generator | None = None):
        self.feat_dim = int(feat_dim)
        self.n_agents = int(n_agents)
        self.n_actions = int(n_actions)
        self.hidden = tuple(int(h) for h in hidden)
        in_dim = self.feat_dim + self.n_agents * self.n_actions
        layers = []
        prev = in_dim
        for h in self.hidden:
            layers += [Dense(prev, h), Relu()]
            prev = h
        layers.append(Dense(prev, 1))
        self.layers = layers
        self.shapes = infer_shapes(layers, (in_dim,))
        self.store = ParameterStore({"main": layers}, rng or np.random.default_rng(0))
        self.eval_count = 0

    def q_values(self, feats, actions, with_tape: bool = False):
        """Q for each (state row, joint action row); actions are index rows."""
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        enc = encode_joint_actions(np.atleast_2d(actions), self.n_actions)
        x = np.concatenate([feats, enc], axis=1)
        y, caches = run_layers(self.layers, self.store.params_for("main"), x)
        self.eval_count += x.shape[0]
        q = y[:, 0]
        if with_tape:
            return q, Tape(self.store, self.store.version, caches, x.shape[0])
        return q

    def backward(self, tape: Tape, grad_q) -> np.ndarray:
        tape.check()
        grad_out = np.asarray(grad_q, dtype=np.float64).reshape(tape.batch, 1)
        _, per_layer = backprop_layers(
            self.layers, self.store.params_for("main"), tape.caches, grad_out)
        return flatten_group_grads(self.store, {"main": per_layer})

    # state embeddings are trivial here; they exist so counterfactual sweeps
    # can use one code path for both critic shapes
    def state_embedding(self, feats) -> np.ndarray:
        return np.atleast_2d(np.asarray(feats, dtype=np.float64))

    def q_from_embedding(self, emb, actions) -> np.ndarray:
        return self.q_values(emb, actions)

    def spec(self) -> dict:
        return {"type": "dense_critic", "feat_dim": self.feat_dim,
                "n_agents": self.n_agents, "n_actions": self.n_actions,
                "hidden": list(self.hidden)}


class TwinTrunkCritic:
    """Q(s, u) for image pairs: shared conv trunk per image, joint dense head."""

    def __init__(self, image_side: int, n_agents: int, n_actions: int,
                 trunk_channels: tuple = (16, 32), trunk_dense: int = 128,
                 head_hidden: int = 64, rng: np.random.Generator | None = None):
        if n_agents != 2:
            raise ConfigError("the twin-trunk critic handles exactly two agents")
        self.image_side = int(image_side)
        self.n_agents = 2
        self.n_actions = int(n_actions)
        self.trunk_channels = tuple(int(c) for c in trunk_channels)
        self.trunk_dense = int(trunk_dense)
        self.head_hidden = int(head_hidden)
        self.feat_dim = 2 * self.image_side ** 2

        side = self.image_side
        c_in = 1
        trunk = [Reshape((side, side, 1))]
        for c_out in self.trunk_channels:
            trunk += [Conv2d(c_in, c_out), Relu()]
            side -= 2
            c_in = c_out
        trunk += [MaxPool2d(2), Flatten()]
        side //= 2
        trunk += [Dense(side * side * c_in, self.trunk_dense), Relu()]
        self.trunk = trunk
        self.trunk_shapes = infer_shapes(trunk, (self.image_side ** 2,))

        head_in = 2 * self.trunk_dense + self.n_agents * self.n_actions
        self.head = [Dense(head_in, self.head_hidden), Relu(), Dense(self.head_hidden, 1)]
        self.store = ParameterStore({"trunk": trunk, "head": self.head},
                                    rng or np.random.default_rng(0))
        self.eval_count = 0

    def _split(self, feats) -> tuple:
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        if feats.shape[1] != self.feat_dim:
            raise ConfigError(
                f"expected {self.feat_dim} state features (two flat images)")
        half = self.feat_dim // 2
        return feats[:, :half], feats[:, half:]

    def q_values(self, feats, actions, with_tape: bool = False):
        img_a, img_b = self._split(feats)
        params = self.store.params_for("trunk")
        emb_a, caches_a = run_layers(self.trunk, params, img_a)
        emb_b, caches_b = run_layers(self.trunk, params, img_b)
        enc = encode_joint_actions(np.atleast_2d(actions), self.n_actions)
        x = np.concatenate([emb_a, emb_b, enc], axis=1)
        y, caches_h = run_layers(self.head, self.store.params_for("head"), x)
        self.eval_count += x.shape[0]
        q = y[:, 0]
        if with_tape:
            tape = Tape(self.store, self.store.version,
                        (caches_a, caches_b, caches_h), x.shape[0])
            return q, tape
        return q

    def backward(self, tape: Tape, grad_q) -> np.ndarray:
        tape.check()
        caches_a, caches_b, caches_h = tape.caches
        grad_out = np.asarray(grad_q, dtype=np.float64).reshape(tape.batch, 1)
        head_params = self.store.params_for("head")
        trunk_params = self.store.params_for("trunk")
        grad_x, head_grads = backprop_layers(self.head, head_params, caches_h, grad_out)
        d = self.trunk_dense
        _, trunk_grads_a = backprop_layers(self.trunk, trunk_params, caches_a, grad_x[:, :d])
        _, trunk_grads_b = backprop_layers(self.trunk, trunk_params, caches_b, grad_x[:, d:2 * d])
        trunk_grads = add_layer_grads(trunk_grads_a, trunk_grads_b)
        return flatten_group_grads(self.store, {"trunk": trunk_grads, "head": head_grads})

    def state_embedding(self, feats) -> np.ndarray:
        """Precompute both image embeddings so action sweeps only run the head."""
        img_a, img_b = self._split(feats)
        params = self.store.params_for("trunk")
        emb_a, _ = run_layers(self.trunk, params, img_a)
        emb_b, _ = run_layers(self.trunk, params, img_b)
        return np.concatenate([emb_a, emb_b], axis=1)

    def q_from_embedding(self, emb, actions) -> np.ndarray:
        emb = np.atleast_2d(np.asarray(emb, dtype=np.float64))
        enc = encode_joint_actions(np.atleast_2d(actions), self.n_actions)
        x = np.concatenate([emb, enc], axis=1)
        y, _ = run_layers(self.head, self.store.params_for("head"), x)
        self.eval_count += x.shape[0]
        return y[:, 0]

    def spec(self) -> dict:
        return {"type": "twin_trunk_critic", "image_side": self.image_side,
                "n_agents": self.n_agents, "n_actions": self.n_actions,
                "trunk_channels": list(self.trunk_channels),
                "trunk_dense": self.trunk_dense, "head_hidden": self.head_hidden}


register_model_type("dense_critic", lambda spec: DenseCritic(
    spec["feat_dim"], spec["n_agents"], spec["n_actions"], tuple(spec["hidden"])))
register_model_type("twin_trunk_critic", lambda spec: TwinTrunkCritic(
    spec["image_side"], spec["n_agents"], spec["n_actions"],
    tuple(spec["trunk_channels"]), spec["trunk_dense"], spec["head_hidden"]))


class ReplayBuffer:
    """Bounded FIFO of transition tuples with uniform with-replacement sampling."""

    FIELDS = ("feats", "actions", "reward", "next_feats", "next_actions", "terminal")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = int(capacity)
        self._items: list = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, feats, actions, reward, next_feats, next_actions, terminal: bool):
        item = (np.asarray(feats, dtype=np.float64),
                np.asarray(actions, dtype=np.int64), float(reward),
                np.asarray(next_feats, dtype=np.float64),
                np.asarray(next_actions, dtype=np.int64), bool(terminal))
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        """Uniform sample with replacement, stacked into arrays per field."""
        if not self._items:
            raise UsageError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, len(self._items), size=batch_size)
        cols = list(zip(*(self._items[i] for i in idx)))
        return {
            "feats": np.stack(cols[0]),
            "actions": np.stack(cols[1]),
            "reward": np.asarray(cols[2], dtype=np.float64),
            "next_feats": np.stack(cols[3]),
            "next_actions": np.stack(cols[4]),
            "terminal": np.asarray(cols[5], dtype=bool),
        }

    def items(self):
        return list(self._items)


def critic_loss(critic, batch: dict, gamma: float, l1: float):
    """Squared TD loss with a held-fixed bootstrap, plus L1 on the parameters.

    Returns ``(loss, grads)`` where grads already include the L1 subgradient,
    so the optimizer step should not add regularisation again. Exactly
    2 * batch_size Q evaluations are performed: one batch for Q(s, u), one for
    the bootstrap Q(s', u').
    """
    q_next = critic.q_values(batch["next_feats"], batch["next_actions"])
    target = batch["reward"] + gamma * q_next * (~batch["terminal"])
    q, tape = critic.q_values(batch["feats"], batch["actions"], with_tape=True)
    residual = target - q
    n = residual.shape[0]
    loss = float(np.mean(residual ** 2)) + l1 * float(np.abs(critic.store.theta).sum())
    grads = critic.backward(tape, -2.0 * residual / n)
    grads += l1 * np.sign(critic.store.theta)
    return loss, grads
