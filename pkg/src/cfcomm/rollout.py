"""Episode collection for jointly observable two-sided worlds.

The actor and the environment are duck-typed:

* env: ``n_agents``, ``n_actions``, ``obs_dim``, ``steps_per_episode``,
  ``reset(rng) -> (state, obs)``, ``step(state, actions) -> (state, obs, r)``.
* actor: ``act(obs_rows, inbox_rows, rng, greedy) -> actions`` and
  ``communicate(obs_rows, rng, greedy) -> messages``, both vectorised over
  rows. Parameter sharing means one actor serves every agent.

Because the worlds here are jointly observable, the critic's state features
are simply the concatenation of all per-agent observations; ``Trajectory``
precomputes them for every step including the final one.

Episodes have a fixed length, so a whole batch is collected in lockstep: each
policy evaluation happens once per timestep over ``episodes * agents`` rows.
Collection consumes the given rng in a fixed order and is deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, is_dataclass, asdict

import numpy as np

from .comm import NULL_MESSAGE, Channel
from .errors import UsageError


@dataclass
class StepRecord:
    """One step of one episode, in scalar form (mostly for inspection/dump)."""

    t: int
    state: object
    obs: np.ndarray            # (A, obs_dim)
    inbox: np.ndarray          # (A, A-1) message indices received at t
    outgoing: np.ndarray       # (A,) message indices emitted at t
    actions: np.ndarray        # (A,)
    reward: float


@dataclass
class Trajectory:
    """A full episode. Arrays are indexed [t, agent, ...].

    ``obs``, ``inbox`` and ``feats`` have T+1 entries (the final observation
    is kept for next-step reasoning); ``outgoing``, ``actions``, ``rewards``
    have T. ``states`` holds T+1 environment states.
    """

    obs: np.ndarray            # (T+1, A, obs_dim)
    inbox: np.ndarray          # (T+1, A, A-1)
    outgoing: np.ndarray       # (T, A)
    actions: np.ndarray        # (T, A)
    rewards: np.ndarray        # (T,)
    states: list
    feats: np.ndarray          # (T+1, A * obs_dim)

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def returns(self, gamma: float) -> np.ndarray:
        """Discounted reward-to-go per step."""
        out = np.empty_like(self.rewards)
        acc = 0.0
        for t in range(len(self.rewards) - 1, -1, -1):
            acc = self.rewards[t] + gamma * acc
            out[t] = acc
        return out

    def step_records(self):
        for t in range(self.length):
            yield StepRecord(t, self.states[t], self.obs[t], self.inbox[t],
                             self.outgoing[t], self.actions[t], float(self.rewards[t]))

    def to_jsonl(self) -> str:
        lines = []
        for rec in self.step_records():
            lines.append(json.dumps({
                "t": rec.t,
                "state": _jsonify(rec.state),
                "obs": rec.obs.tolist(),
                "inbox": rec.inbox.tolist(),
                "outgoing": rec.outgoing.tolist(),
                "actions": rec.actions.tolist(),
                "reward": rec.reward,
            }))
        return "\n".join(lines) + "\n"


def _jsonify(value):
    if is_dataclass(value) and not isinstance(value, type):
        return {k: _jsonify(v) for k, v in asdict(value).items()}
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    return value


class UniformRandomActor:
    """Acts and talks uniformly at random; the Monte-Carlo reference policy."""

    def __init__(self, n_actions: int, n_messages: int):
        self.n_actions = n_actions
        self.n_messages = n_messages

    def act(self, obs, inbox_enc, rng, greedy=False):
        n = np.atleast_2d(obs).shape[0]
        if greedy:
            return np.zeros(n, dtype=np.int64)
        return rng.integers(0, self.n_actions, size=n)

    def communicate(self, obs, rng, greedy=False):
        n = np.atleast_2d(obs).shape[0]
        if greedy:
            return np.zeros(n, dtype=np.int64)
        return rng.integers(0, self.n_messages, size=n)


def rollout_batch(env, actor, channel: Channel, n_episodes: int,
                  rng: np.random.Generator, *, greedy: bool = False,
                  comm: str = "learned") -> list:
    """Collect ``n_episodes`` fixed-length episodes in lockstep.

    ``comm="none"`` silences the channel: nothing is sampled from the
    communication policy and every inbox stays at the null message.
    """
    if n_episodes < 1:
        raise UsageError("need at least one episode")
    if comm not in ("learned", "none"):
        raise UsageError(f"unknown comm mode: {comm!r}")
    n_a = env.n_agents
    horizon = env.steps_per_episode

    states = []
    obs_now = np.empty((n_episodes, n_a, env.obs_dim), dtype=np.float64)
    for e in range(n_episodes):
        state, obs = env.reset(rng)
        states.append(state)
        obs_now[e] = obs

    obs_hist = np.empty((horizon + 1, n_episodes, n_a, env.obs_dim), dtype=np.float64)
    inbox_hist = np.empty((horizon + 1, n_episodes, n_a, n_a - 1), dtype=np.int64)
    out_hist = np.empty((horizon, n_episodes, n_a), dtype=np.int64)
    act_hist = np.empty((horizon, n_episodes, n_a), dtype=np.int64)
    rew_hist = np.empty((horizon, n_episodes), dtype=np.float64)
    state_hist = [states]

    inbox = np.broadcast_to(channel.initial_inbox(), (n_episodes, n_a, n_a - 1)).copy()

    for t in range(horizon):
        obs_hist[t] = obs_now
        inbox_hist[t] = inbox
        rows = obs_now.reshape(n_episodes * n_a, env.obs_dim)
        inbox_rows = channel.inbox_encoding(inbox.reshape(n_episodes * n_a, n_a - 1))
        actions = np.asarray(actor.act(rows, inbox_rows, rng, greedy=greedy),
                             dtype=np.int64).reshape(n_episodes, n_a)
        if comm == "learned":
            outgoing = np.asarray(actor.communicate(rows, rng, greedy=greedy),
                                  dtype=np.int64).reshape(n_episodes, n_a)
        else:
            outgoing = np.full((n_episodes, n_a), NULL_MESSAGE, dtype=np.int64)

        next_states = []
        next_obs = np.empty_like(obs_now)
        for e in range(n_episodes):
            state, obs, reward = env.step(state_hist[-1][e], actions[e])
            next_states.append(state)
            next_obs[e] = obs
            rew_hist[t, e] = reward
        state_hist.append(next_states)
        act_hist[t] = actions
        out_hist[t] = outgoing
        inbox = channel.route(outgoing) if comm == "learned" \
            else np.broadcast_to(channel.initial_inbox(), inbox.shape).copy()
        obs_now = next_obs

    obs_hist[horizon] = obs_now
    inbox_hist[horizon] = inbox

    trajectories = []
    for e in range(n_episodes):
        obs_e = obs_hist[:, e]
        trajectories.append(Trajectory(
            obs=obs_e.copy(),
            inbox=inbox_hist[:, e].copy(),
            outgoing=out_hist[:, e].copy(),
            actions=act_hist[:, e].copy(),
            rewards=rew_hist[:, e].copy(),
            states=[state_hist[t][e] for t in range(horizon + 1)],
            feats=obs_e.reshape(horizon + 1, n_a * env.obs_dim).copy(),
        ))
    return trajectories


def rollout_episode(env, actor, channel: Channel, rng: np.random.Generator,
                    *, greedy: bool = False, comm: str = "learned") -> Trajectory:
    """Collect a single episode (see ``rollout_batch``)."""
    return rollout_batch(env, actor, channel, 1, rng, greedy=greedy, comm=comm)[0]
