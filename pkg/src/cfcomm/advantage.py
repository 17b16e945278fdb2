"""Counterfactual advantages from the centralized critic.

Both policies are trained against "what would the critic have said if I had
chosen differently, everything else held fixed":

* Action advantage: the critic's score of the joint action actually taken,
  minus the policy-weighted average over this agent's alternatives with the
  other agent's action pinned. Costs exactly ``n_actions + 1`` critic
  evaluations per agent per step.

* Communication advantage: messages act with one step of delay, so the value
  of a message emitted at t is how it shapes the *other* agent's action
  distribution at t+1. For a candidate message we re-route it, re-evaluate
  the other agent's action policy at its t+1 observation under that inbox,
  and average the critic over the other agent's actions with our own t+1
  action pinned to what was actually taken. The advantage subtracts the
  communication policy's own mixture over candidate messages. Costs
  ``n_messages * n_actions`` critic evaluations plus ``n_messages``
  action-policy evaluations per agent per step; undefined at the final step.

Functions here never mutate the trajectory, the actor or the critic; they
only read snapshots and bump evaluation counters. The per-step forms mirror
the definitions one to one; ``epoch_advantages`` computes identical values
for a whole batch of trajectories with batched network calls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comm import Channel
from .errors import UsageError
from .probs import one_hot


@dataclass
class CounterfactualQuery:
    """Everything needed to reason about one timestep of one episode."""

    critic: object
    actor: object
    channel: Channel
    feats: np.ndarray            # (feat_dim,) state features at t
    obs: np.ndarray              # (A, obs_dim) observations at t
    inbox: np.ndarray            # (A, A-1) messages received at t
    outgoing: np.ndarray         # (A,) messages emitted at t
    actions: np.ndarray          # (A,) joint action taken at t
    next_feats: np.ndarray | None = None
    next_obs: np.ndarray | None = None
    next_actions: np.ndarray | None = None

    @classmethod
    def from_step(cls, traj, t: int, critic, actor, channel: Channel) -> "CounterfactualQuery":
        last = t + 1 >= traj.length
        return cls(
            critic=critic, actor=actor, channel=channel,
            feats=traj.feats[t], obs=traj.obs[t], inbox=traj.inbox[t],
            outgoing=traj.outgoing[t], actions=traj.actions[t],
            next_feats=None if last else traj.feats[t + 1],
            next_obs=None if last else traj.obs[t + 1],
            next_actions=None if last else traj.actions[t + 1],
        )


def action_advantage(query: CounterfactualQuery, agent: int) -> float:
    """Advantage of the taken action over the policy mix, others held fixed."""
    critic, actor = query.critic, query.actor
    n_actions = actor.n_actions
    q_taken = float(critic.q_values(query.feats, query.actions)[0])
    sweep = np.tile(query.actions, (n_actions, 1))
    sweep[:, agent] = np.arange(n_actions)
    q_sweep = critic.q_values(np.tile(query.feats, (n_actions, 1)), sweep)
    inbox_enc = query.channel.inbox_encoding(query.inbox[agent])
    probs = actor.action_probs(query.obs[agent], inbox_enc)[0]
    return q_taken - float(probs @ q_sweep)


def communication_q(query: CounterfactualQuery, agent: int,
                    candidate_outgoing, own_next_action: int) -> float:
    """Critic's view of a joint message, marginalised over the other agent's
    reaction to it, with this agent's next action pinned."""
    if query.next_feats is None:
        raise UsageError("communication value undefined at the final step")
    critic, actor, channel = query.critic, query.actor, query.channel
    other = 1 - agent
    n_actions = actor.n_actions
    rerouted = channel.route(np.asarray(candidate_outgoing, dtype=np.int64))
    other_inbox_enc = channel.inbox_encoding(rerouted[other])
    probs_other = actor.action_probs(query.next_obs[other], other_inbox_enc)[0]
    sweep = np.empty((n_actions, 2), dtype=np.int64)
    sweep[:, agent] = own_next_action
    sweep[:, other] = np.arange(n_actions)
    q_sweep = critic.q_values(np.tile(query.next_feats, (n_actions, 1)), sweep)
    return float(probs_other @ q_sweep)


def communication_advantage(query: CounterfactualQuery, agent: int) -> float:
    """Advantage of the emitted message over the talking policy's mixture.

    Candidates replace only this agent's slot of the joint message; the other
    agent's emitted message stays as it was.
    """
    if query.next_feats is None:
        raise UsageError("communication advantage undefined at the final step")
    channel = query.channel
    own_next = int(query.next_actions[agent])
    q_c = np.empty(channel.n_messages)
    for m in range(channel.n_messages):
        candidate = query.outgoing.copy()
        candidate[agent] = m
        q_c[m] = communication_q(query, agent, candidate, own_next)
    comm_probs = query.actor.comm_probs(query.obs[agent])[0]
    return float(q_c[query.outgoing[agent]] - comm_probs @ q_c)


# ---------------------------------------------------------------------------
# Batched epoch computation
# ---------------------------------------------------------------------------

@dataclass
class AdvantageBatch:
    """Flat per-decision records ready for the policy-gradient losses."""

    act_obs: np.ndarray          # (N, obs_dim)
    act_inbox_enc: np.ndarray    # (N, inbox_dim)
    act_chosen: np.ndarray       # (N,)
    act_adv: np.ndarray          # (N,)
    comm_obs: np.ndarray         # (M, obs_dim)
    comm_chosen: np.ndarray      # (M,)
    comm_adv: np.ndarray         # (M,)


def epoch_advantages(trajs: list, actor, critic, channel: Channel,
                     action_train_steps=None, with_comm: bool = True) -> AdvantageBatch:
    """Compute both advantages for every trainable decision in the batch.

    ``action_train_steps`` restricts which timesteps feed the action-policy
    records (the digit game ignores talk-step answers); communication records
    cover every non-final step. ``with_comm=False`` skips the message sweep
    entirely (baselines that do not train the talking policy against the
    critic), returning empty communication records.
    """
    n_ep = len(trajs)
    horizon = trajs[0].length
    n_agents = trajs[0].actions.shape[1]
    if n_agents != 2:
        raise UsageError("advantage computation is specialised to two agents")
    n_actions = actor.n_actions
    n_msg = channel.n_messages

    obs = np.stack([t.obs for t in trajs])          # (E, T+1, A, do)
    feats = np.stack([t.feats for t in trajs])      # (E, T+1, df)
    inbox = np.stack([t.inbox for t in trajs])      # (E, T+1, A, A-1)
    actions = np.stack([t.actions for t in trajs])  # (E, T, A)
    outgoing = np.stack([t.outgoing for t in trajs])

    # ---- action advantages -------------------------------------------------
    steps = list(range(horizon)) if action_train_steps is None else list(action_train_steps)
    s = len(steps)
    f_now = feats[:, steps].reshape(n_ep * s, -1)                    # (ES, df)
    a_now = actions[:, steps].reshape(n_ep * s, n_agents)            # (ES, A)
    emb_now = critic.state_embedding(f_now)
    q_taken = critic.q_from_embedding(emb_now, a_now)                # (ES,)

    emb_rep = np.repeat(emb_now, n_actions, axis=0)                  # (ES*U, demb)
    q_sweep = np.empty((n_agents, n_ep * s, n_actions))
    for agent in range(n_agents):
        sweep = np.repeat(a_now, n_actions, axis=0)
        sweep[:, agent] = np.tile(np.arange(n_actions), n_ep * s)
        q_sweep[agent] = critic.q_from_embedding(emb_rep, sweep).reshape(n_ep * s, n_actions)

    obs_now = obs[:, steps]                                          # (E, S, A, do)
    inbox_now = inbox[:, steps]
    act_obs = obs_now.reshape(n_ep * s * n_agents, -1)
    act_inbox = channel.inbox_encoding(
        inbox_now.reshape(n_ep * s * n_agents, n_agents - 1))
    probs = actor.action_probs(act_obs, act_inbox)                   # (ESA, U)
    probs_by_agent = probs.reshape(n_ep * s, n_agents, n_actions)

    act_adv = np.empty((n_ep * s, n_agents))
    for agent in range(n_agents):
        act_adv[:, agent] = q_taken - np.sum(probs_by_agent[:, agent] * q_sweep[agent], axis=1)

    # ---- communication advantages ------------------------------------------
    csteps = list(range(horizon - 1)) if with_comm else []
    cs = len(csteps)
    if cs == 0:
        comm_obs = np.empty((0, obs.shape[-1]))
        comm_chosen = np.empty(0, dtype=np.int64)
        comm_adv = np.empty(0)
    else:
        f_next = feats[:, [t + 1 for t in csteps]].reshape(n_ep * cs, -1)
        emb_next = critic.state_embedding(f_next)
        a_next = actions[:, [t + 1 for t in csteps]].reshape(n_ep * cs, n_agents)
        obs_next = obs[:, [t + 1 for t in csteps]]                   # (E, CS, A, do)

        # q_c[m, agent, row]: value of this agent emitting m at the row's step
        q_c = np.empty((n_msg, n_agents, n_ep * cs))
        for agent in range(n_agents):
            other = 1 - agent
            other_obs = obs_next[:, :, other].reshape(n_ep * cs, -1)
            other_feats = actor.action_features(other_obs)
            own_next = a_next[:, agent]
            for m in range(n_msg):
                # two agents: the other's rerouted inbox is exactly [m]
                enc = one_hot(np.full(n_ep * cs, m, dtype=np.int64), n_msg)
                p_other = actor.action_probs_from_features(other_feats, enc)  # (ECS, U)
                sweep = np.empty((n_ep * cs * n_actions, n_agents), dtype=np.int64)
                sweep[:, agent] = np.repeat(own_next, n_actions)
                sweep[:, other] = np.tile(np.arange(n_actions), n_ep * cs)
                q = critic.q_from_embedding(
                    np.repeat(emb_next, n_actions, axis=0), sweep)
                q_c[m, agent] = np.sum(p_other * q.reshape(n_ep * cs, n_actions), axis=1)

        obs_send = obs[:, csteps].reshape(n_ep * cs * n_agents, -1)
        comm_probs = actor.comm_probs(obs_send).reshape(n_ep * cs, n_agents, n_msg)
        sent = outgoing[:, csteps].reshape(n_ep * cs, n_agents)

        comm_adv = np.empty((n_ep * cs, n_agents))
        for agent in range(n_agents):
            q_cm = q_c[:, agent].T                                   # (ECS, M)
            chosen_q = np.take_along_axis(q_cm, sent[:, agent][:, None], axis=1)[:, 0]
            comm_adv[:, agent] = chosen_q - np.sum(comm_probs[:, agent] * q_cm, axis=1)
        comm_obs = obs_send
        comm_chosen = sent.reshape(-1)
        comm_adv = comm_adv.reshape(-1)

    return AdvantageBatch(
        act_obs=act_obs,
        act_inbox_enc=act_inbox,
        act_chosen=actions[:, steps].reshape(-1),
        act_adv=act_adv.reshape(-1),
        comm_obs=comm_obs,
        comm_chosen=comm_chosen,
        comm_adv=comm_adv,
    )
