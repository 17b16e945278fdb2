"""Two-agent landmark-reference world.

Each agent must reach one of three colored landmarks, but only the *other*
agent observes which landmark that is. The team reward is the negative sum of
both agent-to-target distances, so good scores require telling each other
where to go. Landmark color equals landmark index (color 0 is landmark 0).

Dynamics per step, with dt = 0.1: acceleration of magnitude 5.0 along the
chosen axis (or none), velocity damped by 25% before the push, position
integrated with the new velocity and clamped to the arena box [-1.3, 1.3].
The reward is evaluated at the post-step positions and never depends on any
message, only on positions and targets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, JointObservabilityError

N_AGENTS = 2
N_LANDMARKS = 3
N_ACTIONS = 5          # noop, +x, -x, +y, -y
OBS_DIM = 13
SPAWN_HALF_WIDTH = 1.0
ARENA_HALF_WIDTH = 1.3
ACCEL = 5.0
DAMPING = 0.25
DT = 0.1

ACTION_VECTORS = np.array(
    [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])

COLOR_NAMES = ("red", "green", "blue")


@dataclass(frozen=True)
class ParticleState:
    agent_pos: np.ndarray      # (2, 2)
    agent_vel: np.ndarray      # (2, 2)
    landmark_pos: np.ndarray   # (3, 2)
    targets: np.ndarray        # (2,) landmark index each agent must reach


class ParticleWorld:
    n_agents = N_AGENTS
    n_actions = N_ACTIONS
    obs_dim = OBS_DIM
    comm_bits = 2
    fact_names = COLOR_NAMES
    n_facts = N_LANDMARKS
    action_train_steps = None  # every step trains the action policy

    def __init__(self, steps_per_episode: int = 30):
        if steps_per_episode < 1:
            raise ConfigError("episodes need at least one step")
        self.steps_per_episode = steps_per_episode

    def reset(self, rng: np.random.Generator):
        state = ParticleState(
            agent_pos=rng.uniform(-SPAWN_HALF_WIDTH, SPAWN_HALF_WIDTH, size=(N_AGENTS, 2)),
            agent_vel=np.zeros((N_AGENTS, 2)),
            landmark_pos=rng.uniform(-SPAWN_HALF_WIDTH, SPAWN_HALF_WIDTH, size=(N_LANDMARKS, 2)),
            targets=rng.integers(0, N_LANDMARKS, size=N_AGENTS),
        )
        return state, self.observations(state)

    def step(self, state: ParticleState, actions):
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (N_AGENTS,) or actions.min() < 0 or actions.max() >= N_ACTIONS:
            raise ConfigError(f"expected {N_AGENTS} action indices < {N_ACTIONS}, got {actions}")
        accel = ACCEL * ACTION_VECTORS[actions]
        vel = state.agent_vel * (1.0 - DAMPING) + accel * DT
        pos = np.clip(state.agent_pos + vel * DT, -ARENA_HALF_WIDTH, ARENA_HALF_WIDTH)
        new = ParticleState(pos, vel, state.landmark_pos, state.targets)
        return new, self.observations(new), self.reward(new)

    @staticmethod
    def reward(state: ParticleState) -> float:
        goals = state.landmark_pos[state.targets]
        return float(-np.linalg.norm(state.agent_pos - goals, axis=1).sum())

    @staticmethod
    def observe(state: ParticleState, agent: int) -> np.ndarray:
        other = 1 - agent
        rel = state.landmark_pos - state.agent_pos[agent]
        other_target = np.zeros(N_LANDMARKS)
        other_target[state.targets[other]] = 1.0
        return np.concatenate([state.agent_pos[agent], state.agent_vel[agent],
                               rel.ravel(), other_target])

    def observations(self, state: ParticleState) -> np.ndarray:
        return np.stack([self.observe(state, a) for a in range(N_AGENTS)])

    def joint_state(self, obs_a: np.ndarray, obs_b: np.ndarray,
                    tol: float = 1e-9) -> ParticleState:
        """Rebuild the world state from the two observations.

        The observations are jointly complete: each carries its owner's pose,
        the landmarks relative to it, and the *other* agent's target. They
        must agree on absolute landmark positions, otherwise they belong to
        different moments and we refuse to merge them.
        """
        obs_a, obs_b = np.asarray(obs_a), np.asarray(obs_b)
        if obs_a.shape != (OBS_DIM,) or obs_b.shape != (OBS_DIM,):
            raise ConfigError(f"particle observations have {OBS_DIM} entries")
        landmarks_a = obs_a[4:10].reshape(N_LANDMARKS, 2) + obs_a[0:2]
        landmarks_b = obs_b[4:10].reshape(N_LANDMARKS, 2) + obs_b[0:2]
        if np.abs(landmarks_a - landmarks_b).max() > tol:
            raise JointObservabilityError(
                "observations disagree on landmark positions; not the same state")
        return ParticleState(
            agent_pos=np.stack([obs_a[0:2], obs_b[0:2]]),
            agent_vel=np.stack([obs_a[2:4], obs_b[2:4]]),
            landmark_pos=landmarks_a,
            targets=np.array([int(np.argmax(obs_b[10:])), int(np.argmax(obs_a[10:]))]),
        )

    @staticmethod
    def comm_fact(state: ParticleState, agent: int) -> int:
        """The fact this agent alone can tell: the other agent's target color."""
        return int(state.targets[1 - agent])
