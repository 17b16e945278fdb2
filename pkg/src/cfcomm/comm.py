"""Discrete message channel with a one-step delivery delay.

Messages emitted at step t arrive at step t+1. Nobody hears their own
message: each agent receives the messages of all the others, ordered by
sender index. At the first step of an episode every agent receives the null
message, which is message index 0 of the alphabet (it is not a separate
symbol, so "said nothing yet" and "said 0" are deliberately conflated).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .probs import one_hot

NULL_MESSAGE = 0


@dataclass(frozen=True)
class Channel:
    """Message alphabet for a team: ``bits`` bits give ``2**bits`` symbols."""

    n_agents: int
    bits: int

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigError("a channel needs at least two agents")
        if self.bits < 1:
            raise ConfigError("messages need at least one bit")

    @property
    def n_messages(self) -> int:
        return 2 ** self.bits

    def initial_inbox(self) -> np.ndarray:
        """Incoming messages at t=0: the null message for everyone."""
        return np.full((self.n_agents, self.n_agents - 1), NULL_MESSAGE, dtype=np.int64)

    def route(self, outgoing) -> np.ndarray:
        """Deliver ``outgoing[sender]`` to every other agent.

        Returns ``inbox[receiver]`` = messages of all senders != receiver,
        ordered by sender index. For two agents this is a swap.
        """
        outgoing = np.asarray(outgoing, dtype=np.int64)
        if outgoing.shape[-1] != self.n_agents:
            raise ConfigError(
                f"expected one outgoing message per {self.n_agents} agents, got shape {outgoing.shape}")
        if outgoing.min() < 0 or outgoing.max() >= self.n_messages:
            raise ConfigError(
                f"message index outside alphabet of {self.n_messages} symbols")
        inbox = np.empty(outgoing.shape[:-1] + (self.n_agents, self.n_agents - 1), dtype=np.int64)
        for receiver in range(self.n_agents):
            senders = [s for s in range(self.n_agents) if s != receiver]
            inbox[..., receiver, :] = outgoing[..., senders]
        return inbox

    def inbox_encoding(self, inbox) -> np.ndarray:
        """One-hot encode an inbox row (or batch of rows), flattened."""
        inbox = np.asarray(inbox, dtype=np.int64)
        enc = one_hot(inbox, self.n_messages)
        return enc.reshape(inbox.shape[:-1] + ((self.n_agents - 1) * self.n_messages,))

    @property
    def inbox_dim(self) -> int:
        return (self.n_agents - 1) * self.n_messages
