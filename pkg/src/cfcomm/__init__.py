"""cfcomm: two-agent teams learning discrete communication protocols.

Agents act in small cooperative worlds where each one holds a piece of
information the other needs. A centralized action-value critic scores joint
actions; counterfactual advantages derived from it train both the action
policy and the communication policy, and a divergence bonus keeps listeners
responsive to messages early in training.
"""

__version__ = "0.1.0"
