"""Socially-compliant navigation learned from pedestrian trajectory observations.

The package trains a navigation agent two ways: by maximum-entropy inverse
reinforcement learning over the agent's own replay buffer (a state-only reward
network fit to expert pedestrian features), or by soft actor-critic on a
hand-crafted goal/collision reward.  A deterministic crowd simulator replays
recorded pedestrians around the agent, and an evaluation suite scores the
resulting policies on proxemic intrusions, drift from ground truth, and
goal-reaching success.
"""

__version__ = "0.1.0"
