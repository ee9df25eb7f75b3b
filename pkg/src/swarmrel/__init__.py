"""Decentralized relative state estimation for simulated aerial swarms.

Each drone runs an independent estimator that fuses its own noisy odometry
with broadcast odometry, pairwise UWB distances, and anonymous visual
detections from the rest of the swarm, solving a keyframed sliding-window
least-squares problem for the 4DoF relative poses of all peers.
"""

from swarmrel.geometry import Pose4, Tangent4, boxminus, boxplus, compose, identity, inverse, relative, wrap_angle

__all__ = [
    "Pose4",
    "Tangent4",
    "boxminus",
    "boxplus",
    "compose",
    "identity",
    "inverse",
    "relative",
    "wrap_angle",
]
