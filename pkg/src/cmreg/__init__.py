"""Contact-manifold registration of a hole pose from peg contact observations."""
from ._backend import BACKEND
from .pose import Pose6, RigidTransform, compose, inverse, mean_pose, euclidean_distance

__version__ = "0.1.0"

__all__ = ["BACKEND", "Pose6", "RigidTransform", "compose", "inverse", "mean_pose",
           "euclidean_distance"]
