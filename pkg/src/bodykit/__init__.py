"""bodykit: parametric body-model toolkit for LiDAR human mesh work.

Linear blend skinning, mesh-based inverse kinematics, point-vote fusion,
heavy-edge-matching mesh hierarchies, evaluation metrics, a synthetic
LiDAR scanner and a joint-target body fitter.
"""

__version__ = "0.1.0"
