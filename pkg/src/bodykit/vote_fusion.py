"""Per-point joint votes: Gaussian fusion, training targets and losses.

Every point ``p_i`` casts one offset ``d_i`` shared by all joints, so its
vote location ``mu_i = p_i + d_i`` is the same for every joint, and a
confidence ``q_ik`` in (0, 1] per joint (the inverse variance of the vote).
Fusing the independent Gaussian votes gives the precision-weighted mean
``sum_i q_ik mu_i / sum_i q_ik`` for joint ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NumericError, ParameterError
from .geometry import PointCloud, Skeleton, as_points

CONFIDENCE_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class VoteSet:
    offsets: np.ndarray  # (N, 3)
    confidences: np.ndarray  # (N, J), each in (0, 1]

    def __post_init__(self):
        d = np.array(self.offsets, dtype=float)
        q = np.array(self.confidences, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3:
            raise ParameterError(f"offsets must be (N, 3), got {d.shape}")
        if q.ndim != 2 or q.shape[0] != d.shape[0]:
            raise ParameterError(f"confidences must be (N, J) with N={d.shape[0]}, got {q.shape}")
        if not np.all(np.isfinite(d)):
            raise NumericError("vote offsets must be finite")
        if not np.all((q > 0) & (q <= 1)):
            raise ParameterError("vote confidences must lie in (0, 1]")
        d.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "offsets", d)
        object.__setattr__(self, "confidences", q)

    @property
    def num_joints(self) -> int:
        return self.confidences.shape[1]

    def to_dict(self) -> dict:
        return {"offsets": self.offsets.tolist(), "confidences": self.confidences.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "VoteSet":
        return cls(np.asarray(data["offsets"], dtype=float), np.asarray(data["confidences"], dtype=float))


class FusedSkeleton(NamedTuple):
    skeleton: Skeleton
    undefined: list[int]  # joints with zero total confidence; their position is 0


def fuse_votes(cloud: PointCloud, votes: VoteSet, joint_names=()) -> FusedSkeleton:
    """Precision-weighted fusion of point votes into one position per joint."""
    p = as_points(cloud)
    if len(p) == 0:
        raise ParameterError("cannot fuse votes from an empty cloud")
    if len(p) != len(votes.offsets):
        raise ParameterError(f"{len(p)} points but {len(votes.offsets)} votes")
    mu = p + votes.offsets
    q = votes.confidences
    total = q.sum(axis=0)
    undefined = [int(k) for k in np.flatnonzero(total <= 0)]
    safe = np.where(total > 0, total, 1.0)
    joints = (q.T @ mu) / safe[:, None]
    joints[undefined] = 0.0
    return FusedSkeleton(Skeleton(joints, tuple(joint_names)), undefined)


def make_vote_targets(
    cloud: PointCloud, gt: Skeleton, assignment_radius: float, floor: float = CONFIDENCE_FLOOR
) -> VoteSet:
    """Ground-truth votes: every point points at its nearest joint.

    Confidence is 1 for that joint when it lies within ``assignment_radius``
    and ``floor`` everywhere else. Ties in distance go to the lower joint
    index.
    """
    if not assignment_radius > 0:
        raise ParameterError("assignment_radius must be positive")
    if not 0 < floor <= 1:
        raise ParameterError("floor must lie in (0, 1]")
    p = as_points(cloud)
    j = as_points(gt)
    dist = np.linalg.norm(p[:, None, :] - j[None, :, :], axis=2)
    nearest = np.argmin(dist, axis=1)  # first minimum = lowest index
    offsets = j[nearest] - p
    q = np.full((len(p), len(j)), floor)
    inside = dist[np.arange(len(p)), nearest] <= assignment_radius
    q[np.flatnonzero(inside), nearest[inside]] = 1.0
    return VoteSet(offsets, q)


class PrnLosses(NamedTuple):
    joint: float
    offset: float
    confidence: float
    total: float


def _row_distributions(q: np.ndarray) -> np.ndarray:
    return q / q.sum(axis=1, keepdims=True)


def prn_losses(pred_skel: Skeleton, pred_votes: VoteSet, gt_skel: Skeleton, gt_votes: VoteSet) -> PrnLosses:
    """Joint, vote-location and confidence losses plus their plain sum.

    * joint: mean Euclidean distance over joints.
    * offset: summed Euclidean distance between predicted and target vote
      locations. Both share the same points, so this is the offset error.
    * confidence: summed cross-entropy between per-point confidence rows,
      each normalized to a distribution first.
    """
    pj, gj = as_points(pred_skel), as_points(gt_skel)
    if pj.shape != gj.shape:
        raise ParameterError(f"skeleton shapes differ: {pj.shape} vs {gj.shape}")
    if pred_votes.offsets.shape != gt_votes.offsets.shape or pred_votes.confidences.shape != gt_votes.confidences.shape:
        raise ParameterError("vote sets have different shapes")
    joint = float(np.mean(np.linalg.norm(pj - gj, axis=1)))
    offset = float(np.sum(np.linalg.norm(pred_votes.offsets - gt_votes.offsets, axis=1)))
    pred_dist = _row_distributions(pred_votes.confidences)
    target_dist = _row_distributions(gt_votes.confidences)
    confidence = float(-np.sum(target_dist * np.log(pred_dist)))
    return PrnLosses(joint, offset, confidence, joint + offset + confidence)
