"""Pose and mesh evaluation metrics and the composite final-mesh loss.

Positions are meters; MPJPE, PA-MPJPE and MPVPE are reported in
centimeters. MPERE is dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .body_model import BodyModel, regress_joints
from .errors import DegenerateConfigurationError, NumericError, ParameterError
from .geometry import Mesh, as_points, edge_lengths, face_normals, unique_edges

M_TO_CM = 100.0


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = as_points(pred), as_points(gt)
    if p.shape != g.shape:
        raise ParameterError(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p, g


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in cm."""
    p, g = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(p - g, axis=1)) * M_TO_CM)


def similarity_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Least-squares similarity transform (rotation, translation, scale) of pred onto gt."""
    p, g = _pair(pred, gt)
    mp, mg = p.mean(axis=0), g.mean(axis=0)
    x, y = p - mp, g - mg
    var = np.sum(x * x)
    H = x.T @ y
    U, D, Vt = np.linalg.svd(H)
    if len(p) < 3 or var <= 0 or D[1] <= 1e-12 * max(D[0], 1e-300):
        raise DegenerateConfigurationError("need at least 3 non-collinear joints for alignment",
                                           rank=int(np.count_nonzero(D > 1e-12 * max(D[0], 1e-300))))
    S = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        S[2, 2] = -1.0
    R = Vt.T @ S @ U.T
    scale = np.trace(np.diag(D) @ S) / var
    return scale * x @ R.T + mg


def pa_mpjpe(pred, gt) -> float:
    """MPJPE after optimal similarity alignment, in cm."""
    p, g = _pair(pred, gt)
    return mpjpe(similarity_align(p, g), g)


def mpvpe(pred, gt) -> float:
    """Mean per-vertex position error in cm."""
    p, g = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(p - g, axis=1)) * M_TO_CM)


def _edges_of(pred, gt, edges) -> np.ndarray:
    if edges is not None:
        return np.asarray(edges, dtype=np.int64)
    for m in (gt, pred):
        if isinstance(m, Mesh):
            return m.edges
    raise ParameterError("edge set required when inputs are not meshes")


def mpere(pred, gt, edges: np.ndarray | None = None) -> float:
    """Mean over unique edges of |pred length - gt length| / gt length."""
    if isinstance(pred, Mesh) and isinstance(gt, Mesh) and not np.array_equal(pred.faces, gt.faces):
        raise ParameterError("meshes have different topology")
    p, g = _pair(pred, gt)
    e = _edges_of(pred, gt, edges)
    gl = edge_lengths(g, e)
    zero = np.flatnonzero(gl <= 0)
    if zero.size:
        a, b = e[zero[0]]
        raise NumericError(f"ground-truth edge ({a}, {b}) has zero length")
    pl = edge_lengths(p, e)
    return float(np.mean(np.abs(pl - gl) / gl))


class MeshLoss(NamedTuple):
    vertex: float
    joint: float
    normal: float
    edge: float
    total: float
    skipped_faces: int


@dataclass(frozen=True)
class LossWeights:
    vertex: float = 1.0
    joint: float = 1.0
    normal: float = 1.0
    edge: float = 1.0


def mesh_loss_F(pred: Mesh, gt: Mesh, model: BodyModel, weights: LossWeights = LossWeights()) -> MeshLoss:
    """Vertex, joint, surface-normal and edge-length terms of the final mesh loss.

    * vertex: mean absolute coordinate error.
    * joint: mean absolute coordinate error of regressed joints.
    * normal: mean over faces of 1 - cos between unit face normals; faces
      of zero area in ``gt`` are skipped and counted.
    * edge: mean absolute edge-length difference.
    """
    if not np.array_equal(pred.faces, gt.faces):
        raise ParameterError("meshes have different topology")
    p, g = _pair(pred, gt)
    vertex = float(np.mean(np.abs(p - g)))
    joint = float(np.mean(np.abs(regress_joints(model, p) - regress_joints(model, g))))
    n_pred, _ = face_normals(p, gt.faces)
    n_gt, area = face_normals(g, gt.faces)
    valid = area > 0
    skipped = int(np.count_nonzero(~valid))
    if np.any(valid):
        # 1 - cos of unit vectors, written so that equal normals give exactly 0
        diff = n_pred[valid] - n_gt[valid]
        term = 0.5 * np.sum(diff * diff, axis=1)
        term[~np.any(n_pred[valid], axis=1)] = 1.0  # collapsed prediction: cos = 0
        normal = float(np.mean(term))
    else:
        normal = 0.0
    e = gt.edges
    edge = float(np.mean(np.abs(edge_lengths(p, e) - edge_lengths(g, e)))) if len(e) else 0.0
    total = weights.vertex * vertex + weights.joint * joint + weights.normal * normal + weights.edge * edge
    return MeshLoss(vertex, joint, normal, edge, total, skipped)


def macro_average(values: Iterable[float]) -> float:
    """Mean of per-sample metric values."""
    vals = list(values)
    return float(np.mean(vals)) if vals else float("nan")


def per_joint_errors(pred, gt) -> np.ndarray:
    """Euclidean error of every joint in cm."""
    p, g = _pair(pred, gt)
    return np.linalg.norm(p - g, axis=1) * M_TO_CM


__all__ = [
    "mpjpe", "pa_mpjpe", "mpvpe", "mpere", "mesh_loss_F", "MeshLoss", "LossWeights",
    "similarity_align", "macro_average", "per_joint_errors", "unique_edges",
]
