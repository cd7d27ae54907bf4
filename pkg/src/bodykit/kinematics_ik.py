"""MeshIK: body pose from an unconstrained mesh by cascaded weighted Procrustes.

Joints are solved parents-first. For joint ``i`` the vertices dominated by
``i`` are gathered, the skinned contribution of every already-solved joint
is subtracted, both point sets are expressed relative to joint ``i`` and
the rotation aligning them is found in closed form from an SVD. Joints not
yet solved contribute nothing to the subtraction, so descendant weight
mass on the selected vertices is left in the target as an approximation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .body_model import ROOT_SENTINEL, BodyModel, PoseState, ShapeState, regress_joints
from .errors import (
    ConvergenceWarning,
    DegenerateConfigurationError,
    ParameterError,
    UnsupportedOperationError,
)
from .geometry import Mesh, as_points
from .rotations import matrix_to_axis_angle

DEFAULT_WEIGHT_THRESHOLD = 0.85
EMPTY_SELECTION = -1.0
_RANK_RTOL = 1e-12


def weighted_procrustes(source: np.ndarray, target: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Proper rotation R minimising ``sum_i w_i ||target_i - R source_i||^2``.

    Points must already be centred by the caller; only the rotation is
    solved. With ``H = sum_i w_i source_i target_i^T = U D V^T`` the optimum
    is ``R = V U^T``. When that is a reflection, the column of V paired with
    the smallest singular value is negated.

    Raises:
        DegenerateConfigurationError: fewer than 3 positively weighted
            points, or rank(H) < 2.
    """
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    w = np.asarray(weights, dtype=float)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3 or w.shape != (len(src),):
        raise ParameterError("source, target must be (N, 3) and weights (N,)")
    if np.any(w < 0):
        raise ParameterError("weights must be non-negative")
    keep = w > 0
    if np.count_nonzero(keep) < 3:
        raise DegenerateConfigurationError(
            f"need at least 3 weighted points, got {np.count_nonzero(keep)}", rank=None
        )
    src, tgt, w = src[keep], tgt[keep], w[keep]
    H = (src * w[:, None]).T @ tgt
    U, D, Vt = np.linalg.svd(H)
    rank = int(np.count_nonzero(D > _RANK_RTOL * D[0])) if D[0] > 0 else 0
    if rank < 2:
        raise DegenerateConfigurationError(f"point configuration has rank {rank} < 2", rank=rank)
    V = Vt.T
    R = V @ U.T
    if np.linalg.det(R) < 0:
        V[:, 2] = -V[:, 2]
        R = V @ U.T
    return R


@dataclass(frozen=True)
class JointVertexSelection:
    """Per-joint vertex indices whose skinning weight exceeds the threshold."""

    indices_per_joint: tuple[np.ndarray, ...]
    weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD

    @property
    def empty_joints(self) -> list[int]:
        return [j for j, idx in enumerate(self.indices_per_joint) if idx.size == 0]

    def __len__(self) -> int:
        return len(self.indices_per_joint)


def select_vertices(model: BodyModel, threshold: float = DEFAULT_WEIGHT_THRESHOLD) -> JointVertexSelection:
    """Vertices ``v`` with ``lbs_weights[j, v] > threshold``, ascending per joint."""
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    idx = tuple(np.flatnonzero(row > threshold) for row in model.lbs_weights)
    return JointVertexSelection(idx, float(threshold))


@dataclass(frozen=True, eq=False)
class IkResult:
    local_rotations: np.ndarray  # (J, 3, 3)
    global_rotations: np.ndarray  # (J, 3, 3)
    pose: PoseState
    per_joint_residual: np.ndarray  # (J,), -1 marks a joint that fell back to identity

    @property
    def flagged_joints(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.per_joint_residual == EMPTY_SELECTION)]

    def to_dict(self) -> dict:
        return {
            "local_rotations": self.local_rotations.reshape(-1, 9).tolist(),
            "global_rotations": self.global_rotations.reshape(-1, 9).tolist(),
            "pose": self.pose.joint_rotations.reshape(-1).tolist(),
            "root_translation": self.pose.root_translation.tolist(),
            "per_joint_residual": self.per_joint_residual.tolist(),
            "flagged_joints": self.flagged_joints,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IkResult":
        local = np.asarray(data["local_rotations"], dtype=float).reshape(-1, 3, 3)
        return cls(
            local,
            np.asarray(data["global_rotations"], dtype=float).reshape(-1, 3, 3),
            PoseState(np.asarray(data["pose"], dtype=float).reshape(-1, 3), data["root_translation"]),
            np.asarray(data["per_joint_residual"], dtype=float),
        )


def _check_mesh(model: BodyModel, mesh) -> np.ndarray:
    v = as_points(mesh)
    if len(v) != model.num_vertices:
        raise ParameterError(f"mesh has {len(v)} vertices, model expects {model.num_vertices}")
    return v


def _root_index(model: BodyModel) -> int:
    return model.order[0]


def estimate_root_rotation(
    model: BodyModel, mesh, shaped_template, selection: JointVertexSelection
) -> np.ndarray:
    """Root rotation from the root-selected vertices, both sets centred on the root joint.

    The predicted root joint is the regressor applied to ``mesh``; the
    template root joint is the regressor applied to ``shaped_template``.
    """
    M = _check_mesh(model, mesh)
    T = _check_mesh(model, shaped_template)
    root = _root_index(model)
    idx = selection.indices_per_joint[root]
    if idx.size == 0:
        raise DegenerateConfigurationError("root joint has no selected vertices", rank=0)
    g_root = regress_joints(model, M)[root]
    j_root = regress_joints(model, T)[root]
    return weighted_procrustes(T[idx] - j_root, M[idx] - g_root, model.lbs_weights[root, idx])


def meshik(
    model: BodyModel,
    mesh,
    shape: ShapeState | None = None,
    selection: JointVertexSelection | None = None,
) -> IkResult:
    """Recover local/global joint rotations and the axis-angle pose from a mesh."""
    M = _check_mesh(model, mesh)
    if selection is None:
        selection = select_vertices(model)
    if len(selection) != model.num_joints:
        raise ParameterError("selection does not match the model's joint count")
    T = model.shaped_vertices(shape)
    rest = np.asarray(model.joint_regressor @ T)
    W = model.lbs_weights
    J = model.num_joints
    parents = model.parents

    A = np.zeros((J, 3, 3))
    local = np.zeros((J, 3, 3))
    g = np.zeros((J, 3))
    residual = np.zeros(J)
    solved: list[int] = []
    root = _root_index(model)
    g_root = regress_joints(model, M)[root]

    for i in model.order:
        p = parents[i]
        parent_A = np.eye(3) if p == ROOT_SENTINEL else A[p]
        g[i] = g_root if p == ROOT_SENTINEL else g[p] + A[p] @ (rest[i] - rest[p])
        idx = selection.indices_per_joint[i]
        try:
            if idx.size == 0:
                raise DegenerateConfigurationError(f"joint {i} has no selected vertices", rank=0)
            t_local = T[idx] - rest[i]
            target = M[idx] - g[i]
            if solved:
                ws = W[solved][:, idx]  # (S, n)
                active = np.any(ws > 0, axis=1)
                if np.any(active):
                    ks = np.asarray(solved)[active]
                    ws = ws[active]
                    moved = np.einsum("kab,knb->kna", A[ks], T[idx][None] - rest[ks][:, None])
                    moved += (g[ks] - g[i])[:, None, :]
                    target = target - np.einsum("kn,kna->na", ws, moved)
            wi = W[i, idx]
            A[i] = weighted_procrustes(t_local, target, wi)
            local[i] = parent_A.T @ A[i]
            pred = wi[:, None] * (t_local @ A[i].T)
            residual[i] = np.sqrt(np.sum(wi * np.sum((target - pred) ** 2, axis=1)) / np.sum(wi))
        except DegenerateConfigurationError:
            local[i] = np.eye(3)
            A[i] = parent_A
            residual[i] = EMPTY_SELECTION
        solved.append(i)

    pose = PoseState(matrix_to_axis_angle(local), g[root] - rest[root])
    return IkResult(local, A, pose, residual)


def estimate_shape(
    model: BodyModel,
    mesh,
    *,
    max_iterations: int = 50,
    damping: float = 1e-3,
    tol: float = 1e-12,
    limit: float = 5.0,
) -> ShapeState:
    """Shape coefficients matching the mesh's bone lengths (damped Gauss-Newton).

    Bone lengths are measured between regressed joints of the predicted
    mesh and compared with those of the shaped template. A
    :class:`ConvergenceWarning` is emitted if the step does not settle
    within ``max_iterations``; the best iterate is returned.
    """
    if model.shape_basis is None:
        raise UnsupportedOperationError("model has no shape basis")
    M = _check_mesh(model, mesh)
    posed = regress_joints(model, M)
    bones = [j for j in range(model.num_joints) if model.parents[j] != ROOT_SENTINEL]
    par = model.parents[bones]
    target = np.linalg.norm(posed[bones] - posed[par], axis=1)
    rest0 = regress_joints(model, model.template_vertices)
    jdir = model.joint_shape_basis  # (J, 3, B)
    dbone = jdir[bones] - jdir[par]  # (nb, 3, B)
    base = rest0[bones] - rest0[par]

    beta = np.zeros(model.num_betas)
    best, best_cost = beta.copy(), np.inf
    converged = False
    for _ in range(max_iterations):
        vec = base + dbone @ beta
        length = np.linalg.norm(vec, axis=1)
        r = length - target
        cost = float(r @ r)
        if cost < best_cost:
            best, best_cost = beta.copy(), cost
        Jac = np.einsum("na,nab->nb", vec / length[:, None], dbone)
        JtJ = Jac.T @ Jac
        # damping relative to the mean curvature, so it is unit-free
        mu = damping * max(float(np.trace(JtJ)) / len(beta), 1e-300)
        step = np.linalg.solve(JtJ + mu * np.eye(len(beta)), -Jac.T @ r)
        beta = beta + step
        if np.linalg.norm(step) < tol:
            converged = True
            break
    vec = base + dbone @ beta
    r = np.linalg.norm(vec, axis=1) - target
    if float(r @ r) < best_cost:
        best = beta
    if not converged:
        warnings.warn("shape estimation did not converge; returning best iterate", ConvergenceWarning)
    return ShapeState.clamped(best, limit)


def ik_from_mesh(model: BodyModel, mesh: Mesh, threshold: float = DEFAULT_WEIGHT_THRESHOLD,
                 estimate_body_shape: bool = False) -> tuple[IkResult, ShapeState | None]:
    """Convenience wrapper: optional shape estimate, selection and MeshIK."""
    shape = estimate_shape(model, mesh) if estimate_body_shape else None
    return meshik(model, mesh, shape, select_vertices(model, threshold)), shape
