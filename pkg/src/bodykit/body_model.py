"""Parametric body model container and linear blend skinning.

A model is a rest-pose template mesh, per-joint skinning weights, a kinematic
tree and a joint regressor, optionally with a linear shape basis. Posing
follows the usual SMPL convention: local axis-angle rotations compose down
the tree, joint ``j`` rotates about its rest position, and the root joint is
additionally translated by ``root_translation``. Pose correctives are not
modelled.

Model files are JSON (``format_version`` 1)::

    {
      "format_version": 1,
      "template_vertices": [[x, y, z], ...],          # V rows, meters
      "faces": [[a, b, c], ...],                       # F rows, 0-based
      "lbs_weights": [[...V reals...], ...],           # J rows
      "parents": [-1, 0, ...],                         # J ints, root first
      "joint_regressor": {"shape": [J, V], "rows": [...], "cols": [...], "values": [...]},
      "shape_basis": [[[...B...], [...], [...]], ...],  # optional, V x 3 x B
      "joint_names": ["pelvis", ...]                   # optional
    }
"""

from __future__ import annotations

import heapq
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import ModelFormatError, NumericError, ParameterError
from .fileio import read_json, write_json
from .geometry import Mesh, as_points, edge_face_counts
from .rotations import axis_angle_jacobian, axis_angle_to_matrix

FORMAT_VERSION = 1
ROOT_SENTINEL = -1
WEIGHT_SUM_TOL = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Immutable body model. See the module docstring for field meanings."""

    template_vertices: np.ndarray
    faces: np.ndarray
    lbs_weights: np.ndarray
    parents: np.ndarray
    joint_regressor: sp.csr_matrix
    shape_basis: np.ndarray | None = None
    joint_names: tuple[str, ...] = ()

    def __post_init__(self):
        tv = np.array(self.template_vertices, dtype=float)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        w = np.array(self.lbs_weights, dtype=float)
        parents = np.array(self.parents, dtype=np.int64)
        reg = sp.csr_matrix(self.joint_regressor, dtype=float)
        reg.sort_indices()
        basis = None if self.shape_basis is None else np.array(self.shape_basis, dtype=float)

        if tv.ndim != 2 or tv.shape[1] != 3:
            raise ModelFormatError(f"template_vertices must be (V, 3), got {tv.shape}")
        V = len(tv)
        J = len(parents)
        if w.shape != (J, V):
            raise ModelFormatError(f"lbs_weights must be ({J}, {V}), got {w.shape}")
        if reg.shape != (J, V):
            raise ModelFormatError(f"joint_regressor must be ({J}, {V}), got {reg.shape}")
        if basis is not None:
            if basis.ndim == 2 and basis.shape[1] == 3:
                basis = basis[:, :, None]
            if basis.ndim != 3 or basis.shape[:2] != (V, 3):
                raise ModelFormatError(f"shape_basis must be ({V}, 3, B), got {basis.shape}")
        for name, arr in (("template_vertices", tv), ("lbs_weights", w), ("shape_basis", basis)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ModelFormatError(f"{name} contains non-finite values")
        if np.any(w < 0):
            raise ModelFormatError("lbs_weights must be non-negative")
        col_sum = w.sum(axis=0)
        bad = np.flatnonzero(np.abs(col_sum - 1.0) > WEIGHT_SUM_TOL)
        if bad.size:
            raise ModelFormatError(
                f"lbs_weights columns must sum to 1; vertex {bad[0]} sums to {col_sum[bad[0]]!r}"
            )
        if faces.size and (faces.min() < 0 or faces.max() >= V):
            raise ModelFormatError("face index out of range")
        if faces.size:
            edges, counts = edge_face_counts(faces)
            if np.any(counts > 2):
                e = edges[np.argmax(counts > 2)]
                raise ModelFormatError(f"edge ({e[0]}, {e[1]}) is shared by more than two faces")
        _validate_tree(parents)
        names = tuple(self.joint_names)
        if names and len(names) != J:
            raise ModelFormatError(f"{len(names)} joint names for {J} joints")

        object.__setattr__(self, "template_vertices", _readonly(tv))
        object.__setattr__(self, "faces", _readonly(faces))
        object.__setattr__(self, "lbs_weights", _readonly(w))
        object.__setattr__(self, "parents", _readonly(parents))
        object.__setattr__(self, "joint_regressor", reg)
        object.__setattr__(self, "shape_basis", None if basis is None else _readonly(basis))
        object.__setattr__(self, "joint_names", names or tuple(f"joint_{i}" for i in range(J)))

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_vertices(self) -> int:
        return len(self.template_vertices)

    @property
    def num_betas(self) -> int:
        return 0 if self.shape_basis is None else self.shape_basis.shape[2]

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Topological joint order: parents first, ties by ascending index."""
        return _topological_order(self.parents)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in range(self.num_joints)]
        for j, p in enumerate(self.parents.tolist()):
            if p != ROOT_SENTINEL:
                kids[p].append(j)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def joint_shape_basis(self) -> np.ndarray:
        """Regressor applied to the shape basis: (J, 3, B)."""
        if self.shape_basis is None:
            return np.zeros((self.num_joints, 3, 0))
        B = self.num_betas
        flat = self.shape_basis.reshape(self.num_vertices, 3 * B)
        return _readonly(np.asarray(self.joint_regressor @ flat).reshape(self.num_joints, 3, B))

    def template_mesh(self) -> Mesh:
        return Mesh(self.template_vertices, self.faces)

    def shaped_vertices(self, shape: "ShapeState | None" = None) -> np.ndarray:
        betas = _betas(self, shape)
        if betas.size == 0:
            return np.array(self.template_vertices)
        return self.template_vertices + self.shape_basis @ betas

    def rest_joints(self, shape: "ShapeState | None" = None) -> np.ndarray:
        return np.asarray(self.joint_regressor @ self.shaped_vertices(shape))


def _validate_tree(parents: np.ndarray) -> None:
    J = len(parents)
    if J == 0:
        raise ModelFormatError("model has no joints")
    if parents[0] != ROOT_SENTINEL:
        raise ModelFormatError(f"parents[0] must be the root sentinel {ROOT_SENTINEL}")
    for j in range(1, J):
        p = parents[j]
        if not 0 <= p < J or p == j:
            raise ModelFormatError(f"joint {j} has invalid parent {p}")
    for j in range(1, J):
        seen = set()
        k = j
        while k != 0:
            if k in seen:
                raise ModelFormatError(f"kinematic tree has a cycle through joint {j}")
            seen.add(k)
            k = int(parents[k])


def _topological_order(parents: np.ndarray) -> tuple[int, ...]:
    J = len(parents)
    kids: list[list[int]] = [[] for _ in range(J)]
    for j in range(1, J):
        kids[parents[j]].append(j)
    heap = [0]
    order = []
    while heap:
        j = heapq.heappop(heap)
        order.append(j)
        for c in kids[j]:
            heapq.heappush(heap, c)
    return tuple(order)


@dataclass(frozen=True, eq=False)
class PoseState:
    """Per-joint local axis-angle rotations and the root translation."""

    joint_rotations: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.joint_rotations, dtype=float)
        if rot.ndim == 1 and rot.size % 3 == 0:
            rot = rot.reshape(-1, 3)
        trans = np.array(self.root_translation, dtype=float).reshape(-1)
        if rot.ndim != 2 or rot.shape[1] != 3:
            raise ParameterError(f"joint_rotations must be (J, 3), got {rot.shape}")
        if trans.shape != (3,):
            raise ParameterError(f"root_translation must have 3 entries, got {trans.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise NumericError("pose contains non-finite values")
        angles = np.linalg.norm(rot, axis=1)
        if np.any(angles >= 2 * np.pi):
            raise ParameterError(f"axis-angle magnitude must be < 2*pi (joint {int(np.argmax(angles))})")
        object.__setattr__(self, "joint_rotations", _readonly(rot))
        object.__setattr__(self, "root_translation", _readonly(trans))

    @classmethod
    def zeros(cls, num_joints: int) -> "PoseState":
        return cls(np.zeros((num_joints, 3)), np.zeros(3))

    def to_dict(self) -> dict:
        return {
            "joint_rotations": self.joint_rotations.tolist(),
            "root_translation": self.root_translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PoseState":
        try:
            return cls(data["joint_rotations"], data.get("root_translation", [0.0, 0.0, 0.0]))
        except KeyError as exc:
            raise ParameterError(f"pose record is missing {exc}") from None


@dataclass(frozen=True, eq=False)
class ShapeState:
    """Shape coefficients; empty for models without a shape basis."""

    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    limit: float = 5.0

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise NumericError("shape coefficients must be finite")
        if np.any(np.abs(c) > self.limit):
            raise ParameterError(f"shape coefficient magnitude exceeds {self.limit}")
        object.__setattr__(self, "coefficients", _readonly(c))

    @classmethod
    def clamped(cls, coefficients, limit: float = 5.0) -> "ShapeState":
        return cls(np.clip(np.asarray(coefficients, dtype=float), -limit, limit), limit)

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ShapeState":
        return cls(data.get("coefficients", []))


def _betas(model: BodyModel, shape: ShapeState | None) -> np.ndarray:
    if shape is None or shape.coefficients.size == 0:
        return np.zeros(model.num_betas)
    if shape.coefficients.size != model.num_betas:
        raise ParameterError(
            f"model has {model.num_betas} shape coefficients, got {shape.coefficients.size}"
        )
    return shape.coefficients


def _check_pose(model: BodyModel, pose: PoseState) -> None:
    if pose.joint_rotations.shape[0] != model.num_joints:
        raise ParameterError(
            f"model has {model.num_joints} joints, pose has {pose.joint_rotations.shape[0]}"
        )


class LbsOutput(NamedTuple):
    mesh: Mesh
    joints: np.ndarray
    global_transforms: np.ndarray  # (J, 4, 4)


def global_rigid_transforms(
    model: BodyModel, pose: PoseState, rest_joints: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward kinematics: global rotations (J,3,3), posed joints (J,3), local rotations.

    Joints are accumulated as displacements from their rest positions, so
    the identity pose returns the rest joints bit for bit.
    """
    local = axis_angle_to_matrix(pose.joint_rotations)
    A = np.empty_like(local)
    delta = np.empty((model.num_joints, 3))
    parents = model.parents
    eye = np.eye(3)
    for j in model.order:
        p = parents[j]
        if p == ROOT_SENTINEL:
            A[j] = local[j]
            delta[j] = pose.root_translation
        else:
            A[j] = A[p] @ local[j]
            delta[j] = delta[p] + (A[p] - eye) @ (rest_joints[j] - rest_joints[p])
    return A, rest_joints + delta, local


def homogeneous_transforms(A: np.ndarray, posed_joints: np.ndarray, rest_joints: np.ndarray) -> np.ndarray:
    """4x4 skinning matrices mapping rest positions to posed positions per joint."""
    out = np.zeros((len(A), 4, 4))
    out[:, :3, :3] = A
    # g - A r written as (g - r) - (A - I) r: exactly zero at the identity pose
    out[:, :3, 3] = (posed_joints - rest_joints) - np.einsum("jab,jb->ja", A - np.eye(3), rest_joints)
    out[:, 3, 3] = 1.0
    return out


def skin(weights: np.ndarray, transforms: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Blend per-joint 4x4 transforms with weights (J, V) and apply to vertices.

    Blends ``transform - identity`` and adds the result to the rest vertex,
    which equals the usual blend when weights sum to one and keeps the
    identity pose exact.
    """
    D = transforms[:, :3, :].copy()
    D[:, :, :3] -= np.eye(3)
    T = np.einsum("jv,jab->vab", weights, D)
    return vertices + (np.einsum("vab,vb->va", T[:, :, :3], vertices) + T[:, :, 3])


def lbs_forward(model: BodyModel, pose: PoseState, shape: ShapeState | None = None) -> LbsOutput:
    """Pose the model: returns the skinned mesh, posed joints and skinning transforms."""
    _check_pose(model, pose)
    v_shaped = model.shaped_vertices(shape)
    rest = np.asarray(model.joint_regressor @ v_shaped)
    A, g, _ = global_rigid_transforms(model, pose, rest)
    transforms = homogeneous_transforms(A, g, rest)
    verts = skin(model.lbs_weights, transforms, v_shaped)
    if not np.all(np.isfinite(verts)):
        raise NumericError("skinning produced non-finite vertices")
    return LbsOutput(Mesh(verts, model.faces), g, transforms)


def regress_joints(model: BodyModel, mesh) -> np.ndarray:
    """Apply the joint regressor to a mesh (or an (V, 3) array)."""
    v = as_points(mesh)
    if len(v) != model.num_vertices:
        raise ParameterError(f"mesh has {len(v)} vertices, model expects {model.num_vertices}")
    return np.asarray(model.joint_regressor @ v)


def parameter_count(model: BodyModel) -> int:
    """Length of the packed parameter vector ``[translation, rotations, betas]``."""
    return 3 + 3 * model.num_joints + model.num_betas


def pack_parameters(pose: PoseState, shape: ShapeState | None, num_betas: int) -> np.ndarray:
    betas = np.zeros(num_betas) if shape is None or shape.coefficients.size == 0 else shape.coefficients
    return np.concatenate([pose.root_translation, pose.joint_rotations.reshape(-1), betas])


def unpack_parameters(model: BodyModel, x: np.ndarray) -> tuple[PoseState, ShapeState]:
    J = model.num_joints
    pose = PoseState(x[3:3 + 3 * J].reshape(J, 3), x[:3])
    betas = x[3 + 3 * J:]
    return pose, ShapeState(betas, limit=np.inf)


def lbs_jacobian(
    model: BodyModel, pose: PoseState, shape: ShapeState | None = None, *, vertices: bool = False
) -> tuple[np.ndarray, np.ndarray | None]:
    """Analytic derivatives of posed joints (and optionally vertices).

    Derivatives are taken with respect to the packed parameter vector
    ``[root_translation (3), joint_rotations (3J), betas (B)]`` and returned
    with shape (P, J, 3) for joints and (P, V, 3) for vertices (None unless
    requested). Forward-mode propagation down the kinematic tree.
    """
    _check_pose(model, pose)
    J, B = model.num_joints, model.num_betas
    P = 3 + 3 * J + B
    v_shaped = model.shaped_vertices(shape)
    rest = np.asarray(model.joint_regressor @ v_shaped)
    A, g, local = global_rigid_transforms(model, pose, rest)
    dlocal = axis_angle_jacobian(pose.joint_rotations)  # (J, 3, 3, 3)
    jdir = model.joint_shape_basis  # (J, 3, B)
    beta_slice = slice(3 + 3 * J, P)

    dA = np.zeros((P, J, 3, 3))
    dg = np.zeros((P, J, 3))
    for j in model.order:
        p = model.parents[j]
        rot_slice = slice(3 + 3 * j, 6 + 3 * j)
        if p == ROOT_SENTINEL:
            dA[rot_slice, j] = dlocal[j]
            dg[0:3, j] = np.eye(3)
            if B:
                dg[beta_slice, j] = jdir[j].T
        else:
            bone = rest[j] - rest[p]
            dA[:, j] = dA[:, p] @ local[j]
            dA[rot_slice, j] += A[p] @ dlocal[j]
            dg[:, j] = dg[:, p] + dA[:, p] @ bone
            if B:
                dg[beta_slice, j] += (A[p] @ (jdir[j] - jdir[p])).T

    if not vertices:
        return dg, None
    W = model.lbs_weights
    local_offsets = v_shaped[None, :, :] - rest[:, None, :]  # (J, V, 3)
    dv = np.einsum("pjab,jv,jvb->pva", dA, W, local_offsets) + np.einsum("pja,jv->pva", dg, W)
    if B:
        basis = model.shape_basis  # (V, 3, B)
        # d(v_shaped - rest_j)/dbeta rotated by A_j
        d_off = basis[None, :, :, :] - jdir[:, None, :, :]  # (J, V, 3, B)
        dv[beta_slice] += np.einsum("jv,jab,jvbk->kva", W, A, d_off)
    return dg, dv


# ---------------------------------------------------------------- serialization


def model_to_dict(model: BodyModel) -> dict:
    reg = model.joint_regressor.tocoo()
    order = np.lexsort((reg.col, reg.row))
    data = {
        "format_version": FORMAT_VERSION,
        "template_vertices": model.template_vertices.tolist(),
        "faces": model.faces.tolist(),
        "lbs_weights": model.lbs_weights.tolist(),
        "parents": model.parents.tolist(),
        "joint_regressor": {
            "shape": list(reg.shape),
            "rows": reg.row[order].tolist(),
            "cols": reg.col[order].tolist(),
            "values": reg.data[order].tolist(),
        },
        "joint_names": list(model.joint_names),
    }
    if model.shape_basis is not None:
        data["shape_basis"] = model.shape_basis.tolist()
    return data


def model_from_dict(data: dict) -> BodyModel:
    if not isinstance(data, dict):
        raise ModelFormatError("model file must contain a JSON object")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}; expected {FORMAT_VERSION}")
    try:
        reg = data["joint_regressor"]
        if isinstance(reg, dict):
            regressor = sp.csr_matrix(
                (np.asarray(reg["values"], dtype=float),
                 (np.asarray(reg["rows"], dtype=np.int64), np.asarray(reg["cols"], dtype=np.int64))),
                shape=tuple(reg["shape"]),
            )
        else:
            regressor = sp.csr_matrix(np.asarray(reg, dtype=float))
        return BodyModel(
            template_vertices=np.asarray(data["template_vertices"], dtype=float),
            faces=np.asarray(data["faces"], dtype=np.int64),
            lbs_weights=np.asarray(data["lbs_weights"], dtype=float),
            parents=np.asarray(data["parents"], dtype=np.int64),
            joint_regressor=regressor,
            shape_basis=None if data.get("shape_basis") is None else np.asarray(data["shape_basis"], dtype=float),
            joint_names=tuple(data.get("joint_names", ())),
        )
    except KeyError as exc:
        raise ModelFormatError(f"model file is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from None


def save_model(path: str | os.PathLike, model: BodyModel) -> None:
    write_json(path, model_to_dict(model))


def load_model(path: str | os.PathLike) -> BodyModel:
    return model_from_dict(read_json(path))
