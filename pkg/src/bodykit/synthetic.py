"""Procedural tube-limb body models for self-contained testing.

Each bone becomes a capped cylinder owned (skinned) by the bone's parent
joint; leaf joints get a short terminal cylinder. All caps at a joint fan
into one shared joint-center vertex, which keeps the mesh connected.

Skinning weights are uniform around every ring, so ring centroids move
exactly like the kinematic joints and the joint regressor (the centroid of
the ring sitting on each joint) agrees with forward kinematics in both the
rigid and the soft mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .body_model import ROOT_SENTINEL, BodyModel
from .errors import ParameterError

SMPL_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)
SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# T-pose rest joints, y up, +x towards the body's left, +z forward.
_SMPL_REST = np.array([
    [0.00, 0.00, 0.00],
    [0.07, -0.09, 0.00], [-0.07, -0.09, 0.00],
    [0.00, 0.11, -0.01],
    [0.10, -0.48, 0.01], [-0.10, -0.48, 0.01],
    [0.00, 0.24, 0.00],
    [0.10, -0.88, -0.03], [-0.10, -0.88, -0.03],
    [0.00, 0.30, 0.01],
    [0.11, -0.94, 0.10], [-0.11, -0.94, 0.10],
    [0.00, 0.52, -0.01],
    [0.07, 0.43, 0.00], [-0.07, 0.43, 0.00],
    [0.00, 0.62, 0.04],
    [0.18, 0.45, -0.01], [-0.18, 0.45, -0.01],
    [0.44, 0.45, -0.02], [-0.44, 0.45, -0.02],
    [0.69, 0.45, -0.01], [-0.69, 0.45, -0.01],
    [0.77, 0.45, -0.01], [-0.77, 0.45, -0.01],
])
_SMPL_RADIUS = (0.085, 0.065, 0.065, 0.08, 0.05, 0.05, 0.08, 0.04, 0.04, 0.075, 0.03, 0.03,
                0.05, 0.05, 0.05, 0.09, 0.045, 0.045, 0.04, 0.04, 0.03, 0.03, 0.03, 0.03)
_SMPL_LEAF_LENGTH = {10: 0.06, 11: 0.06, 15: 0.16, 22: 0.08, 23: 0.08}
_SMPL_LEG_JOINTS = (4, 5, 7, 8, 10, 11)
_SMPL_ARM_JOINTS = (18, 19, 20, 21, 22, 23)

GLOBAL_SCALE_STEP = 0.05  # relative size change per unit coefficient
ELONGATION_STEP = 0.05


@dataclass(frozen=True)
class _Tube:
    owner: int
    child: int | None
    start: np.ndarray
    end: np.ndarray
    radius: float


def _layout(joint_count: int, layout: str):
    if layout == "smpl":
        if not 1 <= joint_count <= 24:
            raise ParameterError("smpl layout supports 1..24 joints")
        parents = np.array(SMPL_PARENTS[:joint_count])
        rest = _SMPL_REST[:joint_count].copy()
        radius = np.array(_SMPL_RADIUS[:joint_count])
        names = SMPL_JOINT_NAMES[:joint_count]
        groups = [g for g in ([j for j in _SMPL_LEG_JOINTS if j < joint_count],
                              [j for j in _SMPL_ARM_JOINTS if j < joint_count]) if g]
        leaf_len = {j: _SMPL_LEAF_LENGTH.get(j, 0.08) for j in range(joint_count)}
    elif layout == "chain":
        if joint_count < 1:
            raise ParameterError("joint_count must be positive")
        parents = np.arange(-1, joint_count - 1)
        rest = np.zeros((joint_count, 3))
        rest[:, 0] = 0.25 * np.arange(joint_count)
        radius = np.full(joint_count, 0.04)
        names = tuple(f"link_{i}" for i in range(joint_count))
        distal = list(range(max(1, joint_count // 2), joint_count))
        groups = [distal] if joint_count > 1 else []
        leaf_len = {j: 0.1 for j in range(joint_count)}
    else:
        raise ParameterError(f"unknown layout {layout!r}")
    return parents, rest, radius, names, groups, leaf_len


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors u, w with (u, w, axis) right-handed."""
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, axis)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    return u, w


def make_synthetic_model(
    joint_count: int = 24,
    ring_resolution: int = 8,
    *,
    rigid: bool = False,
    rings_per_bone: int = 6,
    blend_width: float = 0.5,
    blend_power: float = 2.0,
    layout: str | None = None,
    with_shape: bool = True,
) -> BodyModel:
    """Build a tube-limb model.

    Args:
        joint_count: number of joints J. The "smpl" layout (default for
            J <= 24) uses the first J joints of the SMPL kinematic tree; the
            "chain" layout lines joints up along +x at 0.25 m spacing.
        ring_resolution: vertices per ring (>= 3).
        rigid: every vertex gets weight 1 on its owning joint.
        rings_per_bone: rings per cylinder including both end rings.
        blend_width: soft mode only. Fraction of each bone, measured from
            either end, over which weight ramps from 1 down to 0.5
            towards the neighbouring joint.
        blend_power: exponent of the ramp; 1 is linear, 2 eases in so
            weight leaks off the owning joint slowly near mid-bone.
        layout: "smpl" or "chain".
        with_shape: attach a linear shape basis (global size plus one
            elongation direction per limb group).
    """
    if ring_resolution < 3:
        raise ParameterError("ring_resolution must be >= 3")
    if rings_per_bone < 2:
        raise ParameterError("rings_per_bone must be >= 2")
    if not 0 < blend_width <= 0.5:
        raise ParameterError("blend_width must be in (0, 0.5]")
    if blend_power <= 0:
        raise ParameterError("blend_power must be positive")
    layout = layout or ("smpl" if joint_count <= 24 else "chain")
    parents, rest, radius, names, groups, leaf_len = _layout(joint_count, layout)
    J = joint_count
    kids: list[list[int]] = [[] for _ in range(J)]
    for j in range(1, J):
        kids[parents[j]].append(j)

    tubes: list[_Tube] = []
    for j in range(J):
        if kids[j]:
            for c in kids[j]:
                tubes.append(_Tube(j, c, rest[j], rest[c], radius[j]))
        else:
            p = parents[j]
            direction = rest[j] - rest[p] if p != ROOT_SENTINEL else np.array([0.0, 1.0, 0.0])
            direction = direction / np.linalg.norm(direction)
            tubes.append(_Tube(j, None, rest[j], rest[j] + leaf_len[j] * direction, radius[j]))

    # vertex records: (position, {joint: weight}, (tube index or -1, s))
    positions: list[np.ndarray] = []
    weights: list[dict[int, float]] = []
    param: list[tuple[int, float]] = []
    faces: list[tuple[int, int, int]] = []

    def soft(owner: int, tube: _Tube, s: float) -> dict[int, float]:
        if rigid:
            return {owner: 1.0}
        w: dict[int, float] = {}
        if tube.child is not None and s > 1.0 - blend_width:
            w[tube.child] = 0.5 * ((s - (1.0 - blend_width)) / blend_width) ** blend_power
        p = parents[owner]
        if p != ROOT_SENTINEL and s < blend_width:
            w[p] = 0.5 * ((blend_width - s) / blend_width) ** blend_power
        w[owner] = 1.0 - sum(w.values())
        return w

    center_index = []
    for j in range(J):
        center_index.append(len(positions))
        positions.append(rest[j].copy())
        p = parents[j]
        weights.append({j: 1.0} if rigid or p == ROOT_SENTINEL else {j: 0.5, p: 0.5})
        param.append((-1, float(j)))

    n = ring_resolution
    phi = 2.0 * np.pi * np.arange(n) / n
    ring_start: list[int] = []  # first vertex of ring 0 per tube
    for t_idx, tube in enumerate(tubes):
        axis = tube.end - tube.start
        axis = axis / np.linalg.norm(axis)
        u, w = _frame(axis)
        offsets = tube.radius * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w)
        rings = []
        for k in range(rings_per_bone):
            s = k / (rings_per_bone - 1)
            center = tube.start + s * (tube.end - tube.start)
            first = len(positions)
            rings.append(first)
            wk = soft(tube.owner, tube, s)
            for m in range(n):
                positions.append(center + offsets[m])
                weights.append(dict(wk))
                param.append((t_idx, s))
        ring_start.append(rings[0])
        for k in range(rings_per_bone - 1):
            a0, b0 = rings[k], rings[k + 1]
            for m in range(n):
                m1 = (m + 1) % n
                faces.append((a0 + m, a0 + m1, b0 + m1))
                faces.append((a0 + m, b0 + m1, b0 + m))
        start_center = center_index[tube.owner]
        if tube.child is not None:
            end_center = center_index[tube.child]
        else:
            end_center = len(positions)
            positions.append(tube.end.copy())
            weights.append({tube.owner: 1.0})
            param.append((t_idx, 1.0))
        first, last = rings[0], rings[-1]
        for m in range(n):
            m1 = (m + 1) % n
            faces.append((start_center, first + m1, first + m))
            faces.append((end_center, last + m, last + m1))

    V = len(positions)
    verts = np.array(positions)
    W = np.zeros((J, V))
    for v, wd in enumerate(weights):
        for j, val in wd.items():
            W[j, v] = val
    W /= W.sum(axis=0, keepdims=True)

    # regressor: centroid of the ring lying on each joint
    rows, cols, vals = [], [], []
    for j in range(J):
        t_idx = next(i for i, t in enumerate(tubes) if t.owner == j)
        for m in range(n):
            rows.append(j)
            cols.append(ring_start[t_idx] + m)
            vals.append(1.0 / n)
    regressor = sp.csr_matrix((vals, (rows, cols)), shape=(J, V))

    basis = None
    if with_shape:
        basis = _shape_basis(verts, param, tubes, parents, rest, groups, center_index)
    return BodyModel(verts, np.array(faces, dtype=np.int64), W, parents, regressor, basis, names)


def _shape_basis(verts, param, tubes, parents, rest, groups, center_index) -> np.ndarray:
    J = len(parents)
    V = len(verts)
    directions = [GLOBAL_SCALE_STEP * verts]
    for group in groups:
        in_group = np.zeros(J, dtype=bool)
        in_group[list(group)] = True
        # displacement of each rest joint when the group's bones lengthen
        D = np.zeros((J, 3))
        for j in range(1, J):
            p = parents[j]
            D[j] = D[p] + (ELONGATION_STEP * (rest[j] - rest[p]) if in_group[j] else 0.0)
        disp = np.zeros((V, 3))
        for v, (t_idx, s) in enumerate(param):
            if t_idx < 0:
                disp[v] = D[int(s)]
                continue
            tube = tubes[t_idx]
            if tube.child is not None:
                disp[v] = D[tube.owner] + s * (D[tube.child] - D[tube.owner])
            else:
                stretch = ELONGATION_STEP * (tube.end - tube.start) if in_group[tube.owner] else 0.0
                disp[v] = D[tube.owner] + s * stretch
        directions.append(disp)
    return np.stack(directions, axis=2)
