import warnings

import numpy as np
import pytest

from bodykit.body_model import PoseState, ShapeState, lbs_forward
from bodykit.errors import DegenerateConfigurationError, ParameterError, UnsupportedOperationError
from bodykit.kinematics_ik import (
    EMPTY_SELECTION,
    IkResult,
    estimate_root_rotation,
    estimate_shape,
    meshik,
    select_vertices,
    weighted_procrustes,
)
from bodykit.rotations import (
    axis_angle_to_matrix,
    matrix_to_axis_angle,
    random_axis_angle,
    random_rotation,
    rotation_angle_between,
)
from bodykit.synthetic import make_synthetic_model

from oracles import horn_rotation


def test_procrustes_identity(rng):
    s = rng.normal(size=(20, 3))
    np.testing.assert_allclose(weighted_procrustes(s, s, np.ones(20)), np.eye(3), atol=1e-12)


def test_procrustes_recovers_rotation(rng):
    for _ in range(50):
        R0 = random_rotation(rng)
        s = rng.normal(size=(30, 3))
        w = rng.uniform(0.01, 2.0, 30)
        R = weighted_procrustes(s, s @ R0.T, w)
        np.testing.assert_allclose(R, R0, atol=1e-9)


def test_procrustes_matches_horn_on_noisy_data(rng):
    for _ in range(50):
        s = rng.normal(size=(15, 3))
        t = s @ random_rotation(rng).T + 0.3 * rng.normal(size=(15, 3))
        w = rng.uniform(0.1, 1.0, 15)
        np.testing.assert_allclose(weighted_procrustes(s, t, w), horn_rotation(s, t, w), atol=1e-9)


def test_procrustes_degenerate_cases():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError) as info:
        weighted_procrustes(line, line, np.ones(5))
    assert info.value.rank == 1
    with pytest.raises(DegenerateConfigurationError):
        weighted_procrustes(np.eye(3)[:2], np.eye(3)[:2], np.ones(2))
    pts = np.eye(3)
    with pytest.raises(DegenerateConfigurationError):
        weighted_procrustes(pts, pts, np.array([1.0, 1.0, 0.0]))


def test_procrustes_never_reflects(rng):
    # mirrored targets: the unconstrained solution would be a reflection
    M = np.diag([1.0, 1.0, -1.0])
    for _ in range(50):
        s = rng.normal(size=(10, 3)) * [1.0, 1.0, 0.05]
        R = weighted_procrustes(s, s @ M.T + 1e-3 * rng.normal(size=(10, 3)), np.ones(10))
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_procrustes_weight_scale_invariance(rng):
    s = rng.normal(size=(12, 3))
    t = s @ random_rotation(rng).T + 0.1 * rng.normal(size=(12, 3))
    w = rng.uniform(0.1, 1, 12)
    np.testing.assert_allclose(weighted_procrustes(s, t, w), weighted_procrustes(s, t, 37.5 * w), atol=1e-13)


def test_procrustes_trace_optimality(rng):
    s = rng.normal(size=(12, 3))
    t = s @ random_rotation(rng).T + 0.2 * rng.normal(size=(12, 3))
    w = rng.uniform(0.1, 1, 12)
    H = (w[:, None] * t).T @ s  # sum w t s^T
    best = np.trace(weighted_procrustes(s, t, w).T @ H)
    for R in random_rotation(rng, 1000):
        assert best >= np.trace(R.T @ H) - 1e-12


def test_select_vertices_rigid_is_one_hot(rigid_model):
    sel = select_vertices(rigid_model, 0.85)
    owner = np.argmax(rigid_model.lbs_weights, axis=0)
    for j, idx in enumerate(sel.indices_per_joint):
        assert idx.tolist() == np.flatnonzero(owner == j).tolist()


def test_select_vertices_monotone_and_brute_force(soft_model):
    a = select_vertices(soft_model, 0.85)
    b = select_vertices(soft_model, 0.99)
    W = soft_model.lbs_weights
    for j in range(24):
        assert set(b.indices_per_joint[j]) <= set(a.indices_per_joint[j])
        scan = [v for v in range(W.shape[1]) if W[j, v] > 0.85]
        assert a.indices_per_joint[j].tolist() == scan
    with pytest.raises(ParameterError):
        select_vertices(soft_model, 1.0)


def test_root_rotation_identity_and_rigid(soft_model, rng):
    sel = select_vertices(soft_model)
    T = soft_model.template_mesh()
    np.testing.assert_allclose(estimate_root_rotation(soft_model, T, T, sel), np.eye(3), atol=1e-12)
    R0 = random_rotation(rng)
    moved = T.with_vertices(T.vertices @ R0.T + [1.0, 2.0, 3.0])
    np.testing.assert_allclose(estimate_root_rotation(soft_model, moved, T, sel), R0, atol=1e-9)


def _grid_search_rotation(src, dst, w, center, radius, step):
    best, best_cost = None, np.inf
    ticks = np.arange(-radius, radius + 1e-12, step)
    for a in ticks:
        for b in ticks:
            for c in ticks:
                R = axis_angle_to_matrix(np.array([a, b, c])) @ center
                cost = np.sum(w * np.sum((dst - src @ R.T) ** 2, axis=1))
                if cost < best_cost:
                    best, best_cost = R, cost
    return best


def test_root_rotation_noisy_matches_grid_search(soft_model, rng):
    sel = select_vertices(soft_model)
    idx = sel.indices_per_joint[0]
    T = soft_model.template_vertices
    R0 = random_rotation(rng)
    V = T @ R0.T
    V[idx] += 0.01 * rng.normal(size=(len(idx), 3))
    mesh = soft_model.template_mesh().with_vertices(V)
    R = estimate_root_rotation(soft_model, mesh, soft_model.template_mesh(), sel)
    # oracle: coarse-to-fine grid over rotations, costs evaluated exactly as the residual
    from bodykit.body_model import regress_joints

    src = T[idx] - regress_joints(soft_model, T)[0]
    dst = V[idx] - regress_joints(soft_model, V)[0]
    w = soft_model.lbs_weights[0, idx]
    coarse = _grid_search_rotation(src, dst[:, :], w, np.eye(3), np.pi, np.deg2rad(20))
    fine = _grid_search_rotation(src, dst, w, coarse, np.deg2rad(20), np.deg2rad(1))
    assert np.rad2deg(rotation_angle_between(R, fine)) < 2.0


def test_estimate_shape_zero_and_random(soft_model, rng):
    mesh = lbs_forward(soft_model, PoseState.zeros(24)).mesh
    assert np.linalg.norm(estimate_shape(soft_model, mesh).coefficients) < 1e-3
    for _ in range(5):
        beta = rng.uniform(-2, 2, 3)
        mesh = lbs_forward(soft_model, PoseState.zeros(24), ShapeState(beta)).mesh
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            est = estimate_shape(soft_model, mesh)
        assert np.max(np.abs(est.coefficients - beta)) < 1e-2


def test_estimate_shape_needs_basis():
    m = make_synthetic_model(5, with_shape=False)
    with pytest.raises(UnsupportedOperationError):
        estimate_shape(m, m.template_mesh())


def test_meshik_template_identity(soft_model):
    res = meshik(soft_model, soft_model.template_mesh())
    np.testing.assert_allclose(res.local_rotations, np.broadcast_to(np.eye(3), (24, 3, 3)), atol=1e-12)
    assert np.max(np.abs(res.pose.joint_rotations)) < 1e-12


def test_meshik_rigid_round_trip(rigid_model, rng):
    for _ in range(10):
        pose = PoseState(random_axis_angle(rng, 24, np.pi), rng.uniform(-1, 1, 3))
        mesh = lbs_forward(rigid_model, pose).mesh
        res = meshik(rigid_model, mesh)
        again = lbs_forward(rigid_model, res.pose).mesh
        assert np.max(np.abs(again.vertices - mesh.vertices)) < 1e-9
        truth = axis_angle_to_matrix(pose.joint_rotations)
        assert np.max(rotation_angle_between(res.local_rotations, truth)) < 1e-9


def test_meshik_result_invariants(soft_model, rng):
    pose = PoseState(random_axis_angle(rng, 24, np.pi / 3))
    res = meshik(soft_model, lbs_forward(soft_model, pose).mesh)
    for R in (res.local_rotations, res.global_rotations):
        np.testing.assert_allclose(R @ np.swapaxes(R, 1, 2), np.broadcast_to(np.eye(3), R.shape), atol=1e-9)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-9)
    for i in range(1, 24):
        p = soft_model.parents[i]
        np.testing.assert_allclose(res.global_rotations[i], res.global_rotations[p] @ res.local_rotations[i], atol=1e-12)
    assert np.all(res.per_joint_residual >= 0)


def test_meshik_equivariance(rigid_model, rng):
    pose = PoseState(random_axis_angle(rng, 24, np.pi / 2))
    mesh = lbs_forward(rigid_model, pose).mesh
    R0 = random_rotation(rng)
    base = meshik(rigid_model, mesh)
    moved = meshik(rigid_model, mesh.with_vertices(mesh.vertices @ R0.T))
    np.testing.assert_allclose(moved.global_rotations, R0 @ base.global_rotations, atol=1e-6)


def test_meshik_idempotent(rigid_model, rng):
    pose = PoseState(random_axis_angle(rng, 24, np.pi))
    first = meshik(rigid_model, lbs_forward(rigid_model, pose).mesh)
    second = meshik(rigid_model, lbs_forward(rigid_model, first.pose).mesh)
    assert np.max(np.abs(first.pose.joint_rotations - second.pose.joint_rotations)) < 1e-6


def test_meshik_soft_within_bound(soft_model, rng):
    for _ in range(10):
        pose = PoseState(random_axis_angle(rng, 24, np.pi / 3), rng.uniform(-1, 1, 3))
        mesh = lbs_forward(soft_model, pose).mesh
        again = lbs_forward(soft_model, meshik(soft_model, mesh).pose).mesh
        assert np.mean(np.linalg.norm(again.vertices - mesh.vertices, axis=1)) < 5e-3


def test_meshik_empty_selection_falls_back(soft_model, rng):
    sel = select_vertices(soft_model, 0.995)
    empty = sel.empty_joints
    assert empty, "threshold chosen so some joints have no vertices"
    pose = PoseState(random_axis_angle(rng, 24, 0.3))
    res = meshik(soft_model, lbs_forward(soft_model, pose).mesh, selection=sel)
    assert res.flagged_joints == empty
    for j in empty:
        assert res.per_joint_residual[j] == EMPTY_SELECTION
        np.testing.assert_allclose(res.local_rotations[j], np.eye(3))


def test_ik_result_json_round_trip(rigid_model, rng):
    pose = PoseState(random_axis_angle(rng, 24, 1.0))
    res = meshik(rigid_model, lbs_forward(rigid_model, pose).mesh)
    d = res.to_dict()
    assert len(d["pose"]) == 72 and len(d["local_rotations"][0]) == 9
    back = IkResult.from_dict(d)
    assert np.array_equal(back.local_rotations, res.local_rotations)
    assert np.array_equal(back.pose.joint_rotations, res.pose.joint_rotations)


def test_meshik_rejects_wrong_vertex_count(soft_model):
    with pytest.raises(ParameterError):
        meshik(soft_model, np.zeros((10, 3)))
