import warnings

import numpy as np
import pytest

from bodykit.body_model import PoseState, ShapeState, lbs_forward, pack_parameters
from bodykit.cloud_fitter import (
    FitConfig,
    FitResult,
    Objective,
    finite_difference_gradient,
    fit,
    fit_batch,
    wrap_rotations,
)
from bodykit.errors import FitError, ParameterError
from bodykit.rotations import axis_angle_to_matrix, random_axis_angle, random_rotation


def random_targets(model, rng, limb=np.pi / 3, shape=1.0):
    pose = PoseState(random_axis_angle(rng, model.num_joints, limb), rng.uniform(-1, 1, 3))
    beta = ShapeState(rng.uniform(-shape, shape, model.num_betas)) if model.num_betas else None
    return lbs_forward(model, pose, beta).joints, pose, beta


def quiet_fit(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit(*args, **kw)


def test_fixed_point_at_truth(soft_model):
    targets = soft_model.rest_joints()
    cfg = FitConfig(init_strategy="provided")
    res = fit(soft_model, targets, cfg, init_pose=PoseState.zeros(24), init_shape=ShapeState(np.zeros(3)))
    assert res.iterations == 0 and res.converged
    assert res.objective_trace[-1] < 1e-20


def test_zero_prior_recovers_targets(soft_model, rng):
    for _ in range(3):
        targets, _, _ = random_targets(soft_model, rng)
        res = quiet_fit(soft_model, targets, FitConfig(lambda_prior=0.0, max_iterations=600))
        assert res.final_mpjpe_to_targets < 1.0


def test_prior_only_minimum(soft_model, rng):
    targets, pose, beta = random_targets(soft_model, rng)
    res = quiet_fit(soft_model, targets, FitConfig(lambda_joint=0.0, lambda_prior=1.0, init_strategy="provided"),
                    init_pose=pose, init_shape=beta)
    assert np.max(np.abs(res.pose.joint_rotations[1:])) < 1e-6
    assert np.max(np.abs(res.shape.coefficients)) < 1e-6


def test_gradient_matches_finite_differences(soft_model, rng):
    for _ in range(20):
        targets, _, _ = random_targets(soft_model, rng)
        obj = Objective(soft_model, targets, 1.0, 1e-3)
        pose = PoseState(random_axis_angle(rng, 24, 1.0), rng.normal(size=3))
        x = pack_parameters(pose, ShapeState(rng.uniform(-1, 1, 3)), 3)
        _, g = obj.value_and_grad(x)
        fd = finite_difference_gradient(obj.value, x)
        assert np.linalg.norm(g - fd) <= 1e-3 * np.linalg.norm(fd)


def test_trace_is_monotone(soft_model, rng):
    targets, _, _ = random_targets(soft_model, rng, limb=np.pi / 2)
    res = quiet_fit(soft_model, targets, FitConfig())
    assert np.all(np.diff(res.objective_trace) <= 0)
    assert len(res.objective_trace) == res.iterations + 1


def test_rigid_transform_of_targets_keeps_objective(soft_model, rng):
    targets, _, _ = random_targets(soft_model, rng)
    R, t = random_rotation(rng), rng.normal(size=3)
    cfg = FitConfig(max_iterations=2000)
    a = quiet_fit(soft_model, targets, cfg)
    b = quiet_fit(soft_model, targets @ R.T + t, cfg)
    assert a.converged and b.converged
    assert abs(a.objective_trace[-1] - b.objective_trace[-1]) <= 1e-6


def test_rigid_model_reachable_targets(rigid_model, rng):
    targets, _, _ = random_targets(rigid_model, rng, limb=np.pi / 4)
    res = quiet_fit(rigid_model, targets, FitConfig(lambda_prior=0.0, max_iterations=1500))
    assert res.objective_trace[-1] <= 1e-6


def test_nan_targets_abort(soft_model):
    targets = soft_model.rest_joints().copy()
    targets[3, 1] = np.nan
    with pytest.raises(FitError) as info:
        fit(soft_model, targets)
    assert info.value.iteration == 0


def test_config_validation():
    with pytest.raises(ParameterError):
        FitConfig(lambda_prior=-1.0)
    with pytest.raises(ParameterError):
        FitConfig(convergence_tol=0.0)
    with pytest.raises(ParameterError):
        FitConfig(init_strategy="random")
    with pytest.raises(ParameterError):
        FitConfig.from_dict({"lambda_joint": 1.0, "unknown": 2})
    cfg = FitConfig(lambda_prior=0.5)
    assert FitConfig.from_dict(cfg.to_dict()) == cfg


def test_wrap_rotations():
    x = np.zeros(3 + 6)
    x[3:6] = [0.0, 0.0, 1.5 * np.pi]
    out = wrap_rotations(x, 2)
    np.testing.assert_allclose(out[3:6], [0.0, 0.0, -0.5 * np.pi])
    np.testing.assert_allclose(axis_angle_to_matrix(out[3:6]), axis_angle_to_matrix(x[3:6]), atol=1e-12)
    assert wrap_rotations(np.zeros(9), 2) is None


def test_non_convergence_flagged(soft_model, rng):
    targets, _, _ = random_targets(soft_model, rng, limb=np.pi / 2)
    with pytest.warns(RuntimeWarning, match="converge"):
        res = fit(soft_model, targets, FitConfig(max_iterations=5))
    assert not res.converged and res.iterations <= 5


def test_fit_batch(soft_model, rng):
    assert fit_batch(soft_model, []) == []
    cfg = FitConfig(max_iterations=40)
    targets = [random_targets(soft_model, rng)[0] for _ in range(20)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        batch = fit_batch(soft_model, targets + [targets[0]], cfg, workers=2)
        seq = [fit(soft_model, t, cfg) for t in targets]
    for a, b in zip(batch, seq):
        assert a.to_dict() == b.to_dict()
    assert batch[-1].to_dict() == batch[0].to_dict()


def test_fit_batch_collects_errors(soft_model):
    bad = np.full((24, 3), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = fit_batch(soft_model, [bad, soft_model.rest_joints(), np.zeros((3, 3))], FitConfig(max_iterations=5))
    assert isinstance(out[0], FitError)
    assert isinstance(out[1], FitResult)
    assert isinstance(out[2], ParameterError)
