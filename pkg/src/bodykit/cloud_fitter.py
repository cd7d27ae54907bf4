"""Fit body-model parameters to observed 3D joints.

Objective over the packed vector ``x = [r, theta, beta]``::

    f(x) = lambda_joint * sum_k |g_k(x) - p_k|^2
         + lambda_prior * (|beta|^2 + |theta_nonroot|^2)

The optimizer is a limited-memory BFGS (two-loop recursion) with Armijo
backtracking, run in two stages: translation and root rotation first, then
every parameter.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .body_model import (
    BodyModel,
    PoseState,
    ShapeState,
    global_rigid_transforms,
    lbs_forward,
    lbs_jacobian,
    pack_parameters,
    parameter_count,
    unpack_parameters,
)
from .errors import FitError, ParameterError
from .geometry import Skeleton, as_points
from .metrics import mpjpe

INIT_STRATEGIES = ("zero_pose_centroid", "provided")
_MAX_ANGLE = 2.0 * np.pi - 1e-6
DIAGONAL_FLOOR = 1e-6  # relative to the largest diagonal entry


@dataclass(frozen=True)
class FitConfig:
    lambda_joint: float = 1.0
    lambda_prior: float = 1e-3
    max_iterations: int = 200
    convergence_tol: float = 1e-12
    gradient_tol: float = 1e-10
    init_strategy: str = "zero_pose_centroid"
    memory: int = 10
    stage_one_iterations: int = 30
    precondition: bool = True

    def __post_init__(self):
        for name in ("lambda_joint", "lambda_prior"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and >= 0")
        if not self.convergence_tol > 0 or not self.gradient_tol > 0:
            raise ParameterError("tolerances must be positive")
        if self.max_iterations < 0 or self.stage_one_iterations < 0:
            raise ParameterError("iteration limits must be >= 0")
        if self.memory < 1:
            raise ParameterError("memory must be >= 1")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ParameterError(f"init_strategy must be one of {INIT_STRATEGIES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class FitResult:
    pose: PoseState
    shape: ShapeState
    translation: np.ndarray
    objective_trace: list[float]
    final_mpjpe_to_targets: float  # cm
    converged: bool
    iterations: int
    joints: np.ndarray

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "shape": self.shape.to_dict(),
            "translation": self.translation.tolist(),
            "objective_trace": list(self.objective_trace),
            "final_objective": self.objective_trace[-1],
            "final_mpjpe_to_targets": self.final_mpjpe_to_targets,
            "converged": self.converged,
            "iterations": self.iterations,
            "joints": self.joints.tolist(),
        }


class Objective:
    """Value and gradient of the fitting objective for one target skeleton."""

    def __init__(self, model: BodyModel, targets, lambda_joint: float, lambda_prior: float):
        self.model = model
        self.targets = as_points(targets)
        if len(self.targets) != model.num_joints:
            raise ParameterError(f"model has {model.num_joints} joints, targets have {len(self.targets)}")
        self.lambda_joint = float(lambda_joint)
        self.lambda_prior = float(lambda_prior)
        J = model.num_joints
        self.root = int(np.flatnonzero(model.parents < 0)[0])
        mask = np.zeros(parameter_count(model), dtype=bool)
        mask[3:3 + 3 * J] = True
        mask[3 + 3 * self.root:6 + 3 * self.root] = False
        mask[3 + 3 * J:] = True
        self.prior_mask = mask

    def _state(self, x: np.ndarray) -> tuple[PoseState, ShapeState]:
        return unpack_parameters(self.model, x)

    def joints(self, x: np.ndarray) -> np.ndarray:
        pose, shape = self._state(x)
        rest = self.model.rest_joints(shape)
        return global_rigid_transforms(self.model, pose, rest)[1]

    def _out_of_domain(self, x: np.ndarray) -> bool:
        J = self.model.num_joints
        return bool(np.any(np.linalg.norm(x[3:3 + 3 * J].reshape(J, 3), axis=1) >= _MAX_ANGLE))

    def value(self, x: np.ndarray) -> float:
        if not np.all(np.isfinite(x)):
            return float("nan")
        if self._out_of_domain(x):
            return float("inf")
        r = self.joints(x) - self.targets
        prior = x[self.prior_mask]
        return self.lambda_joint * float(np.sum(r * r)) + self.lambda_prior * float(prior @ prior)

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        if not np.all(np.isfinite(x)):
            return float("nan"), np.full_like(x, np.nan)
        if self._out_of_domain(x):
            return float("inf"), np.zeros_like(x)
        pose, shape = self._state(x)
        dg, _ = lbs_jacobian(self.model, pose, shape)
        rest = self.model.rest_joints(shape)
        g = global_rigid_transforms(self.model, pose, rest)[1]
        r = g - self.targets
        prior = np.where(self.prior_mask, x, 0.0)
        f = self.lambda_joint * float(np.sum(r * r)) + self.lambda_prior * float(prior @ prior)
        grad = 2.0 * self.lambda_joint * np.einsum("pja,ja->p", dg, r) + 2.0 * self.lambda_prior * prior
        self.last_curvature = (2.0 * self.lambda_joint * np.einsum("pja,pja->p", dg, dg)
                               + 2.0 * self.lambda_prior * self.prior_mask)
        return f, grad

    def curvature(self) -> np.ndarray:
        """Gauss-Newton diagonal at the last gradient evaluation."""
        return self.last_curvature


def wrap_rotations(x: np.ndarray, num_joints: int) -> np.ndarray | None:
    """Replace rotation vectors longer than pi by the equivalent shorter one."""
    rot = x[3:3 + 3 * num_joints].reshape(num_joints, 3)
    angle = np.linalg.norm(rot, axis=1)
    long = angle > np.pi
    if not np.any(long):
        return None
    out = x.copy()
    r = out[3:3 + 3 * num_joints].reshape(num_joints, 3)
    r[long] *= (1.0 - 2.0 * np.pi / angle[long])[:, None]
    return out


def finite_difference_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


class _StageOutcome(NamedTuple):
    x: np.ndarray
    f: float
    iterations: int
    converged: bool


def lbfgs_minimize(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    free: np.ndarray,
    max_iterations: int,
    memory: int,
    ftol: float,
    gtol: float,
    trace: list[float],
    iteration_offset: int = 0,
    diagonal: Callable[[], np.ndarray] | None = None,
    normalize: Callable[[np.ndarray], np.ndarray | None] | None = None,
) -> _StageOutcome:
    """Minimize over the coordinates flagged in ``free``; the rest stay fixed.

    Every accepted step satisfies the Armijo condition, so values appended
    to ``trace`` never increase. ``diagonal`` optionally supplies a positive
    diagonal Hessian estimate at the latest gradient point; it replaces the
    usual scalar initial Hessian. ``normalize`` may map an accepted iterate
    to an equivalent one with no larger objective (returning None when
    nothing changes); the curvature memory is then discarded.
    """
    x = x0.copy()
    f, g = fun_grad(x)
    if not math.isfinite(f):
        raise FitError("objective is not finite at the initial point", iteration_offset)
    g = np.where(free, g, 0.0)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    for it in range(max_iterations):
        if np.max(np.abs(g)) <= gtol:
            return _StageOutcome(x, f, it, True)
        # two-loop recursion
        q = -g
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q = q - a * y
        if diagonal is not None:
            h = np.where(free, diagonal(), 0.0)
            # floor near-null curvature (free twists) so it cannot dominate the step
            floor = DIAGONAL_FLOOR * max(float(np.max(h)), 1e-300)
            q = q / np.where(free, np.maximum(h, floor), 1.0)
        elif s_hist:
            q = q * ((s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1]))
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q = q + (a - b) * s
        d = q
        slope = g @ d
        if not slope < 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = g @ d
        step = 1.0 if s_hist or diagonal is not None else min(1.0, 0.1 / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for _ in range(40):
            x_new = x + step * d
            f_new, g_new = fun_grad(x_new)
            if math.isnan(f_new):
                raise FitError(f"objective became NaN at iteration {iteration_offset + it}", iteration_offset + it)
            if f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no descent along d: done, converged only if the gradient is tiny
            return _StageOutcome(x, f, it, bool(np.max(np.abs(g)) <= np.sqrt(gtol)))
        g_new = np.where(free, g_new, 0.0)
        if normalize is not None:
            wrapped = normalize(x_new)
            if wrapped is not None:
                f_w, g_w = fun_grad(wrapped)
                if f_w <= f_new:
                    x, f, g = wrapped, f_w, np.where(free, g_w, 0.0)
                    trace.append(f)
                    s_hist.clear()
                    y_hist.clear()
                    continue
        s_vec, y_vec = x_new - x, g_new - g
        if s_vec @ y_vec > 1e-12 * max(np.sqrt(y_vec @ y_vec) * np.sqrt(s_vec @ s_vec), 1e-300):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if decrease <= ftol * max(1.0, abs(f)) and np.max(np.abs(g)) <= np.sqrt(gtol):
            return _StageOutcome(x, f, it + 1, True)
    return _StageOutcome(x, f, max_iterations, np.max(np.abs(g)) <= gtol)


def _initial_vector(model, targets, config, init_pose, init_shape) -> np.ndarray:
    B = model.num_betas
    if config.init_strategy == "provided":
        if init_pose is None:
            raise ParameterError("init_strategy 'provided' needs an initial pose")
        return pack_parameters(init_pose, init_shape, B)
    x = np.zeros(parameter_count(model))
    root = int(np.flatnonzero(model.parents < 0)[0])
    x[:3] = targets[root] - model.rest_joints()[root]
    return x


def fit(
    model: BodyModel,
    target_joints,
    config: FitConfig = FitConfig(),
    init_pose: PoseState | None = None,
    init_shape: ShapeState | None = None,
) -> FitResult:
    """Fit translation, pose and shape to target joints.

    Non-convergence within ``config.max_iterations`` returns the best
    iterate with ``converged=False``; a NaN objective raises FitError.
    """
    targets = as_points(target_joints)
    obj = Objective(model, targets, config.lambda_joint, config.lambda_prior)
    x = _initial_vector(model, targets, config, init_pose, init_shape)
    J = model.num_joints
    n = len(x)
    trace = [obj.value(x)]
    if math.isnan(trace[0]):
        raise FitError("objective is NaN at the initial point", 0)

    stage1 = np.zeros(n, dtype=bool)
    stage1[:3] = True
    stage1[3 + 3 * obj.root:6 + 3 * obj.root] = True
    diag = obj.curvature if config.precondition else None
    wrap = lambda v: wrap_rotations(v, J)  # noqa: E731
    budget = config.max_iterations
    iterations = 0
    converged = False
    if budget > 0 and config.stage_one_iterations > 0:
        out = lbfgs_minimize(obj.value_and_grad, x, stage1, min(config.stage_one_iterations, budget),
                             config.memory, config.convergence_tol, config.gradient_tol, trace,
                             diagonal=diag, normalize=wrap)
        x, iterations = out.x, out.iterations
    if budget - iterations > 0:
        out = lbfgs_minimize(obj.value_and_grad, x, np.ones(n, dtype=bool), budget - iterations,
                             config.memory, config.convergence_tol, config.gradient_tol, trace, iterations,
                             diagonal=diag, normalize=wrap)
        x, iterations, converged = out.x, iterations + out.iterations, out.converged
    else:
        _, g = obj.value_and_grad(x)
        converged = bool(np.max(np.abs(g)) <= config.gradient_tol)

    pose, shape = unpack_parameters(model, x)
    joints = obj.joints(x)
    limit = max(5.0, float(np.max(np.abs(shape.coefficients), initial=0.0)))
    shape = ShapeState(shape.coefficients, limit=limit)
    if not converged:
        warnings.warn(f"fit did not converge within {config.max_iterations} iterations", RuntimeWarning)
    return FitResult(
        pose=pose,
        shape=shape,
        translation=pose.root_translation.copy(),
        objective_trace=[float(v) for v in trace],
        final_mpjpe_to_targets=mpjpe(joints, targets),
        converged=bool(converged),
        iterations=int(iterations),
        joints=joints,
    )


def fit_batch(
    model: BodyModel,
    targets: Sequence,
    config: FitConfig = FitConfig(),
    workers: int = 1,
) -> list[FitResult | Exception]:
    """Fit each target independently; failures are returned in place."""

    def one(t):
        try:
            return fit(model, t, config)
        except (FitError, ParameterError, ArithmeticError, ValueError) as exc:
            return exc

    items = list(targets)
    if workers <= 1 or len(items) <= 1:
        return [one(t) for t in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, items))


def fitted_mesh(model: BodyModel, result: FitResult):
    return lbs_forward(model, result.pose, result.shape).mesh


def target_skeleton(result: FitResult, names=()) -> Skeleton:
    return Skeleton(result.joints, tuple(names))
