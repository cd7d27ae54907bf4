"""Axis-angle / rotation-matrix conversions and their derivatives.

All functions are vectorized over leading dimensions. Angles are radians.
"""

from __future__ import annotations

import numpy as np

_SMALL_ANGLE = 1e-8
_JACOBIAN_SERIES_ANGLE = 1e-4


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices ``[v]x`` for ``v`` of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_angle_to_matrix(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues' formula. Below 1e-8 rad the second-order Taylor form is used."""
    r = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    k = skew(r)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns (..., 4) quaternions (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    m = R.reshape(-1, 3, 3)
    q = np.empty((m.shape[0], 4))
    diag = np.stack([m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=1)
    trace = diag.sum(axis=1)
    choice = np.argmax(np.concatenate([trace[:, None], diag], axis=1), axis=1)

    i = choice == 0
    if np.any(i):
        w = 0.5 * np.sqrt(np.maximum(1.0 + trace[i], 0.0))
        s = 0.25 / w
        q[i, 0] = w
        q[i, 1] = (m[i, 2, 1] - m[i, 1, 2]) * s
        q[i, 2] = (m[i, 0, 2] - m[i, 2, 0]) * s
        q[i, 3] = (m[i, 1, 0] - m[i, 0, 1]) * s
    i = choice == 1
    if np.any(i):
        x = 0.5 * np.sqrt(np.maximum(1.0 + m[i, 0, 0] - m[i, 1, 1] - m[i, 2, 2], 0.0))
        s = 0.25 / x
        q[i, 0] = (m[i, 2, 1] - m[i, 1, 2]) * s
        q[i, 1] = x
        q[i, 2] = (m[i, 0, 1] + m[i, 1, 0]) * s
        q[i, 3] = (m[i, 0, 2] + m[i, 2, 0]) * s
    i = choice == 2
    if np.any(i):
        y = 0.5 * np.sqrt(np.maximum(1.0 - m[i, 0, 0] + m[i, 1, 1] - m[i, 2, 2], 0.0))
        s = 0.25 / y
        q[i, 0] = (m[i, 0, 2] - m[i, 2, 0]) * s
        q[i, 1] = (m[i, 0, 1] + m[i, 1, 0]) * s
        q[i, 2] = y
        q[i, 3] = (m[i, 1, 2] + m[i, 2, 1]) * s
    i = choice == 3
    if np.any(i):
        z = 0.5 * np.sqrt(np.maximum(1.0 - m[i, 0, 0] - m[i, 1, 1] + m[i, 2, 2], 0.0))
        s = 0.25 / z
        q[i, 0] = (m[i, 1, 0] - m[i, 0, 1]) * s
        q[i, 1] = (m[i, 0, 2] + m[i, 2, 0]) * s
        q[i, 2] = (m[i, 1, 2] + m[i, 2, 1]) * s
        q[i, 3] = z
    q[q[:, 0] < 0] *= -1.0
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(batch + (4,))


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix` with a canonical output.

    The angle lies in [0, pi]. At exactly pi the axis is ambiguous; the sign
    is then fixed so that its first nonzero component is positive.
    """
    q = matrix_to_quaternion(R)
    w = q[..., 0]
    v = q[..., 1:].copy()
    at_pi = w <= 1e-12
    if np.any(at_pi):
        vp = v[at_pi]
        first = np.argmax(np.abs(vp) > 1e-12, axis=1)
        sign = np.sign(vp[np.arange(len(vp)), first])
        sign[sign == 0] = 1.0
        v[at_pi] = vp * sign[:, None]
    sin_half = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(sin_half, w)
    tiny = sin_half < 1e-12
    # small angles: angle / sin(angle/2) -> 2 / w
    scale = np.where(tiny, 2.0 / np.where(tiny, w, 1.0), angle / np.where(tiny, 1.0, sin_half))
    return v * scale[..., None]


def axis_angle_jacobian(rotvec: np.ndarray) -> np.ndarray:
    """Derivative of the rotation matrix w.r.t. each axis-angle coordinate.

    Returns shape (..., 3, 3, 3) where ``out[..., i, :, :] = dR / dr_i``.
    Uses the closed form of Gallego and Yezzi away from zero and a
    first-order series near it.
    """
    r = np.asarray(rotvec, dtype=float)
    batch = r.shape[:-1]
    r2 = r.reshape(-1, 3)
    out = np.empty((r2.shape[0], 3, 3, 3))
    theta = np.linalg.norm(r2, axis=1)
    basis_skew = skew(np.eye(3))  # (3, 3, 3): [e_i]x

    near = theta < _JACOBIAN_SERIES_ANGLE
    if np.any(near):
        k = skew(r2[near])[:, None]
        e = basis_skew[None]
        out[near] = e + 0.5 * (e @ k + k @ e)
    far = ~near
    if np.any(far):
        rf = r2[far]
        R = axis_angle_to_matrix(rf)
        eye_minus_R = np.eye(3)[None] - R
        kr = skew(rf)
        # column i of (I - R) is (I - R) e_i
        cross = np.cross(rf[:, None, :], np.swapaxes(eye_minus_R, 1, 2))  # (n, 3, 3): r x (I-R)e_i
        term = rf[:, :, None, None] * kr[:, None] + skew(cross)
        out[far] = (term @ R[:, None]) / (theta[far] ** 2)[:, None, None, None]
    return out.reshape(batch + (3, 3, 3))


def random_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniformly distributed rotation matrices (Haar measure)."""
    n = 1 if size is None else size
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    R = quaternion_to_matrix(q)
    return R[0] if size is None else R


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - z * w)
    out[..., 0, 2] = 2 * (x * z + y * w)
    out[..., 1, 0] = 2 * (x * y + z * w)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - x * w)
    out[..., 2, 0] = 2 * (x * z - y * w)
    out[..., 2, 1] = 2 * (y * z + x * w)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def random_axis_angle(rng: np.random.Generator, count: int, max_angle: float) -> np.ndarray:
    """Axis uniform on the sphere, angle uniform in [0, max_angle]."""
    axis = rng.normal(size=(count, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = rng.uniform(0.0, max_angle, size=count)
    return axis * angle[:, None]


def rotation_angle_between(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Geodesic angle between rotations, via the chord length.

    ``||R1 - R2||_F = 2 sqrt(2) sin(angle / 2)``, which stays accurate for
    tiny angles where the arccos-of-trace form loses half the digits.
    """
    chord = np.linalg.norm(np.asarray(R1) - np.asarray(R2), axis=(-2, -1))
    return 2.0 * np.arcsin(np.clip(chord / (2.0 * np.sqrt(2.0)), 0.0, 1.0))


def yaw_matrix(angle: float, axis: int = 1) -> np.ndarray:
    """Rotation about a coordinate axis (default the vertical y axis)."""
    v = np.zeros(3)
    v[axis] = angle
    return axis_angle_to_matrix(v)
