"""Synthetic LiDAR scans of a mesh, plus crop/resample/augment for training input.

Rays leave a single sensor origin on an azimuth/elevation raster. Direction
for azimuth ``a`` and elevation ``e`` is ``(cos e sin a, sin e, cos e cos a)``
(y up, azimuth 0 looks along +z). The nearest triangle hit along each ray
becomes a point, so self-occlusion falls out of the nearest-hit rule.
Ray/triangle tests use the watertight formulation of Woop, Benthin and Wald
(2013), so a ray through a shared edge cannot slip between triangles.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EmptyCropError, ParameterError
from .geometry import Mesh, PointCloud, as_points
from .rotations import yaw_matrix

UP_AXIS = 1
_CHUNK = 512


@dataclass(frozen=True)
class ScanConfig:
    sensor_origin: tuple[float, float, float] = (0.0, 0.0, -8.0)
    azimuth_range: tuple[float, float] = (-0.12, 0.12)
    azimuth_step: float = 0.004
    elevation_range: tuple[float, float] = (-0.14, 0.11)
    elevation_step: float = 0.004
    range_noise_sigma: float = 0.0
    dropout_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.azimuth_step > 0 and self.elevation_step > 0):
            raise ParameterError("raster steps must be positive")
        if self.azimuth_range[1] < self.azimuth_range[0] or self.elevation_range[1] < self.elevation_range[0]:
            raise ParameterError("raster ranges must be (min, max)")
        if not self.range_noise_sigma >= 0:
            raise ParameterError("range_noise_sigma must be >= 0")
        if not 0 <= self.dropout_probability < 1:
            raise ParameterError("dropout_probability must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ScanConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown scan config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def raster_directions(config: ScanConfig) -> np.ndarray:
    """Unit ray directions in raster order (elevation-major)."""
    az = _grid(*config.azimuth_range, config.azimuth_step)
    el = _grid(*config.elevation_range, config.elevation_step)
    E, A = np.meshgrid(el, az, indexing="ij")
    d = np.stack([np.cos(E) * np.sin(A), np.sin(E), np.cos(E) * np.cos(A)], axis=-1)
    return d.reshape(-1, 3)


def _intersect_group(rel: np.ndarray, dirs: np.ndarray, kx: int, ky: int, kz: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest positive hit for rays sharing the same axis permutation."""
    Sx = dirs[:, kx] / dirs[:, kz]
    Sy = dirs[:, ky] / dirs[:, kz]
    Sz = 1.0 / dirs[:, kz]
    # rel: (F, 3 vertices, 3 coords), relative to the origin
    ax, ay, az = rel[:, 0, kx], rel[:, 0, ky], rel[:, 0, kz]
    bx, by, bz = rel[:, 1, kx], rel[:, 1, ky], rel[:, 1, kz]
    cx, cy, cz = rel[:, 2, kx], rel[:, 2, ky], rel[:, 2, kz]
    Ax = ax[None] - Sx[:, None] * az[None]
    Ay = ay[None] - Sy[:, None] * az[None]
    Bx = bx[None] - Sx[:, None] * bz[None]
    By = by[None] - Sy[:, None] * bz[None]
    Cx = cx[None] - Sx[:, None] * cz[None]
    Cy = cy[None] - Sy[:, None] * cz[None]
    U = Cx * By - Cy * Bx
    V = Ax * Cy - Ay * Cx
    W = Bx * Ay - By * Ax
    inside = ~(((U < 0) | (V < 0) | (W < 0)) & ((U > 0) | (V > 0) | (W > 0)))
    det = U + V + W
    T = Sz[:, None] * (U * az[None] + V * bz[None] + W * cz[None])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = T / det
    hit = inside & (det != 0) & (t > 0)
    t = np.where(hit, t, np.inf)
    tri = np.argmin(t, axis=1)
    return t[np.arange(len(dirs)), tri], tri


def cast_rays(mesh: Mesh, origin, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance (inf on miss) and triangle index per ray.

    Ties between triangles at the same distance go to the lowest index.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(directions, dtype=float)
    t_out = np.full(len(d), np.inf)
    tri_out = np.full(len(d), -1, dtype=np.int64)
    if len(mesh.faces) == 0 or len(d) == 0:
        return t_out, tri_out
    rel = mesh.vertices[mesh.faces] - o
    kz = np.argmax(np.abs(d), axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    neg = d[np.arange(len(d)), kz] < 0
    kx2 = np.where(neg, ky, kx)
    ky2 = np.where(neg, kx, ky)
    for key in sorted(set(zip(kx2.tolist(), ky2.tolist(), kz.tolist()))):
        members = np.flatnonzero((kx2 == key[0]) & (ky2 == key[1]) & (kz == key[2]))
        for start in range(0, len(members), _CHUNK):
            sel = members[start:start + _CHUNK]
            t, tri = _intersect_group(rel, d[sel], *key)
            t_out[sel] = t
            tri_out[sel] = np.where(np.isfinite(t), tri, -1)
    return t_out, tri_out


class ScanResult(NamedTuple):
    cloud: PointCloud
    ray_index: np.ndarray  # raster index of each emitted point
    distance: np.ndarray  # noiseless hit distance


def scan_with_rays(mesh: Mesh, config: ScanConfig) -> ScanResult:
    """Like :func:`scan` but also returns which ray produced each point."""
    dirs = raster_directions(config)
    origin = np.asarray(config.sensor_origin, dtype=float)
    # one noise and one dropout draw per ray, in raster order, whatever the chunking
    rng = np.random.default_rng(config.seed)
    noise = rng.standard_normal(len(dirs)) * config.range_noise_sigma
    keep_draw = rng.random(len(dirs))
    t, _ = cast_rays(mesh, origin, dirs)
    hit = np.isfinite(t) & (keep_draw >= config.dropout_probability)
    idx = np.flatnonzero(hit)
    rng_dist = t[idx] + noise[idx] if config.range_noise_sigma > 0 else t[idx]
    pts = origin + rng_dist[:, None] * dirs[idx]
    if len(idx) == 0:
        warnings.warn("scan produced no points (no ray hit the mesh)", RuntimeWarning)
    return ScanResult(PointCloud(pts.reshape(-1, 3)), idx, t[idx])


def scan(mesh: Mesh, config: ScanConfig) -> PointCloud:
    """Ray-cast the mesh along the configured raster."""
    return scan_with_rays(mesh, config).cloud


@dataclass(frozen=True)
class CropAugmentConfig:
    cube_side: float = 2.0
    translation_jitter: float = 0.2
    rotation_jitter: float = 0.25 * np.pi
    target_points: int = 1024

    def __post_init__(self):
        if not self.cube_side > 0:
            raise ParameterError("cube_side must be positive")
        if self.translation_jitter < 0 or self.rotation_jitter < 0:
            raise ParameterError("jitter ranges must be non-negative")
        if self.target_points < 1:
            raise ParameterError("target_points must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class AppliedTransform:
    """Affine map ``x -> rotation @ x + translation`` applied to the points."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    jitter: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return as_points(points) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "yaw": self.yaw,
            "jitter": self.jitter.tolist(),
        }


def crop_mask(points: np.ndarray, pelvis, cube_side: float) -> np.ndarray:
    half = cube_side / 2.0
    return np.all(np.abs(points - np.asarray(pelvis, dtype=float)) <= half, axis=1)


def resample(points: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``target`` points drawn from ``points``.

    Larger sets are subsampled uniformly without replacement (original order
    kept); smaller sets keep every point and top up with uniform draws with
    replacement.
    """
    n = len(points)
    if n == target:
        return points.copy()
    if n > target:
        return points[np.sort(rng.choice(n, size=target, replace=False))]
    extra = rng.integers(0, n, size=target - n)
    return np.concatenate([points, points[extra]])


def crop_and_augment(
    cloud: PointCloud,
    pelvis,
    config: CropAugmentConfig = CropAugmentConfig(),
    mode: str = "eval",
    seed: int = 0,
) -> tuple[PointCloud, AppliedTransform]:
    """Keep points in the cube around the pelvis, resample, and in train mode jitter.

    Train mode draws a yaw rotation about the vertical axis through the
    pelvis and a per-axis translation, uniformly within the configured
    ranges. The returned transform maps original coordinates to output
    coordinates so labels can be moved identically.
    """
    if mode not in ("train", "eval"):
        raise ParameterError("mode must be 'train' or 'eval'")
    c = np.asarray(pelvis, dtype=float).reshape(3)
    if not np.all(np.isfinite(c)):
        raise ParameterError("pelvis must be finite")
    pts = as_points(cloud)
    inside = crop_mask(pts, c, config.cube_side) if len(pts) else np.zeros(0, dtype=bool)
    half = config.cube_side / 2.0
    if not np.any(inside):
        bounds = (c - half, c + half)
        raise EmptyCropError(f"no points inside cube [{bounds[0].tolist()}, {bounds[1].tolist()}]", bounds)
    rng = np.random.default_rng(seed)
    kept = resample(pts[inside], config.target_points, rng)
    if mode == "eval":
        return PointCloud(kept), AppliedTransform()
    yaw = float(rng.uniform(-config.rotation_jitter, config.rotation_jitter))
    jitter = rng.uniform(-config.translation_jitter, config.translation_jitter, size=3)
    R = yaw_matrix(yaw, UP_AXIS)
    transform = AppliedTransform(R, c - R @ c + jitter, yaw, jitter)
    return PointCloud(transform.apply(kept)), transform
