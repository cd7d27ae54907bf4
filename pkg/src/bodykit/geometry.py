"""Core geometric containers and mesh helpers.

Positions are meters throughout. The world is y-up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import NumericError, ParameterError


def _frozen_array(a, dtype, ndim_last: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim_last is not None:
        if arr.size == 0:
            arr = arr.reshape(0, ndim_last)
        if arr.ndim != 2 or arr.shape[1] != ndim_last:
            raise ParameterError(f"{name} must have shape (N, {ndim_last}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh: vertex positions plus faces as vertex-index triples."""

    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen_array(self.vertices, float, 3, "vertices"))
        object.__setattr__(self, "faces", _frozen_array(self.faces, np.int64, 3, "faces"))
        if not np.all(np.isfinite(self.vertices)):
            raise NumericError("mesh vertices must be finite")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ParameterError("face index out of range")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @cached_property
    def edges(self) -> np.ndarray:
        return unique_edges(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology, new positions."""
        vertices = np.asarray(vertices, dtype=float)
        if vertices.shape != self.vertices.shape:
            raise ParameterError(f"expected vertices of shape {self.vertices.shape}, got {vertices.shape}")
        return Mesh(vertices, self.faces)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered 3D points. May be empty (e.g. a scan that hit nothing)."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen_array(self.points, float, 3, "points")
        if not np.all(np.isfinite(pts)):
            raise NumericError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class Skeleton:
    joints: np.ndarray
    joint_names: tuple[str, ...] = ()

    def __post_init__(self):
        j = _frozen_array(self.joints, float, 3, "joints")
        if not np.all(np.isfinite(j)):
            raise NumericError("skeleton contains non-finite joint positions")
        names = tuple(self.joint_names) or tuple(f"joint_{i}" for i in range(len(j)))
        if len(names) != len(j):
            raise ParameterError(f"{len(names)} joint names for {len(j)} joints")
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "joint_names", names)

    def __len__(self) -> int:
        return len(self.joints)

    def to_dict(self) -> dict:
        return {"joints": self.joints.tolist(), "joint_names": list(self.joint_names)}

    @classmethod
    def from_dict(cls, data: dict) -> "Skeleton":
        try:
            return cls(np.asarray(data["joints"], dtype=float), tuple(data.get("joint_names", ())))
        except KeyError as exc:
            raise ParameterError(f"skeleton record is missing {exc}") from None


def as_points(x) -> np.ndarray:
    """Return the (N, 3) position array of a Mesh, Skeleton, PointCloud or array."""
    if isinstance(x, Mesh):
        return x.vertices
    if isinstance(x, Skeleton):
        return x.joints
    if isinstance(x, PointCloud):
        return x.points
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ParameterError(f"expected an (N, 3) array, got shape {arr.shape}")
    return arr


def unique_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges of a triangle list, each pair once, sorted lexicographically."""
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def edge_face_counts(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique edges and how many faces use each."""
    faces = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit face normals and face areas. Degenerate faces get a zero normal."""
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=np.int64)
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(n, axis=1)
    unit = np.zeros_like(n)
    ok = norm > 0
    unit[ok] = n[ok] / norm[ok, None]
    return unit, 0.5 * norm


def edge_lengths(vertices: np.ndarray, edges: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    return np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)


def icosphere(subdivisions: int = 0, radius: float = 1.0, center: Sequence[float] = (0, 0, 0)) -> Mesh:
    """Subdivided icosahedron; 10 * 4**k + 2 vertices, outward-facing faces."""
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    pts = np.array(v) * radius + np.asarray(center, dtype=float)
    return Mesh(pts, np.array(faces, dtype=np.int64))


def box_mesh(size: Sequence[float] = (1.0, 1.0, 1.0), center: Sequence[float] = (0, 0, 0)) -> Mesh:
    """Axis-aligned box with outward-facing triangles."""
    half = np.asarray(size, dtype=float) / 2.0
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    verts = corners * half + np.asarray(center, dtype=float)
    # corner index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return Mesh(verts, np.array(faces, dtype=np.int64))


def point_triangle_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Euclidean distance from points p (N, 3) to triangles (a, b, c), each (N, 3) or (3,)."""
    p = np.atleast_2d(p)
    a, b, c = (np.broadcast_to(x, p.shape) for x in (a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def take(mask, value):
        m = mask & ~done
        closest[m] = value[m] if np.ndim(value) == 2 else value
        done[m] = True

    take((d1 <= 0) & (d2 <= 0), a)
    take((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + (d1 / (d1 - d3))[:, None] * ab)
        take((d6 >= 0) & (d5 <= d6), c)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + (d2 / (d2 - d6))[:, None] * ac)
        take((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
             b + ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None] * (c - b))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        take(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return np.linalg.norm(p - closest, axis=1)


def point_mesh_distance(points: np.ndarray, mesh: Mesh, chunk: int = 256) -> np.ndarray:
    """Unsigned distance from each point to the closest triangle (brute force)."""
    pts = as_points(points)
    tri = mesh.vertices[mesh.faces]
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        n = len(p)
        P = np.repeat(p, len(tri), axis=0)
        A = np.tile(tri[:, 0], (n, 1))
        B = np.tile(tri[:, 1], (n, 1))
        C = np.tile(tri[:, 2], (n, 1))
        d = point_triangle_distance(P, A, B, C).reshape(n, len(tri))
        out[start:start + n] = d.min(axis=1)
    return out
