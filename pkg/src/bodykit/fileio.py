"""File formats: OBJ meshes, PLY/XYZ point clouds, JSON records.

Every writer goes through :func:`atomic_write_bytes` (temp file + rename) so
concurrent invocations on disjoint outputs never observe partial files.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ModelFormatError
from .geometry import Mesh, PointCloud


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj: Any) -> str:
    # repr-exact floats; sorted keys give byte-stable output
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | os.PathLike, obj: Any) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode())


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from None


def format_obj(mesh: Mesh, lines: np.ndarray | None = None) -> str:
    """OBJ text with ``v`` and ``f`` records (1-based); optional ``l`` edge records."""
    out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    if lines is not None:
        out += [f"l {a + 1} {b + 1}" for a, b in np.asarray(lines).tolist()]
    return "\n".join(out) + "\n"


def write_obj(path: str | os.PathLike, mesh: Mesh, lines: np.ndarray | None = None) -> None:
    atomic_write_bytes(path, format_obj(mesh, lines).encode())


def read_obj(path: str | os.PathLike) -> Mesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    # fan-triangulate polygons
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except (ValueError, IndexError):
                raise ModelFormatError(f"{path}:{lineno}: malformed OBJ record") from None
    if not verts:
        raise ModelFormatError(f"{path}: no vertices")
    try:
        return Mesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None


def format_ply(cloud: PointCloud) -> bytes:
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    ).encode("ascii")
    return header + pts.tobytes()


def write_ply(path: str | os.PathLike, cloud: PointCloud) -> None:
    atomic_write_bytes(path, format_ply(cloud))


def read_ply(path: str | os.PathLike) -> PointCloud:
    data = Path(path).read_bytes()
    marker = b"end_header\n"
    end = data.find(marker)
    if not data.startswith(b"ply\n") or end < 0:
        raise ModelFormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise ModelFormatError(f"{path}: only binary little-endian PLY is supported")
    count = None
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts[:1] == ["property"] and count is not None:
            props.append((parts[1], parts[2]))
    if count is None or props[:3] != [("float", "x"), ("float", "y"), ("float", "z")] or len(props) != 3:
        raise ModelFormatError(f"{path}: expected float x, y, z vertex properties")
    body = data[end + len(marker):]
    if len(body) < 12 * count:
        raise ModelFormatError(f"{path}: truncated vertex data")
    pts = np.frombuffer(body[: 12 * count], dtype="<f4").reshape(count, 3)
    return PointCloud(pts.astype(float))


def format_xyz(cloud: PointCloud) -> str:
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist())


def write_xyz(path: str | os.PathLike, cloud: PointCloud) -> None:
    atomic_write_bytes(path, format_xyz(cloud).encode())


def read_xyz(path: str | os.PathLike) -> PointCloud:
    try:
        pts = np.loadtxt(path, dtype=float, ndmin=2)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    return PointCloud(pts[:, :3])


def read_cloud(path: str | os.PathLike) -> PointCloud:
    return read_ply(path) if str(path).lower().endswith(".ply") else read_xyz(path)

