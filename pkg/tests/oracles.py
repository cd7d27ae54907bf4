"""Independent reference implementations used only by the tests.

Each one is written from the textbook definition with plain loops or a
different algorithm from the library code, so agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation


def rodrigues(v):
    return Rotation.from_rotvec(np.array(v, dtype=float)).as_matrix()


def fk_lbs(template, weights, parents, rest_joints, rotvecs, translation):
    """Forward kinematics with 4x4 matrices and per-vertex loops."""
    J = len(parents)
    G = [None] * J
    for j in range(J):  # parents precede children in these test models
        local = np.eye(4)
        local[:3, :3] = rodrigues(rotvecs[j])
        if parents[j] < 0:
            local[:3, 3] = rest_joints[j] + translation
            G[j] = local
        else:
            local[:3, 3] = rest_joints[j] - rest_joints[parents[j]]
            G[j] = G[parents[j]] @ local
    joints = np.array([G[j][:3, 3] for j in range(J)])
    verts = np.zeros_like(template)
    for v in range(len(template)):
        acc = np.zeros(3)
        for j in range(J):
            w = weights[j, v]
            if w == 0:
                continue
            x = np.append(template[v] - rest_joints[j], 1.0)
            acc += w * (G[j] @ x)[:3]
        verts[v] = acc
    return verts, joints


def horn_rotation(source, target, weights):
    """Weighted absolute orientation via Horn's quaternion eigenproblem."""
    S = np.zeros((3, 3))
    for s, t, w in zip(source, target, weights):
        S += w * np.outer(s, t)
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
    ])
    vals, vecs = np.linalg.eigh(N)
    w, x, y, z = vecs[:, np.argmax(vals)]
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def similarity_oracle(pred, gt):
    """Similarity alignment of pred onto gt: Horn rotation plus closed-form scale."""
    mp, mg = pred.mean(axis=0), gt.mean(axis=0)
    x, y = pred - mp, gt - mg
    R = horn_rotation(x, y, np.ones(len(x)))
    rx = x @ R.T
    s = float(np.sum(rx * y) / np.sum(x * x))
    return s * rx + mg


def fuse_loop(points, offsets, q):
    N, J = q.shape
    out = np.zeros((J, 3))
    for k in range(J):
        num = [0.0, 0.0, 0.0]
        den = 0.0
        for i in range(N):
            for a in range(3):
                num[a] += q[i, k] * (points[i, a] + offsets[i, a])
            den += q[i, k]
        out[k] = [c / den for c in num]
    return out


def nearest_joint_loop(points, joints):
    out = []
    for p in points:
        best, best_d = 0, math.inf
        for k, j in enumerate(joints):
            d = math.dist(p, j)
            if d < best_d:
                best, best_d = k, d
        out.append(best)
    return np.array(out)


def hem_reference(n, edge_weight):
    """Greedy matching over a dict {(a, b): weight} with a < b.

    Returns the parent assignment following the documented rules: heaviest
    edge first, ties by (a, b); coarse ids by lowest fine member.
    """
    order = sorted(edge_weight.items(), key=lambda kv: (-float(f"{kv[1]:.10g}"), kv[0][0], kv[0][1]))
    matched = {}
    for (a, b), _ in order:
        if a not in matched and b not in matched:
            matched[a] = b
            matched[b] = a
    parent = [-1] * n
    count = 0
    for v in range(n):
        if parent[v] != -1:
            continue
        parent[v] = count
        if v in matched:
            parent[matched[v]] = count
        count += 1
    return parent, count


def hem_levels_reference(vertices, faces, levels):
    pos = [tuple(map(float, v)) for v in vertices]
    edges = set()
    for f in faces:
        for i in range(3):
            a, b = int(f[i]), int(f[(i + 1) % 3])
            edges.add((min(a, b), max(a, b)))
    sizes = [len(pos)]
    for _ in range(levels):
        ew = {e: 1.0 / math.dist(pos[e[0]], pos[e[1]]) for e in edges}
        parent, count = hem_reference(len(pos), ew)
        if count <= 1:
            break
        groups = [[] for _ in range(count)]
        for v, p in enumerate(parent):
            groups[p].append(v)
        pos = [tuple(sum(pos[v][a] for v in g) / len(g) for a in range(3)) for g in groups]
        edges = {(min(parent[a], parent[b]), max(parent[a], parent[b])) for a, b in edges if parent[a] != parent[b]}
        sizes.append(count)
    return sizes


def mean_norm_loop(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += math.sqrt(sum((x[i] - y[i]) ** 2 for i in range(3)))
    return total / len(a)


def unique_edges_loop(faces):
    seen = set()
    for f in faces:
        for i in range(3):
            a, b = int(f[i]), int(f[(i + 1) % 3])
            seen.add((min(a, b), max(a, b)))
    return sorted(seen)


def mpere_loop(pred, gt, faces):
    edges = unique_edges_loop(faces)
    total = 0.0
    for a, b in edges:
        lp = math.dist(pred[a], pred[b])
        lg = math.dist(gt[a], gt[b])
        total += abs(lp - lg) / lg
    return total / len(edges)


def face_normal_loop(v, f):
    a, b, c = (np.asarray(v[i], dtype=float) for i in f)
    n = np.cross(b - a, c - a)
    return n / np.linalg.norm(n)


def sphere_march(origin, direction, center, radius, t_max=100.0, eps=1e-12, steps=10000):
    """Sphere tracing against an analytic signed distance function."""
    t = 0.0
    for _ in range(steps):
        p = origin + t * direction
        d = np.linalg.norm(p - center) - radius
        if d < eps:
            return t
        t += d
        if t > t_max:
            return math.inf
    return math.inf
