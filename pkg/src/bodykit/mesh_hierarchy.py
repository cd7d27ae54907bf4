"""Multi-resolution mesh ladder built by greedy heavy-edge matching.

Each coarsening pass visits edges heaviest first and collapses both
endpoints into one coarse vertex when neither is matched yet; leftovers
become singleton parents. Every coarse vertex therefore has one or two
children, which is the parent/child structure used to propagate features
from coarse to fine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedMeshError, ParameterError
from .geometry import Mesh, as_points

WEIGHTINGS = ("inverse_length", "unit")
NO_CHILD = -1
TIE_DIGITS = 10  # weights equal to this many significant digits count as ties


@dataclass(frozen=True, eq=False)
class Level:
    vertex_count: int
    edges: np.ndarray  # (E, 2) sorted unique pairs
    positions: np.ndarray  # (n, 3) representative positions


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """``levels[0]`` is the input mesh; ``parent_of[k]`` maps level k to level k+1."""

    levels: tuple[Level, ...]
    parent_of: tuple[np.ndarray, ...]
    children_of: tuple[np.ndarray, ...]  # (n_coarse, 2), second slot NO_CHILD for singletons
    requested_levels: int

    @property
    def depth(self) -> int:
        """Number of coarsening passes actually performed."""
        return len(self.parent_of)

    @property
    def sizes(self) -> list[int]:
        return [lv.vertex_count for lv in self.levels]

    def level_positions(self, fine_positions) -> list[np.ndarray]:
        """Push fine positions down the ladder by averaging children."""
        x = as_points(fine_positions)
        if len(x) != self.levels[0].vertex_count:
            raise ParameterError("fine positions do not match the finest level")
        out = [x.copy()]
        for children in self.children_of:
            out.append(_average_children(out[-1], children))
        return out

    def to_dict(self) -> dict:
        return {
            "requested_levels": self.requested_levels,
            "achieved_levels": self.depth,
            "level_sizes": self.sizes,
            "parent_of": [p.tolist() for p in self.parent_of],
            "edges": [lv.edges.tolist() for lv in self.levels],
        }


def _average_children(fine: np.ndarray, children: np.ndarray) -> np.ndarray:
    first = fine[children[:, 0]]
    has_second = children[:, 1] != NO_CHILD
    out = first.copy()
    out[has_second] = 0.5 * (first[has_second] + fine[children[has_second, 1]])
    return out


def _edge_weights(positions: np.ndarray, edges: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "unit":
        return np.ones(len(edges))
    length = np.linalg.norm(positions[edges[:, 0]] - positions[edges[:, 1]], axis=1)
    with np.errstate(divide="ignore"):
        return np.where(length > 0, 1.0 / np.where(length > 0, length, 1.0), np.inf)


def _tie_key(weights: np.ndarray, digits: int = TIE_DIGITS) -> np.ndarray:
    """Round to ``digits`` significant digits so last-bit noise cannot reorder ties."""
    w = np.asarray(weights, dtype=float)
    out = w.copy()
    ok = np.isfinite(w) & (w != 0)
    exp = np.floor(np.log10(np.abs(w[ok])))
    scale = 10.0 ** (digits - 1 - exp)
    out[ok] = np.round(w[ok] * scale) / scale
    return out


def heavy_edge_matching(n: int, edges: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One greedy matching pass.

    Edges are visited by descending weight, ties by ascending (min, max)
    endpoint pair. Weights are compared at ``TIE_DIGITS`` significant digits. Coarse ids are assigned in order of each group's lowest
    fine vertex.

    Returns:
        parent (n,) coarse id per fine vertex and children (n_coarse, 2).
    """
    order = np.lexsort((edges[:, 1], edges[:, 0], -_tie_key(weights)))
    mate = np.full(n, -1, dtype=np.int64)
    for a, b in edges[order].tolist():
        if mate[a] < 0 and mate[b] < 0:
            mate[a] = b
            mate[b] = a
    parent = np.full(n, -1, dtype=np.int64)
    children = []
    for v in range(n):
        if parent[v] >= 0:
            continue
        cid = len(children)
        parent[v] = cid
        m = mate[v]
        if m >= 0:
            parent[m] = cid
            children.append((v, m))
        else:
            children.append((v, NO_CHILD))
    return parent, np.array(children, dtype=np.int64).reshape(-1, 2)


def _check_connected(n: int, edges: np.ndarray) -> None:
    graph = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    if count > 1:
        comps = [np.flatnonzero(labels == c).tolist() for c in range(count)]
        summary = ", ".join(f"#{c} ({len(v)} vertices, first {v[0]})" for c, v in enumerate(comps[:5]))
        more = "" if count <= 5 else f", ... {count - 5} more"
        raise DisconnectedMeshError(f"mesh has {count} connected components: {summary}{more}", comps)


def coarsen(mesh: Mesh, levels: int, weighting: str = "inverse_length") -> MeshHierarchy:
    """Build up to ``levels`` coarsening passes.

    Stops early, with a warning, when the next pass would leave a single
    vertex; ``MeshHierarchy.depth`` reports the depth reached.
    """
    if levels < 1:
        raise ParameterError("levels must be >= 1")
    if weighting not in WEIGHTINGS:
        raise ParameterError(f"weighting must be one of {WEIGHTINGS}")
    positions = mesh.vertices
    edges = mesh.edges
    n = mesh.vertex_count
    _check_connected(n, edges)

    out_levels = [Level(n, edges, np.array(positions))]
    parents, childrens = [], []
    for _ in range(levels):
        if n <= 2 or len(edges) == 0:
            break
        parent, children = heavy_edge_matching(n, edges, _edge_weights(positions, edges, weighting))
        if len(children) <= 1:
            break
        coarse = np.sort(parent[edges], axis=1)
        coarse = coarse[coarse[:, 0] != coarse[:, 1]]
        coarse_edges = np.unique(coarse, axis=0) if len(coarse) else np.zeros((0, 2), dtype=np.int64)
        positions = _average_children(positions, children)
        n = len(children)
        edges = coarse_edges
        parents.append(parent)
        childrens.append(children)
        out_levels.append(Level(n, edges, positions))
    if len(parents) < levels:
        warnings.warn(
            f"coarsening stopped after {len(parents)} of {levels} levels "
            f"(next level would have a single vertex)",
            RuntimeWarning,
        )
    for arr in [*parents, *childrens]:
        arr.setflags(write=False)
    for lv in out_levels:
        lv.edges.setflags(write=False)
        lv.positions.setflags(write=False)
    return MeshHierarchy(tuple(out_levels), tuple(parents), tuple(childrens), levels)


def propagate_features(
    hierarchy: MeshHierarchy,
    level: int,
    coarse_features: np.ndarray,
    child_offset_fn: Callable[[np.ndarray, int], np.ndarray],
) -> np.ndarray:
    """Features for level ``level - 1`` from features on coarse level ``level``.

    ``child_offset_fn(parent_features, slot)`` receives the parent features
    of every child occupying ``slot`` (0 for a parent's first child, 1 for
    its second) as an (n, d) array and returns (n, d) offsets, row-wise.
    """
    if not 1 <= level <= hierarchy.depth:
        raise ParameterError(f"level must be in 1..{hierarchy.depth}")
    feats = np.asarray(coarse_features, dtype=float)
    children = hierarchy.children_of[level - 1]
    if feats.ndim != 2 or len(feats) != len(children):
        raise ParameterError(
            f"expected ({len(children)}, d) coarse features, got {feats.shape}"
        )
    fine_count = hierarchy.levels[level - 1].vertex_count
    out = np.empty((fine_count, feats.shape[1]))
    for slot in (0, 1):
        has = children[:, slot] != NO_CHILD
        parents = np.flatnonzero(has)
        if parents.size == 0:
            continue
        base = feats[parents]
        offset = np.asarray(child_offset_fn(base, slot), dtype=float)
        if offset.shape != base.shape:
            raise ParameterError(f"offset function returned {offset.shape}, expected {base.shape}")
        out[children[parents, slot]] = base + offset
    return out


def intermediate_loss(pred_levels: Sequence, gt_levels: Sequence) -> tuple[list[float], float]:
    """Per-level mean absolute coordinate error and their sum."""
    if len(pred_levels) != len(gt_levels):
        raise ParameterError(f"{len(pred_levels)} predicted levels vs {len(gt_levels)} ground-truth levels")
    per_level = []
    for k, (p, g) in enumerate(zip(pred_levels, gt_levels)):
        p, g = as_points(p), as_points(g)
        if p.shape != g.shape:
            raise ParameterError(f"level {k}: shape {p.shape} vs {g.shape}")
        per_level.append(float(np.mean(np.abs(p - g))))
    return per_level, float(sum(per_level))
