"""Point-cloud container and clean preprocessing statistics.

Everything downstream (geometric losses, tangent projection, metrics) consumes
the kNN graph, PCA normals and surface-variation curvature computed here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateNeighborhoodError, InvalidArgumentError

# trace below this is treated as a collapsed neighborhood
_TRACE_FLOOR = 1e-12


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    label: Optional[int] = None
    id: Optional[str] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidArgumentError(f"points must be N x 3, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, label=self.label, id=self.id)


@dataclass(frozen=True)
class NeighborGraph:
    k: int
    neighbors: np.ndarray
    source_id: Optional[str] = None

    def __post_init__(self):
        nb = np.asarray(self.neighbors, dtype=np.int64)
        nb.setflags(write=False)
        object.__setattr__(self, "neighbors", nb)


@dataclass(frozen=True)
class LocalFrame:
    normals: np.ndarray
    curvature: np.ndarray


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64)


def _check_graph(cloud, graph: NeighborGraph):
    pts = _as_points(cloud)
    if graph.neighbors.shape[0] != pts.shape[0]:
        raise InvalidArgumentError(
            f"graph has {graph.neighbors.shape[0]} rows but cloud has {pts.shape[0]} points")
    if isinstance(cloud, PointCloud) and graph.source_id is not None and cloud.id is not None \
            and graph.source_id != cloud.id:
        raise InvalidArgumentError(
            f"graph built from {graph.source_id!r}, not {cloud.id!r}")


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other points, ties broken by lower index."""
    n = points.shape[0]
    if k >= n or k < 1:
        raise InvalidArgumentError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    d2 = pairwise_sq_dists(points, points)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps lower indices first among equal distances
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def knn_graph(cloud: PointCloud, k: int) -> NeighborGraph:
    pts = _as_points(cloud)
    nb = knn_indices(pts, k)
    source = cloud.id if isinstance(cloud, PointCloud) else None
    return NeighborGraph(k=k, neighbors=nb, source_id=source)


def neighborhood_covariances(points: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Mean-centred covariance of each point together with its neighbors, (N, 3, 3)."""
    idx = np.concatenate([np.arange(points.shape[0])[:, None], neighbors], axis=1)
    patch = points[idx]
    centered = patch - patch.mean(axis=1, keepdims=True)
    return np.einsum("nmi,nmj->nij", centered, centered) / idx.shape[1]


def orient_normals(normals: np.ndarray) -> np.ndarray:
    """Flip each normal so its largest-magnitude component is positive."""
    normals = np.array(normals, dtype=np.float64, copy=True)
    lead = np.argmax(np.abs(normals), axis=1)
    sign = np.sign(normals[np.arange(normals.shape[0]), lead])
    sign[sign == 0] = 1.0
    return normals * sign[:, None]


def estimate_normals(cloud: PointCloud, graph: NeighborGraph,
                     rank_tol: float = 1e-10) -> np.ndarray:
    """Unit PCA normals (eigenvector of the smallest covariance eigenvalue).

    Raises DegenerateNeighborhoodError when a neighborhood covariance has rank
    below 2, where the normal is not determined.
    """
    _check_graph(cloud, graph)
    pts = _as_points(cloud)
    cov = neighborhood_covariances(pts, graph.neighbors)
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], 0.0)
    bad = (scale <= _TRACE_FLOOR) | (evals[:, 1] <= rank_tol * np.maximum(scale, _TRACE_FLOOR))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateNeighborhoodError(
            f"neighborhood of point {i} is rank-deficient (eigenvalues {evals[i]})")
    normals = evecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return orient_normals(normals)


def surface_variation(cov: np.ndarray) -> np.ndarray:
    evals = np.linalg.eigvalsh(cov)
    evals = np.clip(evals, 0.0, None)
    tr = evals.sum(axis=-1)
    out = np.zeros(tr.shape)
    ok = tr >= _TRACE_FLOOR
    out[ok] = evals[..., 0][ok] / tr[ok]
    return out


def curvature_proxy(cloud: PointCloud, graph: NeighborGraph) -> np.ndarray:
    """Surface variation lambda_min / trace of each kNN covariance, in [0, 1/3]."""
    _check_graph(cloud, graph)
    cov = neighborhood_covariances(_as_points(cloud), graph.neighbors)
    return surface_variation(cov)


def local_frame(cloud: PointCloud, graph: NeighborGraph) -> LocalFrame:
    return LocalFrame(normals=estimate_normals(cloud, graph),
                      curvature=curvature_proxy(cloud, graph))


def farthest_point_sample(cloud, m: int, seed_index: int = 0) -> list[int]:
    pts = _as_points(cloud)
    n = pts.shape[0]
    if m > n or m < 1:
        raise InvalidArgumentError(f"cannot sample m={m} of N={n} points")
    if not 0 <= seed_index < n:
        raise InvalidArgumentError(f"seed_index {seed_index} out of range")
    chosen = [int(seed_index)]
    dist = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return chosen


@dataclass(frozen=True)
class CleanStats:
    """kNN graph, normals and curvature of a clean cloud, computed once per attack."""
    graph: NeighborGraph
    normals: np.ndarray
    curvature: np.ndarray
    points: np.ndarray = field(repr=False)
    source_id: Optional[str] = None


def clean_stats(cloud: PointCloud, k: int = 16) -> CleanStats:
    graph = knn_graph(cloud, k)
    frame = local_frame(cloud, graph)
    return CleanStats(graph=graph, normals=frame.normals, curvature=frame.curvature,
                      points=cloud.points, source_id=cloud.id)
