"""Weighted k-neighbourhood graphs over points and across pose-aligned frames."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .core import Frame, Pose, as_points
from .neighbors import knn

DEFAULT_K = 8
DEFAULT_SIGMA = 0.1


def edge_weight(sq_dist, sigma: float):
    """Gaussian decay ``exp(-d^2 / sigma^2)``."""
    return np.exp(-np.asarray(sq_dist) / (sigma * sigma))


@dataclass(eq=False)
class WeightedGraph:
    """Directed edge list ``src -> dst`` with weights in (0, 1].

    For a bipartite (temporal) graph ``node_count`` is ``(n_src, n_dst)`` and
    ``src``/``dst`` index the two node sets separately.
    """

    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    node_count: Union[int, Tuple[int, int]]
    sigma: float
    k: int
    _scatter: tuple = field(default=None, init=False, repr=False)
    _regular: bool = field(default=None, init=False, repr=False)
    _bounds: tuple = field(default=None, init=False, repr=False)

    @property
    def bipartite(self) -> bool:
        return isinstance(self.node_count, tuple)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def scatter_matrices(self):
        """Sparse ``(nodes, edges)`` matrices that sum edge rows onto src / dst nodes."""
        if self._scatter is None:
            n_src, n_dst = self.node_count if self.bipartite else (self.node_count,) * 2
            cols = np.arange(self.n_edges)
            ones = np.ones(self.n_edges)
            self._scatter = (sp.csr_matrix((ones, (self.src, cols)), shape=(n_src, self.n_edges)),
                             sp.csr_matrix((ones, (self.dst, cols)), shape=(n_dst, self.n_edges)))
        return self._scatter

    def index_bounds(self) -> Tuple[int, int]:
        """``(max src, max dst)``, or ``(-1, -1)`` without edges; cached (graphs are immutable)."""
        if self._bounds is None:
            self._bounds = ((int(self.src.max()), int(self.dst.max())) if self.n_edges
                            else (-1, -1))
        return self._bounds

    @property
    def regular(self) -> bool:
        """True when node ``i`` owns edges ``i*k' .. (i+1)*k' - 1`` for a fixed ``k'``."""
        n_src = self.node_count[0] if self.bipartite else self.node_count
        if n_src == 0 or self.n_edges % n_src:
            return False
        per = self.n_edges // n_src
        return bool(np.array_equal(self.src, np.repeat(np.arange(n_src), per)))

    def sum_to_src(self, values: np.ndarray) -> np.ndarray:
        """Sum per-edge rows onto their source nodes."""
        if self._regular is None:
            self._regular = self.regular
        if self._regular:
            n_src = self.node_count[0] if self.bipartite else self.node_count
            return values.reshape(n_src, -1, values.shape[1]).sum(axis=1)
        return self.scatter_matrices()[0] @ values

    def sum_to_dst(self, values: np.ndarray) -> np.ndarray:
        """Sum per-edge rows onto their destination nodes."""
        return self.scatter_matrices()[1] @ values

    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def validate(self) -> None:
        n_src, n_dst = self.node_count if self.bipartite else (self.node_count,) * 2
        if len(self.src) and (self.src.min() < 0 or self.src.max() >= n_src
                              or self.dst.min() < 0 or self.dst.max() >= n_dst):
            raise IndexError("edge endpoint out of range")
        if not self.bipartite and np.any(self.src == self.dst):
            raise ValueError("self-loop in graph")
        if np.any(np.bincount(self.src, minlength=n_src) > self.k):
            raise ValueError("node with more than k outgoing edges")


def build_knn_graph(points, k: int = DEFAULT_K, sigma: float = DEFAULT_SIGMA,
                    workers: int = 1) -> WeightedGraph:
    """Directed kNN graph; every node links to its k nearest other nodes.

    If fewer than ``k`` other points exist, each node links to all of them.
    """
    pts = as_points(points)
    if len(pts) < 2:
        raise ValueError("graph needs at least two points")
    if k < 1 or sigma <= 0:
        raise ValueError("need k >= 1 and sigma > 0")
    k_eff = min(k, len(pts) - 1)
    _, idx = knn(cKDTree(pts), pts, k_eff, exclude_self=True, workers=workers)
    src = np.repeat(np.arange(len(pts)), k_eff)
    dst = idx.reshape(-1)
    diff = pts[src] - pts[dst]
    w = edge_weight(np.einsum("ij,ij->i", diff, diff), sigma)
    return WeightedGraph(src, dst, w, len(pts), float(sigma), k)


def alignment_map(pose: Pose, aug: Pose | None = None) -> Pose:
    """The ``(T A)^-1`` map taking a frame's stored points to the common frame.

    ``T`` is the world-to-sensor transform (the inverse of ``Frame.pose``) and
    ``A`` an augmentation acting on world coordinates before the sensor view.
    With ``A`` the identity this is just ``Frame.pose``.
    """
    aug = aug or Pose.identity()
    return pose.inverse().compose(aug).inverse()


def build_temporal_graph(frame_t: Frame, frame_t1: Frame, aug_t: Pose | None = None,
                         aug_t1: Pose | None = None, k: int = DEFAULT_K,
                         sigma: float = DEFAULT_SIGMA, workers: int = 1) -> WeightedGraph:
    """Bipartite graph linking each node of ``frame_t`` to its k nearest in ``frame_t1``.

    Distances are measured after both frames are mapped by their alignment maps.
    """
    if frame_t.pose is None or frame_t1.pose is None:
        raise ValueError("temporal graph needs frame poses")
    if len(frame_t) == 0 or len(frame_t1) == 0:
        raise ValueError("temporal graph needs non-empty frames")
    if k < 1 or sigma <= 0:
        raise ValueError("need k >= 1 and sigma > 0")
    a = alignment_map(frame_t.pose, aug_t).apply(frame_t.points)
    b = alignment_map(frame_t1.pose, aug_t1).apply(frame_t1.points)
    k_eff = min(k, len(b))
    _, idx = knn(cKDTree(b), a, k_eff, workers=workers)
    src = np.repeat(np.arange(len(a)), k_eff)
    dst = idx.reshape(-1)
    diff = a[src] - b[dst]
    w = edge_weight(np.einsum("ij,ij->i", diff, diff), sigma)
    return WeightedGraph(src, dst, w, (len(a), len(b)), float(sigma), k)


def suggest_k(points, radius: float = 0.1, workers: int = 1) -> int:
    """Median count of other points within ``radius`` (at least 1)."""
    pts = as_points(points)
    counts = cKDTree(pts).query_ball_point(pts, radius, return_length=True, workers=workers)
    return max(1, int(np.median(counts - 1)))
