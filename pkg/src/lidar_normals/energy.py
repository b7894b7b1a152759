"""Energy terms over normal fields, each returning its value and gradient.

Every term takes ``gradient=False`` to skip the gradient (reported as ``None``)
when only the value is needed.

All absolute values are Huber-smoothed (``huber_delta``) so every term is
differentiable. Elementwise work is split into fixed-size blocks that may run
on a thread pool; block partial sums are reduced in block order, so results
do not depend on the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import NormalField, Pose, as_normals
from .graph import WeightedGraph

DEFAULT_DELTA = 1e-3
_BLOCK = 1 << 17


@dataclass
class EnergyReport:
    value: float
    gradient: Optional[np.ndarray]

    def __post_init__(self):
        self.value = float(self.value)

    def split(self, sizes: Sequence[int]):
        """Cut a stacked gradient (e.g. from the temporal term) per field."""
        return np.split(self.gradient, np.cumsum(sizes)[:-1])


def huber(x, delta: float = DEFAULT_DELTA):
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x / delta, a - 0.5 * delta)


def huber_grad(x, delta: float = DEFAULT_DELTA):
    return np.clip(x / delta, -1.0, 1.0)


def _unit_clip(x, scale):
    # clip(x * scale, -1, 1) without the overhead of np.clip on small arrays.
    c = np.multiply(x, scale)
    np.minimum(c, 1.0, out=c)
    np.maximum(c, -1.0, out=c)
    return c


def _blocks(n: int):
    return [slice(s, min(s + _BLOCK, n)) for s in range(0, n, _BLOCK)] or [slice(0, 0)]


def _run(fn, n: int, workers: int):
    if n <= _BLOCK:
        return [fn(slice(0, n))]
    blocks = _blocks(n)
    if workers <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != n:
        raise ValueError("sample weights and field differ in length")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample weights must be finite and non-negative")
    return w


def l1_data_energy(field, labels, weights=None, delta: float = DEFAULT_DELTA,
                   workers: int = 1, gradient: bool = True) -> EnergyReport:
    """Weighted mean of the smoothed L1 distance between predictions and labels."""
    x = as_normals(field)
    y = as_normals(labels)
    if x.shape != y.shape:
        raise ValueError("field and labels differ in length")
    n = len(x)
    if n == 0:
        return EnergyReport(0.0, np.zeros((0, 3)) if gradient else None)
    w = check_weights(weights, n)
    grad = np.empty_like(x) if gradient else None

    def block(s):
        r = y[s] - x[s]
        c = _unit_clip(r, 1.0 / delta)
        value = float((w[s] @ (c * (r - (0.5 * delta) * c))).sum())
        if gradient:
            grad[s] = -(w[s, None] / n) * c
        return value

    return EnergyReport(sum(_run(block, n, workers)) / n, grad)


def _edge_term(xa, xb, graph, delta, workers, gradient=True):
    """Value of a graph term and its gradient w.r.t. ``xa`` and ``xb``."""
    src, dst, weight = graph.src, graph.dst, graph.weight
    n_edges = graph.n_edges
    g_edge = np.empty((n_edges, 3)) if gradient else None

    def block(s):
        diff = np.take(xa, src[s], axis=0)
        diff -= np.take(xb, dst[s], axis=0)
        c = _unit_clip(diff, 1.0 / delta)
        ws = weight[s]
        # huber(d) = c (d - delta c / 2) with c = clip(d / delta, -1, 1)
        value = float((ws @ (c * (diff - (0.5 * delta) * c))).sum())
        if gradient:
            np.multiply(c, (ws / n_edges)[:, None], out=g_edge[s])
        return value

    value = sum(_run(block, n_edges, workers)) / n_edges
    if not gradient:
        return value, None, None
    return value, graph.sum_to_src(g_edge), graph.sum_to_dst(g_edge)


def sgtv_energy(field, graph: WeightedGraph, delta: float = DEFAULT_DELTA,
                workers: int = 1, gradient: bool = True) -> EnergyReport:
    """Edge-weighted smoothed L1 differences across a kNN graph, averaged over edges."""
    x = as_normals(field)
    if graph.bipartite or graph.node_count != len(x):
        raise ValueError("graph does not match field")
    if max(graph.index_bounds()) >= len(x):
        raise IndexError("edge endpoint out of range")
    if graph.n_edges == 0:
        return EnergyReport(0.0, np.zeros_like(x) if gradient else None)
    value, g_src, g_dst = _edge_term(x, x, graph, delta, workers, gradient)
    return EnergyReport(value, g_src - g_dst if gradient else None)


def tgtv_energy(field_t, field_t1, bigraph: WeightedGraph, maps: Tuple[Pose, Pose],
                delta: float = DEFAULT_DELTA, workers: int = 1,
                gradient: bool = True) -> EnergyReport:
    """Smoothed L1 differences across a bipartite graph after rotating both fields.

    ``maps`` are the alignment maps of the two frames; only their rotations
    act on normals. The gradient is stacked: rows for ``field_t`` first.
    """
    a = as_normals(field_t)
    b = as_normals(field_t1)
    if not bigraph.bipartite or bigraph.node_count != (len(a), len(b)):
        raise ValueError("bipartite graph does not match the fields")
    hi_src, hi_dst = bigraph.index_bounds()
    if hi_src >= len(a) or hi_dst >= len(b):
        raise IndexError("edge endpoint out of range")
    if bigraph.n_edges == 0:
        return EnergyReport(0.0, np.zeros((len(a) + len(b), 3)) if gradient else None)
    ra, rb = maps[0].rotation, maps[1].rotation
    value, g_src, g_dst = _edge_term(a @ ra.T, b @ rb.T, bigraph, delta, workers, gradient)
    if not gradient:
        return EnergyReport(value, None)
    ga = g_src @ ra
    gb = -(g_dst @ rb)
    return EnergyReport(value, np.vstack([ga, gb]))


def eikonal_energy(field, workers: int = 1, gradient: bool = True) -> EnergyReport:
    """Mean squared deviation of the vector norms from 1.

    The gradient at a zero vector is taken to be zero.
    """
    x = as_normals(field)
    n = len(x)
    if n == 0:
        return EnergyReport(0.0, np.zeros((0, 3)) if gradient else None)
    grad = np.empty_like(x) if gradient else None

    def block(s):
        xs = x[s]
        r = np.sqrt(np.einsum("ij,ij->i", xs, xs))
        dev = r - 1.0
        if not gradient:
            return float(dev @ dev)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, 2.0 * dev / (n * r), 0.0)
        grad[s] = scale[:, None] * xs
        return float(dev @ dev)

    return EnergyReport(sum(_run(block, n, workers)) / n, grad)


def total_objective(data: EnergyReport, sgtv: Optional[EnergyReport] = None,
                    tgtv: Optional[EnergyReport] = None,
                    eikonal: Optional[EnergyReport] = None,
                    gamma: float = 0.1) -> EnergyReport:
    """``data + gamma * (sgtv + tgtv + eikonal)``; missing terms count as zero."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    value = data.value
    grad = data.gradient.copy()
    reg = [t for t in (sgtv, tgtv, eikonal) if t is not None]
    if reg:
        value += gamma * sum(t.value for t in reg)
    for t in reg:
        if t.gradient.shape != grad.shape:
            raise ValueError("term gradients differ in shape")
        grad += gamma * t.gradient
    return EnergyReport(value, grad)


# --- inverse-frequency sample weights --------------------------------------

def icosphere(subdivisions: int) -> np.ndarray:
    """Vertices of a subdivided icosahedron (12, 42, 162, ... points)."""
    phi = (1 + 5 ** 0.5) / 2
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts)


def icosphere_level(bin_count: int) -> int:
    level, count = 0, 12
    while count < bin_count:
        level += 1
        count = 10 * 4 ** level + 2
    if count != bin_count:
        raise ValueError(f"bin_count must be 10*4^s + 2 (12, 42, 162, ...), got {bin_count}")
    return level


def inverse_frequency_weights(labels, bin_count: int = 42) -> np.ndarray:
    """Per-sample weights proportional to 1 / (occupancy of the sample's sphere bin).

    Bins are the Voronoi cells of icosphere vertices; the weights are scaled
    to have mean 1.
    """
    n = as_normals(labels)
    if len(n) == 0:
        raise ValueError("no labels")
    centers = icosphere(icosphere_level(bin_count))
    bins = np.argmax(n @ centers.T, axis=1)
    counts = np.bincount(bins, minlength=len(centers))
    w = len(n) / counts[bins]
    return w / w.mean()
