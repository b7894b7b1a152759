"""Classical per-point normal estimators (PCA plane fit and osculating jets).

Their output seeds the regularised refinement. Degenerate neighbourhoods are
not fatal: the point gets the placeholder ``(0, 0, 1)`` and its index is
recorded in ``NormalField.flagged``.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree

from .core import Frame, NormalField, as_normals
from .neighbors import knn

log = logging.getLogger(__name__)

DEFAULT_K = 32
PLACEHOLDER = np.array([0.0, 0.0, 1.0])
_CHUNK = 32768
# Relative eigenvalue floor below which a neighbourhood counts as rank deficient.
_RANK_TOL = 1e-10


def _neighbourhoods(points: np.ndarray, k: int, workers: int):
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(points) < k:
        raise ValueError(f"frame has {len(points)} points, fewer than k={k}")
    tree = cKDTree(points)
    # The query point is part of its own neighbourhood.
    _, idx = knn(tree, points, k, workers=workers)
    return idx


def _pca_frames(nbrs: np.ndarray):
    """Eigen-decomposition of each neighbourhood covariance (ascending eigenvalues)."""
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.matmul(centered.transpose(0, 2, 1), centered) / nbrs.shape[1]
    return np.linalg.eigh(cov)


def _degenerate(evals: np.ndarray) -> np.ndarray:
    # Collinear or coincident points leave two (near-)zero eigenvalues.
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    return evals[:, 1] <= _RANK_TOL * scale


def estimate_pca(frame: Frame, k: int = DEFAULT_K, workers: int = 1) -> NormalField:
    """Tangent-plane normals from the smallest-eigenvalue eigenvector of k-NN covariance."""
    pts = frame.points
    idx = _neighbourhoods(pts, k, workers)
    normals = np.empty_like(pts)
    bad = np.zeros(len(pts), dtype=bool)
    for s in range(0, len(pts), _CHUNK):
        sl = slice(s, s + _CHUNK)
        evals, evecs = _pca_frames(pts[idx[sl]])
        normals[sl] = evecs[:, :, 0]
        bad[sl] = _degenerate(evals)
    normals[bad] = PLACEHOLDER
    field = NormalField(normals, frame.frame_id, np.flatnonzero(bad))
    if bad.any():
        log.info("pca: %d degenerate neighbourhoods in frame %d", bad.sum(), frame.frame_id)
    return orient_viewpoint(field, frame)


def jet_monomials(degree: int) -> list[tuple[int, int]]:
    return [(i, d - i) for d in range(degree + 1) for i in range(d, -1, -1)]


def estimate_jet(frame: Frame, k: int = DEFAULT_K, degree: int = 2,
                 workers: int = 1) -> NormalField:
    """Normals from a least-squares height-function (jet) fit.

    Each neighbourhood is expressed in its PCA frame centred on the query
    point, ``z = f(x, y)`` is fitted with all monomials up to ``degree``, and
    the normal is ``(-f_x, -f_y, 1)`` at the origin mapped back to the frame.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    mons = jet_monomials(degree)
    if k < len(mons):
        raise ValueError(f"k={k} is below the {len(mons)} coefficients of a degree-{degree} jet")
    pts = frame.points
    idx = _neighbourhoods(pts, max(k, 3), workers)
    ex = np.array([m[0] for m in mons])
    ey = np.array([m[1] for m in mons])
    ix = mons.index((1, 0))
    iy = mons.index((0, 1))

    normals = np.empty_like(pts)
    bad = np.zeros(len(pts), dtype=bool)
    for s in range(0, len(pts), _CHUNK):
        sl = slice(s, s + _CHUNK)
        nbrs = pts[idx[sl]]
        evals, evecs = _pca_frames(nbrs)
        local = np.matmul(nbrs - pts[sl, None, :], evecs)
        # Columns of evecs: (normal, minor tangent, major tangent).
        u, v, h = local[..., 2], local[..., 1], local[..., 0]
        scale = np.sqrt(np.maximum((u * u + v * v).mean(axis=1), np.finfo(float).tiny))
        us, vs = u / scale[:, None], v / scale[:, None]
        A = us[..., None] ** ex * vs[..., None] ** ey
        At = A.transpose(0, 2, 1)
        AtA = np.matmul(At, A)
        Atb = np.matmul(At, h[..., None])[..., 0]
        ev = np.linalg.eigvalsh(AtA)
        rank_bad = ev[:, 0] <= _RANK_TOL * np.maximum(ev[:, -1], np.finfo(float).tiny)
        rank_bad |= _degenerate(evals)
        AtA[rank_bad] = np.eye(len(mons))
        coef = np.linalg.solve(AtA, Atb[..., None])[..., 0]
        fu = coef[:, ix] / scale
        fv = coef[:, iy] / scale
        n_local = np.stack([np.ones_like(fu), -fv, -fu], axis=1)
        n = np.einsum("nij,nj->ni", evecs, n_local)
        normals[sl] = n / np.linalg.norm(n, axis=1, keepdims=True)
        bad[sl] = rank_bad
    normals[bad] = PLACEHOLDER
    field = NormalField(normals, frame.frame_id, np.flatnonzero(bad))
    return orient_viewpoint(field, frame)


def orient_viewpoint(field: NormalField, frame: Frame) -> NormalField:
    """Flip normals with ``n . p > 0`` so they face the sensor at the origin."""
    n = as_normals(field)
    if len(n) != len(frame):
        raise ValueError("field and frame differ in length")
    away = np.einsum("ij,ij->i", n, frame.points) > 0
    out = np.where(away[:, None], -n, n)
    flagged = field.flagged if isinstance(field, NormalField) else np.zeros(0, np.int64)
    return NormalField(out, frame.frame_id, flagged.copy())


def inject_flips(field: NormalField, fraction: float, seed: int) -> NormalField:
    """Negate a random ``fraction`` of the normals (simulated orientation errors)."""
    n = field.normals.copy()
    rng = np.random.default_rng(seed)
    count = int(round(fraction * len(n)))
    pick = rng.choice(len(n), size=count, replace=False)
    n[pick] *= -1.0
    return NormalField(n, field.frame_id, field.flagged.copy())
