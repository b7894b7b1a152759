"""Exact k-nearest-neighbour queries with deterministic tie-breaking."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def _sorted_rows(dist: np.ndarray, idx: np.ndarray):
    # Order each row by (distance, index) so equal distances favour the lower index.
    key = np.argsort(idx, axis=1, kind="stable")
    d = np.take_along_axis(dist, key, 1)
    i = np.take_along_axis(idx, key, 1)
    key = np.argsort(d, axis=1, kind="stable")
    return np.take_along_axis(d, key, 1), np.take_along_axis(i, key, 1)


def knn(tree: cKDTree, queries: np.ndarray, k: int, exclude_self: bool = False,
        workers: int = 1, slack: int = 1):
    """k nearest tree points for every query.

    Returns ``(dist, idx)`` of shape ``(Q, k)``. With ``exclude_self`` the
    queries are assumed to be the tree points themselves and row ``i`` never
    contains ``i``. Rows whose k-th distance ties with the last fetched
    candidate are re-queried with a larger budget, so results are exact.
    """
    n = tree.n
    need = k + (1 if exclude_self else 0)
    if need > n:
        raise ValueError(f"need {need} neighbours but the tree holds {n} points")
    q = np.asarray(queries, dtype=np.float64)
    out_d = np.empty((len(q), k))
    out_i = np.empty((len(q), k), dtype=np.int64)
    # Querying the tree points in leaf order keeps the traversal cache friendly.
    full = exclude_self and len(q) == n
    rows = tree.indices.astype(np.int64) if full else np.arange(len(q))
    budget = min(n, need + slack)
    while len(rows):
        d, i = tree.query(q[rows], k=budget, workers=workers)
        d0 = d = d.reshape(len(rows), budget)
        i0 = i = i.reshape(len(rows), budget).astype(np.int64)
        last = d[:, -1].copy()
        if exclude_self:
            self_hit = i == rows[:, None]
            # Push self matches to the end so they are never selected.
            d = np.where(self_hit, np.inf, d)
            messy = ~self_hit[:, 0]
            d, i = d[:, 1:], i[:, 1:]
        else:
            messy = np.zeros(len(rows), dtype=bool)
        # The tree returns rows sorted by distance; only ties need re-ordering.
        messy |= (d[:, 1:] == d[:, :-1]).any(axis=1)
        if messy.any():
            if exclude_self:
                # Restore the dropped first column for rows handled the slow way.
                full_d = np.where(self_hit[messy, :1], np.inf, d0[messy, :1])
                dm = np.hstack([full_d, d[messy]])
                im = np.hstack([i0[messy, :1], i[messy]])
            else:
                dm, im = d[messy], i[messy]
            dm, im = _sorted_rows(dm, im)
            d, i = d[:, :k].copy(), i[:, :k].copy()
            d[messy], i[messy] = dm[:, :k], im[:, :k]
        else:
            d, i = d[:, :k], i[:, :k]
        if budget < n:
            unsure = d[:, -1] >= last
        else:
            unsure = np.zeros(len(rows), dtype=bool)
        done = ~unsure
        out_d[rows[done]] = d[done]
        out_i[rows[done]] = i[done]
        rows = rows[unsure]
        budget = min(n, budget * 2)
    return out_d, out_i
