"""Angular-error evaluation and spherical density analysis of normal fields."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import Frame, as_normals

DEFAULT_THRESHOLDS = (5.0, 7.5, 11.25, 22.5, 30.0)
# Chosen so kernels stay visually comparable; no published value exists.
DEFAULT_KAPPA = 50.0
_ZERO_NORM = 1e-12
_KDE_CHUNK = 4096


def angular_errors(pred, gt, return_flags: bool = False):
    """Orientation-aware angle in degrees between predicted and ground-truth normals.

    A zero-length prediction scores 90 degrees; with ``return_flags`` a boolean
    mask of those points is returned as well.
    """
    p = as_normals(pred)
    g = as_normals(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction has {len(p)} normals, ground truth {len(g)}")
    norms = np.linalg.norm(p, axis=1)
    zero = norms <= _ZERO_NORM
    # atan2 is scale-free and keeps full precision near 0 and 180 degrees.
    sin = np.linalg.norm(np.cross(p, g), axis=1)
    cos = np.einsum("ij,ij->i", p, g)
    err = np.degrees(np.arctan2(sin, cos))
    err[zero] = 90.0
    return (err, zero) if return_flags else err


@dataclass
class MetricsReport:
    mean_deg: float
    median_deg: float
    rmse_deg: float
    threshold_acc: Dict[float, float]
    runtime_s: float
    n_points: int

    _FIELDS = ("n_points", "mean_deg", "median_deg", "rmse_deg")

    def to_text(self) -> str:
        """Canonical ``key: value`` lines; floats use ``repr`` so they parse back exactly."""
        lines = [f"n_points: {self.n_points}"]
        lines += [f"{k}: {float(getattr(self, k))!r}" for k in self._FIELDS[1:]]
        for t in sorted(self.threshold_acc):
            lines.append(f"acc@{float(t)!r}: {float(self.threshold_acc[t])!r}")
        lines.append(f"runtime_s: {float(self.runtime_s)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values, acc = {}, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition(":")
            key = key.strip()
            if key.startswith("acc@"):
                acc[float(key[4:])] = float(val)
            else:
                values[key] = val.strip()
        missing = set(cls._FIELDS + ("runtime_s",)) - set(values)
        if missing:
            raise ValueError(f"metrics report lacks {sorted(missing)}")
        return cls(float(values["mean_deg"]), float(values["median_deg"]),
                   float(values["rmse_deg"]), acc, float(values["runtime_s"]),
                   int(values["n_points"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def summarize(errors, thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
              runtime_s: float = 0.0) -> MetricsReport:
    """Mean, lower-middle median, RMSE and fraction of errors strictly below each threshold."""
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if len(e) == 0:
        raise ValueError("no errors to summarize")
    if not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite")
    s = np.sort(e)
    acc = {float(t): float(np.count_nonzero(e < t)) / len(e) for t in thresholds}
    return MetricsReport(mean_deg=float(e.mean()),
                         median_deg=float(s[(len(s) - 1) // 2]),
                         rmse_deg=float(np.sqrt(np.mean(e * e))),
                         threshold_acc=acc, runtime_s=float(runtime_s), n_points=len(e))


def evaluate(pred, gt, thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
             runtime_s: float = 0.0) -> MetricsReport:
    return summarize(angular_errors(pred, gt), thresholds, runtime_s)


def rmse_deg(pred, gt) -> float:
    e = angular_errors(pred, gt)
    return float(np.sqrt(np.mean(e * e)))


# --- spherical density ------------------------------------------------------

def sphere_grid(grid_res: int):
    """Spherical Fibonacci lattice of ``grid_res`` points.

    Point ``i`` sits at the centre of the ``i``-th of ``grid_res`` equal-height
    z slices, so every point stands for the same area. Returns
    ``(directions, cell_area)``.
    """
    if grid_res < 1:
        raise ValueError("grid_res must be >= 1")
    i = np.arange(grid_res)
    z = 1.0 - (2.0 * i + 1.0) / grid_res
    lon = i * (math.pi * (3.0 - math.sqrt(5.0)))
    r = np.sqrt(1.0 - z * z)
    dirs = np.stack([r * np.cos(lon), r * np.sin(lon), z], axis=1)
    return dirs, 4.0 * math.pi / grid_res


def vmf_log_normalizer(kappa: float) -> float:
    """``log C3(kappa) + kappa`` so that ``C3 exp(kappa t) = exp(log_norm + kappa (t - 1))``."""
    return math.log(kappa) - math.log(2.0 * math.pi) - math.log1p(-math.exp(-2.0 * kappa))


@dataclass
class DensityMap:
    directions: np.ndarray
    density: np.ndarray
    kappa: float
    cell_area: float = field(default=0.0)

    def integral(self) -> float:
        return float(self.density.sum() * self.cell_area)

    def argmax_direction(self) -> np.ndarray:
        return self.directions[int(np.argmax(self.density))]

    def to_csv(self, path) -> None:
        table = np.column_stack([self.directions, self.density])
        np.savetxt(path, table, delimiter=",", fmt="%.9g", header="x,y,z,density", comments="")


def vmf_kde(normals, kappa: float = DEFAULT_KAPPA, grid_res: int = 16384) -> DensityMap:
    """Von Mises-Fisher kernel density of unit normals on an equal-area sphere grid.

    ``density(x) = mean_i C3(kappa) exp(kappa <x, n_i>)`` with
    ``C3 = kappa / (4 pi sinh kappa)``, evaluated in a form that cannot overflow.
    """
    n = as_normals(normals)
    if len(n) == 0:
        raise ValueError("no normals to estimate a density from")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    dirs, area = sphere_grid(grid_res)
    log_norm = vmf_log_normalizer(kappa)
    acc = np.zeros(len(dirs))
    # Chunked over samples so memory stays bounded for 100k-point frames.
    for s in range(0, len(n), _KDE_CHUNK):
        t = dirs @ n[s:s + _KDE_CHUNK].T
        acc += np.exp(log_norm + kappa * (t - 1.0)).sum(axis=1)
    return DensityMap(dirs, acc / len(n), float(kappa), area)


# --- cross-frame consistency -----------------------------------------------

def cross_frame_disagreement(frame_a: Frame, field_a, frame_b: Frame, field_b,
                             max_dist: float = 0.05) -> float:
    """Mean angle in degrees between nearest cross-frame neighbours' normals.

    Both frames and their normals are mapped into world coordinates by the
    frame poses; only pairs closer than ``max_dist`` metres are compared.
    """
    na = frame_a.pose.rotate(as_normals(field_a))
    nb = frame_b.pose.rotate(as_normals(field_b))
    pa, pb = frame_a.world_points(), frame_b.world_points()
    dist, idx = cKDTree(pb).query(pa, k=1, distance_upper_bound=max_dist)
    hit = np.isfinite(dist)
    if not hit.any():
        raise ValueError("no cross-frame pairs within max_dist")
    return float(np.mean(angular_errors(na[hit], nb[idx[hit]])))

