"""Refinement of noisy normal fields by descent on the regularised objective.

The initial fields double as the labels of the data term. For a sequence of
F frames the objective is the per-frame objective averaged over frames, plus
``gamma`` times the temporal term averaged over consecutive pairs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, List, Optional, Sequence

import numpy as np
import yaml

from .core import Frame, NormalField, as_normals
from .energy import (DEFAULT_DELTA, eikonal_energy, inverse_frequency_weights,
                     l1_data_energy, sgtv_energy, tgtv_energy)
from .graph import alignment_map, build_knn_graph, build_temporal_graph

log = logging.getLogger(__name__)


@dataclass
class RefineConfig:
    gamma: float = 0.1
    max_iters: int = 100
    step_size: float = 0.01
    huber_delta: float = DEFAULT_DELTA
    convergence_tol: float = 1e-7
    renormalize_each_iter: bool = False
    k: int = 8
    sigma: float = 0.1
    use_sgtv: bool = True
    use_tgtv: bool = True
    use_eikonal: bool = True
    # "uniform" or "inverse_frequency"
    sample_weighting: str = "uniform"
    bin_count: int = 42
    max_halvings: int = 40

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be > 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.k < 1 or self.sigma <= 0:
            raise ValueError("k must be >= 1 and sigma > 0")
        if self.sample_weighting not in ("uniform", "inverse_frequency"):
            raise ValueError(f"unknown sample_weighting {self.sample_weighting!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RefineConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown refine config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RefineConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


class Objective:
    """Value and gradient of the sequence objective over stacked normals."""

    def __init__(self, frames: Sequence[Frame], labels: Sequence[np.ndarray],
                 config: RefineConfig, workers: int = 1):
        self.config = config
        self.workers = workers
        self.sizes = [len(f) for f in frames]
        offsets = np.concatenate([[0], np.cumsum(self.sizes)]).tolist()
        self.slices = [slice(a, b) for a, b in zip(offsets, offsets[1:])]
        self.labels = [np.asarray(l, dtype=np.float64) for l in labels]
        nf = len(frames)
        if config.sample_weighting == "inverse_frequency":
            self.weights = [inverse_frequency_weights(l, config.bin_count) for l in self.labels]
        else:
            self.weights = [None] * nf
        active = config.gamma > 0
        self.graphs = [build_knn_graph(f.points, config.k, config.sigma, workers)
                       if active and config.use_sgtv and len(f) >= 2 else None
                       for f in frames]
        self.pairs = []
        if active and config.use_tgtv and nf > 1:
            for fa in range(nf - 1):
                a, b = frames[fa], frames[fa + 1]
                if len(a) == 0 or len(b) == 0:
                    continue
                g = build_temporal_graph(a, b, k=config.k, sigma=config.sigma, workers=workers)
                maps = (alignment_map(a.pose), alignment_map(b.pose))
                self.pairs.append((fa, fa + 1, g, maps))
        # Diagonal preconditioner: undo the 1/(F N_f) averaging per point.
        self.scale = np.concatenate([np.full(n, float(nf * max(n, 1))) for n in self.sizes])

    def part(self, x: np.ndarray, f: int) -> np.ndarray:
        return x[self.slices[f]]

    def __call__(self, x: np.ndarray, gradient: bool = True):
        """``(value, gradient)``; the gradient is ``None`` when not requested."""
        cfg = self.config
        nf = len(self.sizes)
        reg = cfg.gamma > 0
        grad = np.empty_like(x) if gradient else None
        value = 0.0
        for f in range(nf):
            xf = self.part(x, f)
            terms = [(1.0, l1_data_energy(xf, self.labels[f], self.weights[f], cfg.huber_delta,
                                          self.workers, gradient))]
            if reg and self.graphs[f] is not None:
                terms.append((cfg.gamma, sgtv_energy(xf, self.graphs[f], cfg.huber_delta,
                                                     self.workers, gradient)))
            if reg and cfg.use_eikonal:
                terms.append((cfg.gamma, eikonal_energy(xf, self.workers, gradient)))
            for i, (scale, rep) in enumerate(terms):
                value += scale * rep.value
                if not gradient:
                    continue
                gf = self.part(grad, f)
                if i == 0:
                    np.copyto(gf, rep.gradient)
                else:
                    gf += scale * rep.gradient
        value /= nf
        if gradient:
            grad /= nf
        if self.pairs:
            w = cfg.gamma / len(self.pairs)
            for fa, fb, g, maps in self.pairs:
                rep = tgtv_energy(self.part(x, fa), self.part(x, fb), g, maps,
                                  cfg.huber_delta, self.workers, gradient)
                value += w * rep.value
                if gradient:
                    na = self.sizes[fa]
                    self.part(grad, fa)[:] += w * rep.gradient[:na]
                    self.part(grad, fb)[:] += w * rep.gradient[na:]
        if not np.isfinite(value):
            raise FloatingPointError("objective is not finite; check the configuration")
        return value, grad


def _project(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 0, x / np.where(norms > 0, norms, 1.0), x)


def refine_normals(frames: Sequence[Frame], init_fields: Sequence[NormalField],
                   config: Optional[RefineConfig] = None, workers: int = 1,
                   callback: Optional[Callable[[int, float], None]] = None,
                   finalize: bool = True) -> List[NormalField]:
    """Refine ``init_fields`` by backtracking gradient descent.

    Starts from the initial fields, which are also the labels. A trial step is
    halved until the objective does not increase; iteration stops after
    ``max_iters``, when no step is accepted, or when the relative decrease
    drops below ``convergence_tol``. ``callback(iteration, value)`` sees the
    objective after every accepted step (iteration 0 is the start).
    With ``finalize`` the returned normals are scaled to unit length.
    """
    config = config or RefineConfig()
    if len(frames) != len(init_fields):
        raise ValueError("need one initial field per frame")
    labels = []
    for fr, fld in zip(frames, init_fields):
        n = as_normals(fld)
        if len(n) != len(fr):
            raise ValueError(f"field for frame {fr.frame_id} has the wrong length")
        if not np.all(np.isfinite(n)):
            raise ValueError(f"field for frame {fr.frame_id} has non-finite entries")
        labels.append(n)
    if not frames:
        return []

    obj = Objective(frames, labels, config, workers)
    x = np.vstack(labels) if sum(obj.sizes) else np.zeros((0, 3))
    if config.renormalize_each_iter:
        x = _project(x)
    value, grad = obj(x)
    if callback:
        callback(0, value)
    step = config.step_size
    for it in range(1, config.max_iters + 1):
        direction = -obj.scale[:, None] * grad
        if not np.any(direction):
            break
        accepted = False
        for _ in range(config.max_halvings):
            trial = x + step * direction
            if config.renormalize_each_iter:
                trial = _project(trial)
            t_value, t_grad = obj(trial)
            if t_value <= value:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            log.debug("refine: no decreasing step at iteration %d", it)
            break
        decrease = (value - t_value) / max(abs(value), np.finfo(float).tiny)
        x, value, grad = trial, t_value, t_grad
        if callback:
            callback(it, value)
        if decrease < config.convergence_tol:
            break
        step = min(2.0 * step, config.step_size)

    out = []
    for f, fr in enumerate(frames):
        fld = NormalField(obj.part(x, f).copy(), fr.frame_id)
        out.append(fld.finalized() if finalize else fld)
    return out
