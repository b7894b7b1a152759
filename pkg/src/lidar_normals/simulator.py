"""Analytic ray-cast LiDAR simulator with exact surface normals.

Scenes are built from a handful of primitives whose normals are known in
closed form, so every return carries an exact ground-truth normal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import yaml

from .core import Frame, Pose, SensorConfig, rotation_z

log = logging.getLogger(__name__)

_T_MIN = 1e-9
# Returns with |n . d| below this are treated as grazing and discarded.
GRAZING_EPS = 1e-12


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length direction")
    return v / n


@dataclass(frozen=True, eq=False)
class Plane:
    point: np.ndarray
    normal: np.ndarray
    material_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64).reshape(3))
        object.__setattr__(self, "normal", _unit(self.normal))

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.point - origin) @ self.normal) / denom
        t = np.where((np.abs(denom) > 0) & (t > _T_MIN), t, np.inf)
        return t, np.broadcast_to(self.normal, dirs.shape).copy()

    def distance(self, pts):
        return np.abs((pts - self.point) @ self.normal)

    def normal_at(self, pts):
        return np.broadcast_to(self.normal, pts.shape).copy()


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box, visible from outside or from inside."""

    min: np.ndarray
    max: np.ndarray
    material_id: int = 0

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("box max must exceed min on every axis")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def intersect(self, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.min - origin) * inv
            t2 = (self.max - origin) * inv
        # Rays parallel to a slab: inside the slab -> unbounded, outside -> miss.
        par = dirs == 0
        inside = (origin >= self.min) & (origin <= self.max)
        tlo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        thi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        tnear = tlo.max(axis=1)
        tfar = thi.min(axis=1)
        near_axis = tlo.argmax(axis=1)
        far_axis = thi.argmin(axis=1)
        valid = tnear <= tfar
        use_near = valid & (tnear > _T_MIN)
        use_far = valid & ~use_near & (tfar > _T_MIN)
        t = np.full(len(dirs), np.inf)
        t[use_near] = tnear[use_near]
        t[use_far] = tfar[use_far]
        axis = np.where(use_near, near_axis, far_axis)
        rows = np.arange(len(dirs))
        normals = np.zeros_like(dirs)
        # Outward normal: entering face opposes d, exiting face follows it.
        sign = np.sign(dirs[rows, axis])
        normals[rows, axis] = np.where(use_near, -sign, sign)
        return t, normals

    def distance(self, pts):
        center = 0.5 * (self.min + self.max)
        half = 0.5 * (self.max - self.min)
        q = np.abs(pts - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)

    def normal_at(self, pts):
        center = 0.5 * (self.max + self.min)
        half = 0.5 * (self.max - self.min)
        q = np.abs(pts - center) - half
        axis = q.argmax(axis=1)
        n = np.zeros_like(pts)
        rows = np.arange(len(pts))
        n[rows, axis] = np.sign(pts[rows, axis] - center[axis])
        return n


def _quadric_roots(origin, dirs, center, axis, radius):
    """Ray parameters where the ray meets an infinite cylinder's lateral surface."""
    oc = origin - center
    d_perp = dirs - np.outer(dirs @ axis, axis)
    o_perp = oc - (oc @ axis) * axis
    a = np.einsum("ij,ij->i", d_perp, d_perp)
    b = 2.0 * (d_perp @ o_perp)
    c = o_perp @ o_perp - radius * radius
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 1e-300)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # Numerically stable pair of roots.
        q = -0.5 * (b + np.copysign(sq, b))
        r1 = q / a
        r2 = np.where(q != 0, c / q, r1)
    t0 = np.where(ok, np.minimum(r1, r2), np.inf)
    t1 = np.where(ok, np.maximum(r1, r2), np.inf)
    return t0, t1


@dataclass(frozen=True, eq=False)
class Cylinder:
    """Finite closed cylinder (lateral surface plus end caps)."""

    center: np.ndarray
    axis: np.ndarray
    radius: float
    half_length: float
    material_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "axis", _unit(self.axis))
        if self.radius <= 0 or self.half_length <= 0:
            raise ValueError("cylinder radius and half_length must be positive")

    def intersect(self, origin, dirs):
        t0, t1 = _quadric_roots(origin, dirs, self.center, self.axis, self.radius)
        best = np.full(len(dirs), np.inf)
        for tc in (t0, t1):
            with np.errstate(invalid="ignore"):
                h = (origin - self.center) @ self.axis + tc * (dirs @ self.axis)
            ok = np.isfinite(tc) & (tc > _T_MIN) & (np.abs(h) <= self.half_length)
            best = np.where(ok & (tc < best), tc, best)
        da = dirs @ self.axis
        for s in (-1.0, 1.0):
            cap = self.center + s * self.half_length * self.axis
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = ((cap - origin) @ self.axis) / da
            hit = origin + np.where(np.isfinite(tc), tc, 0.0)[:, None] * dirs
            rad = hit - cap
            rad -= np.outer(rad @ self.axis, self.axis)
            ok = (np.isfinite(tc) & (tc > _T_MIN)
                  & (np.einsum("ij,ij->i", rad, rad) <= self.radius ** 2))
            best = np.where(ok & (tc < best), tc, best)
        hit = origin + np.where(np.isfinite(best), best, 0.0)[:, None] * dirs
        return best, self.normal_at(hit)

    def _parts(self, pts):
        rel = pts - self.center
        h = rel @ self.axis
        radial = rel - np.outer(h, self.axis)
        r = np.linalg.norm(radial, axis=1)
        return h, radial, r

    def distance(self, pts):
        h, _, r = self._parts(pts)
        dr = r - self.radius
        dh = np.abs(h) - self.half_length
        outside = np.hypot(np.maximum(dr, 0), np.maximum(dh, 0))
        inside = np.minimum(np.maximum(dr, dh), 0.0)
        return np.abs(outside + inside)

    def normal_at(self, pts):
        h, radial, r = self._parts(pts)
        lateral = np.abs(r - self.radius) <= np.abs(np.abs(h) - self.half_length)
        with np.errstate(invalid="ignore", divide="ignore"):
            n_lat = radial / r[:, None]
        n_cap = np.outer(np.sign(h), self.axis)
        return np.where(lateral[:, None], n_lat, n_cap)


@dataclass(frozen=True, eq=False)
class TunnelArc:
    """Half-cylinder vault over a straight centerline (a tunnel ceiling).

    Only the part of the lateral surface on the ``up`` side of the centerline
    exists; it is usually seen from the inside.
    """

    start: np.ndarray
    end: np.ndarray
    radius: float
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    material_id: int = 0

    def __post_init__(self):
        s = np.asarray(self.start, dtype=np.float64).reshape(3)
        e = np.asarray(self.end, dtype=np.float64).reshape(3)
        if np.linalg.norm(e - s) == 0 or self.radius <= 0:
            raise ValueError("tunnel needs distinct endpoints and positive radius")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)
        object.__setattr__(self, "up", _unit(self.up))

    @property
    def _frame(self):
        axis = _unit(self.end - self.start)
        center = 0.5 * (self.start + self.end)
        half = 0.5 * np.linalg.norm(self.end - self.start)
        return axis, center, half

    def _on_arc(self, pts):
        axis, center, half = self._frame
        rel = pts - center
        h = rel @ axis
        radial = rel - np.outer(h, axis)
        return h, radial, (np.abs(h) <= half) & (radial @ self.up >= 0)

    def intersect(self, origin, dirs):
        axis, center, _ = self._frame
        t0, t1 = _quadric_roots(origin, dirs, center, axis, self.radius)
        best = np.full(len(dirs), np.inf)
        for tc in (t0, t1):
            hit = origin + np.where(np.isfinite(tc), tc, 0.0)[:, None] * dirs
            _, _, on = self._on_arc(hit)
            ok = np.isfinite(tc) & (tc > _T_MIN) & on
            best = np.where(ok & (tc < best), tc, best)
        hit = origin + np.where(np.isfinite(best), best, 0.0)[:, None] * dirs
        return best, self.normal_at(hit)

    def distance(self, pts):
        _, radial, _ = self._on_arc(pts)
        return np.abs(np.linalg.norm(radial, axis=1) - self.radius)

    def normal_at(self, pts):
        _, radial, _ = self._on_arc(pts)
        with np.errstate(invalid="ignore", divide="ignore"):
            # Inward-facing: the vault is seen from inside.
            return -radial / np.linalg.norm(radial, axis=1)[:, None]


Primitive = Union[Plane, Box, Cylinder, TunnelArc]


@dataclass(eq=False)
class Scene:
    primitives: List[Primitive]
    name: str = "scene"

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")

    def cast(self, origin, dirs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest hit over all primitives: ``(t, outward normal, primitive index)``."""
        best_t = np.full(len(dirs), np.inf)
        best_n = np.zeros_like(dirs)
        best_i = np.full(len(dirs), -1, dtype=np.int64)
        for i, prim in enumerate(self.primitives):
            t, n = prim.intersect(origin, dirs)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_n[closer] = n[closer]
            best_i[closer] = i
        return best_t, best_n, best_i

    def distance(self, pts) -> np.ndarray:
        """Unsigned distance to the nearest primitive surface."""
        return np.min([p.distance(pts) for p in self.primitives], axis=0)


@dataclass(eq=False)
class Trajectory:
    timestamps: np.ndarray
    poses: List[Pose]
    rotation_hz: float = 10.0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if len(self.timestamps) > 1:
            dt = np.diff(self.timestamps)
            if np.any(np.abs(dt - 1.0 / self.rotation_hz) > 1e-9):
                raise ValueError("timestamps must be spaced at 1/rotation_hz")

    def __len__(self):
        return len(self.poses)

    @classmethod
    def linear(cls, start: Pose, velocity, n: int, rotation_hz: float = 10.0,
               yaw_rate: float = 0.0, t0: float = 0.0) -> "Trajectory":
        """Constant-velocity (m/s, world frame) and constant yaw-rate (rad/s) motion."""
        dt = 1.0 / rotation_hz
        v = np.asarray(velocity, dtype=np.float64).reshape(3)
        poses = []
        for i in range(n):
            rot = rotation_z(yaw_rate * i * dt) @ start.rotation
            poses.append(Pose(rot, start.translation + v * i * dt))
        return cls(t0 + dt * np.arange(n), poses, rotation_hz)


def raycast_frame(scene: Scene, sensor: SensorConfig, pose: Pose, seed: int,
                  frame_id: int = 0, timestamp: float = 0.0) -> Frame:
    """Simulate one sweep of ``sensor`` at ``pose``.

    Range noise is added along each ray after the exact hit has been found;
    the ground-truth normal belongs to the exact hit. Dropout is drawn after
    the noise so the random stream is fixed for a given seed.
    """
    dirs_s = sensor.ray_directions()
    dirs_w = pose.rotate(dirs_s)
    t, n_w, _ = scene.cast(pose.translation, dirs_w)
    hit = np.isfinite(t) & (t <= sensor.max_range_m)
    n_s = n_w[hit] @ pose.rotation
    d_s = dirs_s[hit]
    t = t[hit]
    dots = np.einsum("ij,ij->i", n_s, d_s)
    n_s = np.where((dots > 0)[:, None], -n_s, n_s)
    keep = np.abs(dots) > GRAZING_EPS
    n_s, d_s, t = n_s[keep], d_s[keep], t[keep]

    rng = np.random.default_rng(seed)
    r = t + rng.normal(0.0, sensor.noise_std_m, size=len(t)) if sensor.noise_std_m > 0 else t
    kept = rng.random(len(t)) >= sensor.drop_ratio
    # Keep the stored-range invariant ||p|| <= max_range + 3 sigma.
    kept &= (r > 0) & (r <= sensor.max_range_m + 3 * sensor.noise_std_m)
    points = r[kept, None] * d_s[kept]
    return Frame(points, n_s[kept], pose, timestamp, frame_id)


def frame_seeds(seed: int, n: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def simulate_sequence(scene: Scene, sensor: SensorConfig, traj: Trajectory,
                      seed: int) -> List[Frame]:
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    seeds = frame_seeds(seed, len(traj))
    return [raycast_frame(scene, sensor, pose, s, frame_id=i, timestamp=ts)
            for i, (ts, pose, s) in enumerate(zip(traj.timestamps, traj.poses, seeds))]


SPLITS = ("train", "test", "val")


def assign_splits(scenes: Sequence[str], ratios=(4, 4, 1), seed: int = 0) -> Dict[str, str]:
    """Assign whole scenes to train/test/val in proportion to ``ratios``.

    Counts use largest-remainder rounding with at least one scene per split of
    non-zero ratio; which scene lands where is shuffled by ``seed``.
    """
    scenes = list(scenes)
    if len(set(scenes)) != len(scenes):
        raise ValueError("scene names must be distinct")
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or ratios.sum() <= 0:
        raise ValueError("ratios must be three non-negative numbers, not all zero")
    active = ratios > 0
    if len(scenes) < active.sum():
        raise ValueError(f"{len(scenes)} scenes cannot fill {int(active.sum())} splits")

    n = len(scenes)
    share = ratios / ratios.sum() * n
    counts = np.floor(share).astype(int)
    counts[active & (counts == 0)] = 1
    while counts.sum() > n:
        # Take back from the split that is most over its exact share.
        over = np.where(counts > active.astype(int), counts - share, -np.inf)
        counts[np.argmax(over)] -= 1
    while counts.sum() < n:
        counts[np.argmax(np.where(active, share - counts, -np.inf))] += 1

    order = np.random.default_rng(seed).permutation(n)
    manifest = {}
    start = 0
    for split, c in zip(SPLITS, counts):
        for idx in order[start:start + c]:
            manifest[scenes[idx]] = split
        start += c
    return {s: manifest[s] for s in scenes}


# --- scene files -----------------------------------------------------------

def _prim_from_dict(d: dict) -> Primitive:
    kind = d.get("type")
    mat = int(d.get("material", 0))
    if kind == "plane":
        return Plane(d["point"], d["normal"], mat)
    if kind == "box":
        return Box(d["min"], d["max"], mat)
    if kind == "cylinder":
        return Cylinder(d["center"], d.get("axis", [0, 0, 1]), float(d["radius"]),
                        float(d["half_length"]), mat)
    if kind == "tunnel":
        return TunnelArc(d["start"], d["end"], float(d["radius"]), d.get("up", [0, 0, 1]), mat)
    raise ValueError(f"unknown primitive type {kind!r}")


def _prim_to_dict(p: Primitive) -> dict:
    def lst(a):
        return [float(x) for x in a]
    if isinstance(p, Plane):
        d = {"type": "plane", "point": lst(p.point), "normal": lst(p.normal)}
    elif isinstance(p, Box):
        d = {"type": "box", "min": lst(p.min), "max": lst(p.max)}
    elif isinstance(p, Cylinder):
        d = {"type": "cylinder", "center": lst(p.center), "axis": lst(p.axis),
             "radius": float(p.radius), "half_length": float(p.half_length)}
    else:
        d = {"type": "tunnel", "start": lst(p.start), "end": lst(p.end),
             "radius": float(p.radius), "up": lst(p.up)}
    d["material"] = int(p.material_id)
    return d


def scene_from_dict(d: dict) -> Tuple[Scene, dict]:
    """Build a scene; the second value is the optional ``trajectory`` block."""
    if not isinstance(d, dict) or "primitives" not in d:
        raise ValueError("scene file needs a 'primitives' list")
    prims = [_prim_from_dict(p) for p in d["primitives"]]
    return Scene(prims, str(d.get("name", "scene"))), dict(d.get("trajectory") or {})


def scene_to_dict(scene: Scene, trajectory: dict | None = None) -> dict:
    d = {"name": scene.name, "primitives": [_prim_to_dict(p) for p in scene.primitives]}
    if trajectory:
        d["trajectory"] = trajectory
    return d


def load_scene(path) -> Tuple[Scene, dict]:
    with open(path) as fh:
        return scene_from_dict(yaml.safe_load(fh))


def save_scene(scene: Scene, path, trajectory: dict | None = None) -> None:
    Path(path).write_text(yaml.safe_dump(scene_to_dict(scene, trajectory), sort_keys=False))


def sensor_from_dict(d: dict | None) -> SensorConfig:
    d = dict(d or {})
    unknown = set(d) - set(SensorConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown sensor keys: {sorted(unknown)}")
    return SensorConfig(**d)


def load_sensor(path) -> SensorConfig:
    with open(path) as fh:
        return sensor_from_dict(yaml.safe_load(fh))


def trajectory_from_dict(d: dict, n: int, rotation_hz: float) -> Trajectory:
    start = Pose(rotation_z(np.deg2rad(float(d.get("yaw_deg", 0.0)))), d.get("start", [0, 0, 2]))
    return Trajectory.linear(start, d.get("velocity", [1.0, 0.0, 0.0]), n, rotation_hz,
                             yaw_rate=np.deg2rad(float(d.get("yaw_rate_deg", 0.0))))


# --- built-in scenes -------------------------------------------------------

def plane_scene() -> Scene:
    return Scene([Plane([0, 0, 0], [0, 0, 1])], "plane")


def street_scene() -> Scene:
    """Ground plane, two boxes and a cylinder: the standard test fixture."""
    return Scene([
        Plane([0, 0, 0], [0, 0, 1], 0),
        Box([6.0, -3.0, 0.0], [10.0, 3.0, 3.0], 1),
        Box([-9.0, 4.0, 0.0], [-5.0, 8.0, 2.5], 1),
        Cylinder([3.0, -6.0, 2.0], [0, 0, 1], 0.8, 2.0, 2),
    ], "street")


def tunnel_scene() -> Scene:
    return Scene([
        Plane([0, 0, 0], [0, 0, 1], 0),
        TunnelArc([-40.0, 0.0, 0.0], [40.0, 0.0, 0.0], 6.0, material_id=3),
    ], "tunnel")
