"""Shared domain types: rigid poses, frames, normal fields and sensor settings.

Points and normals are stored as ``(N, 3)`` float arrays rather than lists of
vector objects. Angles are radians internally; ``SensorConfig`` keeps degrees
because it mirrors the on-disk configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

POSE_TOL = 1e-9
UNIT_TOL = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_points(a, name: str = "points") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    return arr


def unit_vector(v) -> np.ndarray:
    """Return ``v`` as a float array after checking it is unit length."""
    arr = np.asarray(v, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(arr)
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"not a unit vector: |v| = {norm!r}")
    return arr


def normalize_rows(a: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Row-normalise ``a``; rows with norm <= eps are returned unchanged."""
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    safe = np.where(norms > eps, norms, 1.0)
    return a / safe


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about ``axis`` by ``angle`` radians."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation from a random unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R p + t``.

    A frame's pose maps sensor coordinates to world coordinates.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > POSE_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > POSE_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single point) of positions."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        """Rotate direction vectors; the translation is ignored."""
        v = np.asarray(vectors, dtype=np.float64)
        return v @ self.rotation.T

    def allclose(self, other: "Pose", atol: float = POSE_TOL) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def transform_point(pose: Pose, p) -> np.ndarray:
    return pose.apply(p)


def transform_normal(pose: Pose, n) -> np.ndarray:
    # Rigid poses only: the inverse-transpose of R is R itself.
    return pose.rotate(n)


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(pose: Pose) -> Pose:
    return pose.inverse()


@dataclass(eq=False)
class Frame:
    """One LiDAR sweep in sensor coordinates."""

    points: np.ndarray
    gt_normals: Optional[np.ndarray] = None
    pose: Pose = field(default_factory=Pose.identity)
    timestamp: float = 0.0
    frame_id: int = 0

    def __post_init__(self):
        self.points = as_points(self.points)
        if self.gt_normals is not None:
            self.gt_normals = as_points(self.gt_normals, "gt_normals")
            if len(self.gt_normals) != len(self.points):
                raise ValueError("gt_normals and points differ in length")
        self.timestamp = float(self.timestamp)
        self.frame_id = int(self.frame_id)

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.gt_normals is not None

    def world_points(self) -> np.ndarray:
        return self.pose.apply(self.points)

    def gt_field(self) -> "NormalField":
        if self.gt_normals is None:
            raise ValueError(f"frame {self.frame_id} carries no ground-truth normals")
        return NormalField(self.gt_normals.copy(), self.frame_id)


@dataclass(eq=False)
class NormalField:
    """Per-point normal vectors aligned with a frame.

    ``flagged`` lists indices whose value is a placeholder (degenerate
    neighbourhood, zero-length prediction).
    """

    normals: np.ndarray
    frame_id: int = 0
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.normals = as_points(self.normals, "normals")
        self.flagged = np.asarray(self.flagged, dtype=np.int64).reshape(-1)

    def __len__(self):
        return len(self.normals)

    def copy(self) -> "NormalField":
        return NormalField(self.normals.copy(), self.frame_id, self.flagged.copy())

    def finalized(self) -> "NormalField":
        """Unit-length copy; zero vectors become a flagged ``(0, 0, 1)``."""
        n = self.normals.copy()
        norms = np.linalg.norm(n, axis=1)
        zero = norms <= 1e-12
        n[~zero] /= norms[~zero, None]
        n[zero] = (0.0, 0.0, 1.0)
        flagged = np.union1d(self.flagged, np.flatnonzero(zero))
        return NormalField(n, self.frame_id, flagged)

    def is_unit(self, tol: float = UNIT_TOL) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) <= tol))


def as_normals(field_or_array) -> np.ndarray:
    if isinstance(field_or_array, NormalField):
        return field_or_array.normals
    return as_points(field_or_array, "normals")


@dataclass(frozen=True)
class SensorConfig:
    """Spinning multi-beam LiDAR settings (angles in degrees, lengths in metres)."""

    beams: int = 64
    upper_fov_deg: float = 10.0
    lower_fov_deg: float = -30.0
    horizontal_fov_deg: float = 360.0
    max_range_m: float = 100.0
    points_per_second: int = 2_000_000
    rotation_hz: float = 10.0
    drop_ratio: float = 0.45
    noise_std_m: float = 0.02

    def __post_init__(self):
        if self.beams < 1:
            raise ValueError("beams must be >= 1")
        if not self.lower_fov_deg < self.upper_fov_deg:
            raise ValueError("lower_fov_deg must be below upper_fov_deg")
        if not 0.0 < self.horizontal_fov_deg <= 360.0:
            raise ValueError("horizontal_fov_deg must be in (0, 360]")
        if self.max_range_m <= 0:
            raise ValueError("max_range_m must be positive")
        if self.rotation_hz <= 0:
            raise ValueError("rotation_hz must be positive")
        if not 0.0 <= self.drop_ratio <= 1.0:
            raise ValueError("drop_ratio must be in [0, 1]")
        if self.noise_std_m < 0:
            raise ValueError("noise_std_m must be >= 0")
        if self.azimuth_count < 1:
            raise ValueError("points_per_second too small for one azimuth step per beam")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @property
    def azimuth_count(self) -> int:
        return int(self.points_per_second // self.rotation_hz // self.beams)

    def elevations(self) -> np.ndarray:
        """Beam elevations in radians, evenly spaced from lower to upper FOV."""
        if self.beams == 1:
            return np.array([np.deg2rad(self.lower_fov_deg)])
        return np.deg2rad(np.linspace(self.lower_fov_deg, self.upper_fov_deg, self.beams))

    def azimuths(self) -> np.ndarray:
        """Azimuths in radians; always contains 0 (the sensor's +x axis)."""
        n = self.azimuth_count
        step = np.deg2rad(self.horizontal_fov_deg) / n
        return (np.arange(n) - n // 2) * step

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, beam-major order."""
        el = self.elevations()[:, None]
        az = self.azimuths()[None, :]
        d = np.stack([np.cos(el) * np.cos(az),
                      np.cos(el) * np.sin(az),
                      np.broadcast_to(np.sin(el), (el.shape[0], az.shape[1]))], axis=-1)
        return d.reshape(-1, 3)
