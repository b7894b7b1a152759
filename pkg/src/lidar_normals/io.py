"""Binary frame files, YAML sequence and split manifests, and an xyz text converter.

Frame file layout (little-endian)::

    magic      4s   b"LSNF"
    version    u16  1
    count      u32  number of points
    flags      u16  bit0: normals block present, bit1: normals are predictions
    pose       12 x f64  rotation row-major, then translation
    timestamp  f64
    points     count x 3 x f32
    normals    count x 3 x f32   (only if bit0)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from .core import Frame, NormalField, Pose, SensorConfig, as_normals
from .simulator import SPLITS, sensor_from_dict

MAGIC = b"LSNF"
VERSION = 1
HAS_NORMALS = 0x1
IS_PREDICTION = 0x2
_KNOWN_FLAGS = HAS_NORMALS | IS_PREDICTION
HEADER = struct.Struct("<4sHIH12dd")
_REC = np.dtype("<f4")


class FrameFormatError(ValueError):
    """Base class for malformed frame files."""


class BadMagicError(FrameFormatError):
    pass


class VersionMismatchError(FrameFormatError):
    pass


class TruncatedPayloadError(FrameFormatError):
    """The file ends before the header or the declared payload does."""


class CountMismatchError(FrameFormatError):
    """Bytes remain after the payload implied by the declared point count."""


class MissingFrameFileError(FileNotFoundError):
    pass


class FrameOrderError(ValueError):
    pass


def _pack(points: np.ndarray, normals: Optional[np.ndarray], pose: Pose,
          timestamp: float, flags: int) -> bytes:
    head = HEADER.pack(MAGIC, VERSION, len(points), flags,
                       *pose.rotation.reshape(-1), *pose.translation, float(timestamp))
    body = [np.ascontiguousarray(points, dtype=_REC).tobytes()]
    if normals is not None:
        body.append(np.ascontiguousarray(normals, dtype=_REC).tobytes())
    return head + b"".join(body)


def frame_bytes(frame: Frame) -> bytes:
    flags = HAS_NORMALS if frame.has_normals else 0
    return _pack(frame.points, frame.gt_normals, frame.pose, frame.timestamp, flags)


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_frame(frame: Frame, path) -> None:
    """Store a frame; points and normals are narrowed to float32."""
    _atomic_write(path, frame_bytes(frame))


def write_field(frame: Frame, field, path) -> None:
    """Store predicted normals together with the frame's points and pose (flags bit0|bit1)."""
    n = as_normals(field)
    if len(n) != len(frame):
        raise ValueError("field and frame differ in length")
    _atomic_write(path, _pack(frame.points, n, frame.pose, frame.timestamp,
                              HAS_NORMALS | IS_PREDICTION))


def parse_frame(data: bytes, frame_id: int = 0) -> Tuple[Frame, int]:
    """Decode frame file bytes; returns the frame and the flags word."""
    if len(data) < 4 or data[:4] != MAGIC:
        if len(data) < 4 and MAGIC.startswith(data):
            raise TruncatedPayloadError("file ends inside the header")
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < HEADER.size:
        raise TruncatedPayloadError(f"header needs {HEADER.size} bytes, file has {len(data)}")
    magic, version, count, flags, *rest = HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    if flags & ~_KNOWN_FLAGS:
        raise FrameFormatError(f"unknown flag bits 0x{flags:04x}")
    blocks = 2 if flags & HAS_NORMALS else 1
    need = HEADER.size + blocks * count * 3 * _REC.itemsize
    if len(data) < need:
        raise TruncatedPayloadError(f"declared {count} points need {need} bytes, file has {len(data)}")
    if len(data) > need:
        raise CountMismatchError(f"declared {count} points but {len(data) - need} extra bytes follow")
    values = np.array(rest[:12], dtype=np.float64)
    try:
        pose = Pose(values[:9].reshape(3, 3), values[9:12])
    except ValueError as exc:
        raise FrameFormatError(f"invalid pose: {exc}") from None
    arr = np.frombuffer(data, dtype=_REC, offset=HEADER.size, count=blocks * count * 3)
    arr = arr.astype(np.float64).reshape(blocks, count, 3)
    normals = arr[1] if blocks == 2 else None
    return Frame(arr[0], normals, pose, rest[12], frame_id), flags


def read_frame(path, frame_id: int = 0) -> Frame:
    with open(path, "rb") as fh:
        frame, _ = parse_frame(fh.read(), frame_id)
    return frame


def read_field(path, frame_id: int = 0) -> Tuple[Frame, NormalField]:
    """Read a prediction file; returns the carried frame (without normals) and the field."""
    with open(path, "rb") as fh:
        frame, flags = parse_frame(fh.read(), frame_id)
    if not flags & HAS_NORMALS:
        raise FrameFormatError(f"{path} carries no normals")
    field = NormalField(frame.gt_normals, frame_id)
    frame.gt_normals = None
    return frame, field


# --- sequences --------------------------------------------------------------

def frame_filename(frame_id: int) -> str:
    return f"frame_{frame_id:06d}.lsnf"


def write_sequence(frames: List[Frame], out_dir, scene: str = "", split: str = "train",
                   sensor: Optional[SensorConfig] = None) -> Path:
    """Write every frame plus ``manifest.yaml``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for fr in frames:
        name = frame_filename(fr.frame_id)
        write_frame(fr, out / name)
        entries.append({"id": fr.frame_id, "file": name, "timestamp": fr.timestamp})
    manifest = {"scene": scene, "split": split,
                "sensor": sensor.to_dict() if sensor is not None else None,
                "frames": entries}
    check_manifest(manifest)
    path = out / "manifest.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return path


def check_manifest(manifest: dict) -> None:
    if not isinstance(manifest, dict) or not isinstance(manifest.get("frames"), list):
        raise ValueError("manifest needs a 'frames' list")
    ids = [int(e["id"]) for e in manifest["frames"]]
    for a, b in zip(ids, ids[1:]):
        if b <= a:
            raise FrameOrderError(f"frame ids not strictly increasing: {a} then {b}")
    split = manifest.get("split")
    if split is not None and split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")


def load_manifest(path) -> dict:
    with open(path) as fh:
        manifest = yaml.safe_load(fh)
    check_manifest(manifest)
    base = Path(path).parent
    for e in manifest["frames"]:
        if not (base / e["file"]).is_file():
            raise MissingFrameFileError(f"frame file not found: {base / e['file']}")
    return manifest


def manifest_sensor(manifest: dict) -> Optional[SensorConfig]:
    d = manifest.get("sensor")
    return sensor_from_dict(d) if d else None


def read_sequence(manifest_path) -> List[Frame]:
    """Frames in manifest order, with ids from the manifest."""
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    return [read_frame(base / e["file"], int(e["id"])) for e in manifest["frames"]]


def read_predictions(pred_dir, manifest_path) -> List[NormalField]:
    """Prediction files in ``pred_dir`` matching the manifest's frame file names."""
    manifest = load_manifest(manifest_path)
    fields = []
    for e in manifest["frames"]:
        path = Path(pred_dir) / e["file"]
        if not path.is_file():
            raise MissingFrameFileError(f"prediction file not found: {path}")
        fields.append(read_field(path, int(e["id"]))[1])
    return fields


# --- split manifests --------------------------------------------------------

def save_splits(splits: Dict[str, str], path) -> None:
    bad = {s for s in splits.values() if s not in SPLITS}
    if bad:
        raise ValueError(f"unknown splits {sorted(bad)}")
    with open(path, "w") as fh:
        yaml.safe_dump(dict(sorted(splits.items())), fh)


def load_splits(path) -> Dict[str, str]:
    with open(path) as fh:
        splits = yaml.safe_load(fh) or {}
    if not isinstance(splits, dict):
        raise ValueError("split manifest must map scene names to splits")
    bad = {s for s in splits.values() if s not in SPLITS}
    if bad:
        raise ValueError(f"unknown splits {sorted(bad)}")
    return {str(k): v for k, v in splits.items()}


# --- xyz text ---------------------------------------------------------------

def read_xyz(path, frame_id: int = 0) -> Frame:
    """Whitespace-separated ``x y z`` or ``x y z nx ny nz`` rows (identity pose)."""
    table = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    if table.size == 0:
        return Frame(np.zeros((0, 3)), frame_id=frame_id)
    if table.shape[1] not in (3, 6):
        raise ValueError(f"expected 3 or 6 columns, got {table.shape[1]}")
    normals = table[:, 3:6] if table.shape[1] == 6 else None
    return Frame(table[:, :3], normals, frame_id=frame_id)


def write_xyz(frame: Frame, path) -> None:
    cols = [frame.points] + ([frame.gt_normals] if frame.has_normals else [])
    np.savetxt(path, np.hstack(cols), fmt="%.9g")
