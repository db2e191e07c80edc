"""Dataset ingestion and persistence.

Formats:

* velodyne ``.bin``: little-endian float32 quadruples (x, y, z, intensity).
* KITTI label/calib text files; ingested boxes land in the LiDAR frame
  with geometric (not bottom) centers and zero roll/pitch.
* native full-pose annotations: JSONL, one object per line with keys
  frame/class/center/dims/euler and optional score/difficulty.  Unknown
  keys are preserved on read and dropped on write.
* ASCII PLY export for external viewers.
* JSON toolkit configuration with strict unknown-key rejection.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecConfig, wrap_angle
from .evaluation import EvalConfig
from .geom import EulerXYZ, FullPoseBox, PointCloud
from .head import HeadConfig
from .slopeaug import SlopeAugConfig


class TruncatedFileError(ValueError):
    pass


class ParseError(ValueError):
    pass


class ConfigError(ValueError):
    pass


DEFAULT_CLASS_IDS = {
    "Background": 0,
    "Car": 1,
    "Pedestrian": 2,
    "Cyclist": 3,
    "Van": 4,
    "Truck": 5,
    "Person_sitting": 6,
    "Tram": 7,
    "Misc": 8,
}
DEFAULT_CLASS_NAMES = {v: k for k, v in DEFAULT_CLASS_IDS.items()}


def class_id_for(name: str, class_ids: dict | None = None) -> int:
    ids = DEFAULT_CLASS_IDS if class_ids is None else class_ids
    if name in ids:
        return ids[name]
    if name.startswith("class_"):
        try:
            return int(name[6:])
        except ValueError:
            pass
    raise ParseError(f"unknown class name {name!r}")


def class_name_for(class_id: int, class_names: dict | None = None) -> str:
    names = DEFAULT_CLASS_NAMES if class_names is None else class_names
    return names.get(class_id, f"class_{class_id}")


def read_velodyne(path) -> PointCloud:
    """Read a velodyne .bin cloud; intensity lands in the extras channel."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % 16 != 0:
        raise TruncatedFileError(
            f"{path}: length {len(raw)} is not a multiple of 16 bytes"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(data[:, :3].astype(np.float64), data[:, 3:4].astype(np.float64))


def write_velodyne(cloud: PointCloud, path) -> None:
    """Write a cloud as little-endian float32 (x, y, z, intensity) rows."""
    n = len(cloud)
    intensity = np.zeros((n, 1)) if cloud.extras is None else cloud.extras[:, :1]
    block = np.hstack([cloud.points, intensity]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(block.tobytes())


@dataclass
class KittiCalib:
    """Projection and rigid blocks of a KITTI calibration file."""

    p2: np.ndarray            # (3, 4) camera projection
    r0_rect: np.ndarray       # (4, 4), rectification padded homogeneous
    tr_velo_to_cam: np.ndarray  # (4, 4), LiDAR -> camera padded homogeneous

    def cam_to_lidar(self, pts: np.ndarray) -> np.ndarray:
        """Rectified-camera points (n, 3) to the LiDAR frame."""
        hom = np.hstack([np.atleast_2d(pts), np.ones((np.atleast_2d(pts).shape[0], 1))])
        out = hom @ np.linalg.inv(self.r0_rect).T @ np.linalg.inv(self.tr_velo_to_cam).T
        return out[:, :3]

    def lidar_to_cam(self, pts: np.ndarray) -> np.ndarray:
        hom = np.hstack([np.atleast_2d(pts), np.ones((np.atleast_2d(pts).shape[0], 1))])
        out = hom @ self.tr_velo_to_cam.T @ self.r0_rect.T
        return out[:, :3]


def read_kitti_calib(path) -> KittiCalib:
    """Parse the P2 / R0_rect / Tr_velo_to_cam blocks of a calib file."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'KEY: values'")
            key, _, rest = line.partition(":")
            try:
                values[key.strip()] = np.array([float(v) for v in rest.split()])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    try:
        p2 = values["P2"].reshape(3, 4)
        r0 = np.eye(4)
        r0[:3, :3] = values["R0_rect"].reshape(3, 3)
        tr = np.eye(4)
        tr[:3, :4] = values["Tr_velo_to_cam"].reshape(3, 4)
    except KeyError as exc:
        raise ParseError(f"{path}: missing calibration block {exc}") from None
    return KittiCalib(p2=p2, r0_rect=r0, tr_velo_to_cam=tr)


@dataclass
class KittiObject:
    """One KITTI label row, converted to the LiDAR frame."""

    box: FullPoseBox
    name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: np.ndarray  # (4,) image-plane left, top, right, bottom

    @property
    def bbox_height(self) -> float:
        return float(self.bbox2d[3] - self.bbox2d[1])


def read_kitti_labels(path, calib: KittiCalib, class_ids: dict | None = None
                      ) -> list[KittiObject]:
    """Parse a KITTI label file into LiDAR-frame full-pose boxes.

    The camera-frame bottom-center location is rectified back to the
    LiDAR frame, lifted by h/2 to the geometric center, and the camera
    rotation_y becomes LiDAR yaw (``-ry - pi/2``); roll and pitch are
    zero.  DontCare rows are skipped.
    """
    objects = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "DontCare":
                continue
            if len(parts) < 15:
                raise ParseError(
                    f"{path}:{lineno}: expected >= 15 fields, got {len(parts)}"
                )
            try:
                trunc = float(parts[1])
                occl = int(float(parts[2]))
                alpha = float(parts[3])
                bbox = np.array([float(v) for v in parts[4:8]])
                h, w, l = (float(v) for v in parts[8:11])
                loc_cam = np.array([float(v) for v in parts[11:14]])
                ry = float(parts[14])
                score = float(parts[15]) if len(parts) > 15 else None
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            bottom = calib.cam_to_lidar(loc_cam)[0]
            center = bottom + np.array([0.0, 0.0, h / 2.0])
            yaw = wrap_angle(-ry - math.pi / 2.0)
            box = FullPoseBox(
                center=center,
                dims=np.array([l, w, h]),
                euler=EulerXYZ(0.0, 0.0, yaw),
                class_id=class_id_for(parts[0], class_ids),
                score=score,
            )
            objects.append(
                KittiObject(
                    box=box,
                    name=parts[0],
                    truncation=trunc,
                    occlusion=occl,
                    alpha=alpha,
                    bbox2d=bbox,
                )
            )
    return objects


_POSE6D_KEYS = ("frame", "class", "center", "dims", "euler", "score", "difficulty")


@dataclass
class Pose6dRecord:
    """Native full-pose annotation: one object in one frame."""

    frame: str
    cls: str
    center: np.ndarray
    dims: np.ndarray
    euler: np.ndarray
    score: float | None = None
    difficulty: str | None = None
    extra: dict = field(default_factory=dict)  # unknown input keys, not written

    def to_box(self, class_ids: dict | None = None) -> FullPoseBox:
        return FullPoseBox(
            center=self.center,
            dims=self.dims,
            euler=EulerXYZ(*self.euler),
            class_id=class_id_for(self.cls, class_ids),
            score=self.score,
        )

    @classmethod
    def from_box(cls, box: FullPoseBox, frame: str, difficulty: str | None = None,
                 class_names: dict | None = None) -> "Pose6dRecord":
        return cls(
            frame=frame,
            cls=class_name_for(box.class_id, class_names),
            center=np.asarray(box.center, dtype=np.float64),
            dims=np.asarray(box.dims, dtype=np.float64),
            euler=box.euler.as_array(),
            score=box.score,
            difficulty=difficulty,
        )


def read_pose6d(path) -> list[Pose6dRecord]:
    """Read JSONL full-pose records; malformed lines raise with a line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            missing = {"frame", "class", "center", "dims", "euler"} - set(obj)
            if missing:
                raise ParseError(f"{path}:{lineno}: missing keys {sorted(missing)}")
            try:
                center = np.array([float(v) for v in obj["center"]])
                dims = np.array([float(v) for v in obj["dims"]])
                euler = np.array([float(v) for v in obj["euler"]])
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{lineno}: center/dims/euler must be numeric triples") from None
            if center.shape != (3,) or dims.shape != (3,) or euler.shape != (3,):
                raise ParseError(f"{path}:{lineno}: center/dims/euler must have 3 entries")
            if np.any(dims <= 0):
                raise ParseError(f"{path}:{lineno}: dims must be positive")
            if not (np.all(np.isfinite(center)) and np.all(np.isfinite(dims)) and np.all(np.isfinite(euler))):
                raise ParseError(f"{path}:{lineno}: non-finite numbers")
            records.append(
                Pose6dRecord(
                    frame=str(obj["frame"]),
                    cls=str(obj["class"]),
                    center=center,
                    dims=dims,
                    euler=euler,
                    score=None if obj.get("score") is None else float(obj["score"]),
                    difficulty=obj.get("difficulty"),
                    extra={k: v for k, v in obj.items() if k not in _POSE6D_KEYS},
                )
            )
    return records


def write_pose6d(records, path) -> None:
    """Write records as JSONL; unknown input keys are dropped."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "frame": rec.frame,
                "class": rec.cls,
                "center": list(map(float, rec.center)),
                "dims": list(map(float, rec.dims)),
                "euler": list(map(float, rec.euler)),
            }
            if rec.score is not None:
                obj["score"] = float(rec.score)
            if rec.difficulty is not None:
                obj["difficulty"] = rec.difficulty
            fh.write(json.dumps(obj) + "\n")


def write_ply(cloud: PointCloud, path, colors=None) -> None:
    """ASCII PLY export with optional per-point uint8 RGB colors."""
    n = len(cloud)
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape != (n, 3):
            raise ValueError("colors must be (n, 3)")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if colors is not None:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for i in range(n):
            x, y, z = cloud.points[i]
            if colors is None:
                fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
            else:
                r, g, b = (int(c) for c in colors[i])
                fh.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")


@dataclass(frozen=True)
class ToolkitConfig:
    """Typed configuration for the whole toolkit, with paper defaults."""

    points_per_cloud: int = 16384
    nms_iou: float = 0.1
    codec: CodecConfig = field(default_factory=CodecConfig)
    slopeaug: SlopeAugConfig = field(default_factory=SlopeAugConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    head: HeadConfig = field(default_factory=HeadConfig)


_SECTION_FIELDS = {
    "codec": ("n_yaw_bins", "t_theta_x", "t_theta_y", "strict_eq3"),
    "slopeaug": ("p_s", "r_range", "alpha_range", "gamma_range", "gamma_sign", "seed"),
    "eval": ("iou_threshold", "cd_threshold", "recall_positions", "center_distance_bev"),
    "head": ("feature_dim", "shared_widths", "seg_hidden", "class_count"),
}
_TUPLE_FIELDS = {"r_range", "alpha_range", "gamma_range", "shared_widths", "seg_hidden"}
_TOP_KEYS = ("points_per_cloud", "nms_iou") + tuple(_SECTION_FIELDS)


def _check_keys(data: dict, allowed, context: str, strict: bool) -> None:
    for key in data:
        if key not in allowed:
            label = f"{context}{key}"
            if strict:
                raise ConfigError(f"unknown config key: {label}")
            print(f"warning: ignoring unknown config key: {label}", file=sys.stderr)


def _section(data: dict, name: str, strict: bool) -> dict:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    _check_keys(section, _SECTION_FIELDS[name], f"{name}.", strict)
    kwargs = {
        k: tuple(v) if k in _TUPLE_FIELDS else v
        for k, v in section.items()
        if k in _SECTION_FIELDS[name]
    }
    return kwargs


def load_config(path=None, strict: bool = True) -> ToolkitConfig:
    """Load a JSON config; omitted keys fall back to the library defaults.

    Unknown keys raise ConfigError naming the offending key (or warn with
    ``strict=False``).
    """
    if path is None:
        data = {}
    else:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(data, _TOP_KEYS, "", strict)
    try:
        codec_cfg = CodecConfig(**_section(data, "codec", strict))
        head_kwargs = _section(data, "head", strict)
        return ToolkitConfig(
            points_per_cloud=int(data.get("points_per_cloud", 16384)),
            nms_iou=float(data.get("nms_iou", 0.1)),
            codec=codec_cfg,
            slopeaug=SlopeAugConfig(**_section(data, "slopeaug", strict)),
            eval=EvalConfig(**_section(data, "eval", strict)),
            head=HeadConfig(codec=codec_cfg, **head_kwargs),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from None
