"""Full-pose box geometry: rotations, oriented boxes, overlap, sampling.

Conventions used throughout the library:

* LiDAR frame: x forward, y left, z up.  Lengths in meters, angles in
  radians, arithmetic in float64.
* Euler angles are extrinsic (fixed-axis) x-y-z, composed as
  ``R = Rz(theta_z) @ Ry(theta_y) @ Rx(theta_x)``.  Yaw is the outermost
  rotation, so a box with zero roll/pitch behaves exactly like a
  conventional yaw-only BEV box.
* Box dimensions ``(l, w, h)`` span the local x/y/z axes of the box frame.

All functions are pure; the container types are treated as immutable after
construction and are safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class GimbalLockError(ValueError):
    """Euler decomposition is singular (|pitch| at 90 degrees)."""


class NonUnitAxisError(ValueError):
    """Rotation axis does not have unit length."""


class NonHorizontalAxisError(ValueError):
    """Rotation axis must lie in the x-y plane."""


class MissingScoreError(ValueError):
    """Operation requires every box to carry a score."""


class KTooLargeError(ValueError):
    """Requested more samples than there are points."""


def _as_vec3(value, name: str = "vector") -> np.ndarray:
    v = np.asarray(value, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite components: {v}")
    return v


@dataclass(frozen=True)
class EulerXYZ:
    """Extrinsic x-y-z Euler angles (roll, pitch, yaw) in radians."""

    theta_x: float = 0.0
    theta_y: float = 0.0
    theta_z: float = 0.0

    def __post_init__(self):
        for name in ("theta_x", "theta_y", "theta_z"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_x, self.theta_y, self.theta_z])


@dataclass
class PointCloud:
    """Ordered set of 3D points with optional per-point extra channels.

    ``points`` is (n, 3) float64; ``extras`` is (n, c) float64 or None.
    """

    points: np.ndarray
    extras: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {self.points.shape}")
        if self.extras is not None:
            self.extras = np.asarray(self.extras, dtype=np.float64)
            if self.extras.ndim == 1:
                self.extras = self.extras[:, None]
            if self.extras.shape[0] != self.points.shape[0]:
                raise ValueError(
                    "extras length %d does not match %d points"
                    % (self.extras.shape[0], self.points.shape[0])
                )

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class FullPoseBox:
    """Oriented cuboid with full x-y-z Euler pose.

    A box with ``theta_x == theta_y == 0`` is the conventional yaw-only
    detection box; nonzero roll/pitch describe objects on sloped ground.
    """

    center: np.ndarray
    dims: np.ndarray
    euler: EulerXYZ = field(default_factory=EulerXYZ)
    class_id: int = 0
    score: float | None = None

    def __post_init__(self):
        self.center = _as_vec3(self.center, "center")
        self.dims = _as_vec3(self.dims, "dims")
        if np.any(self.dims <= 0):
            raise ValueError(f"dims must be positive, got {self.dims}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self.euler)


@dataclass
class RigidTransform:
    """Rotation about a pivot point: ``x -> R @ (x - pivot) + pivot``.

    ``axis``/``angle`` record the axis-angle source when built via
    :func:`axis_angle_transform`; they are None for raw constructions.
    """

    rotation: np.ndarray
    pivot: np.ndarray
    axis: np.ndarray | None = None
    angle: float | None = None

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.pivot = _as_vec3(self.pivot, "pivot")
        if self.rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")

    def apply(self, points) -> np.ndarray:
        """Transform a single point (3,) or a stack of points (n, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = (pts - self.pivot) @ self.rotation.T + self.pivot
        return out[0] if single else out


def euler_to_matrix(euler: EulerXYZ) -> np.ndarray:
    """Rotation matrix ``Rz(theta_z) @ Ry(theta_y) @ Rx(theta_x)``."""
    cx, sx = math.cos(euler.theta_x), math.sin(euler.theta_x)
    cy, sy = math.cos(euler.theta_y), math.sin(euler.theta_y)
    cz, sz = math.cos(euler.theta_z), math.sin(euler.theta_z)
    return np.array(
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    )


def matrix_to_euler(rotation: np.ndarray) -> EulerXYZ:
    """Invert :func:`euler_to_matrix`; pitch restricted to (-pi/2, pi/2).

    Raises:
        GimbalLockError: if ``|R[2, 0]| >= 1 - 1e-9`` (pitch at +-90 deg),
            where roll and yaw are no longer separable.
    """
    rot = np.asarray(rotation, dtype=np.float64)
    r20 = rot[2, 0]
    if abs(r20) >= 1.0 - 1e-9:
        raise GimbalLockError(f"pitch at +-90 degrees (R[2,0]={r20:+.12f})")
    theta_y = math.asin(-r20)
    theta_x = math.atan2(rot[2, 1], rot[2, 2])
    theta_z = math.atan2(rot[1, 0], rot[0, 0])
    return EulerXYZ(theta_x, theta_y, theta_z)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit ``axis`` by ``angle``."""
    v = _as_vec3(axis, "axis")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise NonUnitAxisError(f"axis norm {np.linalg.norm(v)} != 1")
    k = np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def axis_angle_transform(axis, gamma: float, pivot) -> RigidTransform:
    """Rigid rotation by ``gamma`` about a horizontal unit axis through ``pivot``.

    This is the rotation used to tilt the far part of a scene: the axis
    must lie in the ground plane (``axis[2] == 0``).
    """
    v = _as_vec3(axis, "axis")
    if abs(v[2]) > 1e-9:
        raise NonHorizontalAxisError(f"axis z-component {v[2]} != 0")
    return RigidTransform(
        rotation=axis_angle_matrix(v, gamma),
        pivot=_as_vec3(pivot, "pivot"),
        axis=v,
        angle=float(gamma),
    )


def to_euler_xy(axis, gamma: float) -> tuple[float, float]:
    """Roll/pitch components of the x-y-z Euler split of ``R(axis, gamma)``.

    The yaw component of the decomposition is dropped; it is the residual
    heading that a tilted annotation keeps in its own yaw slot.
    """
    euler = matrix_to_euler(axis_angle_matrix(axis, gamma))
    return euler.theta_x, euler.theta_y


def transform_box(box: FullPoseBox, transform: RigidTransform) -> FullPoseBox:
    """Apply a rigid transform to a box (exact pose composition)."""
    euler = matrix_to_euler(transform.rotation @ box.rotation())
    return FullPoseBox(
        center=transform.apply(box.center),
        dims=box.dims.copy(),
        euler=euler,
        class_id=box.class_id,
        score=box.score,
    )


_CORNER_SIGNS = np.array(
    [
        [
            0.5 if i & 1 else -0.5,
            0.5 if i & 2 else -0.5,
            0.5 if i & 4 else -0.5,
        ]
        for i in range(8)
    ]
)


def box_corners(box: FullPoseBox) -> np.ndarray:
    """The 8 corners of a box, shape (8, 3).

    Corner ``i`` carries the local sign pattern (+x if bit 0 of ``i`` is
    set, +y if bit 1, +z if bit 2), rotated by the box pose and shifted to
    the center.
    """
    offsets = _CORNER_SIGNS * box.dims
    return offsets @ box.rotation().T + box.center


def points_in_box(points, box: FullPoseBox) -> np.ndarray:
    """Boolean mask of points inside the closed cuboid of ``box``.

    Accepts a PointCloud or an (n, 3) array.  The boundary is inclusive
    with a 1e-9 m guard so points sampled exactly on a face stay inside
    under float rounding.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    local = (pts - box.center) @ box.rotation()
    return np.all(np.abs(local) <= box.dims * 0.5 + 1e-9, axis=1)


def bev_corners(box: FullPoseBox) -> np.ndarray:
    """Counterclockwise corners (4, 2) of the yaw-rotated l x w footprint."""
    l, w = box.dims[0], box.dims[1]
    local = np.array(
        [[l / 2, w / 2], [-l / 2, w / 2], [-l / 2, -w / 2], [l / 2, -w / 2]]
    )
    c, s = math.cos(box.euler.theta_z), math.sin(box.euler.theta_z)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + box.center[:2]


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        edge = clip[(i + 1) % n] - a
        polygon, output = output, []
        # signed cross; >= 0 keeps boundary points (closed clip region)
        sides = [edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) for p in polygon]
        for j, cur in enumerate(polygon):
            prev = polygon[j - 1]
            s_cur, s_prev = sides[j], sides[j - 1]
            if (s_cur >= 0.0) != (s_prev >= 0.0):
                t = s_prev / (s_prev - s_cur)
                output.append(
                    (
                        prev[0] + t * (cur[0] - prev[0]),
                        prev[1] + t * (cur[1] - prev[1]),
                    )
                )
            if s_cur >= 0.0:
                output.append(cur)
    return np.array(output) if output else np.empty((0, 2))


def _footprints_disjoint(a: FullPoseBox, b: FullPoseBox) -> bool:
    # exact early reject: footprints cannot meet beyond their circumradii
    reach = (math.hypot(a.dims[0], a.dims[1]) + math.hypot(b.dims[0], b.dims[1])) / 2.0
    dx = a.center[0] - b.center[0]
    dy = a.center[1] - b.center[1]
    return dx * dx + dy * dy > reach * reach


def bev_iou(a: FullPoseBox, b: FullPoseBox) -> float:
    """IoU of the yaw-rotated footprints in the x-y plane.

    Roll and pitch are deliberately ignored so that yaw-only predictions
    and full-pose ground truth remain comparable with one number.
    """
    if _footprints_disjoint(a, b):
        return 0.0
    ca, cb = bev_corners(a), bev_corners(b)
    inter = _polygon_area(_clip_polygon(ca, cb))
    union = _polygon_area(ca) + _polygon_area(cb) - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def iou3d(a: FullPoseBox, b: FullPoseBox) -> float:
    """KITTI-style 3D IoU: rotated footprint overlap times z-extent overlap."""
    za0, za1 = a.center[2] - a.dims[2] / 2, a.center[2] + a.dims[2] / 2
    zb0, zb1 = b.center[2] - b.dims[2] / 2, b.center[2] + b.dims[2] / 2
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0 or _footprints_disjoint(a, b):
        return 0.0
    inter = _polygon_area(_clip_polygon(bev_corners(a), bev_corners(b))) * dz
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def center_distance(a: FullPoseBox, b: FullPoseBox, bev: bool = False) -> float:
    """Euclidean distance between box centers (3D, or x-y only if ``bev``)."""
    d = a.center - b.center
    if bev:
        d = d[:2]
    return float(np.linalg.norm(d))


def nms(boxes, iou_threshold: float) -> np.ndarray:
    """Greedy non-maximum suppression on BEV IoU.

    Boxes are visited in descending score order (ties: lower input index
    first); a box is suppressed when its BEV IoU with an already kept box
    exceeds ``iou_threshold``.  Returns kept input indices, best first.
    """
    boxes = list(boxes)
    for i, box in enumerate(boxes):
        if box.score is None:
            raise MissingScoreError(f"box {i} has no score")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(bev_iou(boxes[i], boxes[j]) <= iou_threshold for j in kept):
            kept.append(i)
    return np.array(kept, dtype=np.intp)


def fps(points, k: int, weights=None) -> np.ndarray:
    """Greedy furthest point sampling; returns ``k`` indices.

    Starts at index 0 and repeatedly picks the point maximizing
    ``weight * distance-to-nearest-selected`` (unweighted if ``weights``
    is None).  Ties go to the lowest index; already selected points are
    excluded.  Deterministic for identical inputs.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k > n:
        raise KTooLargeError(f"k={k} exceeds cloud size {n}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (n,):
            raise ValueError("weights must match the number of points")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
    selected = np.empty(k, dtype=np.intp)
    selected[0] = 0
    min_dist = np.linalg.norm(pts - pts[0], axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[0] = True
    for step in range(1, k):
        score = min_dist if weights is None else weights * min_dist
        score = np.where(taken, -np.inf, score)
        idx = int(np.argmax(score))
        selected[step] = idx
        taken[idx] = True
        np.minimum(min_dist, np.linalg.norm(pts - pts[idx], axis=1), out=min_dist)
    return selected
