"""Procedural desk-scale scenes: terrain, resting boxes, sampled clouds.

The terrain is a flat plane with an optional planar ramp starting at a
line in the x-y plane; boxes rest on the local surface (their roll/pitch
follow the surface normal for a random yaw), and clouds are sampled from
the surface and the box faces with optional Gaussian sensor noise.  Every
point is tagged with its source (-1 for ground, box index otherwise) in
the extras channel, which downstream feature synthesis relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .geom import EulerXYZ, FullPoseBox, PointCloud, bev_iou, points_in_box
from .slopeaug import LabeledFrame

GROUND_SOURCE = -1.0


class PlacementFailureError(RuntimeError):
    """Could not place a non-overlapping box within the retry budget."""


@dataclass(frozen=True)
class Terrain:
    """Flat plane plus an optional planar ramp.

    The ramp starts at the line ``cos(azimuth) * x + sin(azimuth) * y =
    ramp_start`` and rises with ``grade`` radians beyond it; the surface
    stays continuous across the crease.
    """

    extent: tuple[float, float, float, float] = (0.0, 40.0, -10.0, 10.0)
    ramp_start: float | None = None
    ramp_azimuth: float = 0.0
    grade: float = 0.0

    def __post_init__(self):
        x0, x1, y0, y1 = self.extent
        if not (x0 < x1 and y0 < y1):
            raise ValueError("extent must be (x_min, x_max, y_min, y_max)")
        if not 0.0 <= self.grade < math.pi / 4:
            raise ValueError("grade must lie in [0, pi/4)")

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.extent
        return (x1 - x0) * (y1 - y0)

    def _along(self, xy: np.ndarray) -> np.ndarray:
        u = np.array([math.cos(self.ramp_azimuth), math.sin(self.ramp_azimuth)])
        return np.atleast_2d(xy) @ u

    def height(self, xy) -> np.ndarray:
        """Surface height z at (n, 2) ground coordinates."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        if self.ramp_start is None or self.grade == 0.0:
            return np.zeros(xy.shape[0])
        rise = self._along(xy) - self.ramp_start
        return math.tan(self.grade) * np.maximum(rise, 0.0)

    def normal(self, xy) -> np.ndarray:
        """Unit surface normals at (n, 2) ground coordinates."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        n = np.tile([0.0, 0.0, 1.0], (xy.shape[0], 1))
        if self.ramp_start is None or self.grade == 0.0:
            return n
        on_ramp = self._along(xy) > self.ramp_start
        tilted = np.array(
            [
                -math.sin(self.grade) * math.cos(self.ramp_azimuth),
                -math.sin(self.grade) * math.sin(self.ramp_azimuth),
                math.cos(self.grade),
            ]
        )
        n[on_ramp] = tilted
        return n


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for one synthetic labeled scene."""

    terrain: Terrain = field(default_factory=Terrain)
    box_count: int = 5
    density: float = 4.0              # points per square meter
    noise_sigma: float = 0.0          # sensor noise, meters
    seed: int = 0
    class_weights: dict = field(default_factory=lambda: {1: 1.0})
    class_dims: dict = field(default_factory=lambda: {1: (4.2, 1.8, 1.6)})
    dims_jitter: float = 0.1          # relative dimension jitter
    edge_margin: float = 3.0          # keep boxes away from the extent border
    crease_margin: float = 2.0        # keep boxes away from the ramp crease
    ramp_box_fraction: float | None = None  # force this share of boxes onto the ramp
    yaw_range: tuple[float, float] = (0.0, 2.0 * math.pi)

    def __post_init__(self):
        if self.density <= 0.0:
            raise ValueError("density must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")


def resting_euler(normal, yaw: float) -> EulerXYZ:
    """Roll/pitch that stand a box on a surface with the given normal.

    Solves ``Rz(yaw) @ Ry(p) @ Rx(r) @ z_hat == normal`` for (r, p).
    """
    n = np.asarray(normal, dtype=np.float64)
    c, s = math.cos(-yaw), math.sin(-yaw)
    m = np.array([c * n[0] - s * n[1], s * n[0] + c * n[1], n[2]])
    theta_x = math.asin(np.clip(-m[1], -1.0, 1.0))
    theta_y = math.atan2(m[0], m[2])
    return EulerXYZ(theta_x, theta_y, yaw)


def _pick_class(spec: SceneSpec, rng: np.random.Generator) -> int:
    ids = sorted(spec.class_weights)
    weights = np.array([spec.class_weights[i] for i in ids], dtype=np.float64)
    return int(ids[rng.choice(len(ids), p=weights / weights.sum())])


def place_boxes(terrain: Terrain, spec: SceneSpec, rng: np.random.Generator
                ) -> list[FullPoseBox]:
    """Drop non-overlapping boxes resting on the local surface.

    Box footprints never overlap in BEV (rejection sampled) and box
    centers keep ``crease_margin`` away from the ramp crease so each box
    sits on a single plane.  Raises PlacementFailureError after 1000
    consecutive rejections.
    """
    x0, x1, y0, y1 = terrain.extent
    m = spec.edge_margin
    boxes: list[FullPoseBox] = []
    rejections = 0
    forced_ramp = 0
    if spec.ramp_box_fraction is not None and terrain.ramp_start is not None:
        forced_ramp = round(spec.ramp_box_fraction * spec.box_count)
    while len(boxes) < spec.box_count:
        if rejections >= 1000:
            raise PlacementFailureError(
                f"placed {len(boxes)}/{spec.box_count} boxes after 1000 rejections"
            )
        xy = np.array([rng.uniform(x0 + m, x1 - m), rng.uniform(y0 + m, y1 - m)])
        if terrain.ramp_start is not None:
            along = float(terrain._along(xy)[0])
            want_ramp = len(boxes) < forced_ramp if spec.ramp_box_fraction is not None else None
            on_ramp = along > terrain.ramp_start + spec.crease_margin
            on_flat = along < terrain.ramp_start - spec.crease_margin
            if not (on_ramp or on_flat):
                rejections += 1
                continue
            if want_ramp is not None and want_ramp != on_ramp:
                rejections += 1
                continue
        cls = _pick_class(spec, rng)
        dims = np.asarray(spec.class_dims[cls], dtype=np.float64)
        dims = dims * (1.0 + rng.uniform(-spec.dims_jitter, spec.dims_jitter, 3))
        yaw = rng.uniform(*spec.yaw_range)
        normal = terrain.normal(xy)[0]
        euler = resting_euler(normal, yaw)
        foot = np.array([xy[0], xy[1], float(terrain.height(xy)[0])])
        center = foot + normal * (dims[2] / 2.0)
        box = FullPoseBox(center=center, dims=dims, euler=euler, class_id=cls)
        if any(bev_iou(box, other) > 0.0 for other in boxes):
            rejections += 1
            continue
        rejections = 0
        boxes.append(box)
    return boxes


# local face frame: (axis index of the face normal, sign, in-plane axes)
_FACES = (
    (2, 1.0, 0, 1),   # top
    (2, -1.0, 0, 1),  # bottom
    (1, 1.0, 0, 2),   # +y side
    (1, -1.0, 0, 2),  # -y side
    (0, 1.0, 1, 2),   # +x side
    (0, -1.0, 1, 2),  # -x side
)


def _sample_box_surface(box: FullPoseBox, count: int, rng: np.random.Generator
                        ) -> np.ndarray:
    l, w, h = box.dims
    areas = np.array([l * w, l * w, l * h, l * h, w * h, w * h])
    faces = rng.choice(len(_FACES), size=count, p=areas / areas.sum())
    local = np.empty((count, 3))
    for i, f in enumerate(faces):
        axis, sign, u_axis, v_axis = _FACES[f]
        local[i, axis] = sign * box.dims[axis] / 2.0
        local[i, u_axis] = rng.uniform(-0.5, 0.5) * box.dims[u_axis]
        local[i, v_axis] = rng.uniform(-0.5, 0.5) * box.dims[v_axis]
    return local @ box.rotation().T + box.center


def sample_scene(terrain: Terrain, boxes: list[FullPoseBox], spec: SceneSpec,
                 rng: np.random.Generator, frame_id: str = "") -> LabeledFrame:
    """Sample a labeled cloud from the surface and the box faces.

    Ground contributes ``ceil(density * extent area)`` points; each box
    contributes ``ceil(density * face area)`` points over its six faces.
    The extras channel stores the per-point source tag.
    """
    x0, x1, y0, y1 = terrain.extent
    n_ground = math.ceil(spec.density * terrain.area)
    xy = np.column_stack(
        [rng.uniform(x0, x1, n_ground), rng.uniform(y0, y1, n_ground)]
    )
    chunks = [np.column_stack([xy, terrain.height(xy)])]
    tags = [np.full(n_ground, GROUND_SOURCE)]
    for i, box in enumerate(boxes):
        l, w, h = box.dims
        n_box = math.ceil(spec.density * 2.0 * (l * w + l * h + w * h))
        chunks.append(_sample_box_surface(box, n_box, rng))
        tags.append(np.full(n_box, float(i)))
    points = np.vstack(chunks)
    points = points + rng.standard_normal(points.shape) * spec.noise_sigma
    cloud = PointCloud(points, np.concatenate(tags))
    return LabeledFrame(cloud=cloud, boxes=list(boxes), frame_id=frame_id)


def make_scene(spec: SceneSpec, frame_id: str = "000000",
               rng: np.random.Generator | None = None) -> LabeledFrame:
    """Place boxes and sample one scene from a spec (seeded)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    boxes = place_boxes(spec.terrain, spec, rng)
    return sample_scene(spec.terrain, boxes, spec, rng, frame_id=frame_id)


def generate_frames(spec: SceneSpec, n_frames: int) -> list[LabeledFrame]:
    """Independent seeded frames; frame i uses the substream (seed, i)."""
    frames = []
    for i in range(n_frames):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i]))
        frames.append(make_scene(spec, frame_id=f"{i:06d}", rng=rng))
    return frames


def _fit_plane_normal(points: np.ndarray) -> np.ndarray:
    """Least-squares plane z = ax + by + c through points; unit normal."""
    a = np.column_stack([points[:, 0], points[:, 1], np.ones(len(points))])
    coef, *_ = np.linalg.lstsq(a, points[:, 2], rcond=None)
    normal = np.array([-coef[0], -coef[1], 1.0])
    return normal / np.linalg.norm(normal)


def make_features(frame: LabeledFrame, noise_sigma: float, rng: np.random.Generator,
                  codec_cfg: codec.CodecConfig | None = None, feature_dim: int = 16,
                  class_count: int = 2, bg_per_frame: int = 12,
                  fit_radius: float = 2.0):
    """Coarse centers with synthetic per-center features and targets.

    One perturbed center per ground-truth box plus background centers on
    the ground.  Feature layout: ``[plane-fit normal (3), z above local
    ground mean (1), local ground z std (1), class cue (class_count),
    unit-normal distractor padding]``; ``noise_sigma`` adds Gaussian noise
    to the informative block.  Terrain class and tilt are linearly
    recoverable from the normal components by construction.

    Returns ``(centers, features, targets)``.
    """
    if frame.cloud.extras is None:
        raise ValueError("frame must carry source tags (extras channel)")
    if codec_cfg is None:
        codec_cfg = codec.CodecConfig()
    info_dim = 5 + class_count
    if feature_dim < info_dim:
        raise ValueError(f"feature_dim must be >= {info_dim}")

    centers = []
    cues = []
    for box in frame.boxes:
        local = rng.uniform(-0.25, 0.25, 3) * box.dims
        centers.append(box.center + box.rotation() @ local)
        cue = np.zeros(class_count)
        cue[box.class_id % class_count] = 1.0
        cues.append(cue)

    ground_pts = frame.cloud.points[frame.cloud.extras[:, 0] == GROUND_SOURCE]
    lo = ground_pts[:, :2].min(axis=0)
    hi = ground_pts[:, :2].max(axis=0)
    made = 0
    attempts = 0
    while made < bg_per_frame and attempts < 100 * bg_per_frame:
        attempts += 1
        xy = rng.uniform(lo, hi)
        j = int(np.argmin(np.linalg.norm(ground_pts[:, :2] - xy, axis=1)))
        candidate = ground_pts[j].copy()
        if any(points_in_box(candidate[None, :], b)[0] for b in frame.boxes):
            continue
        centers.append(candidate)
        cues.append(np.zeros(class_count))
        made += 1

    pts = np.asarray(centers)
    features = np.zeros((len(pts), feature_dim))
    for i, center in enumerate(pts):
        radius = fit_radius
        for _ in range(4):
            sel = np.linalg.norm(ground_pts[:, :2] - center[:2], axis=1) <= radius
            if sel.sum() >= 8:
                break
            radius *= 2.0
        local_ground = ground_pts[sel] if sel.sum() >= 3 else ground_pts
        features[i, 0:3] = _fit_plane_normal(local_ground)
        features[i, 3] = center[2] - local_ground[:, 2].mean()
        features[i, 4] = local_ground[:, 2].std()
        features[i, 5:info_dim] = cues[i]
    features[:, :info_dim] += rng.standard_normal((len(pts), info_dim)) * noise_sigma
    if feature_dim > info_dim:
        features[:, info_dim:] = rng.standard_normal((len(pts), feature_dim - info_dim))

    center_cloud = PointCloud(pts)
    targets = codec.make_targets(center_cloud, frame.boxes, codec_cfg)
    return center_cloud, features, targets
