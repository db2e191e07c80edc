"""Synthesize pseudo-sloped scenes from flat-scene frames.

A frame is split by the vertical plane through an anchor point ``tau``
(perpendicular to ``tau`` in the x-y plane); the far part - every point
``p`` with ``tau . (tau - p) < 0`` - is rotated about the horizontal
tangent axis ``v`` through ``tau`` by the slope angle ``gamma``.  Boxes
whose centers fall on the far side get their centers rotated the same way
and their roll/pitch set from the axis-angle tilt, keeping the original
yaw verbatim.

Sign convention (pinned by tests): for an anchor on the +x axis the
tangent is ``v = (0, 1, 0)`` and ``gamma > 0`` rotates the far side by the
right-hand rule about ``v``, i.e. a point beyond the anchor moves to a
lower z.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from .geom import (
    EulerXYZ,
    FullPoseBox,
    PointCloud,
    axis_angle_transform,
    matrix_to_euler,
    to_euler_xy,
)


class ZeroAnchorError(ValueError):
    """The split anchor must be nonzero."""


@dataclass(frozen=True)
class SlopeAugConfig:
    """Sampling ranges and application probability for slope synthesis.

    Angles in radians; ``gamma_range`` bounds the slope magnitude and
    ``gamma_sign`` selects uphill/downhill/both.
    """

    p_s: float = 0.1
    r_range: tuple[float, float] = (8.0, 32.0)
    alpha_range: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    gamma_range: tuple[float, float] = (math.radians(5.0), math.radians(25.0))
    gamma_sign: str = "both"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError(f"p_s must lie in [0, 1], got {self.p_s}")
        for name in ("r_range", "alpha_range", "gamma_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be a nondegenerate (min, max) pair")
        if not 0.0 <= self.gamma_range[0] and self.gamma_range[1] < math.pi / 2:
            raise ValueError("gamma magnitudes must lie in [0, pi/2)")
        if self.gamma_sign not in ("both", "up", "down"):
            raise ValueError(f"gamma_sign must be both/up/down, got {self.gamma_sign}")


@dataclass(frozen=True)
class SlopeAugParams:
    """One sampled slope: anchor ``tau`` (z=0), tangent axis ``v``, angle."""

    tau: np.ndarray
    v: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=np.float64))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64))
        if abs(self.tau[2]) > 1e-12:
            raise ValueError("anchor must lie in the ground plane (tau_z = 0)")
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-9 or abs(self.v[2]) > 1e-9:
            raise ValueError("axis must be a horizontal unit vector")


@dataclass
class LabeledFrame:
    """A point cloud with its box annotations and a stable frame id."""

    cloud: PointCloud
    boxes: list[FullPoseBox]
    frame_id: str = ""

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise ValueError("frame cloud must be nonempty")


def frame_rng(global_seed: int, frame_id: str) -> np.random.Generator:
    """Per-frame generator derived from (seed, frame id).

    Hash-derived so batch results do not depend on scheduling order.
    """
    digest = hashlib.sha256(frame_id.encode("utf-8")).digest()
    frame_key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([global_seed, frame_key]))


def sample_params(cfg: SlopeAugConfig, rng: np.random.Generator) -> SlopeAugParams:
    """Draw anchor, tangent axis, and slope angle from the config ranges."""
    r = rng.uniform(*cfg.r_range)
    alpha = rng.uniform(*cfg.alpha_range)
    magnitude = rng.uniform(*cfg.gamma_range)
    if cfg.gamma_sign == "both":
        sign = 1.0 if rng.random() < 0.5 else -1.0
    else:
        sign = 1.0 if cfg.gamma_sign == "up" else -1.0
    tau = np.array([r * math.cos(alpha), r * math.sin(alpha), 0.0])
    v = np.array([-math.sin(alpha), math.cos(alpha), 0.0])
    return SlopeAugParams(tau=tau, v=v, gamma=sign * magnitude)


def split_cloud(cloud: PointCloud, tau) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the near part (contains the origin) and the far part.

    Far part: ``tau . (tau - p) < 0``, i.e. points past the vertical plane
    through the anchor.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if np.linalg.norm(tau) < 1e-12:
        raise ZeroAnchorError("anchor must be nonzero")
    side = tau @ (tau[:, None] - cloud.points.T)  # tau . (tau - p_i)
    far = np.nonzero(side < 0.0)[0]
    near = np.nonzero(side >= 0.0)[0]
    return near, far


def apply(frame: LabeledFrame, params: SlopeAugParams, exact_euler: bool = False) -> LabeledFrame:
    """Tilt the far part of a frame and re-annotate its boxes.

    Near-side points are copied bit-identically; far-side points are
    rotated by the rigid axis-angle transform.  A far-side box keeps its
    yaw and dimensions, its center is rotated, and its roll/pitch are set
    to the axis-angle tilt split (or, with ``exact_euler``, to the exact
    Euler split of the composed rotation).  A zero angle is an exact
    identity (no arithmetic touches the far side).
    """
    if params.gamma == 0.0:
        return LabeledFrame(
            cloud=PointCloud(
                frame.cloud.points.copy(),
                None if frame.cloud.extras is None else frame.cloud.extras.copy(),
            ),
            boxes=[replace(b, center=b.center.copy(), dims=b.dims.copy()) for b in frame.boxes],
            frame_id=frame.frame_id,
        )
    transform = axis_angle_transform(params.v, params.gamma, params.tau)
    _, far = split_cloud(frame.cloud, params.tau)
    points = frame.cloud.points.copy()
    if far.size:
        points[far] = transform.apply(points[far])
    extras = None if frame.cloud.extras is None else frame.cloud.extras.copy()

    tilt_x, tilt_y = to_euler_xy(params.v, params.gamma)
    tau = params.tau
    boxes = []
    for box in frame.boxes:
        if float(tau @ (tau - box.center)) < 0.0:
            if exact_euler:
                euler = matrix_to_euler(transform.rotation @ box.rotation())
            else:
                euler = EulerXYZ(tilt_x, tilt_y, box.euler.theta_z)
            boxes.append(
                FullPoseBox(
                    center=transform.apply(box.center),
                    dims=box.dims.copy(),
                    euler=euler,
                    class_id=box.class_id,
                    score=box.score,
                )
            )
        else:
            boxes.append(replace(box, center=box.center.copy(), dims=box.dims.copy()))
    return LabeledFrame(
        cloud=PointCloud(points, extras), boxes=boxes, frame_id=frame.frame_id
    )


def augment(
    frame: LabeledFrame, cfg: SlopeAugConfig, rng: np.random.Generator
) -> LabeledFrame:
    """Apply a sampled slope with probability ``p_s``, else pass through.

    Draw order (pinned for reproducibility): one uniform gate draw, then
    the parameter draws.
    """
    if rng.random() >= cfg.p_s:
        return frame
    return apply(frame, sample_params(cfg, rng))
