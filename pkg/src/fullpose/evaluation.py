"""Detection evaluation: greedy matching, interpolated AP, TP scores.

Matching walks detections in descending score order; each detection
claims the best still-unmatched ground truth satisfying the criterion
(highest IoU, or smallest center distance).  AP interpolates the
precision envelope at 11 or 40 recall positions, KITTI style.  True
positives additionally get bounded quality scores: translation
(1 - d/d_th), scale (IoU of the boxes after aligning center and
orientation), and orientation (1 - geodesic/pi over full 3D rotations);
their averages combine with the center-distance AP into a single
composite score ``(3 * ap_cd + ats + ass + aos) / 6``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import FullPoseBox, bev_iou, center_distance, iou3d


class InputOutOfRangeError(ValueError):
    pass


class FrameMismatchError(ValueError):
    pass


DIFFICULTIES = ("easy", "moderate", "hard")
_RANK = {"easy": 0, "moderate": 1, "hard": 2, "ignored": 3}


@dataclass(frozen=True)
class MatchCriterion:
    """True-positive test: IoU above a threshold or distance below one."""

    kind: str  # "iou3d" | "bev_iou" | "center_distance"
    threshold: float

    def __post_init__(self):
        if self.kind not in ("iou3d", "bev_iou", "center_distance"):
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "center_distance":
            if self.threshold <= 0.0:
                raise ValueError("distance threshold must be positive")
        elif not 0.0 < self.threshold <= 1.0:
            raise ValueError("IoU threshold must lie in (0, 1]")

    @property
    def uses_distance(self) -> bool:
        return self.kind == "center_distance"


def assign_difficulty(bbox_height: float | None = None, occlusion: int | None = None,
                      truncation: float | None = None) -> str:
    """KITTI difficulty from 2D box height (px), occlusion, truncation.

    Missing metadata maps to "moderate" (native full-pose annotations do
    not carry image-plane fields).
    """
    if bbox_height is None or occlusion is None or truncation is None:
        return "moderate"
    if bbox_height >= 40.0 and occlusion <= 0 and truncation <= 0.15:
        return "easy"
    if bbox_height >= 25.0 and occlusion <= 1 and truncation <= 0.30:
        return "moderate"
    if bbox_height >= 25.0 and occlusion <= 2 and truncation <= 0.50:
        return "hard"
    return "ignored"


def geodesic_distance(a: FullPoseBox, b: FullPoseBox) -> float:
    """Rotation angle between the two full orientations, in [0, pi]."""
    rot_a, rot_b = a.rotation(), b.rotation()
    if np.array_equal(rot_a, rot_b):
        # acos would turn float noise in the product into a ~1e-8 angle
        return 0.0
    trace = float(np.trace(rot_a.T @ rot_b))
    return math.acos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))


def aligned_scale_iou(a: FullPoseBox, b: FullPoseBox) -> float:
    """3D IoU after aligning centers and orientations (dimension quality)."""
    inter = float(np.prod(np.minimum(a.dims, b.dims)))
    return inter / (a.volume + b.volume - inter)


@dataclass
class MatchResult:
    """Per-detection outcomes of matching one frame against its GTs."""

    det_scores: np.ndarray    # (m,)
    det_tp: np.ndarray        # (m,) bool
    det_ignored: np.ndarray   # (m,) bool, matched only an ignored GT
    det_gt: np.ndarray        # (m,) matched GT index or -1
    gt_matched: np.ndarray    # (g,) bool over counted GTs
    n_gt: int                 # number of counted GTs
    trans_error: np.ndarray   # (m,) meters, nan unless TP
    scale_score: np.ndarray   # (m,) aligned IoU, nan unless TP
    orient_error: np.ndarray  # (m,) radians, nan unless TP


def _criterion_value(det: FullPoseBox, gt: FullPoseBox, criterion: MatchCriterion,
                     bev_distance: bool = False) -> float:
    if criterion.kind == "iou3d":
        return iou3d(det, gt)
    if criterion.kind == "bev_iou":
        return bev_iou(det, gt)
    return center_distance(det, gt, bev=bev_distance)


def match(dets, gts, criterion: MatchCriterion, gt_ignored=None,
          bev_distance: bool = False) -> MatchResult:
    """Greedily match scored detections to ground truths.

    ``gt_ignored`` optionally marks ground truths that neither count as
    targets nor turn detections into false positives; a detection whose
    only qualifying match is ignored is dropped from the PR curve.
    """
    dets = list(dets)
    gts = list(gts)
    for i, det in enumerate(dets):
        if det.score is None:
            raise ValueError(f"detection {i} has no score")
    ignored_mask = np.zeros(len(gts), dtype=bool) if gt_ignored is None else np.asarray(gt_ignored, dtype=bool)
    counted = [i for i in range(len(gts)) if not ignored_mask[i]]
    ignored = [i for i in range(len(gts)) if ignored_mask[i]]

    m = len(dets)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    tp = np.zeros(m, dtype=bool)
    ign = np.zeros(m, dtype=bool)
    matched_gt = np.full(m, -1, dtype=np.intp)
    gt_taken = np.zeros(len(gts), dtype=bool)
    trans = np.full(m, np.nan)
    scale = np.full(m, np.nan)
    orient = np.full(m, np.nan)

    order = sorted(range(m), key=lambda i: (-scores[i], i))
    for i in order:
        best_j, best_val = -1, None
        for j in counted:
            if gt_taken[j]:
                continue
            val = _criterion_value(dets[i], gts[j], criterion, bev_distance)
            ok = val <= criterion.threshold if criterion.uses_distance else val >= criterion.threshold
            if not ok:
                continue
            better = best_val is None or (
                val < best_val if criterion.uses_distance else val > best_val
            )
            if better:
                best_j, best_val = j, val
        if best_j >= 0:
            gt_taken[best_j] = True
            tp[i] = True
            matched_gt[i] = best_j
            gt = gts[best_j]
            trans[i] = center_distance(dets[i], gt, bev=bev_distance)
            scale[i] = aligned_scale_iou(dets[i], gt)
            orient[i] = geodesic_distance(dets[i], gt)
            continue
        for j in ignored:
            val = _criterion_value(dets[i], gts[j], criterion, bev_distance)
            ok = val <= criterion.threshold if criterion.uses_distance else val >= criterion.threshold
            if ok:
                ign[i] = True
                break

    return MatchResult(
        det_scores=scores,
        det_tp=tp,
        det_ignored=ign,
        det_gt=matched_gt,
        gt_matched=gt_taken[counted] if counted else np.zeros(0, dtype=bool),
        n_gt=len(counted),
        trans_error=trans,
        scale_score=scale,
        orient_error=orient,
    )


def _pool(results) -> tuple[np.ndarray, np.ndarray, int]:
    if isinstance(results, MatchResult):
        results = [results]
    scores, tps, n_gt = [], [], 0
    for r in results:
        keep = ~r.det_ignored
        scores.append(r.det_scores[keep])
        tps.append(r.det_tp[keep])
        n_gt += r.n_gt
    if scores:
        return np.concatenate(scores), np.concatenate(tps), n_gt
    return np.zeros(0), np.zeros(0, dtype=bool), n_gt


def average_precision(results, positions: int = 40) -> float:
    """Interpolated AP over pooled match results at 11 or 40 recall points."""
    if positions not in (11, 40):
        raise ValueError("positions must be 11 or 40")
    scores, tps, n_gt = _pool(results)
    if n_gt == 0 or scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp_cum = np.cumsum(tps[order])
    fp_cum = np.cumsum(~tps[order])
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    if positions == 11:
        recall_points = np.linspace(0.0, 1.0, 11)
    else:
        recall_points = (np.arange(40) + 1) / 40.0
    total = 0.0
    for r in recall_points:
        mask = recall >= r
        total += float(precision[mask].max()) if mask.any() else 0.0
    return total / positions


@dataclass(frozen=True)
class TpScores:
    """Mean translation/scale/orientation quality over true positives."""

    ats: float
    ass: float
    aos: float
    n_tp: int
    defined: bool  # False when there were no TPs (scores reported as 0)


def tp_scores(results, d_th: float = 1.0) -> TpScores:
    """Average the bounded per-TP quality scores over pooled results."""
    if isinstance(results, MatchResult):
        results = [results]
    trans, scale, orient = [], [], []
    for r in results:
        sel = r.det_tp
        trans.append(r.trans_error[sel])
        scale.append(r.scale_score[sel])
        orient.append(r.orient_error[sel])
    trans = np.concatenate(trans) if trans else np.zeros(0)
    scale = np.concatenate(scale) if scale else np.zeros(0)
    orient = np.concatenate(orient) if orient else np.zeros(0)
    if trans.size == 0:
        return TpScores(0.0, 0.0, 0.0, 0, defined=False)
    ats = float(np.mean(1.0 - np.minimum(1.0, trans / d_th)))
    ass = float(np.mean(scale))
    aos = float(np.mean(1.0 - orient / math.pi))
    return TpScores(ats, ass, aos, int(trans.size), defined=True)


def rods(ap_cd: float, ats: float, ass: float, aos: float) -> float:
    """Composite rotated detection score: ``(3*ap_cd + ats + ass + aos) / 6``."""
    for name, val in (("ap_cd", ap_cd), ("ats", ats), ("ass", ass), ("aos", aos)):
        if not 0.0 <= val <= 1.0:
            raise InputOutOfRangeError(f"{name} must lie in [0, 1], got {val}")
    return (3.0 * ap_cd + ats + ass + aos) / 6.0


@dataclass(frozen=True)
class EvalConfig:
    """Thresholds and conventions for the full evaluation pass."""

    iou_threshold: float = 0.7
    cd_threshold: float = 1.0
    recall_positions: int = 40
    center_distance_bev: bool = False  # cd matching in BEV instead of 3D

    def __post_init__(self):
        if self.recall_positions not in (11, 40):
            raise ValueError("recall_positions must be 11 or 40")


@dataclass
class EvalReport:
    """AP per class/difficulty/criterion plus the rotated-3D score suite.

    ``ap`` maps ``(class_id, difficulty, criterion_label)`` to AP;
    difficulty buckets without ground truths are omitted.  ``rotated``
    maps class_id to the center-distance suite (ap_cd, ats, ass, aos,
    rods).
    """

    ap: dict = field(default_factory=dict)
    rotated: dict = field(default_factory=dict)
    recall_positions: int = 40

    CSV_HEADER = "class,difficulty,criterion,metric,value"

    def csv_rows(self) -> list[str]:
        rows = [self.CSV_HEADER]
        for (cls, diff, crit), value in sorted(self.ap.items()):
            rows.append(f"{cls},{diff},{crit},ap,{value:.6f}")
        for cls, suite in sorted(self.rotated.items()):
            crit = suite["criterion"]
            for metric in ("ap_cd", "ats", "ass", "aos", "rods"):
                rows.append(f"{cls},all,{crit},{metric},{suite[metric]:.6f}")
        return rows

    def text_table(self) -> str:
        lines = [f"AP ({self.recall_positions} recall positions)"]
        width = max([len(c) for _, _, c in self.ap] or [8])
        for (cls, diff, crit), value in sorted(self.ap.items()):
            lines.append(f"  class {cls}  {diff:<8}  {crit:<{width}}  {value:7.4f}")
        for cls, suite in sorted(self.rotated.items()):
            lines.append(
                f"  class {cls}  rotated-3d ({suite['criterion']}): "
                f"ap_cd={suite['ap_cd']:.4f} ats={suite['ats']:.4f} "
                f"ass={suite['ass']:.4f} aos={suite['aos']:.4f} "
                f"rods={suite['rods']:.4f}"
            )
        return "\n".join(lines)


def evaluate(dets_by_frame: dict, gts_by_frame: dict, config: EvalConfig | None = None,
             gt_difficulty_by_frame: dict | None = None) -> EvalReport:
    """Full evaluation pass over aligned per-frame detections and GTs.

    Computes per-difficulty 3D and BEV AP at the IoU threshold and the
    unbucketed center-distance suite in one sweep.  Detection frames must
    be a subset of GT frames (missing frames mean no detections there).
    """
    config = config or EvalConfig()
    extra = set(dets_by_frame) - set(gts_by_frame)
    if extra:
        raise FrameMismatchError(f"detections for unknown frames: {sorted(extra)[:5]}")
    frames = sorted(gts_by_frame)

    def difficulties(frame, gts):
        if gt_difficulty_by_frame is None:
            return ["moderate"] * len(gts)
        return gt_difficulty_by_frame[frame]

    classes = sorted(
        {b.class_id for gts in gts_by_frame.values() for b in gts}
    )
    report = EvalReport(recall_positions=config.recall_positions)
    criteria = {
        f"iou3d@{config.iou_threshold:g}": MatchCriterion("iou3d", config.iou_threshold),
        f"bev@{config.iou_threshold:g}": MatchCriterion("bev_iou", config.iou_threshold),
    }
    cd_label = f"cd@{config.cd_threshold:g}"
    cd_criterion = MatchCriterion("center_distance", config.cd_threshold)

    for cls in classes:
        per_frame = {}
        for frame in frames:
            gts = [b for b in gts_by_frame[frame] if b.class_id == cls]
            diffs = [
                d
                for b, d in zip(gts_by_frame[frame], difficulties(frame, gts_by_frame[frame]))
                if b.class_id == cls
            ]
            dets = [b for b in dets_by_frame.get(frame, []) if b.class_id == cls]
            per_frame[frame] = (dets, gts, diffs)

        for label, criterion in criteria.items():
            for bucket in DIFFICULTIES:
                rank = _RANK[bucket]
                results = []
                bucket_gt = 0
                for dets, gts, diffs in per_frame.values():
                    ignored = [_RANK[d] > rank for d in diffs]
                    bucket_gt += sum(1 for flag in ignored if not flag)
                    results.append(match(dets, gts, criterion, gt_ignored=ignored))
                if bucket_gt == 0:
                    continue  # no targets at this difficulty; bucket omitted
                report.ap[(cls, bucket, label)] = average_precision(
                    results, config.recall_positions
                )

        cd_results = []
        for dets, gts, diffs in per_frame.values():
            ignored = [d == "ignored" for d in diffs]
            cd_results.append(
                match(dets, gts, cd_criterion, gt_ignored=ignored,
                      bev_distance=config.center_distance_bev)
            )
        ap_cd = average_precision(cd_results, config.recall_positions)
        scores = tp_scores(cd_results, d_th=config.cd_threshold)
        report.rotated[cls] = {
            "criterion": cd_label,
            "ap_cd": ap_cd,
            "ats": scores.ats,
            "ass": scores.ass,
            "aos": scores.aos,
            "rods": rods(ap_cd, scores.ats, scores.ass, scores.aos),
            "n_tp": scores.n_tp,
            "tp_scores_defined": scores.defined,
        }
    return report
