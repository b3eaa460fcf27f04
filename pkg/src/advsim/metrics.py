"""Evaluation metrics: Chamfer distance, BEV IoU, average precision, reports.

Chamfer distance between clouds P and Q is the sum of both mean squared
nearest-neighbor distances,

    D(P, Q) = (1/|P|) sum_p min_q ||p - q||^2 + (1/|Q|) sum_q min_p ||q - p||^2.

Average precision uses all-point interpolation over the precision-recall
curve, detections pooled across frames and sorted by descending score (ties
broken by frame then detection index), matched greedily to unmatched ground
truth at an IoU threshold. With a single object class the dataset mAP equals
this AP; the attack effect is summarized as ``100 * mAP_adv / mAP_clean``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import clip_convex, polygon_area, rect_corners
from .scene import BBox3D


def chamfer_distance(cloud_a, cloud_b) -> float:
    a = np.ascontiguousarray(np.asarray(cloud_a, dtype=np.float64).reshape(-1, 3))
    b = np.ascontiguousarray(np.asarray(cloud_b, dtype=np.float64).reshape(-1, 3))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer distance is undefined for an empty cloud")
    d_ab, _ = kernels.nearest_sq(a, b)
    d_ba, _ = kernels.nearest_sq(b, a)
    return float(np.mean(d_ab) + np.mean(d_ba))


def bev_iou(box_a: BBox3D, box_b: BBox3D) -> float:
    """Intersection over union of the two boxes' rotated BEV footprints."""
    ca = rect_corners(box_a.center[0], box_a.center[1], box_a.dims[0], box_a.dims[1], box_a.yaw)
    cb = rect_corners(box_b.center[0], box_b.center[1], box_b.dims[0], box_b.dims[1], box_b.yaw)
    inter = polygon_area(clip_convex(ca, cb))
    area_a = box_a.dims[0] * box_a.dims[1]
    area_b = box_b.dims[0] * box_b.dims[1]
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def average_precision(gt_by_frame, det_by_frame, iou_threshold: float = 0.5) -> float:
    """All-point interpolated AP over a set of frames.

    ``gt_by_frame`` maps frame key -> list of BBox3D. ``det_by_frame`` maps
    frame key -> list of (score, BBox3D), per-frame order defining the tie
    break. Raises if there is no ground truth anywhere.
    """
    total_gt = sum(len(v) for v in gt_by_frame.values())
    if total_gt == 0:
        raise ValueError("average precision is undefined without ground truth boxes")

    pooled = []
    for frame_pos, frame in enumerate(sorted(det_by_frame)):
        for i, (score, box) in enumerate(det_by_frame[frame]):
            pooled.append((-float(score), frame_pos, i, frame, box))
    pooled.sort(key=lambda e: (e[0], e[1], e[2]))
    if not pooled:
        return 0.0

    matched: dict = {frame: np.zeros(len(boxes), dtype=bool) for frame, boxes in gt_by_frame.items()}
    tp = np.zeros(len(pooled))
    fp = np.zeros(len(pooled))
    for rank, (_, _, _, frame, box) in enumerate(pooled):
        gts = gt_by_frame.get(frame, [])
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if matched[frame][j]:
                continue
            iou = bev_iou(box, gt)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0:
            matched[frame][best_j] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    recall = cum_tp / total_gt
    precision = cum_tp / (cum_tp + cum_fp)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    widths = np.diff(mrec)
    return float(np.sum(widths * mpre[1:]))


def map_ratio(map_clean: float, map_adv: float) -> float:
    """Attack effect in percent: 100 * mAP_adv / mAP_clean."""
    if map_clean <= 0.0:
        raise ValueError("mAP ratio is undefined when the clean mAP is zero")
    if map_adv == map_clean:
        return 100.0      # exact, not subject to divide-then-multiply rounding
    return 100.0 * map_adv / map_clean


@dataclass
class ReportRow:
    attack_type: str
    parameter: str
    map_clean: float
    map_adv: float
    map_ratio: float
    mean_chamfer: float

    def to_dict(self) -> dict:
        return {
            "attack_type": self.attack_type,
            "parameter": self.parameter,
            "map_clean": self.map_clean,
            "map_adv": self.map_adv,
            "map_ratio_percent": self.map_ratio,
            "mean_chamfer_m2": self.mean_chamfer,
        }


@dataclass
class EvalReport:
    rows: list
    context: dict = field(default_factory=dict)

    def render_table(self) -> str:
        headers = ["Attack Type", "Parameter", "mAP Ratio (%)", "Mean CD (m^2)"]
        cells = [
            [
                row.attack_type,
                row.parameter,
                f"{row.map_ratio:.2f}",
                f"{row.mean_chamfer:.5f}",
            ]
            for row in self.rows
        ]
        widths = [
            max(len(headers[c]), *(len(r[c]) for r in cells)) if cells else len(headers[c])
            for c in range(len(headers))
        ]
        def fmt(row):
            return "  ".join(v.ljust(widths[c]) for c, v in enumerate(row)).rstrip()
        lines = [fmt(headers), fmt(["-" * w for w in widths])]
        lines.extend(fmt(r) for r in cells)
        return "\n".join(lines)

    def to_json(self) -> str:
        doc = {
            "context": self.context,
            "rows": [row.to_dict() for row in self.rows],
            "table": self.render_table().split("\n"),
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def build_report(rows, context=None) -> EvalReport:
    return EvalReport(list(rows), dict(context or {}))
