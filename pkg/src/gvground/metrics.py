"""Evaluation metrics for classic and generalized referring comprehension/segmentation.

Conventions for "the model predicted nothing":

* box metrics (F1score, N-acc) look at the number of predicted boxes;
* mask metrics (gIoU, cIoU, mRR, rIoU) look at whether the merged mask is empty;
* the Ref-ZOM style accuracy uses the predicted non-target flag.

Averages over an empty set of scenes are reported as 0.0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from gvground.errors import InvalidArgument
from gvground.iqg import cover_acc
from gvground.matcher import pairwise_iou_giou


@dataclass(frozen=True)
class EvalRecord:
    id: str
    pred_boxes: np.ndarray
    pred_scores: np.ndarray
    pred_mask: np.ndarray
    pred_non_target: bool
    gt_boxes: np.ndarray
    gt_mask: np.ndarray
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        object.__setattr__(self, "pred_boxes",
                           np.asarray(self.pred_boxes, dtype=np.float64).reshape(-1, 4))
        object.__setattr__(self, "pred_scores",
                           np.asarray(self.pred_scores, dtype=np.float64).ravel())
        object.__setattr__(self, "gt_boxes",
                           np.asarray(self.gt_boxes, dtype=np.float64).reshape(-1, 4))
        object.__setattr__(self, "pred_mask", np.asarray(self.pred_mask, dtype=bool))
        object.__setattr__(self, "gt_mask", np.asarray(self.gt_mask, dtype=bool))
        if self.pred_mask.shape != self.gt_mask.shape:
            raise InvalidArgument(
                f"{self.id}: predicted mask {self.pred_mask.shape} vs gt {self.gt_mask.shape}")
        if self.pred_scores.shape[0] != self.pred_boxes.shape[0]:
            raise InvalidArgument(f"{self.id}: one score per predicted box required")

    @property
    def non_target(self) -> bool:
        return self.gt_boxes.shape[0] == 0

    @property
    def intersection(self) -> int:
        return int(np.sum(self.pred_mask & self.gt_mask))

    @property
    def union(self) -> int:
        return int(np.sum(self.pred_mask | self.gt_mask))

    @property
    def mask_empty(self) -> bool:
        return not self.pred_mask.any()

    def mask_iou(self) -> float:
        """Per-scene IoU; a non-target scene scores 1 iff nothing was segmented."""
        if self.non_target:
            return 1.0 if self.mask_empty else 0.0
        union = self.union
        return self.intersection / union if union else 1.0


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else 0.0


def precision_at_05(records: Sequence[EvalRecord]) -> float:
    """Fraction of single-target scenes whose top-scoring box has IoU > 0.5."""
    hits = []
    for r in records:
        if r.gt_boxes.shape[0] != 1:
            raise InvalidArgument(f"{r.id}: precision@0.5 needs exactly one target box")
        if r.pred_boxes.shape[0] == 0:
            hits.append(False)
            continue
        top = int(np.argmax(r.pred_scores))
        ious, _ = pairwise_iou_giou(r.pred_boxes[top], r.gt_boxes)
        hits.append(bool(ious[0, 0] > 0.5))
    return _mean(hits)


def scene_box_success(r: EvalRecord, iou_threshold: float = 0.5) -> bool:
    """Whether the scene reaches F1 = 1: every box matched, nothing extra."""
    n_pred, n_gt = r.pred_boxes.shape[0], r.gt_boxes.shape[0]
    if n_pred != n_gt:
        return False
    if n_gt == 0:
        return True
    ious, _ = pairwise_iou_giou(r.pred_boxes, r.gt_boxes)
    free = np.ones(n_gt, dtype=bool)
    tp = 0
    for p in np.argsort(-r.pred_scores, kind="stable"):
        cand = np.where(free, ious[p], -1.0)
        g = int(np.argmax(cand))
        if cand[g] >= iou_threshold:
            free[g] = False
            tp += 1
    return tp == n_gt


def grec_f1(records: Sequence[EvalRecord]) -> tuple[float, float]:
    """(F1score, N-acc)."""
    success = [scene_box_success(r) for r in records]
    f1score = _mean(success)
    n_acc = _mean(s for s, r in zip(success, records) if r.non_target)
    return f1score, n_acc


def cumulative_iou(records: Sequence[EvalRecord]) -> float:
    inter = sum(r.intersection for r in records)
    union = sum(r.union for r in records)
    return inter / union if union else 1.0


def gres_iou(records: Sequence[EvalRecord]) -> tuple[float, float]:
    """(gIoU, cIoU)."""
    return _mean(r.mask_iou() for r in records), cumulative_iou(records)


def zom_metrics(records: Sequence[EvalRecord]) -> tuple[float, float, float]:
    """(oIoU, mIoU, Acc)."""
    m_iou = _mean(r.mask_iou() for r in records if not r.non_target)
    acc = _mean(r.pred_non_target == r.non_target for r in records)
    return cumulative_iou(records), m_iou, acc


def robust_metrics(records: Sequence[EvalRecord]) -> tuple[float, float, float]:
    """(mIoU over positive expressions, mRR over negative ones, rIoU over all)."""
    m_iou = _mean(r.mask_iou() for r in records if not r.non_target)
    m_rr = _mean(r.mask_empty for r in records if r.non_target)
    r_iou = _mean(r.mask_iou() for r in records)
    return m_iou, m_rr, r_iou


@dataclass(frozen=True)
class EvalSummary:
    precision_at_05: float
    f1score: float
    n_acc: float
    g_iou: float
    c_iou: float
    m_iou: float
    o_iou: float
    acc_zom: float
    m_rr: float
    r_iou: float
    cover_acc: float

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_SETS = {
    "rec": ("precision_at_05",),
    "grec": ("f1score", "n_acc"),
    "gres": ("g_iou", "c_iou", "n_acc"),
    "zom": ("o_iou", "m_iou", "acc_zom"),
    "robust": ("m_iou", "m_rr", "r_iou"),
    "cover": ("cover_acc",),
}
METRIC_SETS["all"] = tuple(EvalSummary.__dataclass_fields__)


def summarize(records: Sequence[EvalRecord]) -> EvalSummary:
    single = [r for r in records if r.gt_boxes.shape[0] == 1]
    f1score, n_acc = grec_f1(records)
    g_iou, c_iou = gres_iou(records)
    o_iou, m_iou, acc = zom_metrics(records)
    _, m_rr, r_iou = robust_metrics(records)
    cov = cover_acc([r.points for r in records], [r.gt_boxes for r in records])
    return EvalSummary(precision_at_05(single), f1score, n_acc, g_iou, c_iou, m_iou, o_iou,
                       acc, m_rr, r_iou, cov)


def scene_row(r: EvalRecord) -> dict:
    return {
        "id": r.id,
        "non_target": r.non_target,
        "n_gt": int(r.gt_boxes.shape[0]),
        "n_pred": int(r.pred_boxes.shape[0]),
        "box_success": scene_box_success(r),
        "iou": r.mask_iou(),
        "intersection": r.intersection,
        "union": r.union,
        "pred_non_target": bool(r.pred_non_target),
    }
