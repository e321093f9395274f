"""Point-guided set matching between decoded queries and ground-truth instances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gvground import kernels
from gvground.errors import InvalidArgument
from gvground.numerics import log_sigmoid


@dataclass(frozen=True)
class CostWeights:
    cls: float = 1.0
    box: float = 5.0
    giou: float = 2.0
    point: float = 2.0

    def __post_init__(self):
        if min(self.cls, self.box, self.giou, self.point) < 0:
            raise InvalidArgument(f"cost weights must be non-negative: {self}")


@dataclass(frozen=True)
class Assignment:
    """Injective query -> target pairs, sorted by query index."""

    pairs: tuple[tuple[int, int], ...]

    @property
    def queries(self) -> list[int]:
        return [q for q, _ in self.pairs]

    @property
    def targets(self) -> list[int]:
        return [g for _, g in self.pairs]

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def box_corners(box) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def pairwise_iou_giou(a, b) -> tuple[np.ndarray, np.ndarray]:
    """IoU and GIoU matrices for cxcywh box sets ``a`` (n, 4) and ``b`` (m, 4)."""
    ca = box_corners(np.asarray(a, dtype=np.float64).reshape(-1, 4))[:, None, :]
    cb = box_corners(np.asarray(b, dtype=np.float64).reshape(-1, 4))[None, :, :]
    area_a = (ca[..., 2] - ca[..., 0]) * (ca[..., 3] - ca[..., 1])
    area_b = (cb[..., 2] - cb[..., 0]) * (cb[..., 3] - cb[..., 1])
    iw = np.clip(np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0]), 0, None)
    ih = np.clip(np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1]), 0, None)
    inter = iw * ih
    union = area_a + area_b - inter
    hull = ((np.maximum(ca[..., 2], cb[..., 2]) - np.minimum(ca[..., 0], cb[..., 0]))
            * (np.maximum(ca[..., 3], cb[..., 3]) - np.minimum(ca[..., 1], cb[..., 1])))
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
        giou = iou - np.where(hull > 0, (hull - union) / hull, 0.0)
    return iou, giou


def iou(a, b) -> float:
    return float(pairwise_iou_giou(a, b)[0][0, 0])


def giou(a, b) -> float:
    return float(pairwise_iou_giou(a, b)[1][0, 0])


def build_cost(boxes, fg_logits, points, gt_boxes, weights: CostWeights = CostWeights()
               ) -> np.ndarray:
    """Matching cost, (N_q, N_gt).

    ``cls * -log p_fg + box * L1(box, gt) + giou * (1 - GIoU) + point * L1(point, gt center)``
    with boxes in normalized cxcywh.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if gt_boxes.shape[0] == 0:
        raise InvalidArgument("cost matrix needs at least one target")
    cls_cost = -log_sigmoid(np.asarray(fg_logits, dtype=np.float64))[:, None]
    l1 = np.abs(boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=2)
    _, g = pairwise_iou_giou(boxes, gt_boxes)
    point_l1 = np.abs(points[:, None, :] - gt_boxes[None, :, :2]).sum(axis=2)
    return (weights.cls * cls_cost + weights.box * l1 + weights.giou * (1.0 - g)
            + weights.point * point_l1)


def hungarian(cost) -> Assignment:
    """Optimal assignment; ties resolve to the lexicographically smallest one."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InvalidArgument(f"cost must be a matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InvalidArgument("cost matrix has non-finite entries")
    rows, cols = kernels.linear_sum_assignment(cost)
    return Assignment(tuple((int(r), int(c)) for r, c in zip(rows, cols)))


def match(decoded, gt_boxes, weights: CostWeights = CostWeights()) -> Assignment:
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if gt_boxes.shape[0] == 0:
        return Assignment(())
    cost = build_cost(decoded.boxes, decoded.fg_logits, decoded.points, gt_boxes, weights)
    return hungarian(cost)


def align_masks(assignment: Assignment, n_boxes: int, n_masks: int) -> Assignment:
    """Carry the query -> box matching over to query -> mask.

    Valid only because target boxes and masks share one index order, and so do
    the decoded queries and their masks.
    """
    if n_boxes != n_masks:
        raise InvalidArgument(f"{n_boxes} target boxes but {n_masks} target masks")
    for _, g in assignment.pairs:
        if not 0 <= g < n_masks:
            raise InvalidArgument(f"assignment refers to target {g} of {n_masks}")
    return Assignment(assignment.pairs)
