"""Training objective: detection, global and instance segmentation, existence."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from gvground.errors import InvalidArgument, NumericalError
from gvground.matcher import Assignment, pairwise_iou_giou
from gvground.numerics import ParamStore, log_sigmoid, sigmoid

DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossWeights:
    detr: float = 0.1
    seg: float = 1.0
    instance: float = 1.0
    exist: float = 0.2


@dataclass(frozen=True)
class LossReport:
    l_detr: float
    l_seg: float
    l_ins_seg: float
    l_exist: float
    total: float
    terms: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"l_detr": self.l_detr, "l_seg": self.l_seg, "l_ins_seg": self.l_ins_seg,
                "l_exist": self.l_exist, "total": self.total}


def detr_loss(box_logits, fg_logits, assignment: Assignment, gt_boxes) -> float:
    """Matched pairs: L1 + (1 - GIoU) - log p_fg. Unmatched: -log(1 - p_fg).

    The sum is divided by ``max(N_gt, 1)``.
    """
    boxes = sigmoid(np.asarray(box_logits, dtype=np.float64).reshape(-1, 4))
    fg_logits = np.asarray(fg_logits, dtype=np.float64).ravel()
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    matched = np.zeros(fg_logits.shape[0], dtype=bool)
    total = 0.0
    if len(assignment):
        q = np.array(assignment.queries)
        g = np.array(assignment.targets)
        matched[q] = True
        l1 = np.abs(boxes[q] - gt_boxes[g]).sum(axis=1)
        _, gi = pairwise_iou_giou(boxes[q], gt_boxes[g])
        total += float(np.sum(l1 + (1.0 - np.diag(gi)) - log_sigmoid(fg_logits[q])))
    total += float(np.sum(-log_sigmoid(-fg_logits[~matched])))
    return total / max(gt_boxes.shape[0], 1)


def bce_dice_batch(logits, targets) -> np.ndarray:
    """``bce_dice`` for each leading index of ``(n, ...)`` logit/target stacks."""
    x = np.asarray(logits, dtype=np.float64)
    g = np.asarray(targets, dtype=np.float64)
    if x.shape != g.shape:
        raise InvalidArgument(f"logits {x.shape} and target {g.shape} differ in shape")
    x = x.reshape(x.shape[0], -1)
    g = g.reshape(g.shape[0], -1)
    # -log p = softplus(-x), -log (1 - p) = softplus(x)
    sp = np.logaddexp(0.0, -x)
    bce = sp + (1.0 - g) * x
    p = np.exp(-sp)
    dice = 1.0 - (2.0 * (p * g).sum(axis=1) + DICE_SMOOTH) / (
        p.sum(axis=1) + g.sum(axis=1) + DICE_SMOOTH)
    return bce.mean(axis=1) + dice


def bce_dice(logits, target) -> float:
    """Mean binary cross-entropy plus smoothed Dice loss."""
    x = np.asarray(logits, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    if x.shape != g.shape:
        raise InvalidArgument(f"logits {x.shape} and target {g.shape} differ in shape")
    return float(bce_dice_batch(x[None], g[None])[0])


def instance_seg_loss(mask_logits, q2m: Assignment, gt_masks, lambda_neg: float = 0.2) -> float:
    """Mean loss over matched masks plus ``lambda_neg`` times the mean over the
    unmatched ones, which are pushed towards empty masks."""
    mask_logits = np.asarray(mask_logits, dtype=np.float64)
    gt_masks = np.asarray(gt_masks)
    n = mask_logits.shape[0]
    targets = np.zeros(mask_logits.shape)
    matched = np.zeros(n, dtype=bool)
    for q, g in q2m.pairs:
        targets[q] = gt_masks[g]
        matched[q] = True
    per_query = bce_dice_batch(mask_logits, targets)
    loss = 0.0
    if matched.any():
        loss += float(per_query[matched].mean())
    if lambda_neg and not matched.all():
        loss += lambda_neg * float(per_query[~matched].mean())
    return loss


def existence_loss(exist_logit: float, non_target: bool) -> float:
    x = float(exist_logit)
    return float(-log_sigmoid(-x if non_target else x))


def total_loss(l_detr: float, l_seg: float, l_ins_seg: float, l_exist: float,
               weights: LossWeights = LossWeights()) -> LossReport:
    parts = {
        "detr": weights.detr * l_detr,
        "seg": weights.seg * l_seg,
        "instance": weights.instance * l_ins_seg,
        "exist": weights.exist * l_exist,
    }
    total = parts["detr"] + parts["seg"] + parts["instance"] + parts["exist"]
    return LossReport(float(l_detr), float(l_seg), float(l_ins_seg), float(l_exist),
                      float(total), parts)


def numeric_gradient(loss_fn: Callable[[ParamStore], float], params: ParamStore,
                     subset: Iterable[str], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences ``(f(t + h) - f(t - h)) / 2h`` for every scalar in ``subset``."""
    if not h > 0:
        raise InvalidArgument(f"step must be positive, got {h}")
    grads = {}
    for name in subset:
        base = params[name]
        flat = base.ravel()
        grad = np.zeros(flat.shape[0])
        for i in range(flat.shape[0]):
            up = flat.copy()
            up[i] += h
            down = flat.copy()
            down[i] -= h
            f_up = loss_fn(params.updated({name: up.reshape(base.shape)}))
            f_down = loss_fn(params.updated({name: down.reshape(base.shape)}))
            if not (np.isfinite(f_up) and np.isfinite(f_down)):
                idx = [int(v) for v in np.unravel_index(i, base.shape)]
                raise NumericalError(f"non-finite loss when perturbing {name}{idx}")
            grad[i] = (f_up - f_down) / (2.0 * h)
        grads[name] = grad.reshape(base.shape)
    return grads
