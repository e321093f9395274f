"""Inference-time fusion of query scores, existence score and masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gvground.errors import InvalidArgument
from gvground.matcher import pairwise_iou_giou
from gvground.numerics import sigmoid


@dataclass(frozen=True)
class PostprocessConfig:
    thr_q: float = 0.9
    thr_m: float = 0.5
    nms: bool = False
    nms_iou: float = 0.7


@dataclass(frozen=True)
class FinalOutput:
    indices: tuple[int, ...]
    boxes: np.ndarray  # (k, 4) cxcywh of kept queries
    scores: np.ndarray  # (k,) fused scores of kept queries
    mask: np.ndarray  # (H', W') bool
    non_target: bool
    id: str = ""


def fuse_scores(query_probs, exist_prob: float) -> np.ndarray:
    return float(exist_prob) * np.asarray(query_probs, dtype=np.float64)


def select_queries(scores, thr_q: float) -> list[int]:
    """Indices scoring strictly above ``thr_q``, ascending."""
    if not 0.0 <= thr_q <= 1.0:
        raise InvalidArgument(f"thr_q {thr_q} outside [0, 1]")
    return [int(i) for i in np.flatnonzero(np.asarray(scores) > thr_q)]


def binarize(logits, thr_m: float) -> np.ndarray:
    return sigmoid(logits) > thr_m


def merge_masks(global_logits, instance_logits, kept, thr_m: float = 0.5) -> np.ndarray:
    glob = np.asarray(global_logits, dtype=np.float64)
    inst = np.asarray(instance_logits, dtype=np.float64)
    if inst.ndim != 3 or inst.shape[1:] != glob.shape:
        raise InvalidArgument(
            f"instance masks {inst.shape} do not match global mask {glob.shape}")
    merged = binarize(glob, thr_m)
    for i in kept:
        merged |= binarize(inst[i], thr_m)
    return merged


def nms(boxes, scores, iou_threshold: float) -> list[int]:
    """Greedy suppression by descending score; kept indices returned ascending."""
    if not 0.0 < iou_threshold <= 1.0:
        raise InvalidArgument(f"iou threshold {iou_threshold} outside (0, 1]")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if boxes.shape[0] == 0:
        return []
    ious, _ = pairwise_iou_giou(boxes, boxes)
    order = np.argsort(-scores, kind="stable")
    alive = np.ones(boxes.shape[0], dtype=bool)
    kept = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(int(i))
        alive &= ~(ious[i] > iou_threshold)
        alive[i] = False
    return sorted(kept)


def postprocess(fg_prob, boxes, instance_logits, global_logits, exist_prob: float,
                cfg: PostprocessConfig = PostprocessConfig(), scene_id: str = "") -> FinalOutput:
    fused = fuse_scores(fg_prob, exist_prob)
    kept = select_queries(fused, cfg.thr_q)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if cfg.nms and kept:
        sub = nms(boxes[kept], fused[kept], cfg.nms_iou)
        kept = [kept[i] for i in sub]
    mask = merge_masks(global_logits, instance_logits, kept, cfg.thr_m)
    return FinalOutput(tuple(kept), boxes[kept], fused[kept], mask, not kept, scene_id)
