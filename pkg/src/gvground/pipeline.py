"""End-to-end forward pass, per-scene loss and the small fitting loop."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from gvground import decoder, encoder, iqg, seghead
from gvground.config import RunConfig
from gvground.encoder import Scene, SceneGroundTruth, rasterize_ground_truth
from gvground.errors import InvalidArgument, NumericalError
from gvground.losses import (LossReport, bce_dice, detr_loss, existence_loss,
                             instance_seg_loss, numeric_gradient, total_loss)
from gvground.matcher import Assignment, align_masks, build_cost, hungarian
from gvground.numerics import Grid, ParamStore, TextSequence, sigmoid
from gvground.postprocess import FinalOutput, postprocess

# Parameters updated by the fitting demo: the detection heads and every tensor
# that sits between S_global and the mask/existence outputs.
FIT_SUBSET = (
    "head.box.weight", "head.box.bias", "head.fg.weight", "head.fg.bias",
    "seg.query_proj.weight",
    "seg.mask_head.weight", "seg.mask_head.bias",
    "seg.exist_head.weight", "seg.exist_head.bias",
)


def build_params(cfg: RunConfig) -> ParamStore:
    params = ParamStore(cfg.seed)
    c = cfg.channels
    encoder.register_params(params, c)
    iqg.register_params(params, c)
    decoder.register_pyramid(params, c, cfg.levels)
    decoder.register_decoder(params, c, cfg.heads, cfg.levels, cfg.points, cfg.depth)
    seghead.register_params(params, c, cfg.levels)
    return params


@dataclass(frozen=True)
class SceneForward:
    scene: Scene
    image: Grid
    text: TextSequence
    filtered: iqg.FilteredText
    attn: iqg.AttnOutputs
    queries: iqg.InstanceQuerySet
    pyramid: decoder.PyramidFeatures
    decoded: decoder.DecodedQuerySet
    seg: seghead.GlobalSeg
    masks: seghead.InstanceMasks

    @property
    def exist_prob(self) -> float:
        return float(sigmoid(self.seg.exist_logit))


def forward(scene: Scene, params: ParamStore, cfg: RunConfig) -> SceneForward:
    image, text = encoder.encode(scene, params, cfg.text_tokens)
    filtered, attn, queries = iqg.generate_queries(text, image, params, cfg.n_queries, cfg.w_dist)
    pyramid = decoder.build_pyramid(image, params, cfg.levels)
    decoded = decoder.decode(queries, pyramid, params, cfg.depth, cfg.heads, cfg.points)
    seg = seghead.global_decode(pyramid, params)
    masks = seghead.instance_masks(decoded, seg.features, params)
    return SceneForward(scene, image, text, filtered, attn, queries, pyramid, decoded, seg, masks)


def predict(scene: Scene, params: ParamStore, cfg: RunConfig) -> tuple[FinalOutput, SceneForward]:
    fw = forward(scene, params, cfg)
    out = postprocess(fw.decoded.fg_prob, fw.decoded.boxes, fw.masks.logits,
                      fw.seg.mask_logits, fw.exist_prob, cfg.postprocess, scene.id)
    return out, fw


def _loss_terms(box_logits, fg_logits, points, mask_logits, global_logits, exist_logit,
                gt: SceneGroundTruth, cfg: RunConfig) -> tuple[tuple[float, ...], Assignment]:
    if gt.count:
        cost = build_cost(sigmoid(box_logits), fg_logits, points, gt.boxes, cfg.cost_weights)
        assignment = hungarian(cost)
    else:
        assignment = Assignment(())
    q2m = align_masks(assignment, gt.count, gt.masks.shape[0])
    l_detr = detr_loss(box_logits, fg_logits, assignment, gt.boxes)
    l_seg = bce_dice(global_logits, gt.global_mask)
    l_ins = instance_seg_loss(mask_logits, q2m, gt.masks, cfg.lambda_neg)
    l_exist = existence_loss(exist_logit, gt.non_target)
    return (l_detr, l_seg, l_ins, l_exist), assignment


def scene_loss(fw: SceneForward, gt: SceneGroundTruth, cfg: RunConfig
               ) -> tuple[LossReport, Assignment]:
    d = fw.decoded
    terms, assignment = _loss_terms(d.box_logits, d.fg_logits, d.points, fw.masks.logits,
                                    fw.seg.mask_logits, fw.seg.exist_logit, gt, cfg)
    return total_loss(*terms, cfg.loss_weights), assignment


def ground_truth(scene: Scene, cfg: RunConfig) -> SceneGroundTruth:
    return rasterize_ground_truth(scene, *cfg.mask_size)


@dataclass(frozen=True)
class _Cached:
    embeddings: np.ndarray
    points: np.ndarray
    features: np.ndarray
    gt: SceneGroundTruth


def _same(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(x is y if isinstance(x, np.ndarray) else x == y
                                    for x, y in zip(a, b))


class _Memo:
    """Remembers the last result per slot, keyed by the identity of its inputs."""

    def __init__(self):
        self._slots: dict = {}

    def get(self, slot, key: tuple, fn):
        hit = self._slots.get(slot)
        if hit is not None and _same(hit[0], key):
            return hit[1]
        value = fn()
        self._slots[slot] = (key, value)
        return value


class FitProblem:
    """Mean loss over a few scenes as a function of the heads only.

    Everything upstream of the heads (decoded embeddings, S_global) is computed
    once, since the heads do not influence it. Each loss term is recomputed only
    when a tensor it reads has changed, which makes coordinate-wise finite
    differences cheap.
    """

    def __init__(self, scenes: Sequence[Scene], params: ParamStore, cfg: RunConfig):
        self.cfg = cfg
        self.cache = []
        self._memo = _Memo()
        for scene in scenes:
            fw = forward(scene, params, cfg)
            self.cache.append(_Cached(fw.decoded.embeddings, fw.decoded.points,
                                      fw.seg.features, ground_truth(scene, cfg)))

    def _detection(self, c: _Cached, params: ParamStore):
        box_logits, fg_logits = decoder.apply_heads(c.embeddings, c.points, params)
        if c.gt.count:
            cost = build_cost(sigmoid(box_logits), fg_logits, c.points, c.gt.boxes,
                              self.cfg.cost_weights)
            assignment = hungarian(cost)
        else:
            assignment = Assignment(())
        return assignment, detr_loss(box_logits, fg_logits, assignment, c.gt.boxes)

    def _instance(self, c: _Cached, params: ParamStore, assignment: Assignment) -> float:
        logits = self._memo.get(
            (id(c), "masks"), (params["seg.query_proj.weight"],),
            lambda: seghead.instance_masks(c.embeddings, c.features, params).logits)
        q2m = align_masks(assignment, c.gt.count, c.gt.masks.shape[0])
        return instance_seg_loss(logits, q2m, c.gt.masks, self.cfg.lambda_neg)

    def report(self, params: ParamStore) -> LossReport:
        sums = np.zeros(4)
        memo = self._memo
        for c in self.cache:
            key = tuple(params[n] for n in FIT_SUBSET[:4])
            assignment, l_detr = memo.get((id(c), "det"), key,
                                          lambda: self._detection(c, params))
            l_ins = memo.get((id(c), "ins"), (params["seg.query_proj.weight"], assignment.pairs),
                             lambda: self._instance(c, params, assignment))
            mask_key = (params["seg.mask_head.weight"], params["seg.mask_head.bias"])
            l_seg = memo.get((id(c), "seg"), mask_key, lambda: bce_dice(
                seghead.seg_outputs(c.features, params)[0], c.gt.global_mask))
            exist_key = (params["seg.exist_head.weight"], params["seg.exist_head.bias"])
            l_exist = memo.get((id(c), "exist"), exist_key, lambda: existence_loss(
                seghead.seg_outputs(c.features, params)[1], c.gt.non_target))
            sums += (l_detr, l_seg, l_ins, l_exist)
        return total_loss(*(sums / len(self.cache)), self.cfg.loss_weights)

    def __call__(self, params: ParamStore) -> float:
        return self.report(params).total


def fit(scenes: Sequence[Scene], params: ParamStore, cfg: RunConfig,
        subset: Sequence[str] = FIT_SUBSET,
        on_step: Callable[[int, LossReport], None] | None = None
        ) -> tuple[ParamStore, list[LossReport]]:
    """Plain gradient descent with central-difference gradients.

    Returns the final parameters and ``cfg.fit_steps + 1`` reports: the initial
    loss followed by the loss after every step.
    """
    if cfg.fit_steps < 1:
        raise InvalidArgument(f"steps must be >= 1, got {cfg.fit_steps}")
    if not cfg.fit_lr >= 0:
        raise InvalidArgument(f"learning rate must be non-negative, got {cfg.fit_lr}")
    problem = FitProblem(scenes, params, cfg)
    history = [problem.report(params)]
    if on_step:
        on_step(0, history[0])
    for step in range(1, cfg.fit_steps + 1):
        try:
            grads = numeric_gradient(problem, params, subset, cfg.fit_step_size)
        except NumericalError as exc:
            raise NumericalError(f"step {step}: {exc}") from exc
        params = params.updated({n: params[n] - cfg.fit_lr * g for n, g in grads.items()})
        report = problem.report(params)
        if not np.isfinite(report.total):
            raise NumericalError(f"step {step}: loss is not finite ({report.total})")
        history.append(report)
        if on_step:
            on_step(step, report)
    return params, history
