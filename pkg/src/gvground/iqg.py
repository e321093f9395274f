"""Instance query generation: pick salient text tokens, attend over the image,
spread prior points over the response map, and build one query per point."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gvground import kernels
from gvground.errors import ConfigurationError, InvalidArgument
from gvground.numerics import Grid, ParamStore, TextSequence, linear, l2_norm_scores, \
    mlp_forward, sigmoid, softmax, top_k


@dataclass(frozen=True)
class FilteredText:
    features: np.ndarray  # (N_q, C)
    mask: np.ndarray  # (N_q,) bool
    source: tuple[int, ...]  # token index of each valid row

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class AttnOutputs:
    weights: np.ndarray  # (N_q, N_i); zero rows where the query is padding
    attended: np.ndarray  # (N_q, C)
    score_map: np.ndarray  # (h, w), before sigmoid
    empty: bool = False  # no valid query rows; score_map is all zeros


@dataclass(frozen=True)
class InstanceQuerySet:
    queries: np.ndarray  # (N_q, C)
    points: np.ndarray  # (N_q, 2) normalized (x, y)
    selected: np.ndarray  # (N_q, C) image features at the chosen cells
    cells: tuple[int, ...] = ()

    def __len__(self) -> int:
        return self.queries.shape[0]


def text_filter(seq: TextSequence, n_queries: int) -> FilteredText:
    """Keep the ``n_queries`` highest-norm valid tokens, zero-padding if short."""
    if n_queries < 1:
        raise InvalidArgument(f"n_queries must be >= 1, got {n_queries}")
    scores = l2_norm_scores(seq)
    valid = np.flatnonzero(seq.mask)
    if valid.size >= n_queries:
        order = top_k(scores[valid], n_queries)
        chosen = [int(valid[i]) for i in order]
    else:
        chosen = [int(i) for i in valid]
    feats = np.zeros((n_queries, seq.features.shape[1]))
    mask = np.zeros(n_queries, dtype=bool)
    for row, idx in enumerate(chosen):
        feats[row] = seq.features[idx]
        mask[row] = True
    return FilteredText(feats, mask, tuple(chosen))


def register_params(params: ParamStore, channels: int) -> None:
    params.add_linear("iqg.query_proj", channels, channels, bias=False, init="identity")
    params.add_mlp("iqg.query_mlp", (2 * channels, channels, channels))


def cross_attend(filtered: FilteredText, image: Grid, params: ParamStore | None = None
                 ) -> AttnOutputs:
    """Single-head scaled dot-product attention of filtered tokens over image cells."""
    tokens = image.tokens()
    q = filtered.features
    if params is not None and "iqg.query_proj.weight" in params:
        q = linear(params, "iqg.query_proj", q)
    if q.shape[1] != tokens.shape[1]:
        raise ConfigurationError(
            f"query width {q.shape[1]} does not match image channels {tokens.shape[1]}")
    n_q = q.shape[0]
    weights = np.zeros((n_q, tokens.shape[0]))
    rows = np.flatnonzero(filtered.mask)
    if rows.size:
        logits = q[rows] @ tokens.T / np.sqrt(tokens.shape[1])
        weights[rows] = softmax(logits, axis=1)
    attended = weights @ tokens
    if rows.size:
        score = weights[rows].mean(axis=0)
    else:
        score = np.zeros(tokens.shape[0])
    return AttnOutputs(weights, attended, score.reshape(image.height, image.width),
                       empty=rows.size == 0)


def cell_to_point(cell: int, height: int, width: int) -> tuple[float, float]:
    r, c = divmod(int(cell), width)
    return (c / max(width - 1, 1), r / max(height - 1, 1))


def dynamic_point_select(score_map, n_points: int, w_dist: float, image: Grid | None = None
                         ) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Greedily trade response against distance (in cells) from earlier picks.

    Returns ``(points, selected_features, cells)``; ``selected_features`` is empty
    when no image is given.
    """
    score_map = np.asarray(score_map, dtype=np.float64)
    h, w = score_map.shape
    if n_points > h * w:
        raise InvalidArgument(f"cannot pick {n_points} distinct cells from a {h}x{w} map")
    if n_points < 1:
        raise InvalidArgument(f"n_points must be >= 1, got {n_points}")
    if w_dist < 0:
        raise InvalidArgument(f"w_dist must be non-negative, got {w_dist}")
    cells = kernels.greedy_select(sigmoid(score_map), n_points, float(w_dist))
    points = np.array([cell_to_point(c, h, w) for c in cells])
    if image is None:
        selected = np.zeros((n_points, 0))
    else:
        selected = image.tokens()[cells]
    return points, selected, tuple(int(c) for c in cells)


def topk_point_select(score_map, n_points: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Baseline: the ``n_points`` highest-scoring cells, no spreading."""
    score_map = np.asarray(score_map, dtype=np.float64)
    h, w = score_map.shape
    cells = top_k(score_map.ravel(), n_points)
    return np.array([cell_to_point(c, h, w) for c in cells]), tuple(cells)


def assemble_queries(selected, attended, params: ParamStore, points=None, cells=(),
                     valid=None) -> InstanceQuerySet:
    """``MLP(concat(selected[i], attended[i]))``; rows of padded text queries pair with zeros."""
    selected = np.asarray(selected, dtype=np.float64)
    attended = np.asarray(attended, dtype=np.float64)
    if selected.shape[0] != attended.shape[0]:
        raise ConfigurationError(
            f"{selected.shape[0]} selected rows but {attended.shape[0]} attended rows")
    if valid is not None:
        attended = attended * np.asarray(valid, dtype=np.float64)[:, None]
    queries = mlp_forward(params, "iqg.query_mlp", np.concatenate([selected, attended], axis=1))
    if points is None:
        points = np.zeros((selected.shape[0], 2))
    return InstanceQuerySet(queries, np.asarray(points, dtype=np.float64), selected, tuple(cells))


def generate_queries(text: TextSequence, image: Grid, params: ParamStore, n_queries: int = 10,
                     w_dist: float = 0.003):
    filtered = text_filter(text, n_queries)
    attn = cross_attend(filtered, image, params)
    points, selected, cells = dynamic_point_select(attn.score_map, n_queries, w_dist, image)
    queries = assemble_queries(selected, attn.attended, params, points, cells, filtered.mask)
    return filtered, attn, queries


def box_contains(box, point) -> bool:
    cx, cy, w, h = box
    return abs(point[0] - cx) <= w / 2 and abs(point[1] - cy) <= h / 2


def cover_acc(points: Sequence, boxes: Sequence) -> float:
    """Mean over scenes of the fraction of target boxes holding at least one point.

    ``points[s]`` is scene ``s``'s point list, ``boxes[s]`` its target boxes (or a
    ground-truth object with a ``boxes`` attribute). Scenes without targets are skipped.
    """
    ratios = []
    for pts, gt in zip(points, boxes):
        scene_boxes = np.asarray(getattr(gt, "boxes", gt), dtype=np.float64).reshape(-1, 4)
        if scene_boxes.shape[0] == 0:
            continue
        tp = sum(any(box_contains(b, p) for p in pts) for b in scene_boxes)
        ratios.append(tp / scene_boxes.shape[0])
    return float(np.mean(ratios)) if ratios else 0.0
