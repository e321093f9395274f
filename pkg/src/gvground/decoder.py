"""Point-prior multi-scale deformable decoder.

Queries start from the prior points picked by the query generator and keep them
as fixed sampling anchors through every layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gvground import kernels
from gvground.errors import ConfigurationError, InvalidArgument
from gvground.iqg import InstanceQuerySet
from gvground.numerics import (Grid, ParamStore, inverse_sigmoid, linear, mlp_forward,
                               rowwise_matmul, sigmoid)


@dataclass(frozen=True)
class PyramidFeatures:
    levels: tuple[Grid, ...]  # finest first
    strides: tuple[int, ...]

    @property
    def channels(self) -> int:
        return self.levels[0].channels

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class DecodedQuerySet:
    embeddings: np.ndarray  # Q_d, (N_q, C)
    points: np.ndarray  # prior points, (N_q, 2)
    box_logits: np.ndarray  # (N_q, 4); sigmoid gives cxcywh
    fg_logits: np.ndarray  # (N_q,)

    @property
    def boxes(self) -> np.ndarray:
        return sigmoid(self.box_logits)

    @property
    def fg_prob(self) -> np.ndarray:
        return sigmoid(self.fg_logits)

    @property
    def reference_points(self) -> np.ndarray:
        return self.boxes[:, :2]

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def avg_pool2(values: np.ndarray) -> np.ndarray:
    """2x2 average pooling; a trailing odd row/column pools over what exists."""
    h, w, c = values.shape
    oh, ow = -(-h // 2), -(-w // 2)
    out = np.zeros((oh, ow, c))
    counts = np.zeros((oh, ow, 1))
    for dy in (0, 1):
        for dx in (0, 1):
            part = values[dy::2, dx::2]
            out[: part.shape[0], : part.shape[1]] += part
            counts[: part.shape[0], : part.shape[1]] += 1
    return out / counts


def register_pyramid(params: ParamStore, channels: int, n_levels: int) -> None:
    for lvl in range(n_levels):
        params.add_linear(f"pyramid.level{lvl}", channels, channels)


def build_pyramid(image: Grid, params: ParamStore, n_levels: int) -> PyramidFeatures:
    if n_levels < 1:
        raise InvalidArgument(f"need at least one level, got {n_levels}")
    need = 2 ** (n_levels - 1)
    if image.height < need or image.width < need:
        raise InvalidArgument(
            f"{image.height}x{image.width} grid cannot be pooled {n_levels - 1} times")
    raw = image.values
    levels = []
    for lvl in range(n_levels):
        if lvl:
            raw = avg_pool2(raw)
        levels.append(Grid(linear(params, f"pyramid.level{lvl}", raw)))
    return PyramidFeatures(tuple(levels), tuple(2 ** i for i in range(n_levels)))


def register_deform_attn(params: ParamStore, name: str, channels: int, n_heads: int,
                         n_levels: int, n_points: int) -> None:
    if channels % n_heads:
        raise ConfigurationError(f"{channels} channels do not split over {n_heads} heads")
    slots = n_heads * n_levels * n_points
    params.add_linear(f"{name}.offsets", channels, 2 * slots)
    params.add_linear(f"{name}.weights", channels, slots)
    params.add(f"{name}.value_proj.weight", (channels, channels), fan_in=channels)
    params.add(f"{name}.output_proj.weight", (channels, channels), fan_in=channels)


def _flatten_levels(pyramid: PyramidFeatures):
    shapes = np.array([[g.height, g.width] for g in pyramid.levels], dtype=np.int64)
    sizes = shapes[:, 0] * shapes[:, 1]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    stacked = np.concatenate([g.tokens() for g in pyramid.levels], axis=0)
    return stacked, shapes, starts


def ms_deform_attn_batch(z, points, pyramid: PyramidFeatures, params: ParamStore, name: str,
                         n_heads: int, n_points: int) -> np.ndarray:
    """Deformable attention for a batch of queries ``z`` (Q, C) anchored at ``points`` (Q, 2).

    Offsets are in level pixel units added to the rescaled anchor; weights are a
    softmax over the ``L*K`` slots of each head.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    points = np.clip(np.atleast_2d(np.asarray(points, dtype=np.float64)), 0.0, 1.0)
    n_q, channels = z.shape
    n_levels = len(pyramid)
    if channels % n_heads:
        raise ConfigurationError(f"{channels} channels do not split over {n_heads} heads")
    d = channels // n_heads
    off = linear(params, f"{name}.offsets", z)
    wts = linear(params, f"{name}.weights", z)
    expected = n_heads * n_levels * n_points
    if wts.shape[1] != expected or off.shape[1] != 2 * expected:
        raise ConfigurationError(
            f"{name}: parameters sized for {wts.shape[1]} slots, need {expected} "
            f"(M={n_heads}, L={n_levels}, K={n_points})")
    off = off.reshape(n_q, n_heads, n_levels, n_points, 2)
    wts = wts.reshape(n_q, n_heads, n_levels * n_points)
    wts = wts - wts.max(axis=2, keepdims=True)
    attn = np.exp(wts)
    attn = (attn / attn.sum(axis=2, keepdims=True)).reshape(n_q, n_heads, n_levels, n_points)

    stacked, shapes, starts = _flatten_levels(pyramid)
    w_value = params[f"{name}.value_proj.weight"]
    value = (stacked @ w_value.T).reshape(-1, n_heads, d)
    scale = np.stack([shapes[:, 1] - 1, shapes[:, 0] - 1], axis=1).astype(np.float64)  # (L, 2)
    anchor = points[:, None, None, None, :] * scale[None, None, :, None, :]
    loc = anchor + off
    sampled = kernels.deform_gather(value, shapes, starts, loc, attn)  # (Q, M, d)
    w_out = params[f"{name}.output_proj.weight"]
    return rowwise_matmul(sampled.reshape(n_q, channels), w_out)


def ms_deform_attn(z_q, p_q, pyramid: PyramidFeatures, params: ParamStore, name: str = "msda",
                   n_heads: int = 4, n_points: int = 4) -> np.ndarray:
    return ms_deform_attn_batch(np.asarray(z_q)[None, :], np.asarray(p_q)[None, :], pyramid,
                                params, name, n_heads, n_points)[0]


def _fsum_last(x: np.ndarray) -> np.ndarray:
    # correctly rounded sums: independent of term order
    flat = x.reshape(-1, x.shape[-1])
    return np.array([math.fsum(row) for row in flat]).reshape(x.shape[:-1])


def self_attention(x: np.ndarray, params: ParamStore, name: str, n_heads: int) -> np.ndarray:
    """Multi-head self-attention whose key reductions are order-independent, so
    permuting the queries permutes the output bit for bit."""
    n, channels = x.shape
    d = channels // n_heads
    q = linear(params, f"{name}.q", x).reshape(n, n_heads, d).transpose(1, 0, 2)
    k = linear(params, f"{name}.k", x).reshape(n, n_heads, d).transpose(1, 0, 2)
    v = linear(params, f"{name}.v", x).reshape(n, n_heads, d).transpose(1, 0, 2)
    logits = np.einsum("hid,hjd->hij", q, k) / np.sqrt(d)
    e = np.exp(logits - logits.max(axis=2, keepdims=True))
    attn = e / _fsum_last(e)[..., None]
    terms = attn[:, :, :, None] * v[:, None, :, :]  # (head, i, j, d)
    mixed = _fsum_last(terms.transpose(0, 1, 3, 2))  # sum over j
    mixed = mixed.transpose(1, 0, 2).reshape(n, channels)
    return linear(params, f"{name}.out", mixed)


def register_decoder(params: ParamStore, channels: int, n_heads: int, n_levels: int,
                     n_points: int, depth: int, ffn_dim: int | None = None) -> None:
    ffn_dim = ffn_dim or 2 * channels
    for layer in range(depth):
        pre = f"decoder.layer{layer}"
        for part in ("q", "k", "v", "out"):
            params.add_linear(f"{pre}.self_attn.{part}", channels, channels)
        register_deform_attn(params, f"{pre}.cross_attn", channels, n_heads, n_levels, n_points)
        params.add_mlp(f"{pre}.ffn", (channels, ffn_dim, channels))
    register_heads(params, channels)


def register_heads(params: ParamStore, channels: int) -> None:
    params.add_linear("head.box", channels, 4)
    params.add_linear("head.fg", channels, 1)


def apply_heads(embeddings: np.ndarray, points: np.ndarray, params: ParamStore
                ) -> tuple[np.ndarray, np.ndarray]:
    """Box logits (center relative to the prior point, in logit space) and fg logits."""
    raw = linear(params, "head.box", embeddings)
    box_logits = raw.copy()
    box_logits[:, :2] = inverse_sigmoid(points) + raw[:, :2]
    fg_logits = linear(params, "head.fg", embeddings)[:, 0]
    return box_logits, fg_logits


def decode(queries: InstanceQuerySet, pyramid: PyramidFeatures, params: ParamStore,
           depth: int = 3, n_heads: int = 4, n_points: int = 4) -> DecodedQuerySet:
    if depth < 1:
        raise InvalidArgument(f"depth must be >= 1, got {depth}")
    x = np.asarray(queries.queries, dtype=np.float64)
    points = np.asarray(queries.points, dtype=np.float64)
    for layer in range(depth):
        pre = f"decoder.layer{layer}"
        x = x + self_attention(x, params, f"{pre}.self_attn", n_heads)
        x = x + ms_deform_attn_batch(x, points, pyramid, params, f"{pre}.cross_attn", n_heads,
                                     n_points)
        x = x + mlp_forward(params, f"{pre}.ffn", x)
    box_logits, fg_logits = apply_heads(x, points, params)
    return DecodedQuerySet(x, points, box_logits, fg_logits)
