"""Global segmentation branch and per-query instance masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gvground.decoder import PyramidFeatures
from gvground.errors import ConfigurationError
from gvground.numerics import ParamStore, linear


@dataclass(frozen=True)
class GlobalSeg:
    features: np.ndarray  # S_global, (H', W', C)
    mask_logits: np.ndarray  # (H', W')
    exist_logit: float


@dataclass(frozen=True)
class InstanceMasks:
    logits: np.ndarray  # Q_s, (N_q, H', W')

    def __len__(self) -> int:
        return self.logits.shape[0]


def upsample2(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour 2x upsampling cropped to ``height x width``."""
    up = values.repeat(2, axis=0).repeat(2, axis=1)
    return up[:height, :width]


def register_params(params: ParamStore, channels: int, n_levels: int) -> None:
    for lvl in range(n_levels):
        params.add_linear(f"seg.lateral{lvl}", channels, channels)
    params.add_linear("seg.out", channels, channels)
    params.add_linear("seg.mask_head", channels, 1)
    params.add_linear("seg.exist_head", channels, 1)
    params.add_linear("seg.query_proj", channels, channels, bias=False)


def global_features(pyramid: PyramidFeatures, params: ParamStore) -> np.ndarray:
    """Coarse-to-fine decoding with additive skips, then one 2x step to ``H' x W'``."""
    levels = pyramid.levels
    top = len(levels) - 1
    y = linear(params, f"seg.lateral{top}", levels[top].values)
    for lvl in range(top - 1, -1, -1):
        g = levels[lvl]
        y = upsample2(y, g.height, g.width) + linear(params, f"seg.lateral{lvl}", g.values)
    base = levels[0]
    y = upsample2(y, 2 * base.height, 2 * base.width)
    return linear(params, "seg.out", np.maximum(y, 0.0))


def seg_outputs(features: np.ndarray, params: ParamStore) -> tuple[np.ndarray, float]:
    mask_logits = linear(params, "seg.mask_head", features)[..., 0]
    pooled = features.reshape(-1, features.shape[-1]).mean(axis=0)
    exist_logit = float(linear(params, "seg.exist_head", pooled)[0])
    return mask_logits, exist_logit


def global_decode(pyramid: PyramidFeatures, params: ParamStore) -> GlobalSeg:
    feats = global_features(pyramid, params)
    mask_logits, exist_logit = seg_outputs(feats, params)
    return GlobalSeg(feats, mask_logits, exist_logit)


def instance_masks(embeddings, semantic: np.ndarray, params: ParamStore) -> InstanceMasks:
    """``Q_s[i][y][x] = <proj(Q_d[i]), S_global[y][x]>``."""
    emb = getattr(embeddings, "embeddings", embeddings)
    emb = np.atleast_2d(np.asarray(emb, dtype=np.float64))
    semantic = np.asarray(semantic, dtype=np.float64)
    if semantic.ndim != 3:
        raise ConfigurationError(f"semantic features must be H'xW'xC, got {semantic.shape}")
    proj = linear(params, "seg.query_proj", emb)
    if proj.shape[1] != semantic.shape[2]:
        raise ConfigurationError(
            f"projected query width {proj.shape[1]} != semantic channels {semantic.shape[2]}")
    h, w, c = semantic.shape
    logits = (proj @ semantic.reshape(-1, c).T).reshape(-1, h, w)
    return InstanceMasks(logits)
