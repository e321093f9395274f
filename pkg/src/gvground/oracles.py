"""Slow, loop-level reference implementations used to check the fast paths.

Nothing here shares code with the kernels it checks beyond parameter lookup.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from gvground.numerics import ParamStore


def brute_force_assignment(cost) -> tuple[float, tuple[tuple[int, int], ...]]:
    """Minimum total cost over every injective matching of the smaller side,
    plus the lexicographically first optimal pairing (by query index)."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    best, best_pairs = math.inf, ()
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            total = math.fsum(cost[i, c] for i, c in enumerate(cols))
            if total < best:
                best, best_pairs = total, tuple(enumerate(cols))
    else:
        for rows in itertools.permutations(range(n), m):
            total = math.fsum(cost[r, j] for j, r in enumerate(rows))
            if total < best:
                best, best_pairs = total, tuple(sorted((r, j) for j, r in enumerate(rows)))
    return best, best_pairs


def _bilinear(grid: np.ndarray, x: float, y: float) -> np.ndarray:
    """Clamped bilinear read of ``grid`` (h, w, d) at pixel position (x, y)."""
    h, w = grid.shape[:2]
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    out = np.zeros(grid.shape[2])
    for yy, wy in ((y0, 1.0 - (y - y0)), (min(y0 + 1, h - 1), y - y0)):
        for xx, wx in ((x0, 1.0 - (x - x0)), (min(x0 + 1, w - 1), x - x0)):
            out += wy * wx * grid[yy, xx]
    return out


def _dense(params: ParamStore, name: str, x: np.ndarray) -> np.ndarray:
    weight = params[f"{name}.weight"]
    bias = params[f"{name}.bias"] if f"{name}.bias" in params else np.zeros(weight.shape[0])
    return np.array([math.fsum(weight[o, i] * x[i] for i in range(x.shape[0])) + bias[o]
                     for o in range(weight.shape[0])])


def deform_attn_oracle(z, point, levels, params: ParamStore, name: str, n_heads: int,
                       n_points: int) -> np.ndarray:
    """Direct head/level/point loop for one query.

    ``levels`` is a list of (h, w, C) arrays; ``point`` is normalized (x, y).
    """
    z = np.asarray(z, dtype=np.float64)
    channels = z.shape[0]
    d = channels // n_heads
    n_levels = len(levels)
    px = min(max(float(point[0]), 0.0), 1.0)
    py = min(max(float(point[1]), 0.0), 1.0)
    offsets = _dense(params, f"{name}.offsets", z)
    logits = _dense(params, f"{name}.weights", z)
    w_value = params[f"{name}.value_proj.weight"]
    # project every level once: value[l][y, x] = W' x_l[y, x]
    values = [np.einsum("oc,hwc->hwo", w_value, lvl) for lvl in levels]
    heads = []
    for m in range(n_heads):
        slot_logits = [logits[(m * n_levels + l) * n_points + k]
                       for l in range(n_levels) for k in range(n_points)]
        top = max(slot_logits)
        exp = [math.exp(v - top) for v in slot_logits]
        norm = math.fsum(exp)
        acc = np.zeros(d)
        for l in range(n_levels):
            h, w = levels[l].shape[:2]
            head_values = values[l][:, :, m * d:(m + 1) * d]
            for k in range(n_points):
                slot = (m * n_levels + l) * n_points + k
                x = px * (w - 1) + offsets[2 * slot]
                y = py * (h - 1) + offsets[2 * slot + 1]
                acc += exp[l * n_points + k] / norm * _bilinear(head_values, x, y)
        heads.append(acc)
    return params[f"{name}.output_proj.weight"] @ np.concatenate(heads)


def point_select_oracle(score_map, n_points: int, w_dist: float) -> tuple[int, ...]:
    """Greedy spread selection recomputing every distance from scratch each step."""
    s = np.asarray(score_map, dtype=np.float64)
    h, w = s.shape
    sig = []
    for v in s.ravel():
        e = math.exp(-abs(float(v)))
        sig.append(1.0 / (1.0 + e) if v >= 0 else e / (1.0 + e))
    chosen: list[int] = []
    for _ in range(n_points):
        best, best_cell = -math.inf, -1
        for cell in range(h * w):
            if cell in chosen:
                continue
            score = sig[cell]
            if chosen:
                r, c = divmod(cell, w)
                dist = min(math.sqrt((r - cr) ** 2 + (c - cc) ** 2)
                           for cr, cc in (divmod(q, w) for q in chosen))
                score = score + w_dist * dist
            if score > best:
                best, best_cell = score, cell
        chosen.append(best_cell)
    return tuple(chosen)


def two_cluster_map(rng: np.random.Generator, height: int = 32, width: int = 32
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Attention-like map (sums to 1) with one strong and one weaker Gaussian blob.

    Returns ``(map, boxes)`` with one normalized cxcywh box per blob, 4 sigma wide.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    while True:
        centers = rng.uniform([4.0, 4.0], [width - 5.0, height - 5.0], size=(2, 2))
        sigmas = rng.uniform(1.5, 3.0, size=2)
        if np.hypot(*(centers[0] - centers[1])) > 2.0 * (sigmas[0] + sigmas[1]):
            break
    amps = (1.0, rng.uniform(0.4, 0.8))
    field = np.zeros((height, width))
    boxes = []
    for (cx, cy), sigma, amp in zip(centers, sigmas, amps):
        field += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma ** 2))
        boxes.append((cx / (width - 1), cy / (height - 1),
                      4.0 * sigma / (width - 1), 4.0 * sigma / (height - 1)))
    field += 0.05 * rng.random((height, width))
    return field / field.sum(), np.array(boxes)
