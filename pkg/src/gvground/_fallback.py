"""Pure-Python/numpy versions of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature and
the same floating point operation order, so either backend can be swapped in
by ``gvground.kernels`` without changing results beyond summation order.
"""
from __future__ import annotations

import math

import numpy as np


def sample_bilinear(values: np.ndarray, px: float, py: float) -> np.ndarray:
    """Bilinear lookup in pixel units on an ``(h, w, C)`` array, border clamped."""
    h, w = values.shape[0], values.shape[1]
    px = min(max(px, 0.0), w - 1.0)
    py = min(max(py, 0.0), h - 1.0)
    x0 = int(math.floor(px))
    y0 = int(math.floor(py))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0
    return (
        (1.0 - fx) * (1.0 - fy) * values[y0, x0]
        + fx * (1.0 - fy) * values[y0, x1]
        + (1.0 - fx) * fy * values[y1, x0]
        + fx * fy * values[y1, x1]
    )


def deform_gather(value, shapes, starts, loc, attn):
    """Weighted multi-level bilinear gather.

    value:  (S, M, d) per-head projected features of all levels, stacked row-major
    shapes: (L, 2) int level (h, w)
    starts: (L,) int offset of each level in ``value``
    loc:    (Q, M, L, K, 2) sampling locations in level pixel units, (x, y)
    attn:   (Q, M, L, K) weights
    returns (Q, M, d)
    """
    value = np.asarray(value, dtype=np.float64)
    loc = np.asarray(loc, dtype=np.float64)
    attn = np.asarray(attn, dtype=np.float64)
    n_q, n_heads, n_levels, _, _ = loc.shape
    out = np.zeros((n_q, n_heads, value.shape[2]))
    head = np.arange(n_heads)[None, :, None]
    for lvl in range(n_levels):
        h, w = int(shapes[lvl][0]), int(shapes[lvl][1])
        start = int(starts[lvl])
        px = np.clip(loc[:, :, lvl, :, 0], 0.0, w - 1.0)
        py = np.clip(loc[:, :, lvl, :, 1], 0.0, h - 1.0)
        x0 = np.floor(px).astype(np.intp)
        y0 = np.floor(py).astype(np.intp)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (px - x0)[..., None]
        fy = (py - y0)[..., None]
        v00 = value[start + y0 * w + x0, head]
        v01 = value[start + y0 * w + x1, head]
        v10 = value[start + y1 * w + x0, head]
        v11 = value[start + y1 * w + x1, head]
        sampled = (
            (1.0 - fx) * (1.0 - fy) * v00
            + fx * (1.0 - fy) * v01
            + (1.0 - fx) * fy * v10
            + fx * fy * v11
        )
        out += (attn[:, :, lvl, :, None] * sampled).sum(axis=2)
    return out


def greedy_select(scores: np.ndarray, n_points: int, w_dist: float) -> np.ndarray:
    """Greedy score-plus-spread selection over a 2-D map of (already squashed) scores.

    Returns row-major cell indices. Ties go to the lowest index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    h, w = scores.shape
    flat = scores.ravel()
    rows = np.repeat(np.arange(h, dtype=np.float64), w)
    cols = np.tile(np.arange(w, dtype=np.float64), h)
    chosen = np.empty(n_points, dtype=np.intp)
    taken = np.zeros(h * w, dtype=bool)
    first = int(np.argmax(flat))
    chosen[0] = first
    taken[first] = True
    min_dist = np.sqrt((rows - rows[first]) ** 2 + (cols - cols[first]) ** 2)
    for k in range(1, n_points):
        combined = flat + w_dist * min_dist
        combined[taken] = -np.inf
        best = int(np.argmax(combined))
        chosen[k] = best
        taken[best] = True
        dist = np.sqrt((rows - rows[best]) ** 2 + (cols - cols[best]) ** 2)
        np.minimum(min_dist, dist, out=min_dist)
    return chosen


def _solve_dual(cost, n, m):
    # shortest augmenting path Hungarian, n <= m, 1-indexed
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_of_col = [p[j] - 1 for j in range(1, m + 1)]
    return u[1:], v[1:], row_of_col


def linear_sum_assignment(cost) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost assignment; among optimal ones, the lexicographically smallest.

    Lexicographic order is over the row vector ``(col of row 0, col of row 1, ...)``
    with "unassigned" ranked after every real column.
    """
    cost = np.asarray(cost, dtype=np.float64)
    nq, ng = cost.shape
    if nq == 0 or ng == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(cost))))
    c = cost.tolist()
    size = max(nq, ng)
    # tight[q][g] over the square padded graph; Q-side rows are queries
    tight = [[False] * size for _ in range(size)]
    match_q = [-1] * size
    if nq <= ng:
        u, v, row_of_col = _solve_dual(c, nq, ng)
        for q in range(nq):
            uq = u[q]
            cq = c[q]
            tq = tight[q]
            for g in range(ng):
                tq[g] = cq[g] - uq - v[g] <= tol
        for q in range(nq, size):
            tq = tight[q]
            for g in range(ng):
                tq[g] = abs(v[g]) <= tol
        dummy = nq
        for g in range(ng):
            r = row_of_col[g]
            if r >= 0:
                match_q[r] = g
            else:
                match_q[dummy] = g
                dummy += 1
    else:
        ct = [list(col) for col in zip(*c)]
        u, v, gt_of_query = _solve_dual(ct, ng, nq)
        for q in range(nq):
            tq = tight[q]
            vq = v[q]
            for g in range(ng):
                tq[g] = ct[g][q] - u[g] - vq <= tol
            free = abs(vq) <= tol
            for g in range(ng, size):
                tq[g] = free
        dummy = ng
        for q in range(nq):
            g = gt_of_query[q]
            if g >= 0:
                match_q[q] = g
            else:
                match_q[q] = dummy
                dummy += 1
    match_g = [-1] * size
    for q in range(size):
        match_g[match_q[q]] = q
    _lex_refine(tight, match_q, match_g, nq, ng, size)
    rows = [q for q in range(nq) if match_q[q] < ng]
    cols = [match_q[q] for q in rows]
    return np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp)


def _lex_refine(tight, match_q, match_g, nq, ng, size):
    for q in range(nq):
        cur = match_q[q]
        limit = cur if cur < ng else ng
        for g in range(limit):
            if not tight[q][g]:
                continue
            owner = match_g[g]
            if owner < q:
                # owner is a frozen real row holding g
                continue
            freed = match_q[q]
            saved_q = list(match_q)
            saved_g = list(match_g)
            match_q[q] = g
            match_g[g] = q
            match_g[freed] = -1
            visited = [False] * size
            if _augment(owner, q, freed, tight, match_q, match_g, ng, nq, visited):
                break
            match_q[:] = saved_q
            match_g[:] = saved_g


def _augment(r, pivot, freed, tight, match_q, match_g, ng, nq, visited):
    real_row = r < nq
    dummy_only = real_row and r < pivot
    for h in range(len(visited)):
        if visited[h] or not tight[r][h]:
            continue
        if dummy_only and h < ng:
            continue
        visited[h] = True
        if h == freed:
            match_q[r] = h
            match_g[h] = r
            return True
        nxt = match_g[h]
        if nxt == pivot or (nxt < pivot and match_q[nxt] < ng):
            continue
        if _augment(nxt, pivot, freed, tight, match_q, match_g, ng, nq, visited):
            match_q[r] = h
            match_g[h] = r
            return True
    return False
