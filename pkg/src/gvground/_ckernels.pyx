# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``gvground._fallback`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, fabs, INFINITY

cnp.import_array()


cdef inline double _clamp(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def sample_bilinear(values, double px, double py):
    cdef const double[:, :, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t h = v.shape[0], w = v.shape[1], nc = v.shape[2]
    cdef Py_ssize_t x0, y0, x1, y1, c
    cdef double fx, fy
    out = np.empty(nc, dtype=np.float64)
    cdef double[::1] o = out
    px = _clamp(px, 0.0, w - 1.0)
    py = _clamp(py, 0.0, h - 1.0)
    x0 = <Py_ssize_t>floor(px)
    y0 = <Py_ssize_t>floor(py)
    x1 = x0 + 1 if x0 + 1 < w else w - 1
    y1 = y0 + 1 if y0 + 1 < h else h - 1
    fx = px - x0
    fy = py - y0
    for c in range(nc):
        o[c] = ((1.0 - fx) * (1.0 - fy) * v[y0, x0, c]
                + fx * (1.0 - fy) * v[y0, x1, c]
                + (1.0 - fx) * fy * v[y1, x0, c]
                + fx * fy * v[y1, x1, c])
    return out


def deform_gather(value, shapes, starts, loc, attn):
    cdef const double[:, :, ::1] val = np.ascontiguousarray(value, dtype=np.float64)
    cdef const long[:, ::1] shp = np.ascontiguousarray(shapes, dtype=np.int64)
    cdef const long[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const double[:, :, :, :, ::1] lc = np.ascontiguousarray(loc, dtype=np.float64)
    cdef const double[:, :, :, ::1] at = np.ascontiguousarray(attn, dtype=np.float64)
    cdef Py_ssize_t nq = lc.shape[0], nm = lc.shape[1], nl = lc.shape[2], nk = lc.shape[3]
    cdef Py_ssize_t nd = val.shape[2]
    out = np.zeros((nq, nm, nd), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t q, m, l, k, c, h, w, s, x0, y0, x1, y1
    cdef double px, py, fx, fy, a, w00, w01, w10, w11
    with nogil:
        for q in range(nq):
            for m in range(nm):
                for l in range(nl):
                    h = shp[l, 0]
                    w = shp[l, 1]
                    s = st[l]
                    for k in range(nk):
                        px = _clamp(lc[q, m, l, k, 0], 0.0, w - 1.0)
                        py = _clamp(lc[q, m, l, k, 1], 0.0, h - 1.0)
                        x0 = <Py_ssize_t>floor(px)
                        y0 = <Py_ssize_t>floor(py)
                        x1 = x0 + 1 if x0 + 1 < w else w - 1
                        y1 = y0 + 1 if y0 + 1 < h else h - 1
                        fx = px - x0
                        fy = py - y0
                        w00 = (1.0 - fx) * (1.0 - fy)
                        w01 = fx * (1.0 - fy)
                        w10 = (1.0 - fx) * fy
                        w11 = fx * fy
                        a = at[q, m, l, k]
                        for c in range(nd):
                            o[q, m, c] += a * (w00 * val[s + y0 * w + x0, m, c]
                                               + w01 * val[s + y0 * w + x1, m, c]
                                               + w10 * val[s + y1 * w + x0, m, c]
                                               + w11 * val[s + y1 * w + x1, m, c])
    return out


def greedy_select(scores, int n_points, double w_dist):
    cdef const double[:, ::1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t h = sc.shape[0], w = sc.shape[1], n = h * w
    chosen = np.empty(n_points, dtype=np.intp)
    cdef Py_ssize_t[::1] ch = chosen
    cdef double[::1] mind = np.empty(n, dtype=np.float64)
    cdef char[::1] taken = np.zeros(n, dtype=np.int8)
    cdef Py_ssize_t i, k, best, r, c
    cdef double bestv, comb, dr, dc, d
    with nogil:
        best = 0
        bestv = sc[0, 0]
        for i in range(1, n):
            if sc[i // w, i % w] > bestv:
                bestv = sc[i // w, i % w]
                best = i
        ch[0] = best
        taken[best] = 1
        for i in range(n):
            dr = <double>(i // w) - <double>(best // w)
            dc = <double>(i % w) - <double>(best % w)
            mind[i] = sqrt(dr * dr + dc * dc)
        for k in range(1, n_points):
            best = -1
            bestv = -INFINITY
            for i in range(n):
                if taken[i]:
                    continue
                comb = sc[i // w, i % w] + w_dist * mind[i]
                if best < 0 or comb > bestv:
                    bestv = comb
                    best = i
            ch[k] = best
            taken[best] = 1
            for i in range(n):
                dr = <double>(i // w) - <double>(best // w)
                dc = <double>(i % w) - <double>(best % w)
                d = sqrt(dr * dr + dc * dc)
                if d < mind[i]:
                    mind[i] = d
    return chosen


cdef void _solve_dual(const double[:, ::1] a, Py_ssize_t n, Py_ssize_t m, double[::1] u,
                      double[::1] v, Py_ssize_t[::1] p, Py_ssize_t[::1] way,
                      double[::1] minv, char[::1] used) noexcept nogil:
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    for j in range(m + 1):
        v[j] = 0.0
        p[j] = 0
        way[j] = 0
    for i in range(n + 1):
        u[i] = 0.0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
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


cdef bint _augment(Py_ssize_t r, Py_ssize_t pivot, Py_ssize_t freed, char[:, ::1] tight,
                   Py_ssize_t[::1] match_q, Py_ssize_t[::1] match_g, Py_ssize_t ng,
                   Py_ssize_t nq, char[::1] visited) noexcept nogil:
    cdef Py_ssize_t size = visited.shape[0], h, nxt
    cdef bint dummy_only = r < nq and r < pivot
    for h in range(size):
        if visited[h] or not tight[r, h]:
            continue
        if dummy_only and h < ng:
            continue
        visited[h] = 1
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


def linear_sum_assignment(cost):
    cdef const double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t nq = c.shape[0], ng = c.shape[1]
    if nq == 0 or ng == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    cdef double tol = 1e-9 * max(1.0, float(np.max(np.abs(np.asarray(c)))))
    cdef Py_ssize_t size = max(nq, ng)
    cdef Py_ssize_t n = min(nq, ng), m = size
    cdef const double[:, ::1] a
    if nq <= ng:
        a = c
    else:
        a = np.ascontiguousarray(np.asarray(c).T)
    cdef double[::1] u = np.empty(n + 1)
    cdef double[::1] v = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.empty(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.empty(m + 1, dtype=np.intp)
    cdef double[::1] minv = np.empty(m + 1)
    cdef char[::1] used = np.empty(m + 1, dtype=np.int8)
    cdef char[:, ::1] tight = np.zeros((size, size), dtype=np.int8)
    cdef Py_ssize_t[::1] match_q = np.full(size, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] match_g = np.full(size, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] saved_q = np.empty(size, dtype=np.intp)
    cdef Py_ssize_t[::1] saved_g = np.empty(size, dtype=np.intp)
    cdef char[::1] visited = np.empty(size, dtype=np.int8)
    cdef Py_ssize_t q, g, r, dummy, cur, limit, owner, freed, i
    cdef bint free
    with nogil:
        _solve_dual(a, n, m, u, v, p, way, minv, used)
        if nq <= ng:
            for q in range(nq):
                for g in range(ng):
                    tight[q, g] = c[q, g] - u[q + 1] - v[g + 1] <= tol
            for q in range(nq, size):
                for g in range(ng):
                    tight[q, g] = fabs(v[g + 1]) <= tol
            dummy = nq
            for g in range(ng):
                r = p[g + 1] - 1
                if r >= 0:
                    match_q[r] = g
                else:
                    match_q[dummy] = g
                    dummy += 1
        else:
            for q in range(nq):
                for g in range(ng):
                    tight[q, g] = c[q, g] - u[g + 1] - v[q + 1] <= tol
                free = fabs(v[q + 1]) <= tol
                for g in range(ng, size):
                    tight[q, g] = free
            dummy = ng
            for q in range(nq):
                g = p[q + 1] - 1
                if g >= 0:
                    match_q[q] = g
                else:
                    match_q[q] = dummy
                    dummy += 1
        for q in range(size):
            match_g[match_q[q]] = q
        for q in range(nq):
            cur = match_q[q]
            limit = cur if cur < ng else ng
            for g in range(limit):
                if not tight[q, g]:
                    continue
                owner = match_g[g]
                if owner < q:
                    continue
                freed = match_q[q]
                for i in range(size):
                    saved_q[i] = match_q[i]
                    saved_g[i] = match_g[i]
                    visited[i] = 0
                match_q[q] = g
                match_g[g] = q
                match_g[freed] = -1
                if _augment(owner, q, freed, tight, match_q, match_g, ng, nq, visited):
                    break
                for i in range(size):
                    match_q[i] = saved_q[i]
                    match_g[i] = saved_g[i]
    rows = [q for q in range(nq) if match_q[q] < ng]
    cols = [match_q[q] for q in rows]
    return np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp)
