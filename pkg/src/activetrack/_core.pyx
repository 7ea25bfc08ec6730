# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: ray/box occlusion tests and grid A*.

Must stay operation-for-operation identical to ``_pure.py`` so both
backends produce bit-identical results.
"""

import numpy as np


cdef double SQRT2 = 1.4142135623730951
cdef double _EPS = 1e-12


cdef inline bint _seg_blocked(double x0, double y0, double z0,
                              double x1, double y1, double z1,
                              double bx0, double by0, double bx1, double by1,
                              double bh) noexcept nogil:
    cdef double t0 = 0.0
    cdef double t1 = 1.0
    cdef double dx = x1 - x0
    cdef double dy = y1 - y0
    cdef double ta, tb, tmp, za, zb
    if dx > _EPS or dx < -_EPS:
        ta = (bx0 - x0) / dx
        tb = (bx1 - x0) / dx
        if ta > tb:
            tmp = ta
            ta = tb
            tb = tmp
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif x0 < bx0 or x0 > bx1:
        return False
    if dy > _EPS or dy < -_EPS:
        ta = (by0 - y0) / dy
        tb = (by1 - y0) / dy
        if ta > tb:
            tmp = ta
            ta = tb
            tb = tmp
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif y0 < by0 or y0 > by1:
        return False
    if t0 > t1:
        return False
    za = z0 + t0 * (z1 - z0)
    zb = z0 + t1 * (z1 - z0)
    if zb < za:
        za = zb
    return za <= bh


def segment_clear(double x0, double y0, double z0,
                  double x1, double y1, double z1,
                  double[:, ::1] boxes):
    """True when no box (n,5: xmin,ymin,xmax,ymax,height) blocks the segment."""
    cdef Py_ssize_t j
    for j in range(boxes.shape[0]):
        if _seg_blocked(x0, y0, z0, x1, y1, z1,
                        boxes[j, 0], boxes[j, 1], boxes[j, 2],
                        boxes[j, 3], boxes[j, 4]):
            return False
    return True


def clear_fraction(double[::1] cam, double[:, ::1] pts, double[:, ::1] boxes):
    """Fraction of rays cam -> pts[i] not blocked by any box."""
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t m = boxes.shape[0]
    cdef Py_ssize_t i, j
    cdef int visible = 0
    cdef bint blocked
    for i in range(n):
        blocked = False
        for j in range(m):
            if _seg_blocked(cam[0], cam[1], cam[2],
                            pts[i, 0], pts[i, 1], pts[i, 2],
                            boxes[j, 0], boxes[j, 1], boxes[j, 2],
                            boxes[j, 3], boxes[j, 4]):
                blocked = True
                break
        if not blocked:
            visible += 1
    return visible / <double>n


cdef inline double _octile(long r, long c, long gr, long gc) noexcept nogil:
    cdef long dr = r - gr if r > gr else gr - r
    cdef long dc = c - gc if c > gc else gc - c
    cdef long tmp
    if dr < dc:
        tmp = dr
        dr = dc
        dc = tmp
    return <double>(dr - dc) + <double>dc * SQRT2


cdef inline bint _heap_less(double f1, double h1, long i1,
                            double f2, double h2, long i2) noexcept nogil:
    if f1 != f2:
        return f1 < f2
    if h1 != h2:
        return h1 < h2
    return i1 < i2


def astar_grid(const unsigned char[:, ::1] occ, long sr, long sc, long gr, long gc):
    """8-connected A* with octile heuristic; no corner cutting.

    Returns an int32 (n, 2) array of (row, col) cells from start to goal,
    empty when unreachable or an endpoint is blocked.
    """
    cdef long H = occ.shape[0]
    cdef long W = occ.shape[1]
    if not (0 <= sr < H and 0 <= sc < W and 0 <= gr < H and 0 <= gc < W):
        return np.empty((0, 2), dtype=np.int32)
    if occ[sr, sc] or occ[gr, gc]:
        return np.empty((0, 2), dtype=np.int32)

    cdef long N = H * W
    cdef long start = sr * W + sc
    cdef long goal = gr * W + gc

    g_arr = np.full(N, np.inf)
    parent_arr = np.full(N, -1, dtype=np.int64)
    closed_arr = np.zeros(N, dtype=np.uint8)
    cdef long cap = 8 * N + 8
    hf_arr = np.empty(cap)
    hh_arr = np.empty(cap)
    hi_arr = np.empty(cap, dtype=np.int64)

    cdef double[::1] g = g_arr
    cdef long[::1] parent = parent_arr
    cdef unsigned char[::1] closed = closed_arr
    cdef double[::1] hf = hf_arr
    cdef double[::1] hh = hh_arr
    cdef long[::1] hi = hi_arr

    cdef long size = 0
    cdef long i, child, par, cur, r, c, nr, nc, nb, dr, dc, mi
    cdef double f, h, gc_cur, ng, hn, step
    cdef double cf, ch
    cdef long ci
    cdef bint found = False

    cdef long[8] mr
    cdef long[8] mc
    mr[0] = -1; mc[0] = -1
    mr[1] = -1; mc[1] = 0
    mr[2] = -1; mc[2] = 1
    mr[3] = 0;  mc[3] = -1
    mr[4] = 0;  mc[4] = 1
    mr[5] = 1;  mc[5] = -1
    mr[6] = 1;  mc[6] = 0
    mr[7] = 1;  mc[7] = 1

    g[start] = 0.0
    h = _octile(sr, sc, gr, gc)
    # push (h, h, start)
    hf[0] = h
    hh[0] = h
    hi[0] = start
    size = 1

    while size > 0:
        # pop min
        cf = hf[0]
        ch = hh[0]
        ci = hi[0]
        size -= 1
        if size > 0:
            f = hf[size]
            h = hh[size]
            cur = hi[size]
            par = 0
            while True:
                child = 2 * par + 1
                if child >= size:
                    break
                if child + 1 < size and _heap_less(hf[child + 1], hh[child + 1], hi[child + 1],
                                                   hf[child], hh[child], hi[child]):
                    child += 1
                if _heap_less(hf[child], hh[child], hi[child], f, h, cur):
                    hf[par] = hf[child]
                    hh[par] = hh[child]
                    hi[par] = hi[child]
                    par = child
                else:
                    break
            hf[par] = f
            hh[par] = h
            hi[par] = cur
        cur = ci
        if closed[cur]:
            continue
        closed[cur] = 1
        if cur == goal:
            found = True
            break
        r = cur // W
        c = cur - r * W
        gc_cur = g[cur]
        for mi in range(8):
            dr = mr[mi]
            dc = mc[mi]
            nr = r + dr
            nc = c + dc
            if nr < 0 or nr >= H or nc < 0 or nc >= W:
                continue
            if occ[nr, nc]:
                continue
            if dr != 0 and dc != 0:
                if occ[r + dr, c] or occ[r, c + dc]:
                    continue
                step = SQRT2
            else:
                step = 1.0
            ng = gc_cur + step
            nb = nr * W + nc
            if ng < g[nb]:
                g[nb] = ng
                parent[nb] = cur
                hn = _octile(nr, nc, gr, gc)
                # push (ng + hn, hn, nb)
                i = size
                size += 1
                f = ng + hn
                while i > 0:
                    par = (i - 1) // 2
                    if _heap_less(f, hn, nb, hf[par], hh[par], hi[par]):
                        hf[i] = hf[par]
                        hh[i] = hh[par]
                        hi[i] = hi[par]
                        i = par
                    else:
                        break
                hf[i] = f
                hh[i] = hn
                hi[i] = nb

    if not found:
        return np.empty((0, 2), dtype=np.int32)
    cells = []
    cur = goal
    while cur != -1:
        cells.append(cur)
        cur = parent[cur]
    cells.reverse()
    path = np.empty((len(cells), 2), dtype=np.int32)
    for i in range(len(cells)):
        path[i, 0] = cells[i] // W
        path[i, 1] = cells[i] - (cells[i] // W) * W
    return path
