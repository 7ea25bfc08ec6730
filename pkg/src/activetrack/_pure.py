"""Pure-Python fallback for the hot kernels.

Mirrors ``_core.pyx`` operation-for-operation so both backends produce
bit-identical results; keep the two files in sync when editing either.
"""

import heapq

import numpy as np

SQRT2 = 1.4142135623730951
_EPS = 1e-12


def _seg_blocked(x0, y0, z0, x1, y1, z1, bx0, by0, bx1, by1, bh):
    """True when the segment crosses the box footprint below its height.

    The segment carries a linearly interpolated height from z0 to z1; the
    obstacle occupies z in [0, bh].
    """
    t0 = 0.0
    t1 = 1.0
    dx = x1 - x0
    dy = y1 - y0
    if dx > _EPS or dx < -_EPS:
        ta = (bx0 - x0) / dx
        tb = (bx1 - x0) / dx
        if ta > tb:
            ta, tb = tb, ta
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
            ta, tb = tb, ta
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


def segment_clear(x0, y0, z0, x1, y1, z1, boxes):
    """True when no box in ``boxes`` (n,5: xmin,ymin,xmax,ymax,height) blocks."""
    for j in range(boxes.shape[0]):
        if _seg_blocked(
            x0, y0, z0, x1, y1, z1,
            boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3], boxes[j, 4],
        ):
            return False
    return True


def clear_fraction(cam, pts, boxes):
    """Fraction of rays cam -> pts[i] not blocked by any box."""
    n = pts.shape[0]
    m = boxes.shape[0]
    visible = 0
    for i in range(n):
        blocked = False
        for j in range(m):
            if _seg_blocked(
                cam[0], cam[1], cam[2],
                pts[i, 0], pts[i, 1], pts[i, 2],
                boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3], boxes[j, 4],
            ):
                blocked = True
                break
        if not blocked:
            visible += 1
    return visible / float(n)


def _octile(r, c, gr, gc):
    dr = r - gr if r > gr else gr - r
    dc = c - gc if c > gc else gc - c
    if dr < dc:
        dr, dc = dc, dr
    return (dr - dc) + dc * SQRT2


def astar_grid(occ, sr, sc, gr, gc):
    """8-connected A* with octile heuristic; no corner cutting.

    ``occ`` is uint8 (H, W), nonzero = blocked. Returns an int32 (n, 2)
    array of (row, col) cells from start to goal, empty when unreachable
    or an endpoint is blocked.
    """
    H, W = occ.shape[0], occ.shape[1]
    empty = np.empty((0, 2), dtype=np.int32)
    if not (0 <= sr < H and 0 <= sc < W and 0 <= gr < H and 0 <= gc < W):
        return empty
    if occ[sr, sc] or occ[gr, gc]:
        return empty
    start = sr * W + sc
    goal = gr * W + gc
    g = np.full(H * W, np.inf)
    parent = np.full(H * W, -1, dtype=np.int64)
    closed = np.zeros(H * W, dtype=np.uint8)
    g[start] = 0.0
    h0 = _octile(sr, sc, gr, gc)
    heap = [(h0, h0, start)]
    moves = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    found = False
    while heap:
        _, _, cur = heapq.heappop(heap)
        if closed[cur]:
            continue
        closed[cur] = 1
        if cur == goal:
            found = True
            break
        r = cur // W
        c = cur - r * W
        gc_cur = g[cur]
        for dr, dc in moves:
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
                heapq.heappush(heap, (ng + hn, hn, nb))
    if not found:
        return empty
    cells = []
    cur = goal
    while cur != -1:
        cells.append(cur)
        cur = parent[cur]
    cells.reverse()
    path = np.empty((len(cells), 2), dtype=np.int32)
    for i, idx in enumerate(cells):
        path[i, 0] = idx // W
        path[i, 1] = idx - (idx // W) * W
    return path
