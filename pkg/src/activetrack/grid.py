"""Occupancy grids: rasterization, A* search, and egocentric crops."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NoPath

SQRT2 = 1.4142135623730951


@dataclass(frozen=True)
class OccupancyGrid:
    resolution: float
    origin: tuple                 # (xmin, ymin) of cell (0, 0)
    occupied: np.ndarray          # uint8 (H, W); rows index y, cols index x

    @property
    def height(self):
        return self.occupied.shape[0]

    @property
    def width(self):
        return self.occupied.shape[1]


def rasterize(world, resolution):
    """Conservative rasterization: any closed-interval overlap marks a cell.

    An obstacle edge exactly on a cell boundary therefore occupies the
    touching cell as well.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    xmin, ymin, xmax, ymax = world.bounds
    w = int(np.ceil((xmax - xmin) / resolution))
    h = int(np.ceil((ymax - ymin) / resolution))
    occ = np.zeros((h, w), dtype=np.uint8)
    for ob in world.obstacles:
        c0 = int(np.floor((ob.xmin - xmin) / resolution))
        c1 = int(np.floor((ob.xmax - xmin) / resolution))
        r0 = int(np.floor((ob.ymin - ymin) / resolution))
        r1 = int(np.floor((ob.ymax - ymin) / resolution))
        c0, c1 = max(c0, 0), min(c1, w - 1)
        r0, r1 = max(r0, 0), min(r1, h - 1)
        if c0 <= c1 and r0 <= r1:
            occ[r0:r1 + 1, c0:c1 + 1] = 1
    return OccupancyGrid(resolution=resolution, origin=(xmin, ymin), occupied=occ)


def world_to_cell(grid, x, y):
    col = int(np.floor((x - grid.origin[0]) / grid.resolution))
    row = int(np.floor((y - grid.origin[1]) / grid.resolution))
    return row, col


def cell_center(grid, row, col):
    x = grid.origin[0] + (col + 0.5) * grid.resolution
    y = grid.origin[1] + (row + 0.5) * grid.resolution
    return x, y


def in_bounds(grid, row, col):
    return 0 <= row < grid.height and 0 <= col < grid.width


def is_free(grid, row, col):
    return in_bounds(grid, row, col) and not grid.occupied[row, col]


def astar(grid, start, goal):
    """Cost-minimal 8-connected path (straight 1, diagonal sqrt 2).

    Raises NoPath when either endpoint is blocked/out of bounds or the
    goal is unreachable. Returns the list of (row, col) cells including
    both endpoints.
    """
    occ = np.ascontiguousarray(grid.occupied, dtype=np.uint8)
    path = kernels.astar_grid(occ, int(start[0]), int(start[1]),
                              int(goal[0]), int(goal[1]))
    if path.shape[0] == 0:
        raise NoPath(f"no route from {tuple(start)} to {tuple(goal)}")
    return [(int(r), int(c)) for r, c in path]


def path_step_counts(path):
    """(straight, diagonal) step counts; cost is straight + diagonal * sqrt 2."""
    straight = diag = 0
    for (r0, c0), (r1, c1) in zip(path[:-1], path[1:]):
        if r0 != r1 and c0 != c1:
            diag += 1
        else:
            straight += 1
    return straight, diag


def path_cost(path):
    s, d = path_step_counts(path)
    return s + d * SQRT2


def egocentric_crop(grid, pose, size=16, radius=4.0):
    """size x size occupancy patch centered on the pose, rotated into its frame.

    Rows run along the forward axis, columns along the left axis. Each
    patch cell takes the max over a 2x2 sub-sample so walls thinner than
    the patch resolution cannot alias into phantom gaps; samples outside
    the grid read as occupied.
    """
    step = 2.0 * radius / size
    centers = -radius + (np.arange(size) + 0.5) * step
    fwd, left = np.meshgrid(centers, centers, indexing="ij")
    cos_y, sin_y = np.cos(pose.yaw), np.sin(pose.yaw)
    crop = np.zeros((size, size))
    off = step / 4.0
    for df in (-off, off):
        for dl in (-off, off):
            wx = pose.x + (fwd + df) * cos_y - (left + dl) * sin_y
            wy = pose.y + (fwd + df) * sin_y + (left + dl) * cos_y
            cols = np.floor((wx - grid.origin[0]) / grid.resolution).astype(int)
            rows = np.floor((wy - grid.origin[1]) / grid.resolution).astype(int)
            inside = ((rows >= 0) & (rows < grid.height)
                      & (cols >= 0) & (cols < grid.width))
            vals = np.ones((size, size))
            rr = np.clip(rows, 0, grid.height - 1)
            cc = np.clip(cols, 0, grid.width - 1)
            sampled = grid.occupied[rr, cc].astype(float)
            vals[inside] = sampled[inside]
            crop = np.maximum(crop, vals)
    return crop


def rle_encode(occ):
    """Row-major run-length string: "<first value>:len,len,..." """
    flat = np.asarray(occ, dtype=np.uint8).ravel()
    if flat.size == 0:
        return "0:"
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds)
    return f"{int(flat[0])}:" + ",".join(str(int(r)) for r in runs)


def rle_decode(text, height, width):
    head, _, body = text.partition(":")
    first = int(head)
    out = np.empty(height * width, dtype=np.uint8)
    pos = 0
    val = first
    if body:
        for tok in body.split(","):
            n = int(tok)
            out[pos:pos + n] = val
            pos += n
            val = 1 - val
    if pos != height * width:
        raise ValueError("run-length data does not match grid size")
    return out.reshape(height, width)
