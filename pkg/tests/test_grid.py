import heapq

import numpy as np
import pytest

from activetrack.errors import NoPath
from activetrack.grid import (OccupancyGrid, astar, cell_center, egocentric_crop,
                              path_cost, path_step_counts, rasterize, rle_decode,
                              rle_encode, world_to_cell)
from activetrack.kernels import available_backends, get_backend
from activetrack.world import Obstacle, Pose, World

SQRT2 = 1.4142135623730951


def make_world(obstacles, bounds=(0.0, 0.0, 8.0, 8.0)):
    return World(bounds=bounds, obstacles=obstacles, entities=[],
                 tracker=Pose(0.5, 0.5, 0.0))


def dijkstra_counts(occ, start, goal):
    """Uniform-cost oracle mirroring the A* neighbor rule, exact step counts."""
    H, W = occ.shape
    if occ[start] or occ[goal]:
        return None
    dist = {start: (0, 0)}          # (straight, diagonal)
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == goal:
            return dist[cell]
        r, c = cell
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < H and 0 <= nc < W) or occ[nr, nc]:
                    continue
                if dr != 0 and dc != 0 and (occ[r + dr, c] or occ[r, c + dc]):
                    continue
                s, di = dist[cell]
                if dr != 0 and dc != 0:
                    cand = (s, di + 1)
                else:
                    cand = (s + 1, di)
                cost = cand[0] + cand[1] * SQRT2
                prev = dist.get((nr, nc))
                if prev is None or cost < prev[0] + prev[1] * SQRT2 - 1e-12:
                    dist[(nr, nc)] = cand
                    heapq.heappush(heap, (cost, (nr, nc)))
    return None


# --- rasterization ------------------------------------------------------------


def test_empty_world_all_free():
    g = rasterize(make_world([]), 0.5)
    assert g.occupied.sum() == 0
    assert g.width == 16 and g.height == 16


def test_conservative_block_interior():
    # 1x1 m obstacle strictly inside two cells per axis
    g = rasterize(make_world([Obstacle(1.1, 1.1, 2.1, 2.1, 2.0)]), 0.5)
    rows, cols = np.nonzero(g.occupied)
    assert rows.min() == 2 and rows.max() == 4
    assert cols.min() == 2 and cols.max() == 4


def test_boundary_touching_block():
    g = rasterize(make_world([Obstacle(1.0, 1.0, 2.0, 2.0, 2.0)]), 0.5)
    rows, cols = np.nonzero(g.occupied)
    # closed-interval overlap marks the touching row/col too
    assert rows.min() == 2 and rows.max() == 4
    assert cols.min() == 2 and cols.max() == 4


def test_cell_aligned_interior_block_is_2x2():
    g = rasterize(make_world([Obstacle(1.01, 1.01, 1.99, 1.99, 2.0)]), 0.5)
    assert g.occupied.sum() == 4
    # off-alignment genuinely overlaps three cells per axis
    g2 = rasterize(make_world([Obstacle(1.25, 1.25, 2.25, 2.25, 2.0)]), 0.5)
    assert g2.occupied.sum() == 9


def test_obstacle_outside_bounds_clipped():
    g = rasterize(make_world([Obstacle(-5.0, -5.0, -1.0, -1.0, 2.0)]), 0.5)
    assert g.occupied.sum() == 0
    g2 = rasterize(make_world([Obstacle(7.0, 7.0, 12.0, 12.0, 2.0)]), 0.5)
    assert g2.occupied[15, 15] == 1


def test_world_cell_roundtrip():
    g = rasterize(make_world([]), 0.25)
    r, c = world_to_cell(g, 3.1, 5.9)
    x, y = cell_center(g, r, c)
    assert abs(x - 3.1) <= 0.125 + 1e-12
    assert abs(y - 5.9) <= 0.125 + 1e-12


# --- A* -----------------------------------------------------------------------


def test_astar_empty_diagonal():
    g = OccupancyGrid(0.5, (0, 0), np.zeros((5, 5), dtype=np.uint8))
    path = astar(g, (0, 0), (4, 4))
    s, d = path_step_counts(path)
    assert (s, d) == (0, 4)
    assert path_cost(path) == pytest.approx(4 * SQRT2)


def test_astar_wall_with_gap_matches_dijkstra():
    occ = np.zeros((9, 9), dtype=np.uint8)
    occ[4, :] = 1
    occ[4, 6] = 0
    g = OccupancyGrid(0.5, (0, 0), occ)
    path = astar(g, (0, 0), (8, 0))
    assert path_step_counts(path) == dijkstra_counts(occ, (0, 0), (8, 0))
    assert all(not occ[r, c] for r, c in path)


def test_astar_goal_inside_obstacle():
    occ = np.zeros((5, 5), dtype=np.uint8)
    occ[2, 2] = 1
    g = OccupancyGrid(0.5, (0, 0), occ)
    with pytest.raises(NoPath):
        astar(g, (0, 0), (2, 2))


def test_astar_unreachable():
    occ = np.zeros((5, 5), dtype=np.uint8)
    occ[:, 2] = 1
    g = OccupancyGrid(0.5, (0, 0), occ)
    with pytest.raises(NoPath):
        astar(g, (0, 0), (0, 4))


def test_astar_no_corner_cutting():
    occ = np.zeros((3, 3), dtype=np.uint8)
    occ[0, 1] = occ[1, 0] = 1
    g = OccupancyGrid(0.5, (0, 0), occ)
    with pytest.raises(NoPath):
        astar(g, (0, 0), (2, 2))


def test_astar_matches_dijkstra_on_random_grids():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(200):
        H = int(rng.integers(4, 33))
        W = int(rng.integers(4, 33))
        occ = (rng.random((H, W)) < 0.3).astype(np.uint8)
        start = (int(rng.integers(0, H)), int(rng.integers(0, W)))
        goal = (int(rng.integers(0, H)), int(rng.integers(0, W)))
        oracle = dijkstra_counts(occ, start, goal)
        g = OccupancyGrid(0.5, (0, 0), occ)
        if oracle is None:
            if not occ[start] and not occ[goal]:
                with pytest.raises(NoPath):
                    astar(g, start, goal)
            continue
        path = astar(g, start, goal)
        assert path_step_counts(path) == oracle
        checked += 1
    assert checked > 50


@pytest.mark.parametrize("backend", available_backends())
def test_astar_backends_identical(backend):
    impl = get_backend(backend)
    rng = np.random.default_rng(3)
    occ = (rng.random((20, 20)) < 0.25).astype(np.uint8)
    occ[0, 0] = occ[19, 19] = 0
    ref = get_backend("pure").astar_grid(occ, 0, 0, 19, 19)
    out = impl.astar_grid(occ, 0, 0, 19, 19)
    assert np.array_equal(ref, out)


# --- crops and RLE --------------------------------------------------------------


def test_egocentric_crop_axes():
    occ = np.zeros((32, 32), dtype=np.uint8)
    occ[20:24, 16:20] = 1  # block ahead of the pose below
    g = OccupancyGrid(0.25, (0, 0), occ)
    pose = Pose(x=4.25, y=4.25, yaw=np.pi / 2)  # facing +y
    crop = egocentric_crop(g, pose, size=16, radius=4.0)
    # forward rows beyond the pose should include the block
    assert crop[9:11, 7:9].sum() == 4.0
    assert crop[:8, 1:15].sum() == 0  # nothing behind inside the grid


def test_egocentric_crop_outside_is_occupied():
    g = OccupancyGrid(0.25, (0, 0), np.zeros((8, 8), dtype=np.uint8))
    crop = egocentric_crop(g, Pose(0.0, 0.0, 0.0), size=8, radius=4.0)
    assert crop.sum() > 0  # out-of-grid samples read as blocked


def test_rle_roundtrip(rng):
    for _ in range(20):
        occ = (rng.random((13, 17)) < 0.4).astype(np.uint8)
        text = rle_encode(occ)
        back = rle_decode(text, 13, 17)
        assert np.array_equal(occ, back)
