"""Distance field values, bands and steering directions."""

import math

import numpy as np
import pytest
from oracle_utils import SQRT2, random_walkable_grid, relaxation_distance

from pedroute.distfield import (
    band,
    compute_distance_field,
    directions_at,
    dump_csv,
    interp_dist,
)
from pedroute.errors import RoutingError
from pedroute.scenario import OccupancyGrid


def make_grid(walkable, cell_size=1.0, x0=0.0, y0=0.0):
    return OccupancyGrid(
        cell_size=cell_size, x0=x0, y0=y0, walkable=np.asarray(walkable, dtype=bool)
    )


def field_from_mask(walkable, sources, cell_size=1.0):
    grid = make_grid(walkable, cell_size=cell_size)
    return compute_distance_field(grid, np.asarray(sources, dtype=np.int64))


# -- distance values ------------------------------------------------------


def test_corridor_distances_count_down():
    f = field_from_mask(np.ones((1, 5)), [4])
    assert f.dist[0].tolist() == [4.0, 3.0, 2.0, 1.0, 0.0]


def test_center_obstacle_diagonal_detour():
    walk = np.ones((3, 3), dtype=bool)
    walk[1, 1] = False
    f = field_from_mask(walk, [8])  # target corner (2, 2)
    assert f.dist[0, 0] == pytest.approx(2 + SQRT2, abs=1e-12)
    oracle = relaxation_distance(walk, [8], 1.0)
    assert np.array_equal(f.dist, oracle)


def test_sealed_pocket_unreached_is_inf():
    walk = np.ones((5, 7), dtype=bool)
    walk[:, 3] = False  # full wall splits the strip
    f = field_from_mask(walk, [0])
    assert np.isinf(f.dist[2, 5])
    assert np.isfinite(f.dist[2, 1])


def test_matches_relaxation_oracle_on_random_grids():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        walk, sources = random_walkable_grid(rng, max_side=30)
        f = field_from_mask(walk, sources, cell_size=0.37)
        oracle = relaxation_distance(walk, sources, 0.37)
        assert np.array_equal(f.dist, oracle)


def test_adjacent_cells_satisfy_edge_lipschitz():
    rng = np.random.default_rng(5)
    walk, sources = random_walkable_grid(rng, max_side=40)
    h = 0.25
    f = field_from_mask(walk, sources, cell_size=h)
    d = f.dist
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        w = h * SQRT2 if dy and dx else h
        a = d[max(dy, 0) : d.shape[0] + min(dy, 0), max(dx, 0) : d.shape[1] + min(dx, 0)]
        b = d[max(-dy, 0) : d.shape[0] + min(-dy, 0), max(-dx, 0) : d.shape[1] + min(-dx, 0)]
        both = np.isfinite(a) & np.isfinite(b)
        assert (np.abs(a[both] - b[both]) <= w + 1e-12).all()


def test_dist_bounded_by_euclidean_and_chamfer_stretch():
    # Open grid: geodesic >= straight line, and <= ~8.2% over it.
    walk = np.ones((60, 60), dtype=bool)
    grid = make_grid(walk, cell_size=0.1)
    src_cell = 30 * 60 + 30
    f = compute_distance_field(grid, np.array([src_cell]))
    centers = grid.cell_centers_all()
    src = grid.flat_centers(np.array([src_cell]))[0]
    euclid = np.linalg.norm(centers - src, axis=1)
    d = f.dist_flat
    assert (d >= euclid - 0.15).all()
    assert (d <= 1.0824 * euclid + 0.15).all()


def test_predecessor_chains_descend_to_target():
    rng = np.random.default_rng(11)
    walk, sources = random_walkable_grid(rng, max_side=35)
    f = field_from_mask(walk, sources)
    nx = walk.shape[1]
    finite = np.flatnonzero(f.finite_mask())
    for c in rng.choice(finite, size=min(50, finite.size), replace=False):
        c = int(c)
        seen = 0
        while f.pred_flat[c] != -1:
            p = int(f.pred_flat[c])
            assert f.dist_flat[p] < f.dist_flat[c]
            c = p
            seen += 1
            assert seen < walk.size
        assert f.target_member[c]


def test_scope_restricts_field():
    walk = np.ones((4, 8), dtype=bool)
    grid = make_grid(walk)
    scope = np.zeros(32, dtype=bool)
    scope[:16] = True  # lower two rows only
    f = compute_distance_field(grid, np.array([0]), scope=scope)
    assert np.isfinite(f.dist[0, 7])
    assert np.isinf(f.dist[3, 0])


def test_empty_target_in_scope_raises():
    walk = np.ones((4, 4), dtype=bool)
    grid = make_grid(walk)
    scope = np.zeros(16, dtype=bool)
    scope[:4] = True
    with pytest.raises(RoutingError):
        compute_distance_field(grid, np.array([15]), scope=scope)


# -- bands ---------------------------------------------------------------


def test_band_thresholds_on_corridor():
    f = field_from_mask(np.ones((1, 10)), [0], cell_size=1.0)
    b0 = band(f, 0, 3.0)
    b1 = band(f, 1, 3.0)
    assert np.flatnonzero(b0).tolist() == [0, 1, 2]
    assert np.flatnonzero(b1).tolist() == [3, 4, 5]


def test_bands_partition_reachable_cells():
    rng = np.random.default_rng(8)
    walk, sources = random_walkable_grid(rng, max_side=30)
    f = field_from_mask(walk, sources)
    w = 2.5
    covered = np.zeros(walk.size, dtype=bool)
    kmax = int(np.nanmax(np.where(np.isfinite(f.dist_flat), f.dist_flat, 0))) + 2
    for k in range(0, int(kmax / w) + 2):
        b = band(f, k, w)
        assert not (covered & b).any()
        covered |= b
    assert np.array_equal(covered, f.finite_mask())


def test_band_beyond_max_distance_empty():
    f = field_from_mask(np.ones((1, 5)), [0])
    assert not band(f, 10, 3.0).any()


# -- steering directions ---------------------------------------------------


def test_direction_in_open_corridor_points_at_target():
    walk = np.ones((10, 40), dtype=bool)
    grid = make_grid(walk, cell_size=0.1)
    target = np.flatnonzero(
        grid.cell_centers_all()[:, 0] > 3.8
    )  # right edge strip
    f = compute_distance_field(grid, target)
    pts = np.array([[1.0, 0.5], [2.0, 0.55], [0.3, 0.42]])
    dirs, arrived = directions_at(f, pts)
    assert not arrived.any()
    assert np.allclose(dirs[:, 0], 1.0, atol=5e-2)
    assert np.allclose(dirs[:, 1], 0.0, atol=5e-2)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-9)


def test_points_inside_target_are_arrived():
    walk = np.ones((5, 5), dtype=bool)
    grid = make_grid(walk, cell_size=1.0)
    f = compute_distance_field(grid, np.array([12]))
    dirs, arrived = directions_at(f, np.array([[2.5, 2.5], [0.5, 0.5]]))
    assert arrived.tolist() == [True, False]
    assert np.allclose(dirs[0], 0.0)


def test_descent_property_at_random_points():
    rng = np.random.default_rng(17)
    walk = np.ones((80, 80), dtype=bool)
    walk[20:60, 30:50] = False
    grid = make_grid(walk, cell_size=0.1)
    target = np.array([79 * 80 + 79])
    f = compute_distance_field(grid, target)
    pts = []
    while len(pts) < 300:
        p = rng.uniform(0.05, 7.95, size=2)
        c = grid.world_to_cell(p[None, :])[0]
        flat = int(c[1] * 80 + c[0])
        if walk[c[1], c[0]] and np.isfinite(f.dist_flat[flat]) and not f.target_member[flat]:
            pts.append(p)
    pts = np.array(pts)
    dirs, arrived = directions_at(f, pts)
    assert not arrived.any()
    before = interp_dist(f, pts)
    after = interp_dist(f, pts + dirs * (0.05))
    assert (after < before).all()


def test_corner_direction_close_to_fine_grid_oracle():
    # Path must wrap an obstacle corner; a 4x finer grid provides the
    # reference direction.
    def build(cell):
        nxc = int(round(10.0 / cell))
        walk = np.ones((nxc, nxc), dtype=bool)
        grid = make_grid(walk, cell_size=cell)
        centers = grid.cell_centers_all()
        inside = (
            (centers[:, 0] > 4.0)
            & (centers[:, 0] < 6.0)
            & (centers[:, 1] > 4.0)
            & (centers[:, 1] < 6.0)
        )
        grid.walkable = (~inside).reshape(nxc, nxc)
        target = np.flatnonzero((centers[:, 0] > 9.0) & grid.walkable.reshape(-1))
        return compute_distance_field(grid, target)

    coarse = build(0.1)
    fine = build(0.025)
    probe = np.array([[3.4, 3.1], [3.0, 5.0], [3.6, 6.9], [2.0, 4.2]])
    dc, _ = directions_at(coarse, probe)
    df, _ = directions_at(fine, probe)
    cos = np.clip((dc * df).sum(axis=1), -1, 1)
    angles = np.degrees(np.arccos(cos))
    assert angles.max() <= 25.0


def test_direction_near_wall_still_unit_and_descending():
    walk = np.ones((20, 20), dtype=bool)
    walk[8:12, 8:12] = False
    grid = make_grid(walk, cell_size=0.5)
    f = compute_distance_field(grid, np.array([0]))
    # point hugging the obstacle face
    pts = np.array([[4.05, 5.1], [6.05, 4.3], [5.0, 6.1]])
    dirs, arrived = directions_at(f, pts)
    assert not arrived.any()
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-9)
    before = interp_dist(f, pts)
    after = interp_dist(f, pts + dirs * 0.25)
    assert (after < before).all()


def test_dump_csv_shape_and_inf(tmp_path):
    walk = np.ones((3, 4), dtype=bool)
    walk[0, 3] = False
    walk[1, 3] = False
    walk[2, 3] = False
    f = field_from_mask(walk, [0])
    out = tmp_path / "field.csv"
    dump_csv(f, out)
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 3
    first = lines[0].split(",")
    assert len(first) == 4
    assert first[0] == "0"
    assert first[3] == "inf"
