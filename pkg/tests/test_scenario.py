"""Rasterization, regions and component labeling."""

import numpy as np
import pytest

from pedroute.errors import ScenarioError
from pedroute.scenario import (
    OccupancyGrid,
    OriginSpec,
    Scenario,
    ScenarioParams,
    builtin_scenario_names,
    connected_components,
    load_builtin,
    points_in_polygon,
    polygon_area,
    rasterize,
)


def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def simple_scenario(bounds, obstacles=(), origin=None, dest=None, meas=None, count=5):
    xmin, ymin, xmax, ymax = bounds
    if origin is None:
        origin = rect(xmin + 0.1, ymin + 0.1, xmin + 0.6, ymax - 0.1)
    if dest is None:
        dest = rect(xmax - 0.6, ymin + 0.1, xmax - 0.1, ymax - 0.1)
    if meas is None:
        meas = rect(xmin + 0.7, ymin + 0.1, xmin + 1.2, ymax - 0.1)
    return Scenario(
        name="test",
        bounds=bounds,
        obstacles=[np.asarray(o, dtype=float) for o in obstacles],
        origins=[OriginSpec(name="o", polygon=origin, count=count)],
        destination=dest,
        measurement=meas,
    )


def slow_point_in_polygon(pt, poly):
    """Independent scalar even-odd test used as oracle."""
    x, y = pt
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = (x2 - x1) * (y - y1) / (y2 - y1) + x1
            if x < xi:
                inside = not inside
    return inside


# -- grid shape and coordinates -----------------------------------------


def test_empty_rect_grid_shape_and_walkable():
    scen = simple_scenario((0.0, 0.0, 10.0, 2.0))
    ras = rasterize(scen, cell_size=0.1)
    assert ras.grid.walkable.shape == (20, 100)
    assert ras.grid.walkable.all()


def test_single_obstacle_blocks_exact_cell_count():
    scen = simple_scenario((0.0, 0.0, 10.0, 2.0), obstacles=[rect(5.0, 1.0, 6.0, 2.0)])
    ras = rasterize(scen, cell_size=0.1)
    assert int((~ras.grid.walkable).sum()) == 100


def test_rasterize_matches_pointwise_oracle():
    poly = np.array([[1.0, 0.5], [3.2, 1.1], [2.5, 2.9], [0.8, 2.2]])
    scen = simple_scenario((0.0, 0.0, 4.0, 3.0), obstacles=[poly])
    ras = rasterize(scen, cell_size=0.25)
    centers = ras.grid.cell_centers_all()
    expect = np.array([not slow_point_in_polygon(c, poly) for c in centers])
    assert np.array_equal(ras.grid.walkable.reshape(-1), expect)


def test_points_in_polygon_vector_matches_oracle_random():
    rng = np.random.default_rng(42)
    poly = np.array([[0.0, 0.0], [5.0, 1.0], [6.0, 4.0], [2.0, 5.5], [-1.0, 3.0]])
    pts = rng.uniform(-2, 7, size=(400, 2))
    got = points_in_polygon(pts, poly)
    expect = np.array([slow_point_in_polygon(p, poly) for p in pts])
    assert np.array_equal(got, expect)


def test_world_cell_round_trip_stays_within_half_diagonal():
    grid = OccupancyGrid(
        cell_size=0.1, x0=-3.0, y0=2.0, walkable=np.ones((40, 60), dtype=bool)
    )
    rng = np.random.default_rng(7)
    pts = rng.uniform([-3.0, 2.0], [3.0, 6.0], size=(500, 2))
    back = grid.cell_center(grid.world_to_cell(pts))
    dev = np.linalg.norm(back - pts, axis=1)
    assert dev.max() <= grid.cell_size * np.sqrt(2) / 2 + 1e-12


def test_flat_index_round_trip():
    grid = OccupancyGrid(
        cell_size=0.5, x0=0.0, y0=0.0, walkable=np.ones((7, 11), dtype=bool)
    )
    flat = np.arange(grid.n_cells)
    again = grid.flat_index(grid.flat_to_cell(flat))
    assert np.array_equal(flat, again)


# -- region extraction and validation ------------------------------------


def test_destination_inside_obstacle_raises():
    scen = simple_scenario(
        (0.0, 0.0, 10.0, 2.0),
        obstacles=[rect(8.0, 0.0, 10.0, 2.0)],
        dest=rect(8.5, 0.5, 9.5, 1.5),
    )
    with pytest.raises(ScenarioError, match="destination"):
        rasterize(scen, cell_size=0.1)


def test_sealed_origin_raises_with_origin_name():
    scen = simple_scenario(
        (0.0, 0.0, 10.0, 2.0),
        obstacles=[rect(1.5, 0.0, 2.0, 2.0)],  # full-height wall seals the origin
    )
    with pytest.raises(ScenarioError, match="'o'"):
        rasterize(scen, cell_size=0.1)


def test_origin_demand_needs_exactly_one_of_count_density():
    s = simple_scenario((0, 0, 5, 2))
    s.origins[0].count = None
    with pytest.raises(ScenarioError, match="count or density"):
        s.validate()


def test_origin_density_resolves_to_rounded_count():
    o = OriginSpec(name="a", polygon=rect(0, 0, 4, 5), density=2.5)
    assert o.resolved_count() == 50


def test_refining_cells_preserves_origin_connectivity():
    scen = load_builtin("fig1_single_obstacle")
    for h in (0.2, 0.1, 0.05):
        ras = rasterize(scen, cell_size=h)  # raises if disconnected
        assert ras.destination.size > 0


# -- connected components -------------------------------------------------


def test_components_two_corner_cells():
    member = np.zeros(25, dtype=bool)
    member[0] = True  # (0, 0)
    member[24] = True  # (4, 4)
    comps = connected_components(member, (5, 5))
    assert len(comps) == 2
    assert comps[0].tolist() == [0]
    assert comps[1].tolist() == [24]


def test_components_full_block_single():
    member = np.ones(9, dtype=bool)
    comps = connected_components(member, (3, 3))
    assert len(comps) == 1
    assert comps[0].size == 9


def test_components_diagonal_depends_on_connectivity():
    member = np.zeros((4, 4), dtype=bool)
    member[0, 0] = member[1, 1] = member[2, 2] = True
    flat = member.reshape(-1)
    assert len(connected_components(flat, (4, 4), connectivity=8)) == 1
    assert len(connected_components(flat, (4, 4), connectivity=4)) == 3


def test_components_partition_random_masks():
    rng = np.random.default_rng(3)
    for _ in range(20):
        member = rng.random(30 * 17) < 0.4
        comps = connected_components(member, (30, 17))
        if comps:
            allcells = np.concatenate(comps)
            assert np.array_equal(np.sort(allcells), np.flatnonzero(member))
            assert len(np.unique(allcells)) == allcells.size
        else:
            assert not member.any()
        # deterministic ordering by smallest flat index
        mins = [int(c[0]) for c in comps]
        assert mins == sorted(mins)


# -- serialization and bundled data --------------------------------------


def test_json_round_trip(tmp_path):
    scen = load_builtin("fig2_two_origins")
    p = tmp_path / "copy.json"
    scen.save(p)
    again = Scenario.load(p)
    assert again.to_dict() == scen.to_dict()


def test_bundled_scenarios_present_and_valid():
    names = builtin_scenario_names()
    for expected in (
        "fig1_single_obstacle",
        "fig2_two_origins",
        "fig6_evacuation_replica",
        "two_corridor_asym",
    ):
        assert expected in names
    for name in names:
        ras = rasterize(load_builtin(name))
        assert ras.destination.size > 0
        assert ras.measurement.size > 0


def test_replica_origin_demand_density():
    scen = load_builtin("fig6_evacuation_replica")
    o = scen.origins[0]
    dens = o.resolved_count() / polygon_area(o.polygon)
    assert dens == pytest.approx(2.5, abs=1e-9)


def test_params_defaults():
    p = ScenarioParams()
    assert p.nav_cell_size == 0.1
    assert p.density_cell_size == 0.2
    assert p.dt == 0.1
