"""Timing records, density lattice arithmetic and run summaries."""

import csv
import math

import numpy as np
import pytest

from pedroute.measure import (
    AVERAGING_WINDOW,
    DENSITY_CELL_SIZE,
    SAMPLE_RADIUS,
    DensityLattice,
    RunStats,
    density_snapshot,
    determinism_warning,
    missed_measurement,
    record_timing,
    run_stats,
    summarize_runs,
    write_density_csv,
    write_density_pgm,
    write_travel_times,
)
from pedroute.sfm import RunResult


def fake_result(spawn, measure, arrival, route_id=None):
    n = len(spawn)
    return RunResult(
        n_agents=n,
        plan_index=np.zeros(n, dtype=np.int64),
        route_id=np.array(route_id if route_id is not None else [0] * n),
        origin_name=["o"] * n,
        spawn_time=np.array(spawn, dtype=np.float64),
        measure_start=np.array(measure, dtype=np.float64),
        arrival_time=np.array(arrival, dtype=np.float64),
        free_speed=np.full(n, 1.3),
        pushbacks=0,
        steps=100,
        clock=10.0,
    )


# -- timing records ----------------------------------------------------------


def test_measured_and_global_times():
    rec = record_timing(fake_result([0.0], [10.0], [50.0]))[0]
    assert rec.measured == 40.0
    assert rec.global_time == 50.0


def test_spawn_inside_measurement_area_degenerates():
    rec = record_timing(fake_result([0.0], [0.0], [30.0]))[0]
    assert rec.measured == rec.global_time == 30.0


def test_arrival_without_crossing_is_flagged():
    res = fake_result([0.0, 0.0], [np.nan, 5.0], [40.0, 41.0])
    recs = record_timing(res)
    assert math.isnan(recs[0].measured)
    assert recs[0].global_time == 40.0
    assert missed_measurement(res).tolist() == [0]


def test_measured_never_exceeds_global():
    res = fake_result([0.0, 2.0, 4.0], [3.0, 6.0, 9.0], [30.0, 31.0, 32.0])
    for rec in record_timing(res):
        assert rec.measured <= rec.global_time


def test_travel_time_csv_roundtrip(tmp_path):
    res = fake_result([0.0, 1.0], [np.nan, 5.0], [40.0, 41.0], route_id=[1, 0])
    path = tmp_path / "times.csv"
    write_travel_times(path, res)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["agent_id", "route_id", "spawn", "measure_start", "arrival"]
    assert rows[1][:2] == ["0", "1"]
    assert rows[1][3] == ""  # never crossed
    assert float(rows[2][4]) == 41.0


# -- density lattice ---------------------------------------------------------


def test_lattice_default_parameters():
    lat = DensityLattice.for_bounds((0.0, 0.0, 10.0, 10.0))
    assert lat.cell_size == 0.2
    assert lat.sample_radius == 1.1
    assert lat.averaging_window == 1.0
    assert lat.averaging_steps(0.1) == 10
    assert (DENSITY_CELL_SIZE, SAMPLE_RADIUS, AVERAGING_WINDOW) == (0.2, 1.1, 1.0)
    assert lat.nx == 50 and lat.ny == 50


def test_single_stationary_agent_peak_density():
    lat = DensityLattice.for_bounds((0.0, 0.0, 10.0, 10.0))
    xs, ys = lat.cell_centers()
    agent = np.array([[xs[25], ys[25]]])
    frames = [agent.copy() for _ in range(10)]
    dens = density_snapshot(frames, lat)
    peak = dens[25, 25]
    assert abs(peak - 1.0 / (math.pi * 1.1**2)) < 1e-6
    assert dens.max() == peak


def test_density_counts_exact_disc():
    lat = DensityLattice.for_bounds((0.0, 0.0, 10.0, 10.0))
    xs, ys = lat.cell_centers()
    agent = np.array([[xs[25], ys[25]]])
    dens = density_snapshot([agent], lat)
    covered = dens > 0
    cy, cx = np.nonzero(covered)
    d = np.hypot(ys[cy] - ys[25], xs[cx] - xs[25])
    assert d.max() <= 1.1 + 1e-12
    # every cell center inside the disc is covered
    dy = ys[:, None] - ys[25]
    dx = xs[None, :] - xs[25]
    inside = dy**2 + dx**2 <= 1.1**2
    assert np.array_equal(covered, inside)


def test_empty_domain_is_all_zero():
    lat = DensityLattice.for_bounds((0.0, 0.0, 6.0, 4.0))
    dens = density_snapshot([np.empty((0, 2))] * 10, lat)
    assert dens.shape == (20, 30)
    assert not dens.any()


def test_density_interior_mass_consistency():
    rng = np.random.default_rng(3)
    lat = DensityLattice.for_bounds((0.0, 0.0, 20.0, 20.0))
    n = 30
    pts = rng.uniform(3.0, 17.0, size=(n, 2))  # discs fully interior
    dens = density_snapshot([pts], lat)
    mass = dens.sum() * lat.cell_size**2
    assert abs(mass - n) / n < 0.02


def test_density_window_averages_over_frames():
    lat = DensityLattice.for_bounds((0.0, 0.0, 10.0, 10.0))
    xs, ys = lat.cell_centers()
    agent = np.array([[xs[25], ys[25]]])
    frames = [agent] * 5 + [np.empty((0, 2))] * 5
    dens = density_snapshot(frames, lat)
    assert abs(dens[25, 25] - 0.5 / (math.pi * 1.1**2)) < 1e-9


def test_density_invariant_under_relabeling():
    rng = np.random.default_rng(8)
    lat = DensityLattice.for_bounds((0.0, 0.0, 12.0, 9.0))
    frames = [rng.uniform(1, 8, size=(40, 2)) for _ in range(10)]
    perm = rng.permutation(40)
    base = density_snapshot(frames, lat)
    shuffled = density_snapshot([f[perm] for f in frames], lat)
    assert np.array_equal(base, shuffled)


def test_density_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    lat = DensityLattice.for_bounds((0.0, 0.0, 4.0, 3.0))
    dens = density_snapshot([rng.uniform(0, 4, size=(12, 2))], lat)
    path = tmp_path / "density.csv"
    write_density_csv(path, dens)
    back = np.loadtxt(path, delimiter=",", ndmin=2)
    assert back.shape == dens.shape
    assert np.allclose(back, dens, atol=1e-6)


def test_density_pgm_format_and_scaling(tmp_path):
    dens = np.array([[0.0, 2.0], [4.0, 8.0]])
    path = tmp_path / "d.pgm"
    write_density_pgm(path, dens, max_density=4.0)
    raw = path.read_bytes()
    header, rest = raw.split(b"\n", 1)
    assert header == b"P5"
    dims, rest = rest.split(b"\n", 1)
    assert dims == b"2 2"
    maxval, pixels = rest.split(b"\n", 1)
    assert maxval == b"255"
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(2, 2)
    # top image row is the top lattice row; 8 /m^2 clamps at 255
    assert img[0].tolist() == [255, 255]
    assert img[1].tolist() == [0, 128]


# -- run summaries -----------------------------------------------------------


def test_run_stats_from_result():
    res = fake_result([0.0, 0.0], [1.0, 2.0], [100.0, 110.0])
    st = run_stats(res)
    assert st.mean_global == 105.0
    assert st.last_arrival == 110.0


def test_two_run_summary_matches_sample_std():
    summary = summarize_runs(
        [RunStats(100.0, 130.0), RunStats(110.0, 150.0)]
    )
    s = summary["mean_global"]
    assert s.mean == 105.0
    assert abs(s.std - math.sqrt(50.0)) < 1e-12
    assert s.format() == "105.00 ± 7.07"
    assert summary["last_arrival"].mean == 140.0


def test_identical_runs_flag_determinism_warning():
    summary = summarize_runs([RunStats(90.0, 120.0)] * 3)
    assert summary["mean_global"].std == 0.0
    warning = determinism_warning(summary)
    assert warning is not None and "seed" in warning


def test_single_run_has_no_std():
    summary = summarize_runs([RunStats(90.0, 120.0)])
    assert summary["mean_global"].std is None
    assert "single run" in summary["mean_global"].format()
    assert determinism_warning(summary) is None


def test_summarize_requires_runs():
    with pytest.raises(ValueError):
        summarize_runs([])
