"""Compare the compiled kernels against the pure numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from pedroute import _core_py, kernels
from pedroute.equilibrium import all_origin_routes, apportion, build_plans
from pedroute.routes import build_route_graph
from pedroute.scenario import load_builtin, rasterize
from pedroute.sfm import SimContext, Simulation

try:
    from pedroute import _core
except ImportError:
    _core = None


def best_of(fn, repeats=3):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def row(name, compiled, pure):
    speedup = pure / compiled if compiled > 0 else float("inf")
    print(f"{name:<34} {compiled * 1e3:>10.2f} {pure * 1e3:>10.2f} {speedup:>8.1f}x")


def bench_dijkstra():
    ras = rasterize(load_builtin("fig6_evacuation_replica"))
    walk = ras.grid.walkable.astype(np.uint8)
    sources = ras.destination.cells
    cell = ras.grid.cell_size
    compiled = best_of(lambda: _core.dijkstra_grid(walk, sources, cell))
    pure = best_of(lambda: _core_py.dijkstra_grid(walk, sources, cell))
    row(f"dijkstra {walk.shape[1]}x{walk.shape[0]}", compiled, pure)


def bench_pair_repulsion():
    rng = np.random.default_rng(0)
    for n in (50, 200, 500):
        pos = rng.uniform(0, 20, size=(n, 2))
        radius = np.full(n, 0.2)
        active = np.ones(n, dtype=np.uint8)
        args = (pos, radius, active, 2.0, 0.3, 2.0)
        compiled = best_of(lambda: [_core.pair_repulsion(*args) for _ in range(50)])
        pure = best_of(lambda: [_core_py.pair_repulsion(*args) for _ in range(50)])
        row(f"pair_repulsion n={n} (50 calls)", compiled, pure)


def bench_simulation():
    ras = rasterize(load_builtin("fig6_evacuation_replica"))
    graph = build_route_graph(ras)
    routes = all_origin_routes(graph, ras)
    regions = {r.name: r for r in ras.origin_regions()}
    name = next(iter(routes))
    counts = apportion([1.0 / len(routes[name])] * len(routes[name]), 150)
    plans = build_plans(regions, routes, {name: counts})
    ctx = SimContext(ras, graph)

    def run_with(impl):
        saved = (kernels.dijkstra_grid, kernels.pair_repulsion)
        kernels.dijkstra_grid = impl.dijkstra_grid
        kernels.pair_repulsion = impl.pair_repulsion
        try:
            sim = Simulation(ctx, plans, seed=1)
            for _ in range(150):
                sim.step()
            return sim.pos.copy()
        finally:
            kernels.dijkstra_grid, kernels.pair_repulsion = saved

    compiled = best_of(lambda: run_with(_core), repeats=2)
    pure = best_of(lambda: run_with(_core_py), repeats=2)
    row("simulation 150 agents, 150 steps", compiled, pure)
    drift = np.abs(run_with(_core) - run_with(_core_py)).max()
    print(f"max position difference between backends: {drift:.2e} m")


def main():
    print(f"active backend: {kernels.BACKEND}")
    if _core is None:
        print("compiled extension not built; nothing to compare")
        return
    print(f"{'kernel':<34} {'cython ms':>10} {'python ms':>10} {'speedup':>9}")
    bench_dijkstra()
    bench_pair_repulsion()
    bench_simulation()


if __name__ == "__main__":
    main()
