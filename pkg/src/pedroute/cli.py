"""Command-line front end: routes, simulate, assign, density, report.

Every invocation writes a manifest capturing the effective parameters,
and every subcommand accepts --from-manifest to re-run exactly what a
previous invocation recorded.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .equilibrium import (
    EquilibriumConfig,
    all_origin_routes,
    apportion,
    build_plans,
    run_equilibrium,
)
from .errors import AssignmentError, PedrouteError
from .kernels import BACKEND
from .measure import (
    DEFAULT_PGM_MAX_DENSITY,
    DensityLattice,
    density_snapshot,
    determinism_warning,
    run_stats,
    summarize_runs,
    write_density_csv,
    write_density_pgm,
    write_travel_times,
)
from .routes import DEFAULT_BAND_WIDTH, DEFAULT_MAX_ROUTES, build_route_graph
from .scenario import Scenario, builtin_scenario_names, load_builtin, rasterize
from .seeds import run_seed
from .sfm import SfmParams, SimContext, Simulation, SpeedDistribution

DEFAULT_SNAPSHOT_TIMES = (50.0, 125.0)


class UsageError(Exception):
    """Bad flags or unreadable input files; exits with status 2."""


def atomic_write(path: Path, write_fn) -> None:
    # partial files must never survive an error
    tmp = Path(f"{path}.tmp{os.getpid()}")
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _write_json(path: Path, data) -> None:
    atomic_write(
        path,
        lambda p: p.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8"),
    )


# -- configuration -----------------------------------------------------------


def _load_scenario_checked(ref: str | None) -> Scenario:
    if ref is None:
        raise UsageError("--scenario is required (or use --from-manifest)")
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise UsageError(f"scenario file not found: {ref}")
        return Scenario.load(p)
    if str(ref) in builtin_scenario_names():
        return load_builtin(str(ref))
    raise UsageError(
        f"no such scenario {ref!r}: not a file and not one of "
        f"{', '.join(builtin_scenario_names())}"
    )


def _parse_sfm_overrides(pairs: list[str]) -> dict:
    valid = {f.name for f in dataclasses.fields(SfmParams)}
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or key not in valid:
            raise UsageError(
                f"bad --sfm override {pair!r}; expected KEY=VALUE with KEY in "
                f"{sorted(valid)}"
            )
        try:
            out[key] = float(value)
        except ValueError:
            raise UsageError(f"--sfm {key} needs a number, got {value!r}") from None
    return out


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def effective_config(args) -> dict:
    if getattr(args, "from_manifest", None):
        path = Path(args.from_manifest)
        if not path.exists():
            raise UsageError(f"manifest not found: {path}")
        cfg = json.loads(path.read_text(encoding="utf-8"))
        if cfg.get("command") != args.command:
            raise UsageError(
                f"manifest records command {cfg.get('command')!r}, "
                f"not {args.command!r}"
            )
        return cfg

    scenario = _load_scenario_checked(args.scenario)
    params = SfmParams(**_parse_sfm_overrides(args.sfm))
    cfg = {
        "tool": "pedroute",
        "version": __version__,
        "backend": BACKEND,
        "command": args.command,
        "scenario": scenario.to_dict(),
        "band_width": args.band_width,
        "max_routes": args.max_routes,
        "seed": args.seed,
        "sfm_params": dataclasses.asdict(params),
        "speed_distribution": dataclasses.asdict(SpeedDistribution()),
    }
    if args.command in ("simulate", "density", "report"):
        cfg["probabilities"] = (
            _parse_floats(args.probabilities, "--probabilities")
            if args.probabilities
            else None
        )
        cfg["agents"] = args.agents
    if args.command == "simulate":
        cfg["trajectories"] = bool(args.trajectories)
        cfg["max_time"] = args.max_time
    if args.command == "assign":
        cfg["agents"] = args.agents
        cfg["equilibrium"] = {
            "step_coeff": 0.1,
            "convergence_window": 0.5,
            "max_iterations": args.max_iter,
            "runs_per_iteration": args.runs_per_iter,
            "initial_condition": args.init,
            "concentrated_route": args.concentrated_route,
            "concentrated_share": 0.97,
            "master_seed": args.seed,
            "sim_max_time": args.max_time,
        }
    if args.command == "density":
        cfg["snapshot_times"] = _parse_floats(args.snapshot_times, "--snapshot-times")
        cfg["max_density"] = args.max_density
    if args.command == "report":
        cfg["runs"] = args.runs
    return cfg


def _setup(cfg):
    scenario = Scenario.from_dict(cfg["scenario"])
    raster = rasterize(scenario)
    graph = build_route_graph(
        raster, band_width=cfg["band_width"], max_routes=cfg["max_routes"]
    )
    return raster, graph


def _demand(cfg, raster) -> dict[str, int]:
    demand = {o.name: o.resolved_count() for o in raster.scenario.origins}
    if cfg.get("agents") is not None:
        if len(demand) != 1:
            raise AssignmentError("--agents only applies to single-origin scenarios")
        demand = {name: int(cfg["agents"]) for name in demand}
    return demand


def _counts(cfg, routes, demand):
    probs = cfg.get("probabilities")
    out = {}
    for name, rs in routes.items():
        if probs is None:
            p = np.array([r.probability for r in rs])
        else:
            if len(routes) != 1:
                raise AssignmentError(
                    "--probabilities only applies to single-origin scenarios"
                )
            if len(probs) != len(rs):
                raise AssignmentError(
                    f"scenario offers {len(rs)} routes, got {len(probs)} probabilities"
                )
            p = np.array(probs, dtype=np.float64)
            if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
                raise AssignmentError("--probabilities must be nonnegative and sum to 1")
            p = p / p.sum()
        out[name] = apportion(p, demand[name])
    return out


def _sim_inputs(cfg):
    raster, graph = _setup(cfg)
    ctx = SimContext(raster, graph)
    routes = all_origin_routes(graph, raster)
    regions = {r.name: r for r in raster.origin_regions()}
    demand = _demand(cfg, raster)
    counts = _counts(cfg, routes, demand)
    plans = build_plans(regions, routes, counts)
    params = SfmParams(**cfg["sfm_params"])
    speed = SpeedDistribution(**cfg["speed_distribution"])
    return ctx, plans, params, speed


# -- subcommands -------------------------------------------------------------


def cmd_routes(cfg: dict, out: Path) -> int:
    raster, graph = _setup(cfg)
    routes = all_origin_routes(graph, raster)
    data = {
        "scenario": cfg["scenario"]["name"],
        "band_width": cfg["band_width"],
        "max_routes": cfg["max_routes"],
        "routes": {
            name: [
                {
                    "route_id": r.route_id,
                    "segments": r.segments,
                    "length": round(r.length, 6),
                    "probability": r.probability,
                }
                for r in rs
            ]
            for name, rs in routes.items()
        },
    }
    _write_json(out / "routes.json", data)
    for name, rs in routes.items():
        for r in rs:
            print(
                f"{name} route {r.route_id}: length {r.length:.2f} m "
                f"via {' -> '.join(r.segments)}"
            )
    return 0


def _write_trajectories(path: Path, sim: Simulation) -> None:
    def write(p: Path):
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "agent_id", "x", "y", "vx", "vy", "segment_index"])
            for step, ids, pos, vel, seg in sim.trajectory_rows:
                for k in range(len(ids)):
                    w.writerow(
                        [
                            step,
                            int(ids[k]),
                            f"{pos[k, 0]:.6f}",
                            f"{pos[k, 1]:.6f}",
                            f"{vel[k, 0]:.6f}",
                            f"{vel[k, 1]:.6f}",
                            int(seg[k]),
                        ]
                    )

    atomic_write(path, write)


def cmd_simulate(cfg: dict, out: Path) -> int:
    ctx, plans, params, speed = _sim_inputs(cfg)
    sim = Simulation(
        ctx,
        plans,
        params=params,
        speed_dist=speed,
        seed=cfg["seed"],
        record_trajectories=cfg.get("trajectories", False),
    )
    result = sim.run(max_time=cfg.get("max_time", 3600.0))
    atomic_write(out / "travel_times.csv", lambda p: write_travel_times(p, result))
    if cfg.get("trajectories"):
        _write_trajectories(out / "trajectories.csv", sim)
    unfinished = result.unfinished().size
    stats = None
    if unfinished < result.n_agents:
        stats = run_stats(result)
        print(
            f"{result.n_agents} agents; mean global travel time "
            f"{stats.mean_global:.2f} s; last arrival {stats.last_arrival:.2f} s"
        )
    if unfinished:
        print(f"warning: {unfinished} agents did not arrive", file=sys.stderr)
    return 0


def cmd_assign(cfg: dict, out: Path) -> int:
    raster, graph = _setup(cfg)
    ctx = SimContext(raster, graph)
    routes = all_origin_routes(graph, raster)
    eq = EquilibriumConfig(**cfg["equilibrium"])
    state = run_equilibrium(
        ctx,
        routes,
        eq,
        params=SfmParams(**cfg["sfm_params"]),
        speed_dist=SpeedDistribution(**cfg["speed_distribution"]),
        demand=_demand(cfg, raster),
    )

    def write(p: Path):
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                [
                    "iteration",
                    "origin",
                    "route_id",
                    "probability",
                    "mean_measured_time",
                    "overall_mean_time",
                ]
            )
            for rec in state.history:
                for name in sorted(rec.probabilities):
                    times = rec.route_times[name]
                    for k, prob in enumerate(rec.probabilities[name]):
                        t = "" if not np.isfinite(times[k]) else f"{times[k]:.6f}"
                        w.writerow(
                            [
                                rec.iteration,
                                name,
                                k,
                                f"{prob:.9f}",
                                t,
                                f"{rec.overall_time:.6f}",
                            ]
                        )

    atomic_write(out / "assignment.csv", write)
    summary = {
        "converged": state.converged,
        "iterations": state.iteration,
        "final_probabilities": {n: p.tolist() for n, p in state.probabilities.items()},
        "final_spread": state.history[-1].spread,
        "final_overall_time": state.history[-1].overall_time,
    }
    _write_json(out / "assignment_summary.json", summary)
    last = state.history[-1]
    if state.converged:
        print(
            f"converged after {state.iteration} iterations; travel-time spread "
            f"{last.spread:.3f} s; overall mean {last.overall_time:.2f} s"
        )
    else:
        print(
            f"not converged after {state.iteration} iterations; travel-time "
            f"spread still {last.spread:.3f} s"
        )
    return 0


def cmd_density(cfg: dict, out: Path) -> int:
    ctx, plans, params, speed = _sim_inputs(cfg)
    times = cfg["snapshot_times"]
    lattice = DensityLattice.for_bounds(
        Scenario.from_dict(cfg["scenario"]).bounds
    )
    windows = [(t - lattice.averaging_window, t) for t in times]
    sim = Simulation(
        ctx,
        plans,
        params=params,
        speed_dist=speed,
        seed=cfg["seed"],
        position_windows=windows,
    )
    sim.run(max_time=max(3600.0, max(times) + 1.0))
    for i, t in enumerate(times):
        frames = sim.window_positions[i]
        dens = (
            density_snapshot(frames, lattice)
            if frames
            else np.zeros((lattice.ny, lattice.nx))
        )
        stem = f"density_t{t:g}"
        atomic_write(out / f"{stem}.csv", lambda p, d=dens: write_density_csv(p, d))
        atomic_write(
            out / f"{stem}.pgm",
            lambda p, d=dens: write_density_pgm(p, d, cfg["max_density"]),
        )
        print(f"t={t:g}s: peak density {dens.max():.3f} agents/m^2")
    return 0


def cmd_report(cfg: dict, out: Path) -> int:
    ctx, plans, params, speed = _sim_inputs(cfg)
    stats = []
    for j in range(cfg["runs"]):
        sim = Simulation(
            ctx,
            plans,
            params=params,
            speed_dist=speed,
            seed=run_seed(cfg["seed"], 0, j),
        )
        result = sim.run()
        if result.unfinished().size:
            raise AssignmentError(
                f"{result.unfinished().size} agents did not arrive in run {j}"
            )
        stats.append(run_stats(result))
    summary = summarize_runs(stats)
    lines = [
        f"pedroute {__version__} report: {cfg['scenario']['name']}, "
        f"{cfg['runs']} runs, seed {cfg['seed']}",
        f"average travel time: {summary['mean_global'].format()} s",
        f"last arrival:        {summary['last_arrival'].format()} s",
    ]
    warning = determinism_warning(summary)
    if warning:
        lines.append(f"warning: {warning}")
    text = "\n".join(lines) + "\n"
    atomic_write(out / "report.txt", lambda p: p.write_text(text, encoding="utf-8"))
    print(text, end="")
    return 0


COMMANDS = {
    "routes": cmd_routes,
    "simulate": cmd_simulate,
    "assign": cmd_assign,
    "density": cmd_density,
    "report": cmd_report,
}


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pedroute",
        description="Route extraction, crowd simulation and travel-time equilibrium.",
    )
    parser.add_argument(
        "--version", action="version", version=f"pedroute {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--scenario", help="bundled scenario name or path to a .json")
        sp.add_argument(
            "--from-manifest",
            metavar="PATH",
            help="re-run exactly as recorded by a previous invocation",
        )
        sp.add_argument("--band-width", type=float, default=DEFAULT_BAND_WIDTH)
        sp.add_argument("--max-routes", type=int, default=DEFAULT_MAX_ROUTES)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="pedroute_out", help="output directory")
        sp.add_argument(
            "--sfm",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a force-model constant, e.g. --sfm tau=0.6",
        )

    sp = sub.add_parser("routes", help="list route alternatives")
    add_common(sp)

    sp = sub.add_parser("simulate", help="one simulation run")
    add_common(sp)
    sp.add_argument("--probabilities", help="comma-separated route split")
    sp.add_argument("--agents", type=int, help="override the scenario agent count")
    sp.add_argument("--trajectories", action="store_true")
    sp.add_argument("--max-time", type=float, default=3600.0)

    sp = sub.add_parser("assign", help="iterate to travel-time equilibrium")
    add_common(sp)
    sp.add_argument("--init", choices=("equal", "concentrated"), default="equal")
    sp.add_argument("--concentrated-route", type=int, default=0)
    sp.add_argument("--runs-per-iter", type=int, default=5)
    sp.add_argument("--max-iter", type=int, default=100)
    sp.add_argument("--agents", type=int, help="override the scenario agent count")
    sp.add_argument("--max-time", type=float, default=3600.0)

    sp = sub.add_parser("density", help="density heatmaps at snapshot times")
    add_common(sp)
    sp.add_argument("--probabilities", help="comma-separated route split")
    sp.add_argument("--agents", type=int, help="override the scenario agent count")
    sp.add_argument(
        "--snapshot-times",
        default=",".join(f"{t:g}" for t in DEFAULT_SNAPSHOT_TIMES),
    )
    sp.add_argument("--max-density", type=float, default=DEFAULT_PGM_MAX_DENSITY)

    sp = sub.add_parser("report", help="multi-run travel-time statistics")
    add_common(sp)
    sp.add_argument("--probabilities", help="comma-separated route split")
    sp.add_argument("--agents", type=int, help="override the scenario agent count")
    sp.add_argument("--runs", type=int, default=10)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code is None else int(e.code)
    try:
        cfg = effective_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "manifest.json", cfg)
        return COMMANDS[args.command](cfg, out)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PedrouteError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
