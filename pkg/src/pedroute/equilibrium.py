"""Iterated travel-time equilibrium over route alternatives.

Agents are apportioned to routes by per-origin probabilities, walked
through the simulator, and the probabilities are nudged from the
slowest route toward the fastest until all loaded routes report average
measured travel times within a fixed window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssignmentError
from .routes import Route, RouteGraph, enumerate_routes
from .scenario import Raster, Region
from .seeds import run_seed
from .sfm import AgentPlan, RunResult, SfmParams, SimContext, Simulation, SpeedDistribution


def apportion(probabilities, n_agents: int) -> np.ndarray:
    """Integer route loads by largest remainder, ties to the lowest index."""
    p = np.asarray(probabilities, dtype=np.float64)
    if n_agents < 0:
        raise AssignmentError("agent count must be nonnegative")
    exact = p * n_agents
    counts = np.floor(exact).astype(np.int64)
    short = int(n_agents - counts.sum())
    if short > 0:
        frac = exact - counts
        order = np.lexsort((np.arange(p.size), -frac))
        counts[order[:short]] += 1
    return counts


def update_probabilities(times, probabilities, step_coeff: float = 0.1,
                         loaded=None) -> np.ndarray:
    """Transfer probability from the slowest loaded route to the fastest.

    The transfer is step_coeff * (t_max - t_min) / (t_max + t_min),
    clamped so the slowest route cannot go negative.  Routes outside
    `loaded` (default: positive probability) are left untouched and
    never selected.  Ties go to the lowest route index.
    """
    t = np.asarray(times, dtype=np.float64)
    p = np.array(probabilities, dtype=np.float64)
    if loaded is None:
        loaded = p > 0
    loaded = np.asarray(loaded, dtype=bool)
    if not loaded.any():
        raise AssignmentError("no loaded route to update")
    missing = loaded & ~np.isfinite(t)
    if missing.any():
        raise AssignmentError(
            f"unfinished route {int(np.flatnonzero(missing)[0])}: "
            "no measured travel time"
        )
    masked = np.where(loaded, t, np.nan)
    imax = int(np.nanargmax(masked))
    imin = int(np.nanargmin(masked))
    if masked[imax] == masked[imin]:
        return p
    dp = step_coeff * (masked[imax] - masked[imin]) / (masked[imax] + masked[imin])
    dp = min(dp, p[imax])
    p[imax] -= dp
    p[imin] += dp
    return p


def converged(loaded_times, window: float) -> bool:
    """True when every given travel time sits within one window."""
    t = np.asarray(loaded_times, dtype=np.float64)
    if t.size == 0:
        return True
    return bool(t.max() - t.min() <= window)


@dataclass(frozen=True)
class EquilibriumConfig:
    step_coeff: float = 0.1
    convergence_window: float = 0.5
    max_iterations: int = 100
    runs_per_iteration: int = 5
    initial_condition: str = "equal"  # "equal" | "concentrated"
    concentrated_route: int = 0
    concentrated_share: float = 0.97
    master_seed: int = 0
    sim_max_time: float = 3600.0

    def validate(self) -> None:
        if self.step_coeff <= 0:
            raise AssignmentError("step_coeff must be positive")
        if self.convergence_window <= 0:
            raise AssignmentError("convergence_window must be positive")
        if self.max_iterations < 1:
            raise AssignmentError("max_iterations must be at least 1")
        if self.runs_per_iteration < 1:
            raise AssignmentError("runs_per_iteration must be at least 1")
        if self.initial_condition not in ("equal", "concentrated"):
            raise AssignmentError(
                f"unknown initial condition {self.initial_condition!r}"
            )
        if not 0.0 < self.concentrated_share <= 1.0:
            raise AssignmentError("concentrated_share must be in (0, 1]")


def initial_probabilities(n_routes: int, config: EquilibriumConfig) -> np.ndarray:
    if n_routes < 1:
        raise AssignmentError("need at least one route")
    if config.initial_condition == "equal" or n_routes == 1:
        return np.full(n_routes, 1.0 / n_routes)
    k = config.concentrated_route
    if not 0 <= k < n_routes:
        raise AssignmentError(
            f"concentrated_route {k} out of range for {n_routes} routes"
        )
    p = np.full(n_routes, (1.0 - config.concentrated_share) / (n_routes - 1))
    p[k] = config.concentrated_share
    return p


@dataclass
class IterationRecord:
    """What one iteration saw and decided."""

    iteration: int
    probabilities: dict[str, np.ndarray]
    counts: dict[str, np.ndarray]
    route_times: dict[str, np.ndarray]  # nan where the route carried no one
    overall_time: float
    spread: float  # worst loaded max-min across origins


@dataclass
class AssignmentState:
    probabilities: dict[str, np.ndarray]
    iteration: int
    history: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    final_runs: list[RunResult] = field(default_factory=list)


def all_origin_routes(graph: RouteGraph, raster: Raster) -> dict[str, list[Route]]:
    """Route alternatives per origin, keyed by origin name."""
    return {r.name: enumerate_routes(graph, r) for r in raster.origin_regions()}


def build_plans(
    regions: dict[str, Region],
    routes: dict[str, list[Route]],
    counts: dict[str, np.ndarray],
) -> list[AgentPlan]:
    """Demand atoms for one simulation run; zero-count routes are dropped."""
    plans = []
    for name, rs in routes.items():
        for r, c in zip(rs, counts[name]):
            if c > 0:
                plans.append(AgentPlan(regions[name], r, int(c)))
    if not plans:
        raise AssignmentError("no agents to simulate")
    return plans


def measured_times(result: RunResult) -> np.ndarray:
    return result.arrival_time - result.measure_start


def _check_finished(result: RunResult, iteration: int, run_index: int) -> None:
    u = result.unfinished()
    if u.size:
        a = int(u[0])
        raise AssignmentError(
            f"{u.size} agents never arrived (first: origin "
            f"{result.origin_name[a]!r}, route {int(result.route_id[a])}) "
            f"in iteration {iteration}, run {run_index}"
        )


def run_equilibrium(
    ctx: SimContext,
    routes: dict[str, list[Route]],
    config: EquilibriumConfig | None = None,
    params: SfmParams | None = None,
    speed_dist: SpeedDistribution | None = None,
    demand: dict[str, int] | None = None,
) -> AssignmentState:
    """Iterate simulate-measure-update until travel times level out.

    Each iteration runs `runs_per_iteration` independent simulations
    (seeds derived from master_seed, iteration, run index) and pools the
    measured travel times per route before testing convergence and
    updating the probabilities.  Hitting max_iterations without
    convergence is reported in the returned state, not raised.
    """
    config = config or EquilibriumConfig()
    config.validate()
    regions = {r.name: r for r in ctx.raster.origin_regions()}
    if demand is None:
        demand = {o.name: o.resolved_count() for o in ctx.raster.scenario.origins}
    unknown = set(routes) - set(regions)
    if unknown:
        raise AssignmentError(f"routes given for unknown origins {sorted(unknown)}")

    probs = {name: initial_probabilities(len(rs), config) for name, rs in routes.items()}
    state = AssignmentState(probabilities=probs, iteration=0)

    for iteration in range(1, config.max_iterations + 1):
        counts = {name: apportion(probs[name], demand[name]) for name in routes}
        plans = build_plans(regions, routes, counts)
        runs: list[RunResult] = []
        for j in range(config.runs_per_iteration):
            sim = Simulation(
                ctx,
                plans,
                params=params,
                speed_dist=speed_dist,
                seed=run_seed(config.master_seed, iteration, j),
            )
            res = sim.run(max_time=config.sim_max_time)
            _check_finished(res, iteration, j)
            runs.append(res)

        route_times: dict[str, np.ndarray] = {}
        all_measured = []
        for name, rs in routes.items():
            t = np.full(len(rs), np.nan)
            for k, route in enumerate(rs):
                samples = []
                for res in runs:
                    sel = np.array(
                        [o == name for o in res.origin_name], dtype=bool
                    ) & (res.route_id == route.route_id)
                    m = measured_times(res)[sel]
                    samples.append(m[np.isfinite(m)])
                pooled = np.concatenate(samples) if samples else np.array([])
                if pooled.size:
                    t[k] = pooled.mean()
                    all_measured.append(pooled)
                elif counts[name][k] > 0:
                    raise AssignmentError(
                        f"unfinished route {route.route_id} (origin {name!r}): "
                        "no measured travel time"
                    )
            route_times[name] = t

        overall = float(np.concatenate(all_measured).mean())
        spread = 0.0
        for name in routes:
            loaded = counts[name] > 0
            lt = route_times[name][loaded]
            if lt.size:
                spread = max(spread, float(lt.max() - lt.min()))

        state.history.append(
            IterationRecord(
                iteration=iteration,
                probabilities={n: p.copy() for n, p in probs.items()},
                counts=counts,
                route_times=route_times,
                overall_time=overall,
                spread=spread,
            )
        )
        state.iteration = iteration
        state.final_runs = runs
        if spread <= config.convergence_window:
            state.converged = True
            break
        if iteration == config.max_iterations:
            break
        for name in routes:
            probs[name] = update_probabilities(
                route_times[name],
                probs[name],
                step_coeff=config.step_coeff,
                loaded=counts[name] > 0,
            )

    state.probabilities = probs
    return state
