"""Social-force walking model steered by route distance fields.

Agents are circles driven toward their current route segment by the
interpolated downhill direction of that segment's distance field,
repelled exponentially by nearby agents and by walls.  The update is
synchronous: all forces read the pre-step state, then everyone moves.
Velocity components pushing into blocked cells are dropped (agents
slide along walls); an agent that still cannot move stays put for the
step and the event is counted, never silently discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from . import kernels, seeds
from .distfield import (
    DistanceField,
    compute_distance_field,
    directions_at,
    interp_dist,
)
from .errors import SimulationError
from .routes import Route, RouteGraph
from .scenario import OccupancyGrid, Raster, Region

V_CAP_FACTOR = 1.3


@dataclass(frozen=True)
class SfmParams:
    """Force-model constants.

    v_cap is a multiple of each agent's free-flow speed; neighbor_radius
    truncates agent-agent forces so the interaction set is well defined.
    """

    tau: float = 0.5
    A_soc: float = 2.0
    B_soc: float = 0.3
    A_wall: float = 5.0
    B_wall: float = 0.1
    radius: float = 0.2
    v_cap: float = V_CAP_FACTOR
    neighbor_radius: float = 2.0


@dataclass(frozen=True)
class SpeedDistribution:
    """Free-flow speed sampler: uniform on [lo, hi] or a clamped normal."""

    kind: str = "uniform"
    lo: float = 0.97
    hi: float = 1.62
    mu: float = 1.3
    sigma: float = 0.2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=n)
        if self.kind == "normal":
            v = rng.normal(self.mu, self.sigma, size=n)
            return np.clip(v, self.lo, self.hi)
        raise SimulationError(f"unknown speed distribution kind {self.kind!r}")


@dataclass
class WallField:
    """Distance to the nearest blocked cell plus its outward direction."""

    dist: np.ndarray  # (ny, nx), meters, cell centers (domain edge counts as wall)
    grad_x: np.ndarray
    grad_y: np.ndarray


def build_wall_field(grid) -> WallField:
    padded = np.zeros((grid.ny + 2, grid.nx + 2), dtype=bool)
    padded[1:-1, 1:-1] = grid.walkable
    edt = ndimage.distance_transform_edt(padded, sampling=grid.cell_size)
    dist = edt[1:-1, 1:-1]
    gy, gx = np.gradient(dist, grid.cell_size)
    return WallField(dist=dist, grad_x=gx, grad_y=gy)


def _bilinear(grid, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
    u = (pts - [grid.x0, grid.y0]) / grid.cell_size - 0.5
    ix0 = np.minimum(np.maximum(np.floor(u[:, 0]).astype(np.int64), 0), max(grid.nx - 2, 0))
    iy0 = np.minimum(np.maximum(np.floor(u[:, 1]).astype(np.int64), 0), max(grid.ny - 2, 0))
    fx = np.minimum(np.maximum(u[:, 0] - ix0, 0.0), 1.0)
    fy = np.minimum(np.maximum(u[:, 1] - iy0, 0.0), 1.0)
    ix1 = np.minimum(ix0 + 1, grid.nx - 1)
    iy1 = np.minimum(iy0 + 1, grid.ny - 1)
    return (
        arr[iy0, ix0] * (1 - fx) * (1 - fy)
        + arr[iy0, ix1] * fx * (1 - fy)
        + arr[iy1, ix0] * (1 - fx) * fy
        + arr[iy1, ix1] * fx * fy
    )


class SimContext:
    """Immutable per-scenario data shared by many simulation runs:
    wall field and lazily built full-grid steering fields per region.

    Steering fields are computed on a copy of the grid whose walkable
    set is eroded by `clearance` meters, so the geodesics they encode
    keep a body radius of room from walls instead of grazing corners.
    Route detection is not affected; it reads the true grid.
    """

    def __init__(
        self, raster: Raster, graph: RouteGraph, clearance: float | None = None
    ):
        self.raster = raster
        self.graph = graph
        self.wall = build_wall_field(raster.grid)
        grid = raster.grid
        if clearance is None:
            clearance = SfmParams().radius + 0.5 * grid.cell_size
        self.clearance = clearance
        roomy = self.wall.dist >= clearance
        self._steer_grid = OccupancyGrid(
            grid.cell_size, grid.x0, grid.y0, grid.walkable & roomy
        )
        self._regions: dict[str, Region] = {"destination": raster.destination}
        for node in graph.nodes.values():
            self._regions[node.region.name] = node.region
        self._fields: dict[str, DistanceField] = {}

        # Deepest route node whose catchment holds each cell (-1 outside).
        # Catchments nest, so writing in depth order leaves the deepest.
        owner = np.full(grid.n_cells, -1, dtype=np.int64)
        for node in sorted(graph.nodes.values(), key=lambda nd: nd.depth):
            owner[node.catchment] = node.node_id
        self.catchment_owner = owner

    def region(self, name: str) -> Region:
        return self._regions[name]

    def steering_field(self, name: str) -> DistanceField:
        if name not in self._fields:
            cells = self._regions[name].cells
            grid = self._steer_grid
            if not self._steer_grid.walkable.flat[cells].any():
                grid = self.raster.grid
            self._fields[name] = compute_distance_field(grid, cells)
        return self._fields[name]


@dataclass
class AgentPlan:
    """Demand atom: how many agents start at this origin on this route."""

    origin: Region
    route: Route
    count: int


@dataclass
class RunResult:
    """Per-agent timing record of one simulation run."""

    n_agents: int
    plan_index: np.ndarray
    route_id: np.ndarray
    origin_name: list[str]
    spawn_time: np.ndarray
    measure_start: np.ndarray  # nan until the measurement area is entered
    arrival_time: np.ndarray  # nan if never arrived
    free_speed: np.ndarray
    pushbacks: int
    steps: int
    clock: float

    def unfinished(self) -> np.ndarray:
        return np.flatnonzero(np.isnan(self.arrival_time))


def sample_positions(
    region: Region,
    count: int,
    grid,
    rng: np.random.Generator,
    min_separation: float,
    max_attempts: int = 200,
) -> np.ndarray:
    """Rejection-sample agent centers uniformly over a region.

    Each accepted point keeps at least min_separation from the ones
    before it.  Raises SimulationError when the demanded count does not
    fit, reporting the achievable density.
    """
    cells = region.cells
    corners = grid.flat_centers(cells) - 0.5 * grid.cell_size
    h = grid.cell_size
    cell_w = max(min_separation, 1e-9)
    buckets: dict[tuple[int, int], list[int]] = {}
    placed = np.empty((count, 2), dtype=np.float64)
    min_sep2 = min_separation * min_separation

    for i in range(count):
        accepted = False
        for _ in range(max_attempts):
            pick = int(rng.integers(cells.size))
            offset = rng.random(2)
            p = corners[pick] + offset * h
            bx, by = int(p[0] // cell_w), int(p[1] // cell_w)
            clash = False
            for nb in (
                (bx + dx, by + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
            ):
                for j in buckets.get(nb, ()):
                    d = placed[j] - p
                    if d[0] * d[0] + d[1] * d[1] < min_sep2:
                        clash = True
                        break
                if clash:
                    break
            if not clash:
                placed[i] = p
                buckets.setdefault((bx, by), []).append(i)
                accepted = True
                break
        if not accepted:
            area = cells.size * h * h
            raise SimulationError(
                f"could not place agent {i + 1}/{count} in region "
                f"{region.name!r}; achievable density here is about "
                f"{i / area:.2f} agents/m^2"
            )
    return placed


class Simulation:
    """One crowd, spawned at time zero, walked until everyone arrives."""

    def __init__(
        self,
        ctx: SimContext,
        plans: list[AgentPlan],
        params: SfmParams | None = None,
        speed_dist: SpeedDistribution | None = None,
        seed: int = 0,
        record_trajectories: bool = False,
        position_windows: list[tuple[float, float]] | None = None,
    ):
        self.ctx = ctx
        self.params = params or SfmParams()
        self.speed_dist = speed_dist or SpeedDistribution()
        self.dt = ctx.raster.scenario.params.dt
        self.plans = plans
        self.record_trajectories = record_trajectories
        self.position_windows = position_windows or []
        self.trajectory_rows: list[tuple] = []
        self.window_positions: dict[int, list[np.ndarray]] = {
            i: [] for i in range(len(self.position_windows))
        }

        grid = ctx.raster.grid
        n = sum(p.count for p in plans)
        self.n = n
        self.pos = np.zeros((n, 2))
        self.vel = np.zeros((n, 2))
        self.v0 = np.zeros(n)
        self.radius = np.full(n, self.params.radius)
        self.plan_index = np.zeros(n, dtype=np.int64)
        self.seg_index = np.zeros(n, dtype=np.int64)
        self.active = np.zeros(n, dtype=np.uint8)
        self.measure_start = np.full(n, np.nan)
        self.arrival = np.full(n, np.nan)
        self.pushbacks = 0
        self.clock = 0.0
        self.steps = 0

        # Group plans per origin: positions and speeds for all agents of
        # one origin come from that origin's streams regardless of how
        # demand is split across routes, so two assignments with the same
        # totals walk the same crowd.
        by_origin: dict[str, list[int]] = {}
        for pi, plan in enumerate(plans):
            by_origin.setdefault(plan.origin.name, []).append(pi)
        origin_order = sorted(by_origin)

        self.segment_fields: list[list[DistanceField]] = []
        self.segment_regions: list[list[np.ndarray]] = []
        n_nodes = max(ctx.graph.nodes) + 1
        self._node_pos = np.full((len(plans), n_nodes), -1, dtype=np.int64)
        for pi, plan in enumerate(plans):
            fields = [ctx.steering_field(s) for s in plan.route.segments]
            members = [
                ctx.region(s).membership(grid) for s in plan.route.segments
            ]
            self.segment_fields.append(fields)
            self.segment_regions.append(members)
            for q, nid in enumerate(plan.route.node_ids):
                self._node_pos[pi, nid] = q

        cursor = 0
        for oi, oname in enumerate(origin_order):
            plan_ids = by_origin[oname]
            total = sum(plans[pi].count for pi in plan_ids)
            if total == 0:
                continue
            rng_pos = seeds.rng_for(seed, seeds.SPAWN_STREAM, oi)
            rng_speed = seeds.rng_for(seed, seeds.SPEED_STREAM, oi)
            pts = sample_positions(
                plans[plan_ids[0]].origin,
                total,
                grid,
                rng_pos,
                min_separation=2 * self.params.radius,
            )
            speeds = self.speed_dist.sample(rng_speed, total)
            sl = slice(cursor, cursor + total)
            self.pos[sl] = pts
            self.v0[sl] = speeds
            self.plan_index[sl] = self._assign_routes(plan_ids, pts)
            cursor += total
        self.active[:] = 1

        self.measure_member = ctx.raster.measurement.membership(grid)
        self._grid = grid

        # Spawn-time bookkeeping: agents created inside the measurement
        # area start their measured clock immediately.
        self._update_measurement()
        self._advance_segments()

    def _assign_routes(
        self, plan_ids: list[int], pts: np.ndarray
    ) -> np.ndarray:
        """Map one origin's spawned agents onto its route plans.

        Counts per plan are fixed by the caller.  Within that constraint
        each agent takes the plan whose first steering target is closest
        to its spawn point, strongest preferences served first, so flows
        bound for different routes barely cross inside the origin area.
        """
        if len(plan_ids) == 1:
            return np.full(pts.shape[0], plan_ids[0], dtype=np.int64)
        cost = np.column_stack(
            [interp_dist(self.segment_fields[pi][0], pts) for pi in plan_ids]
        )
        cost = np.where(np.isfinite(cost), cost, np.inf)
        lowest_two = np.partition(cost, 1, axis=1)
        with np.errstate(invalid="ignore"):
            margin = lowest_two[:, 0] - lowest_two[:, 1]
        margin = np.where(np.isnan(margin), 0.0, margin)
        remaining = [self.plans[pi].count for pi in plan_ids]
        out = np.empty(pts.shape[0], dtype=np.int64)
        for a in np.argsort(margin, kind="stable"):
            best = -1
            for k in range(len(plan_ids)):
                if remaining[k] <= 0:
                    continue
                if best < 0 or cost[a, k] < cost[a, best]:
                    best = k
            out[a] = plan_ids[best]
            remaining[best] -= 1
        return out

    # -- bookkeeping -------------------------------------------------------

    def _flat_cells(self, idx: np.ndarray) -> np.ndarray:
        grid = self._grid
        cells = grid.world_to_cell(self.pos[idx])
        cells[:, 0] = np.clip(cells[:, 0], 0, grid.nx - 1)
        cells[:, 1] = np.clip(cells[:, 1], 0, grid.ny - 1)
        return grid.flat_index(cells)

    def _update_measurement(self) -> None:
        idx = np.flatnonzero(self.active.astype(bool) & np.isnan(self.measure_start))
        if idx.size == 0:
            return
        inside = self.measure_member[self._flat_cells(idx)]
        self.measure_start[idx[inside]] = self.clock

    def _advance_segments(self) -> None:
        """Move agents standing inside their segment region to the next
        segment; arriving on the final segment retires them."""
        idx = np.flatnonzero(self.active)
        if idx.size == 0:
            return
        # Crowd pressure can shove an agent past a target region without
        # its center ever touching a region cell; steering it back against
        # the outbound flow can deadlock.  Standing in the catchment of a
        # node later on its own route proves that leg is already behind
        # it, so move the pointer forward (never backward).
        flat = self._flat_cells(idx)
        owner = self.ctx.catchment_owner[flat]
        q = self._node_pos[self.plan_index[idx], np.maximum(owner, 0)]
        q[owner < 0] = -1
        jump = q > self.seg_index[idx]
        self.seg_index[idx[jump]] = q[jump]
        for _ in range(4):  # regions are meters wide; one hop is typical
            flat = self._flat_cells(idx)
            moved = np.zeros(idx.size, dtype=bool)
            for a, agent in enumerate(idx):
                pi = self.plan_index[agent]
                si = self.seg_index[agent]
                members = self.segment_regions[pi]
                if members[si][flat[a]]:
                    if si + 1 == len(members):
                        self.arrival[agent] = self.clock
                        self.active[agent] = 0
                    else:
                        self.seg_index[agent] = si + 1
                        moved[a] = True
            idx = idx[moved]
            if idx.size == 0:
                break

    # -- dynamics ----------------------------------------------------------

    def _desired_directions(self) -> np.ndarray:
        e = np.zeros((self.n, 2))
        act = np.flatnonzero(self.active)
        if act.size == 0:
            return e
        keys = self.plan_index[act] * 64 + self.seg_index[act]
        for key in np.unique(keys):
            sel = act[keys == key]
            pi, si = int(key // 64), int(key % 64)
            dirs, _ = directions_at(self.segment_fields[pi][si], self.pos[sel])
            e[sel] = dirs
        return e

    def _wall_acceleration(self) -> np.ndarray:
        acc = np.zeros((self.n, 2))
        act = np.flatnonzero(self.active)
        if act.size == 0:
            return acc
        grid = self._grid
        wall = self.ctx.wall
        p = self.pos[act]
        # surface correction: field stores center-to-center distances
        d = _bilinear(grid, wall.dist, p) - 0.5 * grid.cell_size
        gx = _bilinear(grid, wall.grad_x, p)
        gy = _bilinear(grid, wall.grad_y, p)
        # The raw gradient has magnitude <= 1 and fades where opposite
        # walls balance (door centerlines, corridor axes), like the
        # vector sum of the walls' contributions.  Normalizing it would
        # turn such ridges into head-on barriers that can stall agents.
        mag = self.params.A_wall * np.exp(
            (self.radius[act] - d) / self.params.B_wall
        )
        acc[act, 0] = mag * gx
        acc[act, 1] = mag * gy
        return acc

    def accelerations(self) -> np.ndarray:
        """Total acceleration from the current snapshot (testing hook)."""
        e = self._desired_directions()
        drive = (self.v0[:, None] * e - self.vel) / self.params.tau
        drive[~self.active.astype(bool)] = 0.0
        soc = kernels.pair_repulsion(
            self.pos,
            self.radius,
            self.active,
            self.params.A_soc,
            self.params.B_soc,
            self.params.neighbor_radius,
        )
        return drive + soc + self._wall_acceleration()

    def _blocked(self, pts: np.ndarray, midpts: np.ndarray) -> np.ndarray:
        grid = self._grid
        return ~(grid.walkable_at(pts) & grid.walkable_at(midpts))

    def step(self) -> None:
        act_mask = self.active.astype(bool)
        if not act_mask.any():
            self.clock += self.dt
            self.steps += 1
            return
        acc = self.accelerations()
        vel = self.vel + acc * self.dt
        speed = np.linalg.norm(vel, axis=1)
        cap = self.params.v_cap * self.v0
        over = act_mask & (speed > cap) & (speed > 0)
        vel[over] *= (cap[over] / speed[over])[:, None]
        vel[~act_mask] = 0.0

        target = self.pos + vel * self.dt
        mid = self.pos + vel * (0.5 * self.dt)
        blocked = self._blocked(target, mid) & act_mask
        if blocked.any():
            idx = np.flatnonzero(blocked)
            vx = vel[idx].copy()
            vx[:, 1] = 0.0
            tx = self.pos[idx] + vx * self.dt
            okx = ~self._blocked(tx, self.pos[idx] + vx * (0.5 * self.dt))
            vy = vel[idx].copy()
            vy[:, 0] = 0.0
            ty = self.pos[idx] + vy * self.dt
            oky = ~self._blocked(ty, self.pos[idx] + vy * (0.5 * self.dt))
            slid = vel[idx]
            slid[:, 0] = np.where(okx, slid[:, 0], 0.0)
            slid[:, 1] = np.where(oky, slid[:, 1], 0.0)
            vel[idx] = slid
            target[idx] = self.pos[idx] + slid * self.dt
            mid2 = self.pos[idx] + slid * (0.5 * self.dt)
            still = self._blocked(target[idx], mid2)
            if still.any():
                stuck = idx[still]
                target[stuck] = self.pos[stuck]
                vel[stuck] = 0.0
                self.pushbacks += int(still.sum())

        self.pos = np.where(act_mask[:, None], target, self.pos)
        self.vel = vel
        self.clock += self.dt
        self.steps += 1

        self._update_measurement()
        self._advance_segments()

        if self.record_trajectories:
            act = np.flatnonzero(self.active)
            self.trajectory_rows.append(
                (
                    self.steps,
                    act.copy(),
                    self.pos[act].copy(),
                    self.vel[act].copy(),
                    self.seg_index[act].copy(),
                )
            )
        for wi, (t0, t1) in enumerate(self.position_windows):
            if t0 < self.clock <= t1 + 1e-9:
                self.window_positions[wi].append(
                    self.pos[self.active.astype(bool)].copy()
                )

    def run(self, max_time: float = 3600.0) -> RunResult:
        max_steps = int(math.ceil(max_time / self.dt))
        while self.active.any() and self.steps < max_steps:
            self.step()
        return self.result()

    def result(self) -> RunResult:
        names = [self.plans[pi].origin.name for pi in self.plan_index]
        return RunResult(
            n_agents=self.n,
            plan_index=self.plan_index.copy(),
            route_id=np.array(
                [self.plans[pi].route.route_id for pi in self.plan_index],
                dtype=np.int64,
            ),
            origin_name=names,
            spawn_time=np.zeros(self.n),
            measure_start=self.measure_start.copy(),
            arrival_time=self.arrival.copy(),
            free_speed=self.v0.copy(),
            pushbacks=self.pushbacks,
            steps=self.steps,
            clock=self.clock,
        )
