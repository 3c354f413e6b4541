"""Scenario geometry, rasterization and grid bookkeeping.

A scenario is a declarative description of a walking area: rectangular
bounds, polygonal obstacles, one or more origin areas with demand, a
destination area and a measurement area.  Rasterization samples cell
centers against those polygons and produces an occupancy grid plus the
named cell regions everything downstream works with.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ScenarioError

_RESERVED_NAMES = ("destination", "measurement")

_STRUCT_8 = np.ones((3, 3), dtype=bool)
_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class ScenarioParams:
    """Resolution and timing parameters attached to a scenario."""

    nav_cell_size: float = 0.1
    density_cell_size: float = 0.2
    dt: float = 0.1


@dataclass
class OriginSpec:
    """One origin area: polygon plus demand as a count or an area density."""

    name: str
    polygon: np.ndarray
    count: int | None = None
    density: float | None = None

    def resolved_count(self) -> int:
        if self.count is not None:
            return int(self.count)
        assert self.density is not None
        return int(round(self.density * polygon_area(self.polygon)))


@dataclass
class Scenario:
    name: str
    bounds: tuple[float, float, float, float]
    obstacles: list[np.ndarray]
    origins: list[OriginSpec]
    destination: np.ndarray
    measurement: np.ndarray
    params: ScenarioParams = field(default_factory=ScenarioParams)

    def validate(self) -> None:
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ScenarioError(f"degenerate bounds {self.bounds}")
        if not self.origins:
            raise ScenarioError("scenario has no origin areas")
        seen = set()
        for o in self.origins:
            if o.name in _RESERVED_NAMES:
                raise ScenarioError(f"origin name {o.name!r} is reserved")
            if o.name in seen:
                raise ScenarioError(f"duplicate origin name {o.name!r}")
            seen.add(o.name)
            if (o.count is None) == (o.density is None):
                raise ScenarioError(
                    f"origin {o.name!r} needs exactly one of count or density"
                )
            if o.resolved_count() < 0:
                raise ScenarioError(f"origin {o.name!r} has negative demand")
            _check_polygon(o.polygon, f"origin {o.name!r}")
        for i, poly in enumerate(self.obstacles):
            _check_polygon(poly, f"obstacle {i}")
        _check_polygon(self.destination, "destination")
        _check_polygon(self.measurement, "measurement area")

    # -- serialization ---------------------------------------------------

    @staticmethod
    def from_dict(data: dict) -> "Scenario":
        try:
            params = ScenarioParams(**data.get("parameters", {}))
            origins = []
            for o in data["origins"]:
                origins.append(
                    OriginSpec(
                        name=o["name"],
                        polygon=_as_poly(o["polygon"]),
                        count=o.get("count"),
                        density=o.get("density"),
                    )
                )
            scen = Scenario(
                name=data.get("name", "unnamed"),
                bounds=tuple(float(v) for v in data["bounds"]),
                obstacles=[_as_poly(p) for p in data.get("obstacles", [])],
                origins=origins,
                destination=_as_poly(data["destination"]),
                measurement=_as_poly(data["measurement_area"]),
                params=params,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc
        scen.validate()
        return scen

    def to_dict(self) -> dict:
        origins = []
        for o in self.origins:
            entry: dict = {"name": o.name, "polygon": o.polygon.tolist()}
            if o.count is not None:
                entry["count"] = int(o.count)
            if o.density is not None:
                entry["density"] = float(o.density)
            origins.append(entry)
        return {
            "name": self.name,
            "bounds": list(self.bounds),
            "obstacles": [p.tolist() for p in self.obstacles],
            "origins": origins,
            "destination": self.destination.tolist(),
            "measurement_area": self.measurement.tolist(),
            "parameters": {
                "nav_cell_size": self.params.nav_cell_size,
                "density_cell_size": self.params.density_cell_size,
                "dt": self.params.dt,
            },
        }

    @staticmethod
    def load(path: str | Path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return Scenario.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _check_polygon(poly: np.ndarray, what: str) -> None:
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise ScenarioError(f"{what}: polygon needs at least 3 (x, y) vertices")
    if polygon_area(poly) <= 0.0:
        raise ScenarioError(f"{what}: polygon has zero area")


def _as_poly(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


def polygon_area(poly: np.ndarray) -> float:
    """Unsigned shoelace area."""
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray-casting test, vectorized over points.

    Points exactly on an edge land on either side depending on float
    rounding; scenario coordinates are chosen so cell centers stay off
    polygon boundaries.
    """
    px = points[:, 0]
    py = points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < xi)
    return inside


@dataclass
class OccupancyGrid:
    """Axis-aligned cell grid over the scenario bounds.

    Cell (ix, iy) spans [x0 + ix*h, x0 + (ix+1)*h) x [y0 + iy*h, ...);
    flat index = iy * nx + ix.  walkable is indexed [iy, ix].
    """

    cell_size: float
    x0: float
    y0: float
    walkable: np.ndarray

    @property
    def ny(self) -> int:
        return self.walkable.shape[0]

    @property
    def nx(self) -> int:
        return self.walkable.shape[1]

    @property
    def n_cells(self) -> int:
        return self.walkable.size

    def world_to_cell(self, points: np.ndarray) -> np.ndarray:
        """Map world points (n, 2) to integer cell coordinates (n, 2) as (ix, iy)."""
        pts = np.atleast_2d(points)
        ij = np.floor((pts - [self.x0, self.y0]) / self.cell_size).astype(np.int64)
        return ij

    def cell_center(self, cells: np.ndarray) -> np.ndarray:
        """Map integer cell coordinates (n, 2) as (ix, iy) to world centers."""
        c = np.atleast_2d(cells).astype(np.float64)
        return (c + 0.5) * self.cell_size + [self.x0, self.y0]

    def flat_index(self, cells: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(cells)
        return c[:, 1] * self.nx + c[:, 0]

    def flat_to_cell(self, flat: np.ndarray) -> np.ndarray:
        flat = np.atleast_1d(flat)
        iy, ix = np.divmod(flat, self.nx)
        return np.stack([ix, iy], axis=1)

    def flat_centers(self, flat: np.ndarray) -> np.ndarray:
        return self.cell_center(self.flat_to_cell(flat))

    def in_bounds(self, cells: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(cells)
        return (
            (c[:, 0] >= 0) & (c[:, 0] < self.nx) & (c[:, 1] >= 0) & (c[:, 1] < self.ny)
        )

    def walkable_at(self, points: np.ndarray) -> np.ndarray:
        """Whether each world point lies in a walkable cell (False out of bounds)."""
        cells = self.world_to_cell(points)
        ok = self.in_bounds(cells)
        out = np.zeros(len(cells), dtype=bool)
        if ok.any():
            sel = cells[ok]
            out[ok] = self.walkable[sel[:, 1], sel[:, 0]]
        return out

    def cell_centers_all(self) -> np.ndarray:
        """World centers of every cell, flat order, shape (n_cells, 2)."""
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        cells = np.stack([ix.ravel(), iy.ravel()], axis=1)
        return self.cell_center(cells)


@dataclass
class Region:
    """A named set of walkable cells (flat indices, sorted ascending)."""

    name: str
    kind: str
    cells: np.ndarray

    @property
    def size(self) -> int:
        return int(self.cells.size)

    def mask(self, grid: OccupancyGrid) -> np.ndarray:
        m = np.zeros(grid.n_cells, dtype=bool)
        m[self.cells] = True
        return m.reshape(grid.ny, grid.nx)

    def membership(self, grid: OccupancyGrid) -> np.ndarray:
        """Flat boolean membership array of length n_cells."""
        m = np.zeros(grid.n_cells, dtype=bool)
        m[self.cells] = True
        return m


@dataclass
class Raster:
    """Rasterized scenario: grid plus named regions."""

    scenario: Scenario
    grid: OccupancyGrid
    regions: dict[str, Region]
    origin_counts: dict[str, int]

    @property
    def destination(self) -> Region:
        return self.regions["destination"]

    @property
    def measurement(self) -> Region:
        return self.regions["measurement"]

    def origin_regions(self) -> list[Region]:
        return [self.regions[o.name] for o in self.scenario.origins]


def rasterize(scenario: Scenario, cell_size: float | None = None) -> Raster:
    """Sample the scenario onto an occupancy grid.

    A cell is walkable when its center lies inside the bounds and inside
    no obstacle; a cell belongs to a region when it is walkable and its
    center lies inside the region polygon.

    Raises ScenarioError when the destination, the measurement area or
    any origin rasterizes to zero cells, or when an origin cannot reach
    the destination over walkable cells.
    """
    scenario.validate()
    h = float(cell_size if cell_size is not None else scenario.params.nav_cell_size)
    if h <= 0:
        raise ScenarioError(f"cell size must be positive, got {h}")
    xmin, ymin, xmax, ymax = scenario.bounds
    nx = max(1, int(math.ceil((xmax - xmin) / h - 1e-9)))
    ny = max(1, int(math.ceil((ymax - ymin) / h - 1e-9)))
    grid = OccupancyGrid(
        cell_size=h, x0=xmin, y0=ymin, walkable=np.ones((ny, nx), dtype=bool)
    )

    centers = grid.cell_centers_all()
    walk = np.ones(grid.n_cells, dtype=bool)
    for poly in scenario.obstacles:
        walk &= ~points_in_polygon(centers, poly)
    grid.walkable = walk.reshape(ny, nx)

    regions: dict[str, Region] = {}

    def build_region(name: str, kind: str, poly: np.ndarray) -> Region:
        inside = points_in_polygon(centers, poly) & walk
        cells = np.flatnonzero(inside).astype(np.int64)
        if cells.size == 0:
            raise ScenarioError(
                f"{kind} region {name!r} rasterizes to zero walkable cells"
            )
        return Region(name=name, kind=kind, cells=cells)

    regions["destination"] = build_region(
        "destination", "destination", scenario.destination
    )
    regions["measurement"] = build_region(
        "measurement", "measurement", scenario.measurement
    )
    counts: dict[str, int] = {}
    for o in scenario.origins:
        regions[o.name] = build_region(o.name, "origin", o.polygon)
        counts[o.name] = o.resolved_count()

    # Every origin must share a walkable component with the destination.
    labels, _ = ndimage.label(grid.walkable, structure=_STRUCT_8)
    flat_labels = labels.reshape(-1)
    dest_labels = set(np.unique(flat_labels[regions["destination"].cells]).tolist())
    for o in scenario.origins:
        o_labels = set(np.unique(flat_labels[regions[o.name].cells]).tolist())
        if not (o_labels & dest_labels):
            raise ScenarioError(
                f"origin {o.name!r} cannot reach the destination over walkable cells"
            )

    return Raster(scenario=scenario, grid=grid, regions=regions, origin_counts=counts)


def connected_components(
    member: np.ndarray, shape: tuple[int, int], connectivity: int = 8
) -> list[np.ndarray]:
    """Split a flat boolean membership array into connected components.

    Returns a list of sorted flat-index arrays, ordered by each
    component's smallest flat index (so the ordering is deterministic).
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCT_8 if connectivity == 8 else _STRUCT_4
    labels, count = ndimage.label(member.reshape(shape), structure=structure)
    flat = labels.reshape(-1)
    comps = []
    for lab in range(1, count + 1):
        comps.append(np.flatnonzero(flat == lab).astype(np.int64))
    comps.sort(key=lambda c: int(c[0]))
    return comps


def builtin_scenario_names() -> list[str]:
    base = resources.files("pedroute").joinpath("scenarios")
    return sorted(p.name[: -len(".json")] for p in base.iterdir() if p.name.endswith(".json"))


def load_builtin(name: str) -> Scenario:
    """Load one of the scenarios shipped with the package."""
    base = resources.files("pedroute").joinpath("scenarios")
    path = base.joinpath(f"{name}.json")
    if not path.is_file():
        raise ScenarioError(
            f"unknown bundled scenario {name!r}; available: {builtin_scenario_names()}"
        )
    return Scenario.from_dict(json.loads(path.read_text(encoding="utf-8")))


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a file path, or by bundled name as fallback."""
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise FileNotFoundError(f"scenario file not found: {ref}")
        return Scenario.load(p)
    return load_builtin(str(ref))
