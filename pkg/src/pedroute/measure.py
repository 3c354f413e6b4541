"""Travel-time records, density heatmaps and multi-run statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sfm import RunResult

DENSITY_CELL_SIZE = 0.2
SAMPLE_RADIUS = 1.1
AVERAGING_WINDOW = 1.0
DEFAULT_PGM_MAX_DENSITY = 4.0


@dataclass
class TravelTimeRecord:
    """Timing of one agent; nan marks events that never happened."""

    agent_id: int
    route_id: int
    origin: str
    spawn_time: float
    measure_start: float
    arrival_time: float

    @property
    def measured(self) -> float:
        return self.arrival_time - self.measure_start

    @property
    def global_time(self) -> float:
        return self.arrival_time - self.spawn_time


def record_timing(result: RunResult) -> list[TravelTimeRecord]:
    """Per-agent timing records of one run, in agent-id order."""
    return [
        TravelTimeRecord(
            agent_id=i,
            route_id=int(result.route_id[i]),
            origin=result.origin_name[i],
            spawn_time=float(result.spawn_time[i]),
            measure_start=float(result.measure_start[i]),
            arrival_time=float(result.arrival_time[i]),
        )
        for i in range(result.n_agents)
    ]


def missed_measurement(result: RunResult) -> np.ndarray:
    """Agents that arrived without ever entering the measurement area."""
    return np.flatnonzero(
        np.isfinite(result.arrival_time) & ~np.isfinite(result.measure_start)
    )


def write_travel_times(path: str | Path, result: RunResult) -> None:
    rows = [
        (
            r.agent_id,
            r.route_id,
            _fmt(r.spawn_time),
            _fmt(r.measure_start),
            _fmt(r.arrival_time),
        )
        for r in record_timing(result)
    ]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["agent_id", "route_id", "spawn", "measure_start", "arrival"])
        w.writerows(rows)


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else f"{x:.6f}"


@dataclass
class DensityLattice:
    """Regular sampling lattice over the domain.

    Density at a cell is the count of agents whose center lies within
    sample_radius of the cell center, divided by the disc area, then
    averaged over the frames of one window.
    """

    x0: float
    y0: float
    nx: int
    ny: int
    cell_size: float = DENSITY_CELL_SIZE
    sample_radius: float = SAMPLE_RADIUS
    averaging_window: float = AVERAGING_WINDOW

    @staticmethod
    def for_bounds(bounds, cell_size: float = DENSITY_CELL_SIZE,
                   sample_radius: float = SAMPLE_RADIUS) -> "DensityLattice":
        xmin, ymin, xmax, ymax = bounds
        nx = max(1, int(math.ceil((xmax - xmin) / cell_size - 1e-9)))
        ny = max(1, int(math.ceil((ymax - ymin) / cell_size - 1e-9)))
        return DensityLattice(
            x0=xmin, y0=ymin, nx=nx, ny=ny,
            cell_size=cell_size, sample_radius=sample_radius,
        )

    def averaging_steps(self, dt: float) -> int:
        return int(round(self.averaging_window / dt))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.cell_size
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.cell_size
        return xs, ys

    def _count_frame(self, pts: np.ndarray, out: np.ndarray) -> None:
        xs, ys = self.cell_centers()
        r = self.sample_radius
        r2 = r * r
        h = self.cell_size
        for px, py in pts:
            ix0 = max(0, int(math.floor((px - r - self.x0) / h - 0.5)))
            ix1 = min(self.nx - 1, int(math.ceil((px + r - self.x0) / h - 0.5)))
            iy0 = max(0, int(math.floor((py - r - self.y0) / h - 0.5)))
            iy1 = min(self.ny - 1, int(math.ceil((py + r - self.y0) / h - 0.5)))
            if ix1 < ix0 or iy1 < iy0:
                continue
            dx = xs[ix0 : ix1 + 1] - px
            dy = ys[iy0 : iy1 + 1] - py
            inside = dy[:, None] ** 2 + dx[None, :] ** 2 <= r2
            out[iy0 : iy1 + 1, ix0 : ix1 + 1] += inside


def density_snapshot(frames: list[np.ndarray], lattice: DensityLattice) -> np.ndarray:
    """Average density field over one window of position frames."""
    if not frames:
        raise ValueError("need at least one position frame")
    counts = np.zeros((lattice.ny, lattice.nx), dtype=np.float64)
    for pts in frames:
        if len(pts):
            lattice._count_frame(np.asarray(pts, dtype=np.float64), counts)
    area = math.pi * lattice.sample_radius**2
    return counts / (len(frames) * area)


def write_density_csv(path: str | Path, density: np.ndarray) -> None:
    # row-major, one lattice row per line, y increasing downward the file
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row in density:
            w.writerow([f"{v:.6f}" for v in row])


def write_density_pgm(path: str | Path, density: np.ndarray,
                      max_density: float = DEFAULT_PGM_MAX_DENSITY) -> None:
    """8-bit grayscale map, 0 at empty up to 255 at max_density and above."""
    scaled = np.clip(density / max_density, 0.0, 1.0)
    img = np.round(scaled * 255).astype(np.uint8)
    img = img[::-1]  # image rows go top-down, lattice rows bottom-up
    ny, nx = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        f.write(img.tobytes())


@dataclass
class RunStats:
    """Scalar outcomes of one run used in multi-run tables."""

    mean_global: float
    last_arrival: float


def run_stats(result: RunResult) -> RunStats:
    glob = result.arrival_time - result.spawn_time
    glob = glob[np.isfinite(glob)]
    if glob.size == 0:
        raise ValueError("no agent arrived; nothing to summarize")
    return RunStats(
        mean_global=float(glob.mean()),
        last_arrival=float(np.nanmax(result.arrival_time)),
    )


@dataclass
class StatSummary:
    name: str
    mean: float
    std: float | None  # None when fewer than two runs
    n_runs: int

    def format(self) -> str:
        if self.std is None:
            return f"{self.mean:.2f} (single run, no std)"
        return f"{self.mean:.2f} ± {self.std:.2f}"


def summarize_runs(stats: list[RunStats]) -> dict[str, StatSummary]:
    """Mean and sample standard deviation of each per-run statistic.

    A standard deviation of exactly zero across several runs means the
    runs were identical, which points at a seeding mistake; the summary
    carries that warning.
    """
    if not stats:
        raise ValueError("no runs to summarize")
    out: dict[str, StatSummary] = {}
    for name in ("mean_global", "last_arrival"):
        vals = np.array([getattr(s, name) for s in stats], dtype=np.float64)
        std = float(vals.std(ddof=1)) if vals.size >= 2 else None
        out[name] = StatSummary(name=name, mean=float(vals.mean()),
                                std=std, n_runs=vals.size)
    return out


def determinism_warning(summary: dict[str, StatSummary]) -> str | None:
    zeroed = [s for s in summary.values() if s.std == 0.0 and s.n_runs >= 2]
    if zeroed:
        return ("identical results across runs (std 0); "
                "check that run seeds differ")
    return None
