"""Geodesic distance fields over the occupancy grid.

A field stores, for every walkable cell, the length of the shortest
8-connected path to a target region (straight steps cost one cell,
diagonal steps sqrt(2) cells) plus the predecessor cell along that
path.  Unreached cells carry +inf.  Steering directions come from the
bilinearly interpolated negative gradient, with a descent-verified
fallback to the best downhill neighbor near obstacles where the
interpolation stencil touches blocked cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import RoutingError
from .scenario import OccupancyGrid

_NEIGHBOR_OFFSETS = np.array(
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
    dtype=np.int64,
)  # (dx, dy) pairs


@dataclass
class DistanceField:
    """Distances and predecessors toward one target region."""

    grid: OccupancyGrid
    target: np.ndarray  # sorted flat indices
    dist: np.ndarray  # (ny, nx) float64, +inf unreached
    pred: np.ndarray  # (ny, nx) int32 flat predecessor, -1 at targets/unreached
    target_member: np.ndarray  # flat bool, length n_cells

    @property
    def dist_flat(self) -> np.ndarray:
        return self.dist.reshape(-1)

    @property
    def pred_flat(self) -> np.ndarray:
        return self.pred.reshape(-1)

    def finite_mask(self) -> np.ndarray:
        """Flat bool array of cells the target is reachable from."""
        return np.isfinite(self.dist_flat)


def compute_distance_field(
    grid: OccupancyGrid,
    target: np.ndarray,
    scope: np.ndarray | None = None,
) -> DistanceField:
    """Multi-source geodesic distance toward ``target`` cells.

    Args:
        grid: occupancy grid.
        target: flat indices of target cells (distance 0).
        scope: optional flat bool array; cells outside it are treated as
            blocked, restricting the field to a subregion.

    Raises RoutingError when no target cell is walkable within scope.
    """
    eff = grid.walkable.reshape(-1).copy()
    if scope is not None:
        eff &= scope
    target = np.unique(np.asarray(target, dtype=np.int64))
    target = target[eff[target]]
    if target.size == 0:
        raise RoutingError("target region has no walkable cells within scope")
    walk_u8 = np.ascontiguousarray(eff.reshape(grid.ny, grid.nx).astype(np.uint8))
    dist, pred = kernels.dijkstra_grid(walk_u8, target, grid.cell_size)
    member = np.zeros(grid.n_cells, dtype=bool)
    member[target] = True
    return DistanceField(
        grid=grid, target=target, dist=dist, pred=pred, target_member=member
    )


def band(field: DistanceField, k: int, width: float) -> np.ndarray:
    """Flat bool mask of cells whose distance lies in [k*width, (k+1)*width)."""
    if k < 0:
        raise ValueError(f"band index must be >= 0, got {k}")
    if width <= 0:
        raise ValueError(f"band width must be positive, got {width}")
    d = field.dist_flat
    return (d >= k * width) & (d < (k + 1) * width)


def _bilinear_setup(grid: OccupancyGrid, points: np.ndarray):
    """Stencil corners and weights for bilinear sampling at node centers."""
    pts = np.atleast_2d(points)
    u = (pts - [grid.x0, grid.y0]) / grid.cell_size - 0.5
    ix0 = np.minimum(np.maximum(np.floor(u[:, 0]).astype(np.int64), 0), max(grid.nx - 2, 0))
    iy0 = np.minimum(np.maximum(np.floor(u[:, 1]).astype(np.int64), 0), max(grid.ny - 2, 0))
    fx = np.minimum(np.maximum(u[:, 0] - ix0, 0.0), 1.0)
    fy = np.minimum(np.maximum(u[:, 1] - iy0, 0.0), 1.0)
    return ix0, iy0, fx, fy


def _renormalized_sample(corners: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted corner average; +inf corners are dropped and the rest of
    the weights renormalized (value is +inf only when all four corners
    are unreachable)."""
    finite = np.isfinite(corners)
    weights = np.where(finite, weights, 0.0)
    wsum = weights.sum(axis=1)
    vals = np.full(len(corners), np.inf)
    ok = wsum > 1e-12
    if ok.any():
        num = (np.where(finite, corners, 0.0) * weights).sum(axis=1)
        vals[ok] = num[ok] / wsum[ok]
    return vals


def interp_dist(field: DistanceField, points: np.ndarray) -> np.ndarray:
    """Bilinear distance sample with unreachable-corner renormalization."""
    grid = field.grid
    ix0, iy0, fx, fy = _bilinear_setup(grid, points)
    d = field.dist
    d00 = d[iy0, ix0]
    d10 = d[iy0, np.minimum(ix0 + 1, grid.nx - 1)]
    d01 = d[np.minimum(iy0 + 1, grid.ny - 1), ix0]
    d11 = d[np.minimum(iy0 + 1, grid.ny - 1), np.minimum(ix0 + 1, grid.nx - 1)]
    corners = np.stack([d00, d10, d01, d11], axis=1)
    weights = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    )
    return _renormalized_sample(corners, weights)


def directions_at(field: DistanceField, points: np.ndarray):
    """Unit steering directions toward the target at world points.

    Returns (dirs, arrived): dirs is (n, 2) float64 and arrived is a bool
    mask.  Points inside the target region get arrived=True and a zero
    direction.  Directions come from the interpolated downhill gradient;
    where the stencil is degenerate or the gradient fails a descent probe
    of half a cell, the direction falls back to the best downhill
    neighbor cell.
    """
    grid = field.grid
    pts = np.atleast_2d(points).astype(np.float64)
    n = len(pts)
    dirs = np.zeros((n, 2), dtype=np.float64)

    cells = grid.world_to_cell(pts)
    cells[:, 0] = np.clip(cells[:, 0], 0, grid.nx - 1)
    cells[:, 1] = np.clip(cells[:, 1], 0, grid.ny - 1)
    flat = grid.flat_index(cells)
    arrived = field.target_member[flat]
    todo = ~arrived
    if not todo.any():
        return dirs, arrived

    idx = np.flatnonzero(todo)
    p = pts[idx]
    ix0, iy0, fx, fy = _bilinear_setup(grid, p)
    d = field.dist
    ix1 = np.minimum(ix0 + 1, grid.nx - 1)
    iy1 = np.minimum(iy0 + 1, grid.ny - 1)
    d00, d10, d01, d11 = d[iy0, ix0], d[iy0, ix1], d[iy1, ix0], d[iy1, ix1]

    h = grid.cell_size
    # Per-axis difference pairs; pairs touching an unreachable corner are
    # dropped and the remainder renormalized.
    gx = np.zeros(len(p))
    gy = np.zeros(len(p))
    ok = np.ones(len(p), dtype=bool)

    with np.errstate(invalid="ignore"):
        pair_a = d10 - d00
        pair_b = d11 - d01
        pair_c = d01 - d00
        pair_d = d11 - d10
    fin_a = np.isfinite(pair_a)
    fin_b = np.isfinite(pair_b)
    wa = np.where(fin_a, 1.0 - fy, 0.0)
    wb = np.where(fin_b, fy, 0.0)
    wsum = wa + wb
    valid = wsum > 1e-12
    gx[valid] = (
        np.where(fin_a, pair_a, 0.0)[valid] * wa[valid]
        + np.where(fin_b, pair_b, 0.0)[valid] * wb[valid]
    ) / (wsum[valid] * h)
    ok &= valid

    fin_c = np.isfinite(pair_c)
    fin_d = np.isfinite(pair_d)
    wc = np.where(fin_c, 1.0 - fx, 0.0)
    wd = np.where(fin_d, fx, 0.0)
    wsum2 = wc + wd
    valid2 = wsum2 > 1e-12
    gy[valid2] = (
        np.where(fin_c, pair_c, 0.0)[valid2] * wc[valid2]
        + np.where(fin_d, pair_d, 0.0)[valid2] * wd[valid2]
    ) / (wsum2[valid2] * h)
    ok &= valid2

    norm = np.hypot(gx, gy)
    ok &= norm > 1e-12
    cand = np.zeros((len(p), 2))
    nz = ok
    cand[nz, 0] = -gx[nz] / norm[nz]
    cand[nz, 1] = -gy[nz] / norm[nz]

    # Descent probe: half a cell along the candidate must strictly reduce
    # the interpolated distance.  The value here reuses the stencil
    # already gathered above.
    if nz.any():
        corners = np.stack([d00, d10, d01, d11], axis=1)
        weights = np.stack(
            [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
        )
        here = _renormalized_sample(corners[nz], weights[nz])
        ahead = interp_dist(field, p[nz] + cand[nz] * (0.5 * h))
        good = ahead < here - 1e-12
        ok_idx = np.flatnonzero(nz)
        ok[ok_idx[~good]] = False

    need_fb = np.flatnonzero(~ok)
    if need_fb.size:
        cand[need_fb] = _fallback_directions(field, p[need_fb], cells[idx[need_fb]])

    dirs[idx] = cand
    return dirs, arrived


def _fallback_directions(
    field: DistanceField, pts: np.ndarray, cells: np.ndarray
) -> np.ndarray:
    """Point toward the lowest-distance walkable neighbor cell center.

    Ties break on the lower flat index.  Points whose cell has no finite
    neighbor (detached from the field) get a zero direction.
    """
    grid = field.grid
    m = len(pts)
    best_flat = np.full(m, -1, dtype=np.int64)
    best_dist = np.full(m, np.inf)
    dflat = field.dist_flat
    for dx, dy in _NEIGHBOR_OFFSETS:
        nx_ = cells[:, 0] + dx
        ny_ = cells[:, 1] + dy
        inb = (nx_ >= 0) & (nx_ < grid.nx) & (ny_ >= 0) & (ny_ < grid.ny)
        nf = np.where(inb, ny_ * grid.nx + nx_, 0)
        nd = np.where(inb, dflat[nf], np.inf)
        better = nd < best_dist
        tie = (nd == best_dist) & np.isfinite(nd) & (nf < best_flat)
        take = better | tie
        best_flat[take] = nf[take]
        best_dist[take] = nd[take]
    out = np.zeros((m, 2))
    have = best_flat >= 0
    if have.any():
        centers = grid.flat_centers(best_flat[have])
        vec = centers - pts[have]
        norm = np.linalg.norm(vec, axis=1)
        norm[norm < 1e-12] = 1.0
        out[have] = vec / norm[:, None]
    return out


def dump_csv(field: DistanceField, path) -> None:
    """Row-major CSV of the distance values; unreachable cells print 'inf'."""
    np.savetxt(path, field.dist, delimiter=",", fmt="%.17g")
