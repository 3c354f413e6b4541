"""Pure numpy/scipy implementations of the hot kernels.

Mirror of the compiled module ``pedroute._core``.  Both backends must
produce identical results: the grid shortest-path solver matches
bit for bit, the pairwise repulsion matches up to last-ulp libm
differences.  Keep the iteration orders here in sync with the .pyx
file; tests in tests/test_kernels.py compare the two directly.
"""

from __future__ import annotations

import heapq

import numpy as np
from scipy.spatial import cKDTree

BACKEND_NAME = "python"

# Neighbor scan order is ascending flat index: (dy, dx) with dy major.
_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)
_SQRT2 = float(np.sqrt(2.0))


def dijkstra_grid(walkable: np.ndarray, sources: np.ndarray, cell_size: float):
    """Multi-source shortest path over an 8-connected grid.

    Args:
        walkable: uint8 array (ny, nx); nonzero cells are traversable.
        sources: sorted 1D int64 array of flat cell indices with distance 0.
        cell_size: edge length of one cell; diagonal steps cost cell_size*sqrt(2).

    Returns:
        (dist, pred): float64 (ny, nx) distances with +inf where unreached,
        and int32 (ny, nx) flat predecessor indices (-1 for sources/unreached).

    Ties in the priority queue break on the lower cell index, and equal-cost
    relaxations keep the lower predecessor index, so the result is unique.
    """
    ny, nx = walkable.shape
    n = ny * nx
    walk = walkable.reshape(-1)
    dist = np.full(n, np.inf, dtype=np.float64)
    pred = np.full(n, -1, dtype=np.int32)
    done = np.zeros(n, dtype=bool)

    straight = float(cell_size)
    diagonal = straight * _SQRT2

    heap = []
    for s in sources:
        s = int(s)
        if not walk[s]:
            continue
        dist[s] = 0.0
        heapq.heappush(heap, (0.0, s))

    while heap:
        d, idx = heapq.heappop(heap)
        if done[idx]:
            continue
        done[idx] = True
        iy, ix = divmod(idx, nx)
        for dy, dx in _OFFSETS:
            jy = iy + dy
            jx = ix + dx
            if jy < 0 or jy >= ny or jx < 0 or jx >= nx:
                continue
            j = jy * nx + jx
            if not walk[j] or done[j]:
                continue
            nd = d + (diagonal if dy != 0 and dx != 0 else straight)
            if nd < dist[j]:
                dist[j] = nd
                pred[j] = idx
                heapq.heappush(heap, (nd, j))
            elif nd == dist[j] and idx < pred[j]:
                pred[j] = idx

    return dist.reshape(ny, nx), pred.reshape(ny, nx)


def pair_repulsion(
    pos: np.ndarray,
    radius: np.ndarray,
    active: np.ndarray,
    amp: float,
    scale: float,
    cutoff: float,
) -> np.ndarray:
    """Pairwise exponential body repulsion between active agents.

    Force on i from j points along (pos_i - pos_j)/d with magnitude
    amp * exp((r_i + r_j - d) / scale); pairs farther apart than cutoff
    contribute nothing.  Accumulation per agent runs over neighbors in
    ascending id order so results do not depend on spatial bin layout.

    Returns float64 (n, 2) accelerations (zero rows for inactive agents).
    """
    n = pos.shape[0]
    acc = np.zeros((n, 2), dtype=np.float64)
    idx_active = np.flatnonzero(active)
    m = idx_active.size
    if m < 2:
        return acc

    pts = np.ascontiguousarray(pos[idx_active])
    rad = radius[idx_active]
    pairs = cKDTree(pts).query_pairs(cutoff, output_type="ndarray")
    if pairs.size == 0:
        return acc

    # Both directions of each pair, ordered by (receiver, source id).
    first = np.concatenate([pairs[:, 0], pairs[:, 1]])
    second = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((second, first))
    first = first[order]
    second = second[order]

    diff = pts[first] - pts[second]
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]
    keep = d2 > 1e-18
    first, second, diff, d2 = first[keep], second[keep], diff[keep], d2[keep]
    d = np.sqrt(d2)
    mag = amp * np.exp((rad[first] + rad[second] - d) / scale) / d
    contrib = diff * mag[:, None]

    acc_a = np.zeros((m, 2), dtype=np.float64)
    np.add.at(acc_a, first, contrib)
    acc[idx_active] = acc_a
    return acc
