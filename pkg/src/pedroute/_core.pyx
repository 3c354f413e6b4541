# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels.

Semantics must stay in lockstep with pedroute._core_py: identical
neighbor scan order, identical tie handling, identical accumulation
order.  tests/test_kernels.py holds the two backends side by side.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

BACKEND_NAME = "cython"

cdef double SQRT2 = sqrt(2.0)

cdef int OFF_Y[8]
cdef int OFF_X[8]
# Ascending flat-index order: dy major, dx minor.
OFF_Y[0] = -1; OFF_X[0] = -1
OFF_Y[1] = -1; OFF_X[1] = 0
OFF_Y[2] = -1; OFF_X[2] = 1
OFF_Y[3] = 0;  OFF_X[3] = -1
OFF_Y[4] = 0;  OFF_X[4] = 1
OFF_Y[5] = 1;  OFF_X[5] = -1
OFF_Y[6] = 1;  OFF_X[6] = 0
OFF_Y[7] = 1;  OFF_X[7] = 1


cdef inline bint _heap_less(double da, long ia, double db, long ib) nogil:
    if da != db:
        return da < db
    return ia < ib


cdef void _heap_push(double* hd, long* hi, Py_ssize_t* size, double d, long idx) nogil:
    cdef Py_ssize_t child = size[0]
    cdef Py_ssize_t parent
    hd[child] = d
    hi[child] = idx
    size[0] += 1
    while child > 0:
        parent = (child - 1) >> 1
        if _heap_less(hd[child], hi[child], hd[parent], hi[parent]):
            hd[child], hd[parent] = hd[parent], hd[child]
            hi[child], hi[parent] = hi[parent], hi[child]
            child = parent
        else:
            break


cdef void _heap_pop(double* hd, long* hi, Py_ssize_t* size, double* out_d, long* out_i) nogil:
    cdef Py_ssize_t root = 0
    cdef Py_ssize_t child
    cdef Py_ssize_t last = size[0] - 1
    out_d[0] = hd[0]
    out_i[0] = hi[0]
    hd[0] = hd[last]
    hi[0] = hi[last]
    size[0] = last
    while True:
        child = 2 * root + 1
        if child >= last:
            break
        if child + 1 < last and _heap_less(hd[child + 1], hi[child + 1], hd[child], hi[child]):
            child += 1
        if _heap_less(hd[child], hi[child], hd[root], hi[root]):
            hd[root], hd[child] = hd[child], hd[root]
            hi[root], hi[child] = hi[child], hi[root]
            root = child
        else:
            break


def dijkstra_grid(cnp.ndarray[cnp.uint8_t, ndim=2] walkable,
                  cnp.ndarray[cnp.int64_t, ndim=1] sources,
                  double cell_size):
    """Multi-source shortest path over an 8-connected grid.

    Same contract as pedroute._core_py.dijkstra_grid.
    """
    cdef Py_ssize_t ny = walkable.shape[0]
    cdef Py_ssize_t nx = walkable.shape[1]
    cdef Py_ssize_t n = ny * nx

    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist_arr = np.full(n, np.inf, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] pred_arr = np.full(n, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] done_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] heap_d = np.empty(9 * n + 8, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] heap_i = np.empty(9 * n + 8, dtype=np.int64)

    cdef double* dist = <double*> dist_arr.data
    cdef cnp.int32_t* pred = <cnp.int32_t*> pred_arr.data
    cdef cnp.uint8_t* done = <cnp.uint8_t*> done_arr.data
    cdef cnp.uint8_t* walk = <cnp.uint8_t*> walkable.data
    cdef double* hd = <double*> heap_d.data
    cdef long* hi = <long*> heap_i.data

    cdef Py_ssize_t heap_size = 0
    cdef double straight = cell_size
    cdef double diagonal = cell_size * SQRT2

    cdef Py_ssize_t k
    cdef long s, idx, j
    cdef double d, nd
    cdef Py_ssize_t iy, ix, jy, jx, o

    if not walkable.flags['C_CONTIGUOUS']:
        walkable = np.ascontiguousarray(walkable)
        walk = <cnp.uint8_t*> walkable.data

    for k in range(sources.shape[0]):
        s = sources[k]
        if walk[s] == 0:
            continue
        dist[s] = 0.0
        _heap_push(hd, hi, &heap_size, 0.0, s)

    while heap_size > 0:
        _heap_pop(hd, hi, &heap_size, &d, &idx)
        if done[idx]:
            continue
        done[idx] = 1
        iy = idx // nx
        ix = idx - iy * nx
        for o in range(8):
            jy = iy + OFF_Y[o]
            jx = ix + OFF_X[o]
            if jy < 0 or jy >= ny or jx < 0 or jx >= nx:
                continue
            j = jy * nx + jx
            if walk[j] == 0 or done[j]:
                continue
            if OFF_Y[o] != 0 and OFF_X[o] != 0:
                nd = d + diagonal
            else:
                nd = d + straight
            if nd < dist[j]:
                dist[j] = nd
                pred[j] = <cnp.int32_t> idx
                _heap_push(hd, hi, &heap_size, nd, j)
            elif nd == dist[j] and idx < pred[j]:
                pred[j] = <cnp.int32_t> idx

    return dist_arr.reshape(ny, nx), pred_arr.reshape(ny, nx)


def pair_repulsion(cnp.ndarray[cnp.float64_t, ndim=2] pos,
                   cnp.ndarray[cnp.float64_t, ndim=1] radius,
                   cnp.ndarray[cnp.uint8_t, ndim=1] active,
                   double amp,
                   double scale,
                   double cutoff):
    """Pairwise exponential body repulsion between active agents.

    Same contract as pedroute._core_py.pair_repulsion.
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc = np.zeros((n, 2), dtype=np.float64)
    if n < 2:
        return acc

    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx_active = np.flatnonzero(active).astype(np.int64)
    cdef Py_ssize_t m = idx_active.shape[0]
    if m < 2:
        return acc

    cdef double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300
    cdef Py_ssize_t a, i, jj
    cdef long gi
    for a in range(m):
        gi = idx_active[a]
        if pos[gi, 0] < xmin: xmin = pos[gi, 0]
        if pos[gi, 0] > xmax: xmax = pos[gi, 0]
        if pos[gi, 1] < ymin: ymin = pos[gi, 1]
        if pos[gi, 1] > ymax: ymax = pos[gi, 1]

    cdef Py_ssize_t ncx = <Py_ssize_t>((xmax - xmin) / cutoff) + 1
    cdef Py_ssize_t ncy = <Py_ssize_t>((ymax - ymin) / cutoff) + 1
    if ncx < 1: ncx = 1
    if ncy < 1: ncy = 1
    cdef Py_ssize_t ncells = ncx * ncy

    cdef cnp.ndarray[cnp.int64_t, ndim=1] cell_of = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(ncells + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] slots = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fill = np.zeros(ncells, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] buf = np.empty(m, dtype=np.int64)

    cdef long* cell_of_p = <long*> cell_of.data
    cdef long* counts_p = <long*> counts.data
    cdef long* slots_p = <long*> slots.data
    cdef long* fill_p = <long*> fill.data
    cdef long* buf_p = <long*> buf.data

    cdef Py_ssize_t cx, cy, c
    for a in range(m):
        gi = idx_active[a]
        cx = <Py_ssize_t>((pos[gi, 0] - xmin) / cutoff)
        cy = <Py_ssize_t>((pos[gi, 1] - ymin) / cutoff)
        if cx >= ncx: cx = ncx - 1
        if cy >= ncy: cy = ncy - 1
        c = cy * ncx + cx
        cell_of_p[a] = c
        counts_p[c + 1] += 1
    for c in range(ncells):
        counts_p[c + 1] += counts_p[c]
    # Fill slots in ascending local-index order so each bin lists agents
    # in ascending id order.
    for a in range(m):
        c = cell_of_p[a]
        slots_p[counts_p[c] + fill_p[c]] = a
        fill_p[c] += 1

    cdef double cutoff2 = cutoff * cutoff
    cdef double xi, yi, ri, dx, dy, d2, d, f
    cdef Py_ssize_t ox, oy, bx, by, s0, s1, si, nn, t
    cdef long b, gj, tmp
    cdef double ax, ay

    for a in range(m):
        gi = idx_active[a]
        xi = pos[gi, 0]
        yi = pos[gi, 1]
        ri = radius[gi]
        c = cell_of_p[a]
        cy = c // ncx
        cx = c - cy * ncx
        nn = 0
        for oy in range(-1, 2):
            by = cy + oy
            if by < 0 or by >= ncy:
                continue
            for ox in range(-1, 2):
                bx = cx + ox
                if bx < 0 or bx >= ncx:
                    continue
                s0 = counts_p[by * ncx + bx]
                s1 = counts_p[by * ncx + bx + 1]
                for si in range(s0, s1):
                    b = slots_p[si]
                    if b == a:
                        continue
                    gj = idx_active[b]
                    dx = xi - pos[gj, 0]
                    dy = yi - pos[gj, 1]
                    d2 = dx * dx + dy * dy
                    if d2 > cutoff2 or d2 <= 1e-18:
                        continue
                    buf_p[nn] = b
                    nn += 1
        # Neighbor lists cross several bins; restore ascending id order so
        # the float accumulation order matches the python backend.
        for t in range(1, nn):
            tmp = buf_p[t]
            si = t - 1
            while si >= 0 and buf_p[si] > tmp:
                buf_p[si + 1] = buf_p[si]
                si -= 1
            buf_p[si + 1] = tmp
        ax = 0.0
        ay = 0.0
        for t in range(nn):
            gj = idx_active[buf_p[t]]
            dx = xi - pos[gj, 0]
            dy = yi - pos[gj, 1]
            d = sqrt(dx * dx + dy * dy)
            f = amp * exp((ri + radius[gj] - d) / scale) / d
            ax = ax + f * dx
            ay = ay + f * dy
        acc[gi, 0] = ax
        acc[gi, 1] = ay

    return acc
