"""Discrete route alternatives from distance-field bands.

Walking from the destination outward, the distance field is cut into
bands of fixed geodesic width.  Where a band falls apart into several
connected components (or a single band component touches two or more
distinct components of the previous band), the walking area genuinely
forks: each branch component becomes an intermediate destination region,
every upstream cell is assigned to the branch its shortest path runs
through, and the search recurses inside each of those catchments with a
fresh field toward the branch region.  The result is a tree rooted at
the destination whose leaf-to-root paths are the route alternatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .distfield import DistanceField, band, compute_distance_field
from .errors import RoutingError
from .scenario import Raster, Region, connected_components

_STRUCT_8 = np.ones((3, 3), dtype=bool)

DEFAULT_BAND_WIDTH = 2.0
DEFAULT_MAX_ROUTES = 16
MIN_BRANCH_CELLS = 4


@dataclass
class SplitDescriptor:
    """First place where a distance band stops being one piece.

    trigger is "multi_component" when band k itself has two or more
    components, or "multi_downstream" when a single band-k component sits
    on top of several distinct band-(k-1) components (which then act as
    the branches).  upper_bound is the geodesic distance above which
    cells count as upstream of the branches.
    """

    band_index: int
    trigger: str
    branches: list[np.ndarray]
    upper_bound: float


def detect_split(
    dfield: DistanceField,
    width: float,
    stop_dist: float | None = None,
    min_cells: int = MIN_BRANCH_CELLS,
) -> SplitDescriptor | None:
    """Scan bands outward from the target until the area forks.

    Bands are scanned for k = 1, 2, ... and the first trigger wins.
    Components smaller than min_cells are discretization noise and are
    ignored.  Scanning stops without a split once the band's lower edge
    passes stop_dist (nothing upstream would use it) or the last finite
    cell.
    """
    shape = dfield.dist.shape
    finite = dfield.dist_flat[np.isfinite(dfield.dist_flat)]
    if finite.size == 0:
        return None
    max_dist = float(finite.max())
    k = 1
    while (k - 1) * width <= max_dist:
        if stop_dist is not None and (k - 1) * width > stop_dist:
            return None
        mask = band(dfield, k, width)
        if mask.any():
            comps = [
                c for c in connected_components(mask, shape) if c.size >= min_cells
            ]
            if len(comps) >= 2:
                return SplitDescriptor(
                    band_index=k,
                    trigger="multi_component",
                    branches=comps,
                    upper_bound=(k + 1) * width,
                )
            if len(comps) == 1:
                prev_mask = band(dfield, k - 1, width)
                prev_comps = [
                    c
                    for c in connected_components(prev_mask, shape)
                    if c.size >= min_cells
                ]
                if len(prev_comps) >= 2:
                    touching = _components_adjacent_to(comps[0], prev_comps, shape)
                    if len(touching) >= 2:
                        return SplitDescriptor(
                            band_index=k,
                            trigger="multi_downstream",
                            branches=touching,
                            upper_bound=k * width,
                        )
        k += 1
    return None


def _components_adjacent_to(
    comp: np.ndarray, candidates: list[np.ndarray], shape
) -> list[np.ndarray]:
    """Candidates that 8-touch comp, in their given order."""
    m = np.zeros(shape[0] * shape[1], dtype=bool)
    m[comp] = True
    halo = ndimage.binary_dilation(m.reshape(shape), structure=_STRUCT_8).reshape(-1)
    return [c for c in candidates if halo[c].any()]


def catchment_partition(
    dfield: DistanceField, branches: list[np.ndarray], upper_bound: float
) -> list[np.ndarray]:
    """Assign every cell upstream of the split to the branch its shortest
    path passes through.

    A cell is upstream when its distance exceeds upper_bound; following
    predecessors from it must eventually enter exactly one branch.  Cells
    whose chain reaches the target without touching any branch stay
    unassigned.  Returns one sorted flat-index array per branch.
    """
    n = dfield.grid.n_cells
    label = np.full(n, -1, dtype=np.int64)
    for i, cells in enumerate(branches):
        label[cells] = i

    pred = dfield.pred_flat.astype(np.int64)
    idx = np.arange(n, dtype=np.int64)
    # Absorbing states: branch cells and chain roots point at themselves.
    ptr = np.where((label >= 0) | (pred < 0), idx, pred)
    while True:
        nxt = ptr[ptr]
        if np.array_equal(nxt, ptr):
            break
        ptr = nxt

    upstream = np.isfinite(dfield.dist_flat) & (dfield.dist_flat > upper_bound)
    final = label[ptr]
    return [
        np.flatnonzero(upstream & (final == i)).astype(np.int64)
        for i in range(len(branches))
    ]


@dataclass
class RouteNode:
    """One region of the route tree: the destination at the root,
    branch regions (intermediate destinations) elsewhere."""

    node_id: int
    region: Region
    parent: int | None
    band_index: int
    depth: int
    catchment: np.ndarray
    field: DistanceField
    children: list[int] = dc_field(default_factory=list)


@dataclass
class RouteGraph:
    band_width: float
    nodes: dict[int, RouteNode]
    root_id: int

    @property
    def root(self) -> RouteNode:
        return self.nodes[self.root_id]

    def leaves(self) -> list[RouteNode]:
        return [
            self.nodes[i] for i in sorted(self.nodes) if not self.nodes[i].children
        ]

    def path_to_root(self, node_id: int) -> list[int]:
        """Node ids from the given node down to the root."""
        out = [node_id]
        while self.nodes[out[-1]].parent is not None:
            out.append(self.nodes[out[-1]].parent)
        return out


def build_route_graph(
    raster: Raster,
    band_width: float = DEFAULT_BAND_WIDTH,
    max_routes: int = DEFAULT_MAX_ROUTES,
    min_branch_cells: int = MIN_BRANCH_CELLS,
    max_depth: int = 12,
) -> RouteGraph:
    """Recursively split the walking area into a route tree.

    Each node's split detection runs on a field toward that node's
    region, restricted to the node's catchment, and stops once all
    origin demand in the catchment lies downstream of the scan.  If the
    tree ends up with more than max_routes leaves, the deepest leaves
    are pruned first (ties on the higher node id).
    """
    if max_routes < 1:
        raise RoutingError(f"max_routes must be >= 1, got {max_routes}")
    if band_width <= 0:
        raise RoutingError(f"band width must be positive, got {band_width}")
    grid = raster.grid
    origin_cells = np.unique(
        np.concatenate([r.cells for r in raster.origin_regions()])
    )

    root_field = compute_distance_field(grid, raster.destination.cells)
    unreachable = ~np.isfinite(root_field.dist_flat[origin_cells])
    if unreachable.any():
        raise RoutingError("an origin area is unreachable from the destination")

    nodes: dict[int, RouteNode] = {}
    counter = 0

    def new_node(region, parent, band_index, depth, catchment, dfield) -> RouteNode:
        nonlocal counter
        node = RouteNode(
            node_id=counter,
            region=region,
            parent=parent,
            band_index=band_index,
            depth=depth,
            catchment=catchment,
            field=dfield,
        )
        nodes[counter] = node
        counter += 1
        return node

    root_catchment = np.flatnonzero(np.isfinite(root_field.dist_flat)).astype(np.int64)
    root = new_node(raster.destination, None, 0, 0, root_catchment, root_field)

    def expand(node: RouteNode) -> None:
        if node.depth >= max_depth:
            return
        dist = node.field.dist_flat
        member = np.zeros(grid.n_cells, dtype=bool)
        member[origin_cells] = True
        local_origins = origin_cells[np.isfinite(dist[origin_cells])]
        if local_origins.size == 0:
            return
        stop_dist = float(dist[local_origins].max())
        split = detect_split(
            node.field, band_width, stop_dist=stop_dist, min_cells=min_branch_cells
        )
        if split is None:
            return
        catchments = catchment_partition(node.field, split.branches, split.upper_bound)
        for i, (branch, catchment) in enumerate(zip(split.branches, catchments)):
            if catchment.size == 0:
                continue
            scope = np.zeros(grid.n_cells, dtype=bool)
            scope[catchment] = True
            scope[branch] = True
            child_field = compute_distance_field(grid, branch, scope=scope)
            region = Region(
                name=f"i{counter}", kind="intermediate", cells=np.sort(branch)
            )
            child = new_node(
                region, node.node_id, split.band_index, node.depth + 1,
                catchment, child_field,
            )
            node.children.append(child.node_id)
            expand(child)

    expand(root)
    graph = RouteGraph(band_width=band_width, nodes=nodes, root_id=root.node_id)
    _prune_to_max_routes(graph, max_routes)
    return graph


def _prune_to_max_routes(graph: RouteGraph, max_routes: int) -> None:
    while len(graph.leaves()) > max_routes:
        victims = sorted(
            (n for n in graph.leaves() if n.parent is not None),
            key=lambda n: (-n.depth, -n.node_id),
        )
        if not victims:
            return
        victim = victims[0]
        graph.nodes[victim.parent].children.remove(victim.node_id)
        del graph.nodes[victim.node_id]


@dataclass
class Route:
    """One alternative: regions to visit from the origin to the destination."""

    route_id: int
    origin: str
    node_ids: list[int]  # upstream-most first, root last
    segments: list[str]  # region names in walking order
    length: float
    probability: float


def enumerate_routes(graph: RouteGraph, origin: Region) -> list[Route]:
    """Routes available to one origin area.

    With no splits anywhere there is exactly one route, straight to the
    destination.  Otherwise each leaf whose catchment intersects the
    origin contributes the leaf-to-root path.  An origin intersecting no
    leaf catchment is a geometry/band-width mismatch and raises.
    """
    nodes = graph.nodes
    if len(nodes) == 1:
        return [
            Route(
                route_id=0,
                origin=origin.name,
                node_ids=[graph.root_id],
                segments=["destination"],
                length=_min_dist_over(graph.root.field, origin.cells),
                probability=1.0,
            )
        ]

    member = np.zeros(graph.root.field.grid.n_cells, dtype=bool)
    member[origin.cells] = True
    routes: list[Route] = []
    for leaf in graph.leaves():
        if not member[leaf.catchment].any():
            continue
        chain = graph.path_to_root(leaf.node_id)
        inside = origin.cells[member[origin.cells] & np.isfinite(
            leaf.field.dist_flat[origin.cells]
        )]
        length = _route_length(graph, chain, inside)
        routes.append(
            Route(
                route_id=len(routes),
                origin=origin.name,
                node_ids=chain,
                segments=[nodes[i].region.name for i in chain],
                length=length,
                probability=0.0,
            )
        )
    if not routes:
        raise RoutingError(
            f"origin {origin.name!r} intersects no route catchment; "
            "band width does not match the geometry"
        )
    for r in routes:
        r.probability = 1.0 / len(routes)
    return routes


def _min_dist_over(dfield: DistanceField, cells: np.ndarray) -> float:
    vals = dfield.dist_flat[cells]
    vals = vals[np.isfinite(vals)]
    return float(vals.min()) if vals.size else float("inf")


def _route_length(graph: RouteGraph, chain: list[int], origin_cells) -> float:
    """Geodesic length estimate: origin to first region, then region to
    region along the chain, each leg measured by that node's own field."""
    total = _min_dist_over(graph.nodes[chain[0]].field, origin_cells)
    for prev_id, next_id in zip(chain, chain[1:]):
        prev_region = graph.nodes[prev_id].region
        total += _min_dist_over(graph.nodes[next_id].field, prev_region.cells)
    return total


def upstream_edge_cells(graph: RouteGraph, node_id: int) -> np.ndarray:
    """Region cells of a node that 8-touch its catchment (the seam where
    upstream traffic enters the region)."""
    node = graph.nodes[node_id]
    grid = node.field.grid
    cmask = np.zeros(grid.n_cells, dtype=bool)
    cmask[node.catchment] = True
    halo = ndimage.binary_dilation(
        cmask.reshape(grid.ny, grid.nx), structure=_STRUCT_8
    ).reshape(-1)
    return node.region.cells[halo[node.region.cells]]
