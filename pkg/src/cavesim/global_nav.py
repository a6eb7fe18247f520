"""Topometric global navigation over superpixel submaps.

Traversability snapshots captured in the same pose window are condensed into a
submap; each submap is segmented into superpixels (homogeneous in fatality,
near-homogeneous in height) which become the nodes of a shared topological
graph.  Global planning, failure-driven edge suppression, frontier clustering
and the shortest-path tree used for downstream region queries all operate on
that graph.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .config import GlobalNavConfig
from .mapping import LBL_FATAL, LBL_UNKNOWN, TraversabilityMap

EDGE_NORMAL = "normal"
EDGE_PENALIZED = "penalized"
EDGE_SUPPRESSED = "suppressed"


@dataclass
class Superpixel:
    id: str
    cells: list[int]                 # flat indices into the global grid
    mean_height: float
    mean_slope: float
    roughness: float
    fatal_fraction: float            # 0.0 or 1.0: regions are homogeneous
    centroid: tuple[float, float]


@dataclass
class Submap:
    root_id: int                     # pose-window identifier
    agent_id: str
    resolution: float
    grid_width: int
    superpixels: list[Superpixel] = field(default_factory=list)


@dataclass
class Edge:
    cost: float                      # seconds-equivalent
    length: float                    # metres between centroids
    state: str = EDGE_NORMAL
    traversed_before: bool = False


@dataclass
class GlobalPath:
    nodes: list[str]
    cost: float


@dataclass
class ExplorationTask:
    id: str
    frontier_cells: list[int]
    representative: str              # node id
    owner: str                       # generating agent


def _cell_slopes(heights: np.ndarray, res: float) -> np.ndarray:
    if heights.shape[0] < 2 or heights.shape[1] < 2:
        return np.zeros_like(heights)
    gy, gx = np.gradient(heights, res)
    return np.hypot(gx, gy)


def build_submap(trav: TraversabilityMap, root_id: int, agent_id: str,
                 grid_width: int, heights: Optional[np.ndarray] = None,
                 cfg: GlobalNavConfig | None = None,
                 height_tol: float = 0.3) -> Submap:
    """Segment a window's merged traversability snapshot into superpixels.

    Seeded region growth in row-major order: a region absorbs 4-adjacent known
    cells with the same fatality whose height stays within ``height_tol`` of
    the seed, up to ``superpixel_cells`` members.
    """
    cfg = cfg or GlobalNavConfig()
    labels = trav.labels
    h, w = labels.shape
    res = trav.resolution
    slopes = _cell_slopes(heights, res) if heights is not None else None
    assigned = np.full((h, w), -1, dtype=np.int64)
    sub = Submap(root_id, agent_id, res, grid_width)
    next_id = 0
    for sy in range(h):
        for sx in range(w):
            if labels[sy, sx] == LBL_UNKNOWN or assigned[sy, sx] >= 0:
                continue
            seed_fatal = labels[sy, sx] == LBL_FATAL
            seed_h = float(heights[sy, sx]) if heights is not None else 0.0
            members: list[tuple[int, int]] = []
            queue = [(sy, sx)]          # heap: grow in row-major order
            assigned[sy, sx] = next_id
            while queue and len(members) < cfg.superpixel_cells:
                cy, cx = heapq.heappop(queue)
                members.append((cy, cx))
                for ny, nx in ((cy - 1, cx), (cy + 1, cx),
                               (cy, cx - 1), (cy, cx + 1)):
                    if not (0 <= ny < h and 0 <= nx < w):
                        continue
                    if assigned[ny, nx] >= 0 or labels[ny, nx] == LBL_UNKNOWN:
                        continue
                    if (labels[ny, nx] == LBL_FATAL) != seed_fatal:
                        continue
                    if heights is not None and \
                            abs(float(heights[ny, nx]) - seed_h) > height_tol:
                        continue
                    assigned[ny, nx] = next_id
                    heapq.heappush(queue, (ny, nx))
            for cy, cx in queue:     # overflow beyond target size: release
                assigned[cy, cx] = -1
            cells = sorted(cy * grid_width + cx for cy, cx in members)
            hs = [float(heights[cy, cx]) for cy, cx in members] \
                if heights is not None else [0.0]
            sl = [float(slopes[cy, cx]) for cy, cx in members] \
                if slopes is not None else [0.0]
            cxs = [(cx + 0.5) * res for _, cx in members]
            cys = [(cy + 0.5) * res for cy, _ in members]
            sub.superpixels.append(Superpixel(
                id=f"{agent_id}:{root_id}:{next_id}",
                cells=cells,
                mean_height=float(np.mean(hs)),
                mean_slope=float(np.mean(sl)),
                roughness=float(np.std(hs)),
                fatal_fraction=1.0 if seed_fatal else 0.0,
                centroid=(float(np.mean(cxs)), float(np.mean(cys)))))
            next_id += 1
    return sub


class TopoGraph:
    """Shared topological graph of superpixels across submaps."""

    def __init__(self, resolution: float, grid_width: int,
                 cfg: GlobalNavConfig | None = None,
                 speed: float = 1.2, slope_pen: float = 0.5,
                 rough_pen: float = 1.0):
        self.resolution = resolution
        self.grid_width = grid_width
        self.cfg = cfg or GlobalNavConfig()
        self.speed = speed
        self.slope_pen = slope_pen
        self.rough_pen = rough_pen
        self.nodes: dict[str, Superpixel] = {}
        self.node_window: dict[str, int] = {}
        self.edges: dict[tuple[str, str], Edge] = {}
        self.adj: dict[str, set[str]] = {}
        self.base_node: Optional[str] = None
        self._cell_nodes: dict[int, list[str]] = {}
        self._submap_keys: set[tuple[str, int]] = set()
        self._dij_cache: dict[tuple[str, str], tuple[dict, dict]] = {}

    # -- construction --------------------------------------------------------

    def _edge_key(self, a: str, b: str) -> tuple[str, str]:
        return (a, b) if a < b else (b, a)

    def _link(self, a: str, b: str):
        key = self._edge_key(a, b)
        if key in self.edges or a == b:
            return
        pa, pb = self.nodes[a], self.nodes[b]
        length = math.hypot(pa.centroid[0] - pb.centroid[0],
                            pa.centroid[1] - pb.centroid[1])
        slope = 0.5 * (pa.mean_slope + pb.mean_slope)
        rough = 0.5 * (pa.roughness + pb.roughness)
        cost = length / self.speed * (1.0 + self.slope_pen * slope
                                      + self.rough_pen * rough)
        self.edges[key] = Edge(cost=cost, length=length)
        self.adj.setdefault(a, set()).add(b)
        self.adj.setdefault(b, set()).add(a)

    def add_submap(self, sub: Submap):
        """Merge a submap's superpixels; idempotent per (agent, window)."""
        if (sub.agent_id, sub.root_id) in self._submap_keys:
            self._remove_submap(sub.agent_id, sub.root_id)
        self._dij_cache.clear()
        self._submap_keys.add((sub.agent_id, sub.root_id))
        cell_owner: dict[int, str] = {}
        for sp in sub.superpixels:
            self.nodes[sp.id] = sp
            self.node_window[sp.id] = sub.root_id
            self.adj.setdefault(sp.id, set())
            for c in sp.cells:
                cell_owner[c] = sp.id
                self._cell_nodes.setdefault(c, []).append(sp.id)
        w = self.grid_width
        for sp in sub.superpixels:
            if sp.fatal_fraction > 0:
                continue
            for c in sp.cells:
                for n in (c - 1, c + 1, c - w, c + w):
                    # adjacency within the submap
                    other = cell_owner.get(n)
                    if other is not None and other != sp.id and \
                            self.nodes[other].fatal_fraction == 0:
                        self._link(sp.id, other)
                # overlap with nearby-window submaps
                for other in self._cell_nodes.get(c, ()):
                    if other == sp.id or self.nodes[other].fatal_fraction > 0:
                        continue
                    if abs(self.node_window[other] - sub.root_id) \
                            <= self.cfg.window_neighbourhood:
                        self._link(sp.id, other)

    def _remove_submap(self, agent_id: str, root_id: int):
        self._dij_cache.clear()
        prefix = f"{agent_id}:{root_id}:"
        gone = [n for n in self.nodes if n.startswith(prefix)]
        for n in gone:
            for c in self.nodes[n].cells:
                lst = self._cell_nodes.get(c)
                if lst and n in lst:
                    lst.remove(n)
            for m in self.adj.pop(n, set()):
                self.adj[m].discard(n)
                self.edges.pop(self._edge_key(n, m), None)
            del self.nodes[n]
            del self.node_window[n]
        self._submap_keys.discard((agent_id, root_id))

    # -- queries ---------------------------------------------------------------

    def node_of_cell(self, cell: int) -> Optional[str]:
        """Deterministic owner of a grid cell: first non-fatal node by id."""
        best = None
        for n in self._cell_nodes.get(cell, ()):
            if self.nodes[n].fatal_fraction > 0:
                continue
            if best is None or n < best:
                best = n
        return best

    def set_edge_state(self, key: tuple[str, str], state: int) -> None:
        """Change an edge's state; invalidates cached route computations."""
        self.edges[key].state = state
        self._dij_cache.clear()

    def edge_cost(self, key: tuple[str, str]) -> Optional[float]:
        e = self.edges[key]
        if e.state == EDGE_SUPPRESSED:
            return None
        if e.state == EDGE_PENALIZED:
            return e.cost * self.cfg.penalty_factor
        return e.cost

    def _dijkstra(self, source: str, weight: str = "cost"):
        cache_key = (source, weight)
        hit = self._dij_cache.get(cache_key)
        if hit is not None:
            return hit
        dist = {source: 0.0}
        parent: dict[str, Optional[str]] = {source: None}
        heap = [(0.0, source)]
        done: set[str] = set()
        while heap:
            d, n = heapq.heappop(heap)
            if n in done:
                continue
            done.add(n)
            for m in sorted(self.adj.get(n, ())):
                key = self._edge_key(n, m)
                c = self.edge_cost(key)
                if c is None:
                    continue
                if weight == "length":
                    c = self.edges[key].length
                nd = d + c
                if nd < dist.get(m, float("inf")) - 1e-12:
                    dist[m] = nd
                    parent[m] = n
                    heapq.heappush(heap, (nd, m))
        if len(self._dij_cache) > 512:
            self._dij_cache.clear()
        self._dij_cache[cache_key] = (dist, parent)
        return dist, parent

    def mark_traversed(self, nodes: Iterable[str]):
        seq = list(nodes)
        for a, b in zip(seq, seq[1:]):
            key = self._edge_key(a, b)
            if key in self.edges:
                self.edges[key].traversed_before = True

    def export_snapshot(self) -> dict:
        """Structured snapshot for the operator console overlay."""
        return {
            "nodes": [{"id": n, "centroid": list(sp.centroid),
                       "fatal": sp.fatal_fraction > 0}
                      for n, sp in sorted(self.nodes.items())],
            "edges": [{"a": a, "b": b, "cost": e.cost, "state": e.state,
                       "traversed": e.traversed_before}
                      for (a, b), e in sorted(self.edges.items())],
            "base_node": self.base_node,
        }


def plan_global(graph: TopoGraph, start_cell: int,
                goal_cell: int) -> Optional[GlobalPath]:
    """Minimum-cost node sequence between the superpixels owning two cells."""
    src = graph.node_of_cell(start_cell)
    dst = graph.node_of_cell(goal_cell)
    if src is None or dst is None:
        return None
    if src == dst:
        return GlobalPath([src], 0.0)
    dist, parent = graph._dijkstra(src)
    if dst not in dist:
        return None
    seq = [dst]
    while parent[seq[-1]] is not None:
        seq.append(parent[seq[-1]])
    seq.reverse()
    return GlobalPath(seq, dist[dst])


def record_traversal_failure(graph: TopoGraph, src_cell: int, dst_cell: int):
    """Suppress the edges joining two cells' superpixels after a nav timeout.

    Edges that were successfully traversed before are penalized instead so a
    known-good return route is never severed.
    """
    a = graph.node_of_cell(src_cell)
    b = graph.node_of_cell(dst_cell)
    if a is None or b is None or a == b:
        return
    key = graph._edge_key(a, b)
    e = graph.edges.get(key)
    if e is None:
        return
    graph.set_edge_state(key, EDGE_PENALIZED if e.traversed_before
                         else EDGE_SUPPRESSED)


def cluster_frontiers(graph: TopoGraph, frontier_cells: Iterable[int],
                      owner: str,
                      cluster_radius: Optional[float] = None) -> list[ExplorationTask]:
    """Greedy clustering of frontier cells by global path distance (metres)."""
    radius = cluster_radius if cluster_radius is not None \
        else graph.cfg.cluster_radius
    located = []
    for c in sorted(set(frontier_cells)):
        n = graph.node_of_cell(c)
        if n is not None:
            located.append((c, n))
    tasks: list[ExplorationTask] = []
    unassigned = list(located)
    while unassigned:
        rep_cell, rep_node = unassigned[0]
        dist, _ = graph._dijkstra(rep_node, weight="length")
        members = [c for c, n in unassigned
                   if dist.get(n, float("inf")) <= radius]
        unassigned = [(c, n) for c, n in unassigned if c not in set(members)]
        tasks.append(ExplorationTask(
            id=f"{owner}:explore:{rep_cell}",
            frontier_cells=members,
            representative=rep_node,
            owner=owner))
    return tasks


def shortest_path_tree(graph: TopoGraph, base_node: str):
    """Single-source shortest paths from base over non-suppressed edges.

    Returns (dist, parent): parent maps each reachable node toward base.
    """
    return graph._dijkstra(base_node)


def downstream_nodes(graph: TopoGraph, base_node: str,
                     region_nodes: Iterable[str]) -> set[str]:
    """Nodes whose shortest path from base passes through the given region."""
    region = set(region_nodes)
    _, parent = graph._dijkstra(base_node)
    out: set[str] = set()
    for n in parent:
        cur: Optional[str] = n
        while cur is not None:
            if cur in region:
                out.add(n)
                break
            cur = parent[cur]
    return out
