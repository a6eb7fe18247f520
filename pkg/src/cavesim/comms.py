"""Mesh connectivity, droppable relay nodes, and the two data transports.

Two channels ride on the per-tick connectivity graph: a best-effort ephemeral
channel (one tick of latency per hop, no queuing) and a disruption-tolerant
hop-by-hop store-and-forward sync that reconciles frame ledgers whenever two
nodes meet, highest-priority data first.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .config import CommsConfig, FrameConfig

KIND_MAP_FRAME = "map_frame"
KIND_COST_MAP = "cost_map"
KIND_DETECTION = "detection"
KIND_TASK_MSG = "task_msg"

# transfer order when bandwidth is scarce: mission-critical data first
FRAME_PRIORITY = {KIND_DETECTION: 0, KIND_TASK_MSG: 1,
                  KIND_COST_MAP: 2, KIND_MAP_FRAME: 3}


class CommsError(Exception):
    pass


@dataclass(frozen=True)
class Frame:
    origin: str
    seq: int
    kind: str
    size: float                    # bytes
    created_at: float              # s
    payload: object = None

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("frame size must be positive")
        if self.kind not in FRAME_PRIORITY:
            raise ValueError(f"unknown frame kind {self.kind!r}")

    @property
    def fid(self) -> tuple[str, int]:
        return (self.origin, self.seq)


class Ledger:
    """Per-origin have-sets (contiguous prefix + exceptions) plus the frames."""

    def __init__(self):
        self._prefix: dict[str, int] = {}     # sequences < prefix are held
        self._extra: dict[str, set[int]] = {}
        self.frames: dict[tuple[str, int], Frame] = {}

    def has(self, origin: str, seq: int) -> bool:
        return seq < self._prefix.get(origin, 0) or \
            seq in self._extra.get(origin, ())

    def add(self, frame: Frame):
        if self.has(frame.origin, frame.seq):
            return
        self.frames[frame.fid] = frame
        extra = self._extra.setdefault(frame.origin, set())
        extra.add(frame.seq)
        p = self._prefix.get(frame.origin, 0)
        while p in extra:
            extra.remove(p)
            p += 1
        self._prefix[frame.origin] = p

    def summary(self) -> dict[str, tuple[int, list[int]]]:
        return {o: (self._prefix.get(o, 0), sorted(self._extra.get(o, ())))
                for o in set(self._prefix) | set(self._extra)}

    def missing_from(self, peer_summary: dict) -> list[Frame]:
        """Frames held locally that the summarized peer lacks."""
        out = []
        for fid, fr in self.frames.items():
            origin, seq = fid
            p, extras = peer_summary.get(origin, (0, []))
            if seq >= p and seq not in extras:
                out.append(fr)
        return out

    def bytes_by_kind(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for fr in self.frames.values():
            out[fr.kind] = out.get(fr.kind, 0.0) + fr.size
        return out

    def frame_count(self) -> int:
        return len(self.frames)


@dataclass
class CommsNode:
    id: str
    kind: str                      # "base" | "agent" | "dropped"
    position: tuple[float, float]
    active_at: float = 0.0         # activation time (deployment delay)
    store: Ledger = field(default_factory=Ledger)
    published_seq: int = 0         # next own-origin sequence number

    def active(self, now: float) -> bool:
        return self.kind == "base" or now >= self.active_at

    def next_seq(self) -> int:
        s = self.published_seq
        self.published_seq += 1
        return s


@dataclass
class ConnectivityGraph:
    links: dict[tuple[str, str], float]   # sorted id pair -> capacity B/s
    nodes: list[str]

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for (a, b) in self.links:
            adj[a].append(b)
            adj[b].append(a)
        for n in adj:
            adj[n].sort()
        return adj

    def hop_path(self, src: str, dst: str) -> Optional[list[str]]:
        if src not in self.nodes or dst not in self.nodes:
            return None
        if src == dst:
            return [src]
        adj = self.adjacency()
        prev: dict[str, Optional[str]] = {src: None}
        queue = [src]
        while queue:
            n = queue.pop(0)
            for m in adj[n]:
                if m in prev:
                    continue
                prev[m] = n
                if m == dst:
                    path = [dst]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return list(reversed(path))
                queue.append(m)
        return None


def update_connectivity(world, nodes: Iterable[CommsNode], now: float,
                        cfg: CommsConfig | None = None) -> ConnectivityGraph:
    """Evaluate every pairwise RF link between active nodes."""
    from .world import rf_link
    cfg = cfg or CommsConfig()
    act = sorted((n for n in nodes if n.active(now)), key=lambda n: n.id)
    links: dict[tuple[str, str], float] = {}
    for i, a in enumerate(act):
        for b in act[i + 1:]:
            ok, cap = rf_link(world, a.position, b.position, cfg)
            if ok:
                links[(a.id, b.id)] = cap
    return ConnectivityGraph(links, [n.id for n in act])


def map_overlap(cells: set[int], prev_cells: Optional[set[int]]) -> float:
    if prev_cells is None or not cells:
        return 0.0
    return len(cells & prev_cells) / len(cells)


def publish_frame(node: CommsNode, kind: str, size: float, now: float,
                  payload=None, cells: Optional[set[int]] = None,
                  prev_cells: Optional[set[int]] = None,
                  cfg: FrameConfig | None = None) -> Optional[Frame]:
    """Publish into the node's own ledger; map frames are overlap-suppressed."""
    cfg = cfg or FrameConfig()
    if kind == KIND_MAP_FRAME and \
            map_overlap(cells or set(), prev_cells) > cfg.overlap_max:
        return None
    frame = Frame(node.id, node.next_seq(), kind, size, now, payload)
    node.store.add(frame)
    return frame


def mule_sync_step(a: CommsNode, b: CommsNode, budget_bytes: float,
                   cfg: CommsConfig | None = None,
                   link_up=None) -> list[tuple[str, Frame]]:
    """Reconcile two ledgers within a byte budget.

    Both directions share the budget; candidates move highest priority first,
    oldest first within a kind.  ``link_up()`` is polled before each frame so
    a mid-step link loss never half-delivers a frame.  Returns
    (receiver id, frame) per completed transfer.
    """
    cfg = cfg or CommsConfig()
    if cfg and not cfg.relay_store:
        if a.kind == "dropped" or b.kind == "dropped":
            return []
    want_b = a.store.missing_from(b.store.summary())
    want_a = b.store.missing_from(a.store.summary())
    queue = [(FRAME_PRIORITY[f.kind], f.created_at, f.origin, f.seq, b, f)
             for f in want_b]
    queue += [(FRAME_PRIORITY[f.kind], f.created_at, f.origin, f.seq, a, f)
              for f in want_a]
    queue.sort(key=lambda item: item[:4])
    transfers: list[tuple[str, Frame]] = []
    remaining = budget_bytes
    for _, _, _, _, receiver, frame in queue:
        if frame.size > remaining:
            continue
        if link_up is not None and not link_up():
            break
        if receiver.store.has(frame.origin, frame.seq):
            continue
        receiver.store.add(frame)
        remaining -= frame.size
        transfers.append((receiver.id, frame))
    return transfers


class EphemeralRouter:
    """Best-effort end-to-end messages: one tick per hop, no queuing."""

    def __init__(self):
        self._pending: list[tuple[int, int, str, object]] = []
        self._counter = 0

    def send(self, graph: ConnectivityGraph, src: str, dst: str,
             message, tick: int) -> bool:
        path = graph.hop_path(src, dst)
        if path is None:
            return False
        heapq.heappush(self._pending,
                       (tick + max(1, len(path) - 1), self._counter,
                        dst, message))
        self._counter += 1
        return True

    def deliveries(self, tick: int) -> list[tuple[str, object]]:
        out = []
        while self._pending and self._pending[0][0] <= tick:
            _, _, dst, message = heapq.heappop(self._pending)
            out.append((dst, message))
        return out


def drop_node(agent_id: str, droppers_remaining: int,
              position: tuple[float, float], now: float,
              cfg: CommsConfig | None = None) -> CommsNode:
    """Deploy a relay node at the agent's position; active after the delay."""
    cfg = cfg or CommsConfig()
    if droppers_remaining <= 0:
        raise CommsError(f"{agent_id} has no node droppers remaining")
    return CommsNode(id=f"{agent_id}:node:{int(now * 1000)}", kind="dropped",
                     position=position, active_at=now + cfg.deploy_delay)


@dataclass
class SyncMetrics:
    node: str
    origin: str
    upload_lag: float              # bytes of own data the base still lacks
    download_lag: float            # bytes of origin's data this node lacks


def sync_lag(node: CommsNode, origin: CommsNode,
             base: CommsNode) -> SyncMetrics:
    down = sum(f.size for f in origin.store.frames.values()
               if f.origin == origin.id
               and not node.store.has(f.origin, f.seq))
    up = sum(f.size for f in node.store.frames.values()
             if f.origin == node.id
             and not base.store.has(f.origin, f.seq))
    return SyncMetrics(node.id, origin.id, up, down)


def metrics_lines(nodes: Iterable[CommsNode], base: CommsNode,
                  now: float) -> list[str]:
    """Line-delimited sync metrics: node origin upload download kind-bytes."""
    out = []
    nodes = sorted(nodes, key=lambda n: n.id)
    for node in nodes:
        for origin in nodes:
            if origin.id == node.id:
                continue
            m = sync_lag(node, origin, base)
            kinds = node.store.bytes_by_kind()
            kind_txt = ",".join(f"{k}={kinds.get(k, 0.0):.0f}"
                                for k in sorted(FRAME_PRIORITY))
            out.append(f"{now:.2f} {m.node} {m.origin} "
                       f"{m.upload_lag:.0f} {m.download_lag:.0f} {kind_txt}")
    return out
