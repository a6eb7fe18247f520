"""Aerial frontier selection and relocation.

The UAV explores by ranking frontiers on size, proximity, heading alignment
and — dominating everything else — known reachability.  Reachability is
learned from the path-search tree: trees that push deep into a frontier leave
a witness point which later frontier generations inherit; frontiers the tree
approaches but cannot enter are excluded permanently.  When the local pose
window runs dry the UAV relocates to the window with the most reachable
frontiers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .config import UavConfig

MODE_EXPLORE = "explore"
MODE_WAYPOINT3D = "waypoint3d"
MODE_WAYPOINT2D = "waypoint2d"
MODE_PLANAR = "planar"
UAV_MODES = (MODE_EXPLORE, MODE_WAYPOINT3D, MODE_WAYPOINT2D, MODE_PLANAR)


@dataclass
class UAVFrontier:
    id: str
    center: tuple[float, float]
    cells: set[int]                  # flat grid indices covered
    window: int                      # pose-window association
    reachable: bool = False
    witness: Optional[tuple[float, float]] = None
    excluded: bool = False

    @property
    def size(self) -> int:
        return len(self.cells)


@dataclass
class UAVControlMode:
    mode: str = MODE_EXPLORE
    waypoint: Optional[tuple[float, float, float]] = None
    plane_point: Optional[tuple[float, float, float]] = None
    plane_normal: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        if self.mode not in UAV_MODES:
            raise ValueError(f"unknown UAV mode {self.mode!r}")
        if self.mode == MODE_PLANAR and (self.plane_point is None
                                         or self.plane_normal is None):
            raise ValueError("planar mode requires a plane")


def frontier_score(f: UAVFrontier, pos: tuple[float, float],
                   prev_heading: float, cfg: UavConfig) -> float:
    d = math.hypot(f.center[0] - pos[0], f.center[1] - pos[1])
    if d > 1e-9:
        bearing = math.atan2(f.center[1] - pos[1], f.center[0] - pos[0])
        align = math.cos(bearing - prev_heading)
    else:
        align = 1.0
    return (cfg.w_size * f.size - cfg.w_dist * d + cfg.w_align * align
            + (cfg.w_reach if f.reachable else 0.0))


def score_frontiers(frontiers: Iterable[UAVFrontier],
                    pos: tuple[float, float], prev_heading: float,
                    cfg: UavConfig | None = None
                    ) -> list[tuple[float, UAVFrontier]]:
    """Non-excluded frontiers ranked best first; ties broken by id."""
    cfg = cfg or UavConfig()
    scored = [(frontier_score(f, pos, prev_heading, cfg), f)
              for f in frontiers if not f.excluded]
    scored.sort(key=lambda sf: (-sf[0], sf[1].id))
    return scored


def update_reachability(frontier: UAVFrontier,
                        tree_points: Iterable[tuple[float, float]],
                        plan_end: Optional[tuple[float, float]],
                        cfg: UavConfig | None = None) -> UAVFrontier:
    """Classify one frontier from the current search tree.

    The tree reaching deep into the frontier proves reachability (the closest
    tree point is kept as a witness).  A tree that gets near but whose plan
    has to end much farther away than the tree distance marks the frontier
    unreachable.
    """
    cfg = cfg or UavConfig()
    if frontier.excluded:
        return frontier
    best_d = float("inf")
    best_p: Optional[tuple[float, float]] = None
    for p in tree_points:
        d = math.hypot(p[0] - frontier.center[0], p[1] - frontier.center[1])
        if d < best_d:
            best_d, best_p = d, p
    if best_p is None:
        return frontier
    if best_d <= cfg.d_reach:
        frontier.reachable = True
        frontier.witness = best_p
        return frontier
    if best_d <= cfg.near_gate and plan_end is not None:
        end_d = math.hypot(plan_end[0] - frontier.center[0],
                           plan_end[1] - frontier.center[1])
        if end_d - best_d > cfg.detour_gate:
            frontier.reachable = False
            frontier.witness = None
            frontier.excluded = True
    return frontier


def point_cell(p: tuple[float, float], res: float, grid_width: int) -> int:
    return int(p[1] / res) * grid_width + int(p[0] / res)


def exclude_containing(excluded: UAVFrontier,
                       frontiers: Iterable[UAVFrontier],
                       res: float, grid_width: int) -> list[UAVFrontier]:
    """Exclude every other frontier whose cells contain the excluded center."""
    cell = point_cell(excluded.center, res, grid_width)
    out = []
    for f in frontiers:
        if f.id != excluded.id and cell in f.cells:
            f.excluded = True
            f.reachable = False
            f.witness = None
            out.append(f)
    return out


def inherit_reachability(cleared: UAVFrontier,
                         frontiers: Iterable[UAVFrontier],
                         res: float, grid_width: int) -> list[UAVFrontier]:
    """Frontiers containing the cleared frontier's witness become reachable."""
    if cleared.witness is None:
        return []
    cell = point_cell(cleared.witness, res, grid_width)
    out = []
    for f in frontiers:
        if f.excluded or f.id == cleared.id:
            continue
        if cell in f.cells and not f.reachable:
            f.reachable = True
            f.witness = cleared.witness
            out.append(f)
    return out


def select_frontier(frontiers: Iterable[UAVFrontier], current_window: int,
                    pos: tuple[float, float], prev_heading: float,
                    cfg: UavConfig | None = None) -> Optional[UAVFrontier]:
    """Best frontier within the current or adjacent pose windows."""
    local = [f for f in frontiers
             if abs(f.window - current_window) <= 1 and not f.excluded]
    ranked = score_frontiers(local, pos, prev_heading, cfg)
    return ranked[0][1] if ranked else None


def relocate(frontiers: Iterable[UAVFrontier]) -> Optional[int]:
    """Pose window with the most reachable frontiers.

    Ties prefer more total frontiers, then the lowest window id.  None means
    exploration is complete (no candidate frontiers anywhere).
    """
    windows: dict[int, tuple[int, int]] = {}
    for f in frontiers:
        if f.excluded:
            continue
        r, t = windows.get(f.window, (0, 0))
        windows[f.window] = (r + (1 if f.reachable else 0), t + 1)
    if not windows:
        return None
    return min(windows, key=lambda w: (-windows[w][0], -windows[w][1], w))


@dataclass
class FlightState:
    airborne: bool = False
    flight_used: float = 0.0        # seconds aloft
    prev_heading: float = 0.0
    mode: UAVControlMode = field(default_factory=UAVControlMode)
    progress_anchor: Optional[tuple[float, float]] = None
    progress_t: float = 0.0

    def flight_remaining(self, cfg: UavConfig) -> float:
        return max(0.0, cfg.flight_minutes * 60.0 - self.flight_used)


def can_launch(parent_speed: float, ceiling_height: float,
               cfg: UavConfig | None = None) -> bool:
    """Marsupial launch needs a stationary parent and take-off clearance."""
    cfg = cfg or UavConfig()
    return parent_speed <= 1e-3 and ceiling_height >= cfg.launch_clearance


def progress_stalled(state: FlightState, pos: tuple[float, float],
                     now: float, cfg: UavConfig | None = None) -> bool:
    """True when the UAV has not moved 1 m toward anything for the timeout."""
    cfg = cfg or UavConfig()
    if state.progress_anchor is None:
        state.progress_anchor = pos
        state.progress_t = now
        return False
    d = math.hypot(pos[0] - state.progress_anchor[0],
                   pos[1] - state.progress_anchor[1])
    if d >= 1.0:
        state.progress_anchor = pos
        state.progress_t = now
        return False
    return now - state.progress_t >= cfg.progress_timeout
