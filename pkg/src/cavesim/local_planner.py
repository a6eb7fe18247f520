"""Local planning: hybrid A*, the gaps planner (continuous in-bin refinement),
Bezier trajectory generation, and recovery-behaviour arbitration."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .config import PlannerConfig
from .geometry import Pose2D, angle_diff, wrap_angle
from .mapping import LBL_FATAL, LBL_TRAV, LBL_UNKNOWN, TraversabilityMap, VIRTUAL


@dataclass
class Path:
    poses: list[Pose2D]
    planner_tag: str            # hybrid_astar | gaps
    cost: float

    def length(self) -> float:
        return sum(self.poses[i].distance_to(self.poses[i + 1])
                   for i in range(len(self.poses) - 1))


class FootprintChecker:
    """Circle-vs-fatal-cell collision queries with an EDT fast path."""

    def __init__(self, trav: TraversabilityMap):
        self.labels = trav.labels
        self.res = trav.resolution
        fatal = trav.labels == LBL_FATAL
        if fatal.any():
            # centre-to-centre distance to the nearest fatal cell
            self.dist = ndimage.distance_transform_edt(~fatal) * self.res
        else:
            self.dist = None
        self._diag = self.res * 0.7072

    def clearance_hint(self, x: float, y: float) -> float:
        if self.dist is None:
            return 1e9
        h, w = self.labels.shape
        ix = min(w - 1, max(0, int(x / self.res)))
        iy = min(h - 1, max(0, int(y / self.res)))
        return float(self.dist[iy, ix])

    def clear(self, x: float, y: float, radius: float) -> bool:
        h, w = self.labels.shape
        if not (0.0 <= x < w * self.res and 0.0 <= y < h * self.res):
            return False
        if self.dist is None:
            return True
        hint = self.clearance_hint(x, y)
        if hint - self._diag > radius:
            return True
        if hint + self._diag < radius:
            return False
        return kernels.footprint_clear(self.labels, self.res, x, y, radius)

    def clearance(self, x: float, y: float, search: float = 2.0) -> float:
        if self.dist is None:
            return search
        hint = self.clearance_hint(x, y)
        if hint - self._diag > search:
            return search
        return kernels.clearance_to_fatal(self.labels, self.res, x, y, search)


def _segment_clear(checker: FootprintChecker, a: Pose2D, b: Pose2D,
                   radius: float, margin: float) -> bool:
    d = a.distance_to(b)
    n = max(2, int(math.ceil(d / (2.0 * margin))))
    for k in range(n + 1):
        t = k / n
        if not checker.clear(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, radius):
            return False
    return True


def _primitives(pose: Pose2D, width: float, step: float, yaw_step: float):
    """Arc motion primitives from a continuous pose: curvature set
    {0, +-1/w, +-2/w} plus in-place rotation of one yaw bin."""
    out = []
    for kappa in (0.0, 1.0 / width, -1.0 / width, 2.0 / width, -2.0 / width):
        if kappa == 0.0:
            nx = pose.x + step * math.cos(pose.yaw)
            ny = pose.y + step * math.sin(pose.yaw)
            nyaw = pose.yaw
        else:
            nyaw = pose.yaw + kappa * step
            nx = pose.x + (math.sin(nyaw) - math.sin(pose.yaw)) / kappa
            ny = pose.y - (math.cos(nyaw) - math.cos(pose.yaw)) / kappa
        out.append((Pose2D(nx, ny, wrap_angle(nyaw)), step, False))
    for s in (1.0, -1.0):
        out.append((Pose2D(pose.x, pose.y, wrap_angle(pose.yaw + s * yaw_step)),
                    0.0, True))
    return out


def _grid_reachable(checker: FootprintChecker, start: Pose2D, goal: Pose2D,
                    radius: float, goal_tol: float) -> bool:
    """Optimistic 8-connected flood fill: is there any cell path from start
    to the goal disk whose cells might fit the bare footprint?  A negative
    answer proves the pose search would fail, at a fraction of its cost."""
    if checker.dist is None:
        return True
    res = checker.res
    h, w = checker.labels.shape
    pad = 2.0 * res
    x0 = max(0, int((min(start.x, goal.x) - pad) / res) - 4)
    x1 = min(w - 1, int((max(start.x, goal.x) + pad) / res) + 4)
    y0 = max(0, int((min(start.y, goal.y) - pad) / res) - 4)
    y1 = min(h - 1, int((max(start.y, goal.y) + pad) / res) + 4)
    need = radius - checker._diag          # generous: cell may still fit
    gx, gy = goal.x / res, goal.y / res
    tol_c = goal_tol / res + 0.7072
    sx = min(x1, max(x0, int(start.x / res)))
    sy = min(y1, max(y0, int(start.y / res)))
    seen = {(sx, sy)}
    queue = deque([(sx, sy)])
    while queue:
        cx, cy = queue.popleft()
        if math.hypot(cx + 0.5 - gx, cy + 0.5 - gy) <= tol_c:
            return True
        for nx in (cx - 1, cx, cx + 1):
            for ny in (cy - 1, cy, cy + 1):
                if (nx, ny) in seen or not (x0 <= nx <= x1 and y0 <= ny <= y1):
                    continue
                seen.add((nx, ny))
                if checker.dist[ny, nx] >= need:
                    queue.append((nx, ny))
    return False


def _plan(trav: TraversabilityMap, start: Pose2D, goal: Pose2D, spec,
          cfg: PlannerConfig, refine: bool,
          heights: Optional[np.ndarray] = None,
          max_expansions: int = 40000, shortcut: bool = False) -> Optional[Path]:
    res = trav.resolution
    h, w = trav.labels.shape
    checker = FootprintChecker(trav)
    radius = spec.width / 2.0
    margin = max(cfg.safety_margin, res / 10.0)
    r_check = radius + margin
    yaw_bins = cfg.yaw_bins
    yaw_step = 2.0 * math.pi / yaw_bins
    step = res * 1.2
    tag = "gaps" if refine else "hybrid_astar"

    if not checker.clear(start.x, start.y, r_check):
        return None
    # optional fast path: an unobstructed straight run needs no search
    if shortcut and checker.clear(goal.x, goal.y, r_check) and \
            _segment_clear(checker, start, goal, r_check, margin):
        d = start.distance_to(goal)
        return Path([start, Pose2D(goal.x, goal.y, goal.yaw)], tag, d)
    goal_tol = res * 1.01
    # the search accepts any pose within goal_tol of the goal; when no spot
    # in that disk even fits the bare footprint, fail before searching
    s = goal_tol * 0.7071
    if not any(checker.clear(goal.x + ox, goal.y + oy, radius)
               for ox, oy in ((0.0, 0.0), (goal_tol, 0.0), (-goal_tol, 0.0),
                              (0.0, goal_tol), (0.0, -goal_tol),
                              (s, s), (s, -s), (-s, s), (-s, -s))):
        return None
    if not _grid_reachable(checker, start, goal, radius, goal_tol):
        return None

    def bin_of(p: Pose2D):
        ix = int(p.x / res)
        iy = int(p.y / res)
        yb = int(round(p.yaw / yaw_step)) % yaw_bins
        return ix, iy, yb

    def hval(p: Pose2D) -> float:
        return p.distance_to(goal)

    def cell_mult(p: Pose2D) -> float:
        ix = min(w - 1, max(0, int(p.x / res)))
        iy = min(h - 1, max(0, int(p.y / res)))
        lbl = trav.labels[iy, ix]
        if lbl == LBL_UNKNOWN:
            return 2.0
        if trav.prov[iy, ix] == VIRTUAL:
            return cfg.virtual_cost_mult
        return 1.0

    def edge_cost(a: Pose2D, b: Pose2D, length: float) -> float:
        c = length * cell_mult(b)
        clear = checker.clearance_hint(b.x, b.y)
        if clear < 0.5:
            c += cfg.step_penalty * (1.0 - clear / 0.5) * max(length, res * 0.2)
        if heights is not None and length > 0:
            ia = (min(h - 1, int(a.y / res)), min(w - 1, int(a.x / res)))
            ib = (min(h - 1, int(b.y / res)), min(w - 1, int(b.x / res)))
            dh = abs(float(heights[ib]) - float(heights[ia]))
            c += cfg.slope_penalty * math.degrees(math.atan2(dh, length))
        return c

    def refine_pose(p: Pose2D, parent: Optional[Pose2D]) -> Pose2D:
        """Projected clearance ascent bounded to the pose's grid bin."""
        ix, iy = int(p.x / res), int(p.y / res)
        lo_x, hi_x = ix * res, (ix + 1) * res
        lo_y, hi_y = iy * res, (iy + 1) * res
        cur = p
        cur_c = checker.clearance(cur.x, cur.y, search=1.0)
        eps = 0.005
        for _ in range(cfg.gaps_iterations):
            gx = (checker.clearance(cur.x + eps, cur.y, 1.0)
                  - checker.clearance(cur.x - eps, cur.y, 1.0)) / (2 * eps)
            gy = (checker.clearance(cur.x, cur.y + eps, 1.0)
                  - checker.clearance(cur.x, cur.y - eps, 1.0)) / (2 * eps)
            norm = math.hypot(gx, gy)
            if norm < 1e-9:
                break
            cand = Pose2D(min(hi_x, max(lo_x, cur.x + cfg.gaps_step * gx / norm)),
                          min(hi_y, max(lo_y, cur.y + cfg.gaps_step * gy / norm)),
                          cur.yaw)
            cand_c = checker.clearance(cand.x, cand.y, search=1.0)
            if cand_c <= cur_c:
                break
            if parent is not None and not _segment_clear(checker, parent, cand,
                                                         r_check, margin):
                break
            cur, cur_c = cand, cand_c
        return cur

    start_key = bin_of(start)
    open_heap: list = []
    g_best = {start_key: 0.0}
    poses = {start_key: start}
    parents: dict = {start_key: None}
    h0 = hval(start)
    heapq.heappush(open_heap, (h0, h0, start_key))
    closed = set()
    expansions = 0
    goal_key = None

    while open_heap:
        f, hv, key = heapq.heappop(open_heap)
        if key in closed:
            continue
        closed.add(key)
        pose = poses[key]
        if refine and checker.clearance_hint(pose.x, pose.y) < r_check + 2 * res:
            parent_key = parents[key]
            parent_pose = poses[parent_key] if parent_key is not None else None
            better = refine_pose(pose, parent_pose)
            if (better.x, better.y) != (pose.x, pose.y):
                pose = better
                poses[key] = pose
        if pose.distance_to(goal) <= goal_tol:
            goal_key = key
            break
        expansions += 1
        if expansions > max_expansions:
            return None
        g = g_best[key]
        for npose, length, is_rot in _primitives(pose, spec.width, step, yaw_step):
            if not (0.0 <= npose.x < w * res and 0.0 <= npose.y < h * res):
                continue
            nkey = bin_of(npose)
            if nkey in closed:
                continue
            if not refine:
                # hybrid A*: nodes live on the position/yaw lattice; only the
                # gaps planner may keep (and later refine) continuous poses
                npose = Pose2D((nkey[0] + 0.5) * res, (nkey[1] + 0.5) * res,
                               wrap_angle(nkey[2] * yaw_step))
            if not is_rot and not _segment_clear(checker, pose, npose,
                                                 r_check, margin):
                continue
            cost = edge_cost(pose, npose, length) if not is_rot else res
            ng = g + cost
            if ng < g_best.get(nkey, math.inf) - 1e-12:
                g_best[nkey] = ng
                poses[nkey] = npose
                parents[nkey] = key
                nh = hval(npose)
                heapq.heappush(open_heap, (ng + nh, nh, nkey))

    if goal_key is None:
        return None
    seq = []
    k = goal_key
    while k is not None:
        seq.append(poses[k])
        k = parents[k]
    seq.reverse()
    end = seq[-1]
    if end.distance_to(goal) > 1e-9 and _segment_clear(checker, end, goal,
                                                       r_check, margin):
        seq.append(Pose2D(goal.x, goal.y, goal.yaw))
    return Path(seq, "gaps" if refine else "hybrid_astar", g_best[goal_key])


def plan_hybrid_astar(trav, start, goal, spec, cfg: PlannerConfig | None = None,
                      heights=None, max_expansions: int = 40000,
                      shortcut: bool = False) -> Optional[Path]:
    return _plan(trav, start, goal, spec, cfg or PlannerConfig(), False,
                 heights, max_expansions, shortcut)


def plan_gaps(trav, start, goal, spec, cfg: PlannerConfig | None = None,
              heights=None, max_expansions: int = 40000,
              shortcut: bool = False) -> Optional[Path]:
    return _plan(trav, start, goal, spec, cfg or PlannerConfig(), True,
                 heights, max_expansions, shortcut)


def planner_arbitration(trav, start, goal, spec,
                        cfg: PlannerConfig | None = None, heights=None,
                        max_expansions: int = 40000,
                        shortcut: bool = False) -> tuple[Optional[Path], Optional[str]]:
    """Hybrid A* first; fall back to the gaps planner. Returns (path, tag)."""
    cfg = cfg or PlannerConfig()
    path = plan_hybrid_astar(trav, start, goal, spec, cfg, heights,
                             max_expansions, shortcut)
    if path is not None:
        return path, "hybrid_astar"
    path = plan_gaps(trav, start, goal, spec, cfg, heights, max_expansions,
                     shortcut)
    if path is not None:
        return path, "gaps"
    return None, None


# ---------------------------------------------------------------------------
# Trajectory generation (degree-10 Bezier over x, y, yaw)

N_CTRL = 11
_BINOM = np.array([math.comb(10, k) for k in range(N_CTRL)], dtype=float)


def _bernstein_matrix(degree: int, n_samples: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n_samples)[:, None]
    k = np.arange(degree + 1)[None, :]
    binom = np.array([math.comb(degree, j) for j in range(degree + 1)])
    return binom * (s ** k) * ((1.0 - s) ** (degree - k))


_VERIFY_B9 = _bernstein_matrix(9, 1200)  # kinematic-limit verification grid


@dataclass
class Trajectory:
    control: np.ndarray          # (11, 3): x, y, yaw
    duration: float
    speed_scale: float
    t0: float = 0.0              # sim time at creation

    def _basis(self, s: float) -> np.ndarray:
        s = min(1.0, max(0.0, s))
        k = np.arange(N_CTRL)
        return _BINOM * (s ** k) * ((1.0 - s) ** (10 - k))

    def sample(self, t: float) -> tuple[float, float, float, float, float]:
        """Pose and commanded (v, w) at relative time t; holds the end state
        (zero velocity) past the duration."""
        s = min(1.0, max(0.0, t / self.duration)) if self.duration > 0 else 1.0
        b = self._basis(s)
        x, y, yaw = b @ self.control
        if self.duration <= 0 or t >= self.duration:
            return float(x), float(y), float(yaw), 0.0, 0.0
        d = 10.0 * (self.control[1:] - self.control[:-1])
        kd = np.arange(N_CTRL - 1)
        bd = np.array([math.comb(9, k) for k in range(10)]) \
            * (s ** kd) * ((1.0 - s) ** (9 - kd))
        dx, dy, dyaw = (bd @ d) / self.duration
        return float(x), float(y), float(yaw), float(math.hypot(dx, dy)), float(dyaw)

    def end_pose(self) -> Pose2D:
        x, y, yaw = self.control[-1]
        return Pose2D(float(x), float(y), float(yaw))


def _resample_polyline(pts: list[tuple[float, float, float]], n: int):
    if len(pts) == 1:
        return [pts[0]] * n
    seg = [math.hypot(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1])
           for i in range(len(pts) - 1)]
    total = sum(seg)
    if total <= 1e-12:
        return [pts[0]] * n
    out = []
    acc = np.concatenate([[0.0], np.cumsum(seg)])
    for k in range(n):
        target = total * k / (n - 1)
        i = int(np.searchsorted(acc, target, side="right")) - 1
        i = min(i, len(seg) - 1)
        t = (target - acc[i]) / seg[i] if seg[i] > 0 else 0.0
        x = pts[i][0] + (pts[i + 1][0] - pts[i][0]) * t
        y = pts[i][1] + (pts[i + 1][1] - pts[i][1]) * t
        yaw = pts[i][2] + angle_diff(pts[i + 1][2], pts[i][2]) * t
        out.append((x, y, yaw))
    return out


def generate_trajectory(path: Path, pose: Pose2D, v_prev: float,
                        checker: FootprintChecker, cfg: PlannerConfig,
                        t_now: float = 0.0,
                        prev: Optional[Trajectory] = None) -> Trajectory:
    """Fit a trajectory to the path within the obstacle-bounded horizon.

    Horizon = distance to the nearest fatal cell (capped); speed scale shrinks
    linearly with it.  The first control points pin C1 continuity with the
    last command; the last two coincide for a built-in safe stop.
    """
    if not path.poses:
        raise ValueError("empty path")
    horizon = min(cfg.horizon_max, max(0.3, checker.clearance(
        pose.x, pose.y, search=cfg.horizon_max)))
    scale = min(1.0, max(0.15, horizon / cfg.horizon_max))

    # clip path at the horizon (arc length from its start)
    pts = [(pose.x, pose.y, pose.yaw)]
    acc = 0.0
    last = pts[0]
    for p in path.poses:
        d = math.hypot(p.x - last[0], p.y - last[1])
        if acc + d > horizon and d > 0:
            t = (horizon - acc) / d
            pts.append((last[0] + (p.x - last[0]) * t,
                        last[1] + (p.y - last[1]) * t,
                        p.yaw))
            break
        pts.append((p.x, p.y, p.yaw))
        acc += d
        last = (p.x, p.y, p.yaw)

    seg = [math.hypot(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1])
           for i in range(len(pts) - 1)]
    arclen = sum(seg)
    cum = np.concatenate([[0.0], np.cumsum(seg)]) if seg else np.zeros(1)
    v_cap = scale * cfg.v_max
    v_start = min(v_prev, v_cap)

    # trapezoidal speed profile along the arc: ramp v_start -> v_pk -> 0
    a_p = 0.8 * cfg.a_max
    v_pk = min(0.95 * v_cap, math.sqrt(max(a_p * arclen + v_start ** 2 / 2.0,
                                           0.0)))
    if v_pk >= v_start:
        d_acc = (v_pk ** 2 - v_start ** 2) / (2.0 * a_p)
        t_acc = (v_pk - v_start) / a_p
        a_dec = a_p
    else:  # too short to hold v_start: decelerate the whole way
        v_pk = v_start
        d_acc = t_acc = 0.0
        a_dec = v_start ** 2 / (2.0 * arclen) if arclen > 1e-9 else a_p
    d_dec = v_pk ** 2 / (2.0 * a_dec) if a_dec > 0 else 0.0
    d_cru = max(0.0, arclen - d_acc - d_dec)
    t_dec = v_pk / a_dec if a_dec > 0 else 0.0
    t_cru = d_cru / v_pk if v_pk > 1e-6 else 0.0
    T = max(0.4, t_acc + t_cru + t_dec)

    def s_of(t: float) -> float:
        if t <= t_acc:
            return v_start * t + 0.5 * a_p * t * t
        if t <= t_acc + t_cru:
            return d_acc + v_pk * (t - t_acc)
        td = min(t - t_acc - t_cru, t_dec)
        return min(arclen, d_acc + d_cru + v_pk * td - 0.5 * a_dec * td * td)

    def point_at(target: float) -> tuple[float, float, float]:
        if arclen <= 1e-12:
            return pts[0]
        i = min(int(np.searchsorted(cum, target, side="right")) - 1,
                len(seg) - 1)
        t = (target - cum[i]) / seg[i] if seg[i] > 0 else 0.0
        return (pts[i][0] + (pts[i + 1][0] - pts[i][0]) * t,
                pts[i][1] + (pts[i + 1][1] - pts[i][1]) * t,
                pts[i][2] + angle_diff(pts[i + 1][2], pts[i][2]) * t)

    samples = [point_at(s_of(T * k / (N_CTRL - 1))) for k in range(N_CTRL)]

    # unwrap yaw so the Bezier interpolates the short way around
    yaws = [samples[0][2]]
    for k in range(1, N_CTRL):
        yaws.append(yaws[-1] + angle_diff(samples[k][2], wrap_angle(yaws[-1])))

    for _ in range(8):
        ctrl = np.array([[s[0], s[1], yw] for s, yw in zip(samples, yaws)])
        ctrl[0] = [pose.x, pose.y, yaws[0]]
        # C1: first derivative at s=0 is 10 (P1 - P0) / T
        ctrl[1, 0] = pose.x + math.cos(pose.yaw) * v_start * T / 10.0
        ctrl[1, 1] = pose.y + math.sin(pose.yaw) * v_start * T / 10.0
        ctrl[1, 2] = ctrl[0, 2]
        ctrl[-2] = ctrl[-1]  # zero terminal velocity at the local goal
        traj = Trajectory(ctrl, T, scale, t0=t_now)
        vel = (_VERIFY_B9 @ (10.0 * np.diff(ctrl[:, :2], axis=0))) / T
        vs = np.hypot(vel[:, 0], vel[:, 1])
        accs = np.abs(np.diff(vs)) / (T / (len(vs) - 1))
        vmax = vs.max() if len(vs) else 0.0
        amax = accs.max() if len(accs) else 0.0
        if vmax <= v_cap * 1.0001 and amax <= cfg.a_max * 0.999:
            return traj
        grow = max(vmax / max(v_cap, 1e-9), math.sqrt(amax / cfg.a_max))
        T *= max(1.05, min(grow, 4.0))
    if prev is not None:
        return prev
    # degenerate fallback: hold position (safe stop)
    ctrl = np.tile([pose.x, pose.y, pose.yaw], (N_CTRL, 1))
    return Trajectory(ctrl, 0.0, scale, t0=t_now)


# ---------------------------------------------------------------------------
# Behaviour arbitration

PATH_FOLLOW, DECOLLIDE, ORIENT_CORRECTION, STOPPED = (
    "path_follow", "decollide", "orient_correction", "stopped")


@dataclass
class BehaviorState:
    active: str = STOPPED
    last_command: tuple[float, float] = (0.0, 0.0)
    stats: dict = field(default_factory=lambda: {
        PATH_FOLLOW: 0.0, DECOLLIDE: 0.0, ORIENT_CORRECTION: 0.0, STOPPED: 0.0})


def find_clear_pose(checker: FootprintChecker, pose: Pose2D,
                    radius: float) -> Optional[Pose2D]:
    """Deterministic spiral search for the nearest collision-free pose."""
    res = checker.res
    for r_mult in range(1, 21):
        r = r_mult * res * 0.5
        for a_step in range(16):
            ang = 2.0 * math.pi * a_step / 16
            x = pose.x + r * math.cos(ang)
            y = pose.y + r * math.sin(ang)
            if checker.clear(x, y, radius):
                return Pose2D(x, y, pose.yaw)
    return None


def step_behaviors(state: BehaviorState, checker: FootprintChecker,
                   have_plan: bool, traj: Optional[Trajectory],
                   pose: Pose2D, pitch: float, roll: float,
                   spec, cfg: PlannerConfig, t: float, dt: float):
    """Select the active behaviour by priority and emit a velocity command."""
    radius = spec.width / 2.0
    if max(abs(pitch), abs(roll)) > cfg.tip_threshold:
        active = ORIENT_CORRECTION
        cmd = (0.0, 0.0)
    elif not checker.clear(pose.x, pose.y, radius):
        active = DECOLLIDE
        target = find_clear_pose(checker, pose, radius + cfg.safety_margin)
        if target is None:
            cmd = (0.0, 0.0)
        else:
            heading = pose.heading_to(target)
            cmd = (0.3, angle_diff(heading, pose.yaw))
    elif have_plan and traj is not None:
        active = PATH_FOLLOW
        _, _, _, v, wz = traj.sample(t - traj.t0)
        cmd = (v, wz)
    else:
        active = STOPPED
        cmd = (0.0, 0.0)
    state.active = active
    state.last_command = cmd
    state.stats[active] += dt
    return cmd, active


# ---------------------------------------------------------------------------
# Debug dumps: line-delimited (t, x, y, yaw, v, w) records

def dump_trajectory(traj: Trajectory, dt: float = 0.04) -> str:
    lines = []
    t = 0.0
    while t <= traj.duration + 1e-9:
        x, y, yaw, v, wz = traj.sample(t)
        lines.append(f"{traj.t0 + t:.3f} {x:.4f} {y:.4f} {yaw:.4f} {v:.4f} {wz:.4f}")
        t += dt
    return "\n".join(lines)


def dump_path(path: Path) -> str:
    return "\n".join(f"{i} {p.x:.4f} {p.y:.4f} {p.yaw:.4f}"
                     for i, p in enumerate(path.poses))
