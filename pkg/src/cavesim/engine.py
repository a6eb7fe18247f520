"""Deterministic 25 Hz simulation loop tying every subsystem together.

One tick advances, in a fixed order: dynamic events, sensing, mapping, frame
publication, connectivity, data exchange, perception, the task market, and
per-agent control with kinematic integration and fall checks.  All cadences
derive from the tick counter, never from wall time, so two runs with the same
scenario, seed, and command stream produce identical state hashes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import comms, global_nav, local_planner, mapping, perception, tasking, uav
from .comms import (
    CommsNode,
    EphemeralRouter,
    KIND_COST_MAP,
    KIND_DETECTION,
    KIND_MAP_FRAME,
    KIND_TASK_MSG,
    publish_frame,
)
from .geometry import Pose2D, wrap_angle
from .local_planner import (
    BehaviorState,
    FootprintChecker,
    PATH_FOLLOW,
    planner_arbitration,
    generate_trajectory,
    step_behaviors,
)
from .mapping import (
    HeightMap,
    LBL_FATAL,
    LBL_TRAV,
    LBL_UNKNOWN,
    classify_traversability,
    empty_traversability,
    integrate_observation,
    merge_traversability,
)
from .perception import Detection, Tracker, report_record, simulate_detections
from .world import Scenario, apply_dynamic_events, sample_lidar

MODE_TELEOP = "teleoperation"
MODE_WAYPOINT = "waypoint"
MODE_DROP_NODE = "drop_node_cmd"
MODE_DEFAULT = "default_task"
MODE_MANUAL = "manual_task"
MODE_PRIORITIZED = "prioritized_task"
MODE_BATTERY = "battery_return"
MODE_FALLEN = "fallen"
AGENT_MODES = (MODE_TELEOP, MODE_WAYPOINT, MODE_DROP_NODE, MODE_DEFAULT,
               MODE_MANUAL, MODE_PRIORITIZED, MODE_BATTERY, MODE_FALLEN)

SCORE_RADIUS = 5.0          # m: report must localize the artefact within this
ARRIVE_RADIUS = 0.7         # m: goal considered reached
GOAL_CHANGE_TOL = 1.0       # m: goal drift forcing a fresh plan
LOCAL_GOAL_RANGE = 8.0      # m: plan directly when the goal is this close
FULL_REPLAN_PERIOD = 2.5    # s between full path searches while one is live
PLAN_RETRY_PERIOD = 0.5     # s before retrying after a failed search
TELEOP_DEFAULT_S = 0.5      # s a teleop twist stays live without refresh
DROP_HOLD_S = 1.0           # s an agent holds still while deploying a node
UAV_RETURN_RESERVE = 60.0   # s of flight kept back for the return leg
MAX_CANDIDATE_TASKS = 6     # explore tasks offered to the market per cycle
FRONTIER_SAMPLE_MAX = 150   # frontier cells fed to clustering per cycle
TASK_BLACKLIST_S = 180.0    # s a task stays banned after a nav failure
MULE_CREDIT_CAP = 150_000.0  # bytes of unused link budget a pair may bank
SCRIPT_RETRY_S = 30.0       # s a scheduled command retries before expiring


# ---------------------------------------------------------------------------
# Scoring


@dataclass
class ReportOutcome:
    scored: bool
    reason: str                 # "scored" | "no_match" | "duplicate"
    artefact_id: Optional[str] = None


class ScoreServer:
    """One point per ground-truth artefact: class match within 5 m, once."""

    def __init__(self, artefacts):
        self.artefacts = list(artefacts)
        self.scored: dict[str, tuple[float, Optional[str]]] = {}
        self.outcomes: list[tuple[float, str, ReportOutcome]] = []

    @property
    def score(self) -> int:
        return len(self.scored)

    def submit(self, cls: str, position: tuple[float, float], now: float,
               guid: Optional[str] = None) -> ReportOutcome:
        best = None
        dup = False
        for a in sorted(self.artefacts, key=lambda a: a.id):
            if a.cls != cls:
                continue
            d = math.hypot(a.position[0] - position[0],
                           a.position[1] - position[1])
            if d > SCORE_RADIUS:
                continue
            if a.id in self.scored:
                dup = True
                continue
            if best is None or d < best[0]:
                best = (d, a)
        if best is not None:
            self.scored[best[1].id] = (now, guid)
            out = ReportOutcome(True, "scored", best[1].id)
        elif dup:
            out = ReportOutcome(False, "duplicate")
        else:
            out = ReportOutcome(False, "no_match")
        self.outcomes.append((now, guid or "", out))
        return out


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class RunMetrics:
    elapsed: float
    mode_table: dict[str, dict[str, float]]       # agent -> mode -> percent
    planner_table: dict[str, dict[str, float]]    # agent -> planner -> percent
    behaviour_table: dict[str, dict[str, float]]  # agent -> behaviour -> percent
    data_table: dict[str, float]                  # frame kind -> percent
    data_bytes: dict[str, float]                  # frame kind -> bytes at base
    reports_per_min: float
    dedup_savings: int
    score: int
    scored_artefacts: list[tuple[float, str, str]]  # (time, artefact, guid)

    def to_text(self) -> str:
        lines = [f"elapsed_s {self.elapsed:.2f}", f"score {self.score}"]
        lines.append("[mode_percent]")
        for agent in sorted(self.mode_table):
            row = self.mode_table[agent]
            cells = " ".join(f"{m}={row[m]:.3f}" for m in AGENT_MODES)
            lines.append(f"{agent} {cells}")
        lines.append("[planner_percent]")
        for agent in sorted(self.planner_table):
            row = self.planner_table[agent]
            cells = " ".join(f"{k}={row[k]:.3f}" for k in sorted(row))
            lines.append(f"{agent} {cells}")
        lines.append("[behaviour_percent]")
        for agent in sorted(self.behaviour_table):
            row = self.behaviour_table[agent]
            cells = " ".join(f"{k}={row[k]:.3f}" for k in sorted(row))
            lines.append(f"{agent} {cells}")
        lines.append("[data_percent_at_base]")
        for kind in sorted(self.data_table):
            lines.append(f"{kind} {self.data_table[kind]:.3f} "
                         f"bytes={self.data_bytes.get(kind, 0.0):.0f}")
        lines.append(f"reports_per_min {self.reports_per_min:.3f}")
        lines.append(f"dedup_savings {self.dedup_savings}")
        lines.append("[scored]")
        for ts, art, guid in self.scored_artefacts:
            lines.append(f"{ts:.2f} {art} {guid}")
        return "\n".join(lines) + "\n"


def _percent_row(times: dict[str, float]) -> dict[str, float]:
    total = sum(times.values())
    if total <= 0.0:
        # nothing accumulated: report an all-zero row padded to 100 on the
        # first key so the sum invariant holds even for degenerate runs
        keys = sorted(times)
        row = {k: 0.0 for k in keys}
        if keys:
            row[keys[0]] = 100.0
        return row
    return {k: 100.0 * v / total for k, v in times.items()}


# ---------------------------------------------------------------------------
# Per-agent runtime state


@dataclass
class ManualTask:
    id: str
    node: str                      # graph node id to visit
    drop_node: bool = False        # deploy a relay on arrival


class AgentState:
    def __init__(self, spec, world, cfg):
        self.spec = spec
        self.pose: Pose2D = spec.start
        self.v = 0.0
        self.battery = 1.0
        self.fallen = False
        self.mode = MODE_DEFAULT
        self.mode_time = {m: 0.0 for m in AGENT_MODES}
        self.planner_time = {"hybrid_astar": 0.0, "gaps": 0.0, "none": 0.0}
        self.behavior = BehaviorState()
        self.hmap = HeightMap(world.resolution, world.width, world.height)
        self.trav = empty_traversability(world.resolution, world.width,
                                         world.height)
        self.checker = FootprintChecker(self.trav)
        self.claimed = np.zeros((world.height, world.width), dtype=bool)
        self.shared = np.zeros((world.height, world.width), dtype=bool)
        self.peer_labels = np.zeros((world.height, world.width),
                                    dtype=np.uint8)
        self.node = CommsNode(spec.id, "agent", (spec.start.x, spec.start.y))
        self.droppers = spec.node_droppers
        self.graph: Optional[global_nav.TopoGraph] = None   # set by engine
        self.market = tasking.MarketState(spec.id)
        self.tracker = Tracker(cfg.perception)
        self.inbox: list = []
        self.prioritized_ids: set[str] = set()
        self.task_blacklist: dict[str, float] = {}
        self.peer_tasks: dict[str, tuple[tasking.Task, float]] = {}
        self.last_node: Optional[str] = None
        # control
        self.goal: Optional[tuple[float, float]] = None
        self.goal_kind = "none"     # none|waypoint|task|manual|return|uav
        self.path = None
        self.path_tag = "none"
        self.plan_t = -1e9
        self.plan_fails = 0
        self.goal_fail_mem: dict[tuple[int, int], int] = {}
        self.trajectory = None
        self.teleop: Optional[tuple[float, float, int]] = None  # v, w, until
        self.waypoint: Optional[tuple[float, float]] = None
        self.manual: list[ManualTask] = []
        self.drop_hold_until = -1
        self.forced_return = False
        self.at_base = False
        self.last_base_contact = 0.0
        self.last_frame_cells: Optional[set[int]] = None
        # nav-failure watchdog
        self.nav_anchor: Optional[tuple[float, float]] = None
        self.nav_anchor_t = 0.0
        self.nav_goal_cell: Optional[int] = None
        # aerial lifecycle
        self.docked_on: Optional[str] = None
        self.airborne = False
        self.landed = False
        self.flight = uav.FlightState()
        self.uav_target: Optional[tuple[float, float]] = None
        self.uav_excluded: set[str] = set()

    @property
    def id(self) -> str:
        return self.spec.id

    def active_ground(self) -> bool:
        return not self.spec.is_aerial and not self.fallen

    def senses(self) -> bool:
        if self.fallen:
            return True            # fallen agents keep sensing and relaying
        if self.spec.is_aerial:
            return self.airborne
        return True


# ---------------------------------------------------------------------------
# Engine


class CommandError(ValueError):
    pass


class Engine:
    def __init__(self, scenario: Scenario, log_schedule: bool = False,
                 recorder=None):
        self.scenario = scenario
        self.world = scenario.world
        self.cfg = scenario.config
        self.dt = self.cfg.dt
        self.rng = np.random.default_rng(scenario.seed)
        self.tick_count = 0
        self.log_schedule = log_schedule
        self.schedule_log: list[tuple[int, str]] = []
        self.recorder = recorder
        self.hash_every = 250
        self.event_log: list[tuple[float, str]] = []
        self._script: list[dict] = [dict(s) for s in scenario.script]

        # cadences in ticks
        self.sense_every = max(1, round(1.0 / (self.cfg.mapping.local_rate * self.dt)))
        self.global_every = max(1, round(1.0 / (self.cfg.mapping.global_rate * self.dt)))
        self.frame_every = max(1, round(self.cfg.frames.frame_period / self.dt))
        self.market_every = max(1, round(self.cfg.tasking.market_period / self.dt))

        # graphs link any overlapping submaps regardless of capture window;
        # windows advance with time, so revisits must still connect
        self.graph_cfg = dataclasses.replace(self.cfg.global_nav,
                                             window_neighbourhood=10 ** 9)

        self.agents: dict[str, AgentState] = {}
        for spec in scenario.agents:
            a = AgentState(spec, self.world, self.cfg)
            a.graph = self._new_graph(spec)
            self.agents[spec.id] = a
        self.order = sorted(self.agents)
        for a in self.agents.values():
            if a.spec.marsupial_child:
                child = self.agents[a.spec.marsupial_child]
                child.docked_on = a.id
                child.pose = a.pose

        self.base = CommsNode("base", "base",
                              (self.world.base_pose.x, self.world.base_pose.y))
        self.base_graph = self._new_graph(None)
        self.base_labels = np.zeros((self.world.height, self.world.width),
                                    dtype=np.uint8)
        self.base_tracker = Tracker(self.cfg.perception)
        self.review: dict[str, dict] = {}      # guid -> review entry
        self.score_server = ScoreServer(self.world.artefacts)
        self.dropped: list[CommsNode] = []
        self.router = EphemeralRouter()
        self.regions: dict[str, tasking.PriorityRegion] = {}
        self.conn = comms.update_connectivity(self.world, self._comm_nodes(),
                                              0.0, self.cfg.comms)
        self._ledger_ver: dict[str, int] = {}
        self._pair_cache: dict[tuple[str, str], tuple[int, int]] = {}
        self._pair_credit: dict[tuple[str, str], float] = {}
        self._truth_fatal: dict[str, np.ndarray] = {}
        self._rebuild_truth()
        self._base_review_order = 0
        self._cmd_seq = 0
        self._signals: list = []

    # -- setup helpers ------------------------------------------------------

    def _new_graph(self, spec) -> global_nav.TopoGraph:
        speed = spec.max_speed if spec is not None else 1.2
        return global_nav.TopoGraph(self.world.resolution, self.world.width,
                                    self.graph_cfg, speed=speed,
                                    slope_pen=self.graph_cfg.slope_pen,
                                    rough_pen=self.graph_cfg.rough_pen)

    def _rebuild_truth(self):
        """Ground-truth fatality per agent kind, used only for fall checks.

        Thresholds are 1.5x the mapping limits: cells the belief map flags as
        marginal stay physically survivable, while real drops do not.  Like
        the belief classifier, the step test is directional — a cell is a
        drop edge when a neighbour is far *below* it; standing at the base
        of a wall or cliff face is safe.  Steep continuous inclines (height
        differences below the drop threshold but above the slope limit per
        cell) are fatal from either side.
        """
        self._truth_fatal.clear()
        w = self.world
        for a in self.agents.values():
            key = self._truth_key(a.spec)
            if key in self._truth_fatal:
                continue
            if a.spec.is_aerial:
                fatal = (w.wall == 1) | (w.ceil < a.spec.clearance_height)
            else:
                g = w.ground
                open_ = w.wall == 0
                drop_lim = 1.5 * a.spec.step_limit
                slope_dh = w.resolution * math.tan(
                    math.radians(1.5 * a.spec.slope_limit))
                drop = np.zeros_like(g)
                incline = np.zeros_like(g)
                for axis in (0, 1):
                    diff = np.diff(g, axis=axis)  # next minus current
                    lo = (slice(None, -1), slice(None)) if axis == 0 \
                        else (slice(None), slice(None, -1))
                    hi = (slice(1, None), slice(None)) if axis == 0 \
                        else (slice(None), slice(1, None))
                    # the ground sheet under a wall is not a surface anyone
                    # can fall onto; pairs touching a wall contribute nothing
                    diff = np.where(open_[lo] & open_[hi], diff, 0.0)
                    drop[lo] = np.maximum(drop[lo], -diff)
                    drop[hi] = np.maximum(drop[hi], diff)
                    cont = np.where(np.abs(diff) <= drop_lim,
                                    np.abs(diff), 0.0)
                    incline[lo] = np.maximum(incline[lo], cont)
                    incline[hi] = np.maximum(incline[hi], cont)
                fatal = ((w.ceil - g < a.spec.clearance_height)
                         | (drop > drop_lim)
                         | (incline > slope_dh))
            self._truth_fatal[key] = fatal

    @staticmethod
    def _truth_key(spec) -> str:
        if spec.is_aerial:
            return f"aerial:{spec.clearance_height}"
        return f"ground:{spec.slope_limit}:{spec.step_limit}:{spec.clearance_height}"

    def _comm_nodes(self) -> list[CommsNode]:
        out = [self.base]
        for aid in sorted(self.agents):
            a = self.agents[aid]
            if a.docked_on is None:
                out.append(a.node)
        out.extend(self.dropped)
        return out

    # -- public API ---------------------------------------------------------

    @property
    def sim_time(self) -> float:
        return self.tick_count * self.dt

    @property
    def score(self) -> int:
        return self.score_server.score

    def run(self, duration: Optional[float] = None):
        duration = self.scenario.duration if duration is None else duration
        ticks = round(duration / self.dt)
        while self.tick_count < ticks:
            self.tick()
        if self.recorder is not None:
            self.recorder.end(self.tick_count, self.score, self.state_hash())

    def tick(self, dt: Optional[float] = None):
        if dt is not None:
            if dt == 0.0:
                return                      # zero step: state unchanged
            if abs(dt - self.dt) > 1e-12:
                raise ValueError("engine runs at a fixed time step")
        k = self.tick_count
        t = k * self.dt

        if self._script:
            self._run_script(t)
        self._log(k, "events")
        self._stage_events(t)
        if k % self.sense_every == 0:
            self._log(k, "sense")
            self._log(k, "map_local")
            self._stage_sense(t, k % self.global_every == 0)
            if k % self.global_every == 0:
                self._log(k, "map_global")
        if k % self.frame_every == 0 and k > 0:
            self._log(k, "frames")
            self._stage_frames(t)
        if k % self.sense_every == 0:
            self._log(k, "connectivity")
            self.conn = comms.update_connectivity(
                self.world, self._comm_nodes(), t, self.cfg.comms)
            self._log(k, "mule")
            self._stage_mule(t)
        self._stage_ephemeral(k)
        if k % self.sense_every == 0:
            self._log(k, "perception")
            self._stage_perception(t, k)
        if k % self.market_every == 0:
            self._log(k, "market")
            self._stage_market(t, k)
        self._log(k, "control")
        self._stage_control(t, k)
        self.tick_count += 1
        if self.recorder is not None and self.tick_count % self.hash_every == 0:
            self.recorder.hash(self.tick_count, self.state_hash())

    def _log(self, tick: int, stage: str):
        if self.log_schedule:
            self.schedule_log.append((tick, stage))

    # -- stage 1: dynamic events ---------------------------------------------

    def _stage_events(self, t: float):
        poses = [self.agents[aid].pose for aid in self.order]
        fired = apply_dynamic_events(self.world, t, poses)
        for eid in fired:
            self.event_log.append((t, f"event:{eid}"))
        if fired:
            self._rebuild_truth()

    # -- stage 2/3: sensing and mapping ---------------------------------------

    def _stage_sense(self, t: float, global_pass: bool):
        s = self.cfg.sensors
        w = self.world
        for aid in self.order:
            a = self.agents[aid]
            if not a.senses() or a.docked_on is not None:
                continue
            obs = sample_lidar(w, a.pose, s.lidar_range, s.lidar_rays,
                               s.sensor_height, s.wall_obs_height)
            integrate_observation(
                a.hmap, obs,
                ceil_lookup=lambda ix, iy: float(w.ceil[iy, ix]))
            if global_pass:
                # the slow pass must label everything the sensor can have
                # observed, or the frontier band would sit in cells that are
                # height-observed but never classified
                rng = max(self.cfg.mapping.global_range, s.lidar_range + 1.0)
            else:
                rng = self.cfg.mapping.local_range
            win = classify_traversability(a.hmap, a.spec, rng, a.pose,
                                          generated_at=t)
            if a.spec.is_aerial:
                a.trav = win
            else:
                merge_traversability(a.trav, win)
            a.checker = FootprintChecker(a.trav)
            self._validate_path(a)

    def _validate_path(self, a: AgentState):
        """Drop a live plan as soon as fresh mapping marks it fatal."""
        if a.path is None:
            return
        labels = a.trav.labels
        h, w = labels.shape
        res = a.trav.resolution
        for p in a.path.poses:
            ix = min(w - 1, max(0, int(p.x / res)))
            iy = min(h - 1, max(0, int(p.y / res)))
            if labels[iy, ix] == LBL_FATAL:
                a.path = None
                a.trajectory = None
                return

    # -- stage 4: frame publication -------------------------------------------

    def _stage_frames(self, t: float):
        window = self.tick_count // self.frame_every
        fc = self.cfg.frames
        for aid in self.order:
            a = self.agents[aid]
            if a.docked_on is not None or not a.senses():
                continue
            known = a.trav.labels != LBL_UNKNOWN
            newly = known & ~a.claimed
            if not newly.any():
                continue
            ys, xs = np.nonzero(newly)
            idxs = (ys * self.world.width + xs).tolist()
            cells = set(idxs)
            heights = a.hmap.heights
            states = a.hmap.state
            map_payload = {
                "agent": aid,
                "cells": [(i, float(heights[iy, ix]), int(states[iy, ix]))
                          for i, iy, ix in zip(idxs, ys.tolist(), xs.tolist())],
            }
            publish_frame(a.node, KIND_MAP_FRAME,
                          fc.map_bytes_per_cell * len(idxs), t,
                          payload=map_payload, cells=cells,
                          prev_cells=a.last_frame_cells, cfg=fc)
            a.last_frame_cells = cells
            submap = self._window_submap(a, newly, known, window)
            labels = a.trav.labels
            prov = a.trav.prov
            cost_payload = {
                "agent": aid,
                "submap": submap,
                "labels": [(i, int(labels[iy, ix]), int(prov[iy, ix]))
                           for i, iy, ix in zip(idxs, ys.tolist(), xs.tolist())],
            }
            publish_frame(a.node, KIND_COST_MAP,
                          max(1.0, fc.map_bytes_per_cell * len(idxs) / 10.0),
                          t, payload=cost_payload, cfg=fc)
            a.graph.add_submap(submap)
            self._refresh_base_node(a)
            a.claimed |= newly
            self._ledger_ver[aid] = self._ledger_ver.get(aid, 0) + 1

    def _window_submap(self, a: AgentState, newly: np.ndarray,
                       known: np.ndarray, window: int) -> global_nav.Submap:
        """Segment this window's new cells (plus a known border for linking)."""
        grow = np.zeros_like(newly)
        grow[1:, :] |= newly[:-1, :]
        grow[:-1, :] |= newly[1:, :]
        grow[:, 1:] |= newly[:, :-1]
        grow[:, :-1] |= newly[:, 1:]
        mask = newly | (grow & known)
        ys, xs = np.nonzero(mask)
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        crop = mapping.TraversabilityMap(
            a.trav.resolution,
            np.where(mask[y0:y1, x0:x1], a.trav.labels[y0:y1, x0:x1],
                     LBL_UNKNOWN).astype(np.uint8),
            a.trav.prov[y0:y1, x0:x1].copy(),
            a.trav.analysis_range, a.trav.generated_at)
        sub = global_nav.build_submap(crop, window, a.id, x1 - x0,
                                      heights=a.hmap.heights[y0:y1, x0:x1],
                                      cfg=self.graph_cfg)
        res = a.trav.resolution
        width = self.world.width
        for sp in sub.superpixels:      # lift crop-local cells to the full grid
            sp.cells = sorted((c // (x1 - x0) + y0) * width
                              + (c % (x1 - x0) + x0) for c in sp.cells)
            sp.centroid = (sp.centroid[0] + x0 * res, sp.centroid[1] + y0 * res)
        sub.grid_width = width
        return sub

    def _refresh_base_node(self, holder):
        graph = holder.graph if isinstance(holder, AgentState) else holder
        if graph.base_node is None:
            bx, by = self.world.cell_of(self.world.base_pose.x,
                                        self.world.base_pose.y)
            graph.base_node = graph.node_of_cell(by * self.world.width + bx)

    # -- stage 5/6: connectivity, muling, ephemeral ----------------------------

    def _stage_mule(self, t: float):
        nodes = {n.id: n for n in self._comm_nodes()}
        budget_s = self.sense_every * self.dt
        for pair in sorted(self.conn.links):
            na, nb = nodes.get(pair[0]), nodes.get(pair[1])
            if na is None or nb is None:
                continue
            va = self._ledger_ver.get(na.id, 0)
            vb = self._ledger_ver.get(nb.id, 0)
            # a slow link earns byte credit across steps so frames larger
            # than one step's budget still get through eventually
            credit = min(self._pair_credit.get(pair, 0.0)
                         + self.conn.links[pair] * budget_s, MULE_CREDIT_CAP)
            if self._pair_cache.get(pair) == (va, vb) \
                    and credit >= MULE_CREDIT_CAP:
                self._pair_credit[pair] = credit
                continue
            transfers = comms.mule_sync_step(na, nb, credit, self.cfg.comms)
            if transfers:
                credit -= sum(f.size for _, f in transfers)
                for rid, frame in transfers:
                    self._ledger_ver[rid] = self._ledger_ver.get(rid, 0) + 1
                    self._deliver_frame(rid, frame, t)
                self._pair_cache.pop(pair, None)
            else:
                self._pair_cache[pair] = (va, vb)
            self._pair_credit[pair] = credit
        # track base contact for sync-task ages
        for aid in self.order:
            a = self.agents[aid]
            if self.conn.hop_path(aid, "base") is not None:
                a.last_base_contact = t
                a.at_base = True
            else:
                a.at_base = False

    def _deliver_frame(self, receiver_id: str, frame, t: float):
        payload = frame.payload
        if receiver_id == "base":
            if frame.kind == KIND_COST_MAP and payload is not None:
                self.base_graph.add_submap(payload["submap"])
                self._refresh_base_node(self.base_graph)
                for i, lbl, _prov in payload["labels"]:
                    iy, ix = divmod(i, self.world.width)
                    self.base_labels[iy, ix] = lbl
            elif frame.kind == KIND_DETECTION and payload is not None:
                self._base_ingest_report(payload, t)
            return
        a = self.agents.get(receiver_id)
        if a is None:
            return                       # dropped relays store, nothing more
        if frame.kind == KIND_MAP_FRAME and payload is not None:
            if payload.get("agent") != a.id:
                for i, _h, _s in payload["cells"]:
                    iy, ix = divmod(i, self.world.width)
                    a.shared[iy, ix] = True
        elif frame.kind == KIND_COST_MAP and payload is not None:
            if payload.get("agent") != a.id:
                a.graph.add_submap(payload["submap"])
                self._refresh_base_node(a)
                for i, lbl, _prov in payload["labels"]:
                    iy, ix = divmod(i, self.world.width)
                    a.peer_labels[iy, ix] = lbl
        elif frame.kind == KIND_DETECTION and payload is not None:
            if payload.get("agent") != a.id:
                a.tracker.ingest(_detection_from_record(payload))
        elif frame.kind == KIND_TASK_MSG and payload is not None:
            if "fail" in payload:
                src_cell, dst_cell = payload["fail"]
                global_nav.record_traversal_failure(a.graph, src_cell, dst_cell)

    def _base_ingest_report(self, rec: dict, t: float):
        guid, action = self.base_tracker.ingest(_detection_from_record(rec))
        entry = self.review.get(guid)
        if entry is None:
            entry = {"guid": guid, "order": self._base_review_order,
                     "class": rec["class"], "records": [], "status": "pending",
                     "first_tick": rec["tick"]}
            self._base_review_order += 1
            self.review[guid] = entry
        entry["records"].append(rec)
        if action == "silent":
            return
        if self.cfg.auto_accept and entry["status"] != "rejected":
            track = self.base_tracker.tracks[guid]
            out = self.score_server.submit(track.cls, track.position, t, guid)
            if out.scored:
                entry["status"] = "accepted"

    def _stage_ephemeral(self, k: int):
        for dst, message in self.router.deliveries(k):
            a = self.agents.get(dst)
            if a is not None:
                a.inbox.append(message)

    # -- stage 7: perception ---------------------------------------------------

    def _stage_perception(self, t: float, k: int):
        pc = self.cfg.perception
        dt = self.sense_every * self.dt
        for aid in self.order:
            a = self.agents[aid]
            if not a.senses() or a.docked_on is not None:
                continue
            dets = simulate_detections(self.world, aid, a.pose, a.spec.camera,
                                       self.rng, k, dt, pc)
            for det in dets:
                guid, action = a.tracker.ingest(det)
                if action == "silent":
                    continue
                rec = report_record(guid, a.tracker.tracks[guid], det)
                publish_frame(a.node, KIND_DETECTION,
                              self.cfg.frames.detection_bytes, t,
                              payload=rec, cfg=self.cfg.frames)
                self._ledger_ver[aid] = self._ledger_ver.get(aid, 0) + 1
            markers = perception.sample_signals(self.world, a.pose, k, pc)
            if markers:
                self._signals = self._signals[-199:] + \
                    [(aid, m) for m in markers]

    # -- stage 8: task market ---------------------------------------------------

    def _stage_market(self, t: float, k: int):
        tc = self.cfg.tasking
        for aid in self.order:
            a = self.agents[aid]
            if a.fallen or a.docked_on is not None:
                continue
            if a.spec.is_aerial:
                self._uav_market(a, t)
                continue
            # expire old blacklist entries
            a.task_blacklist = {tid: ts for tid, ts in a.task_blacklist.items()
                                if t - ts < TASK_BLACKLIST_S}
            msgs = a.inbox
            a.inbox = []
            # task bodies ride along with bids so peers can contest them
            for m in msgs:
                if isinstance(m, dict) and isinstance(m.get("task_body"), dict):
                    tk = _task_from_record(m["task_body"])
                    if tk is not None and tk.generator != aid:
                        a.peer_tasks[tk.id] = (tk, float(m.get("ts", t)))
            horizon = 3.0 * tc.market_period
            a.peer_tasks = {tid: tt for tid, tt in a.peer_tasks.items()
                            if t - tt[1] < horizon}
            dist_cache: dict[str, dict[str, float]] = {}

            def d_of(src: str) -> dict[str, float]:
                if src not in dist_cache:
                    dist_cache[src] = a.graph._dijkstra(src)[0]
                return dist_cache[src]

            my_node = self._agent_node(a)

            def travel(src, dst):
                if dst not in a.graph.nodes:
                    return None
                if src is None:
                    if my_node is None:
                        return None
                    d = d_of(my_node).get(dst)
                else:
                    if src not in a.graph.nodes:
                        return None
                    d = d_of(src).get(dst)
                return d

            def graph_len(na, nb):
                if na not in a.graph.nodes or nb not in a.graph.nodes:
                    return None
                dist, _ = a.graph._dijkstra(na, weight="length")
                return dist.get(nb)

            equivalent = tasking.make_equivalent(graph_len, tc.equiv_radius)
            tasking.consensus_step(a.market, msgs, equivalent)

            fresh = self._explore_tasks(a, t)
            age = None
            if a.node.store.frame_count() and not a.at_base:
                pend = t - a.last_base_contact
                age = pend if pend > 0 else None
            sp, forced = tasking.generate_special_tasks(
                tasking.SpecialTaskInputs(aid, a.graph.base_node or "",
                                          a.battery, age, t), tc)
            a.forced_return = forced
            candidates = {tk.id: tk for tk in fresh}
            for tk, _ts in a.peer_tasks.values():
                candidates[tk.id] = tk
            for tk in sp:
                if a.graph.base_node is not None:
                    candidates[tk.id] = tasking.Task(
                        tk.id, tk.kind, a.graph.base_node, tk.reward,
                        tk.duration, tk.generator)
            for tid in a.task_blacklist:
                candidates.pop(tid, None)
            # frontier clusters are regenerated every round and their ids
            # follow the shrinking frontier; keep commitments by substituting
            # the nearest fresh cluster for a vanished bundle entry
            used = {tk.id for tk in a.market.bundle}
            for i, tk in enumerate(a.market.bundle):
                if tk.id in candidates or tk.kind != tasking.KIND_EXPLORE:
                    continue
                best = None
                for cand in candidates.values():
                    if cand.kind != tasking.KIND_EXPLORE or cand.id in used:
                        continue
                    d = 0.0 if cand.location == tk.location \
                        else graph_len(tk.location, cand.location)
                    if d is None or d > tc.equiv_radius:
                        continue
                    if best is None or (d, cand.id) < (best[0], best[1].id):
                        best = (d, cand)
                if best is not None:
                    cand = best[1]
                    win = a.market.winners.pop(tk.id, None)
                    if win is not None:
                        a.market.winners.setdefault(cand.id, win)
                    a.market.bundle[i] = cand
                    used.add(cand.id)
            # prune completed / stale bundle entries
            a.market.bundle = [tk for tk in a.market.bundle
                               if tk.id in candidates]
            a.market.tasks = {**candidates,
                              **{tk.id: tk for tk in a.market.bundle}}
            a.market.winners = {
                tid: w for tid, w in a.market.winners.items()
                if tid in a.market.tasks or t - w[2] < 60.0}
            reward_of, prioritized = self._reward_fn(a)
            extra = self._separation_fn(a)
            bids = tasking.build_bundle(a.market, my_node,
                                        candidates.values(), travel, tc, t,
                                        reward_of=reward_of, extra_travel=extra)
            a.prioritized_ids = {tk.id for tk in a.market.bundle
                                 if tk.id in prioritized}
            for bid in bids:
                rec = bid.to_record()
                tk = a.market.tasks.get(bid.task_id)
                if tk is not None:
                    rec["task_body"] = _task_record(tk)
                for peer in self.order:
                    if peer != aid and self.agents[peer].active_ground():
                        self.router.send(self.conn, aid, peer, rec, k)

    def _agent_node(self, a: AgentState) -> Optional[str]:
        ix, iy = self.world.cell_of(a.pose.x, a.pose.y)
        return a.graph.node_of_cell(iy * self.world.width + ix)

    def _explore_tasks(self, a: AgentState, t: float) -> list[tasking.Task]:
        cells = _frontier_cells(a.trav.labels, a.hmap.state, a.shared, a.peer_labels)
        if not len(cells):
            return []
        if len(cells) > FRONTIER_SAMPLE_MAX:
            stride = len(cells) // FRONTIER_SAMPLE_MAX + 1
            cells = cells[::stride]
        ets = global_nav.cluster_frontiers(a.graph, cells.tolist(), a.id)
        ets.sort(key=lambda e: (-len(e.frontier_cells), e.id))
        tc = self.cfg.tasking
        out = []
        for e in ets[:MAX_CANDIDATE_TASKS]:
            out.append(tasking.Task(id=e.id, kind=tasking.KIND_EXPLORE,
                                    location=e.representative,
                                    reward=tc.explore_reward,
                                    duration=tc.explore_duration,
                                    generator=a.id))
        return out

    def _reward_fn(self, a: AgentState):
        regions = sorted(self.regions.values(), key=lambda r: r.id)
        prioritized: set[str] = set()
        if not regions:
            return None, prioritized
        downstream_cache: dict[str, set[str]] = {}

        def node_xy(node: str):
            sp = a.graph.nodes.get(node)
            return sp.centroid if sp is not None else (math.inf, math.inf)

        def downstream_of(seed: str) -> set[str]:
            if seed not in downstream_cache:
                if a.graph.base_node is None or seed not in a.graph.nodes:
                    downstream_cache[seed] = set()
                else:
                    downstream_cache[seed] = global_nav.downstream_nodes(
                        a.graph, a.graph.base_node, [seed])
            return downstream_cache[seed]

        def reward_of(task: tasking.Task) -> float:
            r = tasking.apply_priority(task, regions, a.id, node_xy,
                                       downstream_of)
            if abs(r - task.reward) > 1e-12:
                prioritized.add(task.id)
            return r

        return reward_of, prioritized

    def _separation_fn(self, a: AgentState):
        base = a.graph.base_node
        if base is None:
            return None
        _, parent = global_nav.shortest_path_tree(a.graph, base)

        def base_edges(node: str) -> set:
            out = set()
            cur = node
            while parent.get(cur) is not None:
                out.add(a.graph._edge_key(cur, parent[cur]))
                cur = parent[cur]
            return out

        peer_sets = []
        for tid, (_v, winner, _ts) in sorted(a.market.winners.items()):
            if winner == a.id:
                continue
            tk = a.market.tasks.get(tid)
            if tk is not None and tk.location in parent:
                peer_sets.append(base_edges(tk.location))
        if not peer_sets:
            return None
        w_sep = self.cfg.tasking.w_sep

        def edge_length(key) -> float:
            e = a.graph.edges.get(key)
            return e.length if e is not None else 0.0

        def extra(task: tasking.Task) -> float:
            if task.location not in parent:
                return 0.0
            return tasking.separation_penalty(base_edges(task.location),
                                              peer_sets, edge_length, w_sep)

        return extra

    def _uav_market(self, a: AgentState, t: float):
        a.inbox = []
        if not a.airborne:
            return
        reserve = UAV_RETURN_RESERVE
        if a.flight.flight_remaining(self.cfg.uav) <= reserve:
            a.uav_target = None
            return
        reached = a.uav_target is not None and \
            math.hypot(a.pose.x - a.uav_target[0],
                       a.pose.y - a.uav_target[1]) <= ARRIVE_RADIUS * 2
        stalled = a.uav_target is not None and \
            uav.progress_stalled(a.flight, (a.pose.x, a.pose.y), t,
                                 self.cfg.uav)
        if stalled and a.uav_target is not None:
            a.uav_excluded.add(_block_id(a.uav_target, self.world))
            a.uav_target = None
            a.path = None
            a.trajectory = None
            a.flight.progress_anchor = None
        if a.uav_target is not None and not reached:
            return
        fronts = self._uav_frontiers(a)
        sel = uav.select_frontier(fronts, 0, (a.pose.x, a.pose.y),
                                  a.flight.prev_heading, self.cfg.uav)
        if sel is None:
            a.uav_target = None
            return
        a.uav_target = sel.center
        a.flight.prev_heading = math.atan2(sel.center[1] - a.pose.y,
                                           sel.center[0] - a.pose.x)
        a.flight.progress_anchor = None

    def _uav_frontiers(self, a: AgentState) -> list[uav.UAVFrontier]:
        cells = _frontier_cells(a.trav.labels, a.hmap.state, a.shared, a.peer_labels)
        blocks: dict[str, list[int]] = {}
        res = self.world.resolution
        for c in cells.tolist():
            iy, ix = divmod(c, self.world.width)
            bid = f"{ix // 8}:{iy // 8}"
            blocks.setdefault(bid, []).append(c)
        out = []
        for bid in sorted(blocks):
            members = blocks[bid]
            cx = float(np.mean([(c % self.world.width + 0.5) * res
                                for c in members]))
            cy = float(np.mean([(c // self.world.width + 0.5) * res
                                for c in members]))
            f = uav.UAVFrontier(bid, (cx, cy), set(members), 0)
            if bid in a.uav_excluded:
                f.excluded = True
            out.append(f)
        return out

    # -- stage 9: control -------------------------------------------------------

    def _stage_control(self, t: float, k: int):
        for aid in self.order:
            a = self.agents[aid]
            if k % self.global_every == 0 and not a.spec.is_aerial \
                    and not a.fallen:
                node = self._agent_node(a)
                if node is not None:
                    if a.last_node is not None and node != a.last_node:
                        a.graph.mark_traversed([a.last_node, node])
                    a.last_node = node
            mode = self._control_agent(a, t, k)
            a.mode = mode
            a.mode_time[mode] += self.dt
            a.node.position = (a.pose.x, a.pose.y)
            if a.behavior.active == PATH_FOLLOW and a.path is not None:
                a.planner_time[a.path_tag] += self.dt
            else:
                a.planner_time["none"] += self.dt
            # battery
            if a.spec.is_aerial:
                if a.airborne:
                    a.flight.flight_used += self.dt
                    a.battery = max(0.0, 1.0 - a.flight.flight_used /
                                    (self.cfg.uav.flight_minutes * 60.0))
                    if a.flight.flight_remaining(self.cfg.uav) <= 0.0:
                        a.airborne = False
                        a.landed = True
                        a.v = 0.0
            elif not a.fallen:
                a.battery = max(0.0, a.battery - self.dt /
                                (a.spec.battery_minutes * 60.0))
                if a.battery <= self.cfg.tasking.battery_critical:
                    a.forced_return = True

    def _control_agent(self, a: AgentState, t: float, k: int) -> str:
        if a.fallen:
            a.v = 0.0
            return MODE_FALLEN
        if a.docked_on is not None:
            a.pose = self.agents[a.docked_on].pose
            a.v = 0.0
            return MODE_DEFAULT
        if a.spec.is_aerial and not a.airborne:
            a.v = 0.0
            return MODE_DEFAULT if not a.landed else MODE_BATTERY
        if a.teleop is not None:
            v, wz, until = a.teleop
            if k >= until:
                a.teleop = None
            else:
                self._integrate_twist(a, v, wz)
                a.behavior.active = PATH_FOLLOW
                a.behavior.stats[PATH_FOLLOW] += self.dt
                return MODE_TELEOP
        if k < a.drop_hold_until:
            a.v = 0.0
            return MODE_DROP_NODE
        mode, goal = self._select_goal(a, t)
        self._drive(a, goal, t, k)
        return mode

    def _select_goal(self, a: AgentState, t: float):
        base_xy = (self.world.base_pose.x, self.world.base_pose.y)
        if a.spec.is_aerial:
            if a.flight.flight_remaining(self.cfg.uav) <= UAV_RETURN_RESERVE:
                if self._arrived(a, base_xy, 3.0):
                    a.airborne = False
                    a.landed = True
                    return MODE_BATTERY, None
                return MODE_BATTERY, base_xy
            if a.waypoint is not None:
                if self._arrived(a, a.waypoint):
                    a.waypoint = None
                else:
                    return MODE_WAYPOINT, a.waypoint
            return MODE_DEFAULT, a.uav_target
        if a.forced_return:
            if self._arrived(a, base_xy, 3.0):
                return MODE_BATTERY, None
            return MODE_BATTERY, base_xy
        if a.waypoint is not None:
            if self._arrived(a, a.waypoint):
                a.waypoint = None
            else:
                return MODE_WAYPOINT, a.waypoint
        if a.manual:
            task = a.manual[0]
            xy = self._node_xy(a, task.node)
            if xy is None or self._arrived(a, xy, 1.5):
                a.manual.pop(0)
                if task.drop_node and xy is not None:
                    self._do_drop(a, t)
                return (MODE_DROP_NODE if task.drop_node else MODE_MANUAL,
                        None)
            return (MODE_DROP_NODE if task.drop_node else MODE_MANUAL, xy)
        if a.market.bundle:
            task = a.market.bundle[0]
            xy = self._node_xy(a, task.location)
            mode = MODE_PRIORITIZED if task.id in a.prioritized_ids \
                else MODE_DEFAULT
            if task.kind == tasking.KIND_SYNC:
                if a.at_base:
                    self._complete_task(a, task.id)
                    return mode, None
                return mode, base_xy
            if xy is None or self._arrived(a, xy, 1.5):
                self._complete_task(a, task.id)
                return mode, None
            return mode, xy
        return MODE_DEFAULT, None

    def _node_xy(self, a: AgentState, node: str):
        sp = a.graph.nodes.get(node)
        return sp.centroid if sp is not None else None

    def _arrived(self, a: AgentState, xy, radius: float = ARRIVE_RADIUS) -> bool:
        return math.hypot(a.pose.x - xy[0], a.pose.y - xy[1]) <= radius

    def _complete_task(self, a: AgentState, tid: str):
        a.market.bundle = [tk for tk in a.market.bundle if tk.id != tid]
        a.market.tasks.pop(tid, None)
        a.market.winners.pop(tid, None)

    def _drive(self, a: AgentState, goal, t: float, k: int):
        pcfg = self.cfg.planner
        if a.spec.is_aerial:
            pcfg = dataclasses.replace(pcfg, v_max=self.cfg.uav.speed)
        if goal is None:
            a.goal = None
            a.path = None
            a.trajectory = None
            a.nav_anchor = None
        else:
            if a.goal is None or math.hypot(goal[0] - a.goal[0],
                                            goal[1] - a.goal[1]) > GOAL_CHANGE_TOL:
                a.path = None
                a.trajectory = None
                # resume any backoff this goal already earned so churning
                # between doomed objectives cannot reset the retry clock
                a.plan_fails = a.goal_fail_mem.get(self._goal_key(goal), 0)
                if a.plan_fails == 0:
                    a.plan_t = -1e9      # a fresh goal plans immediately
            a.goal = goal
            # consecutive failures back off exponentially so a goal the
            # planner cannot reach does not burn the tick budget
            retry = min(PLAN_RETRY_PERIOD * (2.0 ** a.plan_fails), 30.0) \
                if a.path is None else FULL_REPLAN_PERIOD
            if t - a.plan_t >= retry:
                self._replan(a, goal, pcfg, t)
            if a.path is not None and (
                    a.trajectory is None
                    or (a.trajectory.duration > 0.0
                        and t - a.trajectory.t0 >= a.trajectory.duration)):
                self._refit_trajectory(a, pcfg, t)
            self._nav_watchdog(a, goal, t)
        cmd, active = step_behaviors(
            a.behavior, a.checker, a.path is not None, a.trajectory,
            a.pose, 0.0, 0.0, a.spec, pcfg, t, self.dt)
        if active == PATH_FOLLOW and a.trajectory is not None:
            x, y, yaw, v, _w = a.trajectory.sample(t + self.dt - a.trajectory.t0)
            self._move_to(a, x, y, yaw, v)
        elif cmd != (0.0, 0.0):
            self._integrate_twist(a, cmd[0], cmd[1])
        else:
            a.v = 0.0

    @staticmethod
    def _goal_key(goal) -> tuple[int, int]:
        return (int(round(goal[0])), int(round(goal[1])))

    def _replan(self, a: AgentState, goal, pcfg, t: float):
        lg = self._local_goal(a, goal)
        yaw = math.atan2(lg[1] - a.pose.y, lg[0] - a.pose.x) \
            if (lg[0], lg[1]) != (a.pose.x, a.pose.y) else a.pose.yaw
        heights = None if a.spec.is_aerial else a.hmap.heights
        path, tag = planner_arbitration(
            a.trav, a.pose, Pose2D(lg[0], lg[1], yaw), a.spec, pcfg,
            heights=heights, max_expansions=1500, shortcut=True)
        a.plan_t = t
        gk = self._goal_key(goal)
        if path is None:
            a.plan_fails += 1
            if len(a.goal_fail_mem) > 64:
                a.goal_fail_mem.clear()
            a.goal_fail_mem[gk] = a.plan_fails
            a.path = None
            a.trajectory = None
            return
        a.plan_fails = 0
        a.goal_fail_mem.pop(gk, None)
        a.path = path
        a.path_tag = tag
        a.trajectory = None

    def _refit_trajectory(self, a: AgentState, pcfg, t: float):
        # trim the already-covered prefix so the fit starts at the agent
        poses = a.path.poses
        best_i = 0
        best_d = math.inf
        for i, p in enumerate(poses):
            d = p.distance_to(a.pose)
            if d < best_d:
                best_d, best_i = d, i
        rest = poses[best_i:]
        if len(rest) < 2 or (len(rest) == 2 and
                             rest[0].distance_to(rest[-1]) < 0.05):
            if a.pose.distance_to(poses[-1]) <= ARRIVE_RADIUS:
                a.path = None
                a.trajectory = None
                return
            rest = [a.pose, poses[-1]]
        trimmed = local_planner.Path(rest, a.path.planner_tag, a.path.cost)
        a.trajectory = generate_trajectory(trimmed, a.pose, a.v, a.checker,
                                           pcfg, t_now=t)

    def _nav_watchdog(self, a: AgentState, goal, t: float):
        gc = self.cfg.global_nav
        pos = (a.pose.x, a.pose.y)
        if a.nav_anchor is None or \
                math.hypot(pos[0] - a.nav_anchor[0],
                           pos[1] - a.nav_anchor[1]) >= gc.fail_progress:
            a.nav_anchor = pos
            a.nav_anchor_t = t
            return
        if t - a.nav_anchor_t < gc.fail_timeout:
            return
        # navigation failure: suppress the offending edge, tell the fleet,
        # and walk away from the current objective
        src_cell = self._cell_at(a.nav_anchor)
        dst_cell = self._cell_at(goal)
        global_nav.record_traversal_failure(a.graph, src_cell, dst_cell)
        publish_frame(a.node, KIND_TASK_MSG, self.cfg.frames.task_msg_bytes,
                      t, payload={"fail": [src_cell, dst_cell]},
                      cfg=self.cfg.frames)
        self._ledger_ver[a.id] = self._ledger_ver.get(a.id, 0) + 1
        self.event_log.append((t, f"nav_failure:{a.id}"))
        # release whichever objective is actually steering the agent;
        # waypoints outrank market tasks in goal selection
        if a.waypoint is not None:
            a.waypoint = None
        elif a.market.bundle:
            tid = a.market.bundle[0].id
            a.task_blacklist[tid] = t
            self._complete_task(a, tid)
        a.path = None
        a.trajectory = None
        a.nav_anchor = pos
        a.nav_anchor_t = t

    def _cell_at(self, xy) -> int:
        ix, iy = self.world.cell_of(xy[0], xy[1])
        return iy * self.world.width + ix

    def _local_goal(self, a: AgentState, goal):
        d = math.hypot(goal[0] - a.pose.x, goal[1] - a.pose.y)
        if d <= LOCAL_GOAL_RANGE:
            return goal
        gp = global_nav.plan_global(a.graph, self._cell_at((a.pose.x, a.pose.y)),
                                    self._cell_at(goal))
        if gp is not None and len(gp.nodes) > 1:
            # walk the route polyline and aim near the local-range horizon;
            # nodes can be further apart than the range, so interpolate
            # along the segment past the last in-range route point
            pts = [a.graph.nodes[n].centroid for n in gp.nodes] + [goal]
            best = None
            for i, c in enumerate(pts):
                if math.hypot(c[0] - a.pose.x,
                              c[1] - a.pose.y) <= LOCAL_GOAL_RANGE:
                    best = i
            if best is not None:
                # candidates, farthest forward first: interpolations past the
                # last in-range node, then route points walking back.  Both
                # interpolation corner-cuts and centroids of L-shaped regions
                # can land in rock, so take the first clear candidate.
                cands = []
                cx, cy = pts[best]
                if best + 1 < len(pts):
                    nx, ny = pts[best + 1]
                    seg = math.hypot(nx - cx, ny - cy)
                    room = (LOCAL_GOAL_RANGE - 1.0
                            - math.hypot(cx - a.pose.x, cy - a.pose.y))
                    if seg > 1e-9 and room > 0.0:
                        fr = min(1.0, room / seg)
                        while fr > 0.0:
                            cands.append((cx + (nx - cx) * fr,
                                          cy + (ny - cy) * fr))
                            fr -= 0.25
                cands.append((cx, cy))
                for i in range(best - 1, 0, -1):
                    cands.append(pts[i])
                r = a.spec.width / 2.0 + 0.05
                for qx, qy in cands:
                    if math.hypot(qx - a.pose.x, qy - a.pose.y) > 0.5 \
                            and a.checker.clear(qx, qy, r):
                        return (qx, qy)
        # no usable route: aim along the bee line, pulled back to the nearest
        # point that is known traversable (unknown pockets inside rock look
        # obstacle-free to the footprint checker)
        r = a.spec.width / 2.0 + 0.05
        f = (LOCAL_GOAL_RANGE - 2.0) / d
        while f > 0.1:
            qx = a.pose.x + (goal[0] - a.pose.x) * f
            qy = a.pose.y + (goal[1] - a.pose.y) * f
            ix, iy = self.world.cell_of(qx, qy)
            if a.trav.labels[iy, ix] == LBL_TRAV \
                    and a.checker.clear(qx, qy, r):
                break
            f -= 0.1
        return (a.pose.x + (goal[0] - a.pose.x) * f,
                a.pose.y + (goal[1] - a.pose.y) * f)

    # -- motion and physics -----------------------------------------------------

    def _integrate_twist(self, a: AgentState, v: float, wz: float):
        v = max(-a.spec.max_speed, min(a.spec.max_speed, v))
        wz = max(-self.cfg.planner.w_max, min(self.cfg.planner.w_max, wz))
        yaw = wrap_angle(a.pose.yaw + wz * self.dt)
        x = a.pose.x + v * math.cos(yaw) * self.dt
        y = a.pose.y + v * math.sin(yaw) * self.dt
        self._move_to(a, x, y, yaw, abs(v))

    def _move_to(self, a: AgentState, x: float, y: float, yaw: float,
                 v: float):
        eps = 1e-6
        x = min(self.world.width * self.world.resolution - eps, max(0.0, x))
        y = min(self.world.height * self.world.resolution - eps, max(0.0, y))
        ix, iy = self.world.cell_of(x, y)
        if self.world.wall[iy, ix]:
            a.v = 0.0                      # walls block, they do not fell
            a.trajectory = None
            return
        a.pose = Pose2D(x, y, wrap_angle(yaw))
        a.v = v
        if self._truth_fatal[self._truth_key(a.spec)][iy, ix]:
            a.fallen = True
            a.v = 0.0
            a.trajectory = None
            a.path = None
            self.event_log.append((self.sim_time, f"fallen:{a.id}"))

    # -- supervisor commands ------------------------------------------------------

    def _run_script(self, t: float):
        """Fire scheduled scenario commands; a rejected command (for example
        the target is briefly out of comms) retries until its window closes.
        Scripted commands are part of the scenario, so they are not recorded:
        a replay re-runs the script itself."""
        rest = []
        for cmd in self._script:
            if cmd["t"] > t:
                rest.append(cmd)
                continue
            self._cmd_seq += 1
            try:
                self._apply_command(cmd)
                self.event_log.append((t, f"script:{cmd['kind']}"))
            except (CommandError, comms.CommsError):
                if t - cmd["t"] < SCRIPT_RETRY_S:
                    rest.append(cmd)
                else:
                    self.event_log.append((t, f"script_expired:{cmd['kind']}"))
        self._script = rest

    def ingest_command(self, cmd: dict) -> dict:
        """Apply one supervisor command between ticks; returns the ack."""
        self._cmd_seq += 1
        ack = {"seq": self._cmd_seq, "kind": cmd.get("kind"),
               "tick": self.tick_count}
        try:
            self._apply_command(cmd)
            ack["status"] = "accepted"
        except (CommandError, comms.CommsError) as e:
            ack["status"] = "rejected"
            ack["reason"] = str(e)
        if self.recorder is not None:
            self.recorder.command(self.tick_count, cmd, ack)
        return ack

    def _agent_for(self, cmd: dict, allow_fallen: bool = False) -> AgentState:
        aid = cmd.get("agent")
        a = self.agents.get(aid)
        if a is None:
            raise CommandError(f"unknown agent id {aid!r}")
        if a.fallen and not allow_fallen:
            raise CommandError(f"agent {aid} has fallen")
        if self.conn.hop_path("base", aid) is None:
            raise CommandError(f"agent {aid} is out of comms")
        return a

    def _apply_command(self, cmd: dict):
        kind = cmd.get("kind")
        if kind == "teleop":
            a = self._agent_for(cmd)
            dur = float(cmd.get("duration", TELEOP_DEFAULT_S))
            a.teleop = (float(cmd["v"]), float(cmd["w"]),
                        self.tick_count + max(1, round(dur / self.dt)))
            a.path = None
            a.trajectory = None
        elif kind == "waypoint":
            a = self._agent_for(cmd)
            x, y = float(cmd["x"]), float(cmd["y"])
            if not self.world.in_bounds(x, y):
                raise CommandError("waypoint outside the world")
            a.waypoint = (x, y)
            a.teleop = None
        elif kind == "drop_node":
            a = self._agent_for(cmd)
            self._do_drop(a, self.sim_time)
            a.drop_hold_until = self.tick_count + round(DROP_HOLD_S / self.dt)
        elif kind == "launch_uav":
            parent = self._agent_for(cmd)
            if parent.spec.marsupial_child is None:
                raise CommandError(f"agent {parent.id} carries no aircraft")
            child = self.agents[parent.spec.marsupial_child]
            if child.docked_on is None:
                raise CommandError("aircraft already launched")
            ix, iy = self.world.cell_of(parent.pose.x, parent.pose.y)
            ceiling = float(self.world.ceil[iy, ix])
            if not uav.can_launch(parent.v, ceiling, self.cfg.uav):
                raise CommandError("launch conditions not met")
            child.docked_on = None
            child.airborne = True
            child.pose = parent.pose
            child.node.position = (parent.pose.x, parent.pose.y)
        elif kind == "uav_mode":
            a = self._agent_for(cmd)
            if not a.spec.is_aerial:
                raise CommandError(f"agent {a.id} is not an aircraft")
            mode = uav.UAVControlMode(
                cmd.get("mode", uav.MODE_EXPLORE),
                waypoint=tuple(cmd["waypoint"]) if "waypoint" in cmd else None,
                plane_point=tuple(cmd["plane_point"]) if "plane_point" in cmd else None,
                plane_normal=tuple(cmd["plane_normal"]) if "plane_normal" in cmd else None)
            a.flight.mode = mode
            if mode.mode == uav.MODE_EXPLORE:
                a.waypoint = None
            elif mode.waypoint is not None:
                a.waypoint = (float(mode.waypoint[0]), float(mode.waypoint[1]))
        elif kind == "assign_task":
            a = self._agent_for(cmd)
            node = cmd.get("node")
            if node is None and "task_id" in cmd:
                tk = a.market.tasks.get(cmd["task_id"])
                if tk is None:
                    raise CommandError(f"unknown task id {cmd['task_id']!r}")
                node = tk.location
            if node is None or node not in a.graph.nodes:
                raise CommandError(f"unknown graph node {node!r}")
            tid = cmd.get("task_id", f"manual:{a.id}:{self._cmd_seq}")
            a.manual.append(ManualTask(tid, node,
                                       bool(cmd.get("drop_node", False))))
        elif kind == "cancel_task":
            a = self._agent_for(cmd)
            tid = cmd.get("task_id")
            before = len(a.manual) + len(a.market.bundle)
            a.manual = [m for m in a.manual if m.id != tid]
            a.market.bundle = [tk for tk in a.market.bundle if tk.id != tid]
            if len(a.manual) + len(a.market.bundle) == before:
                raise CommandError(f"task {tid!r} not assigned")
            a.path = None
            a.trajectory = None
        elif kind == "priority_region":
            action = cmd.get("action", "create")
            rid = cmd.get("id")
            if action == "delete":
                if rid not in self.regions:
                    raise CommandError(f"unknown region id {rid!r}")
                del self.regions[rid]
                return
            mode = cmd.get("mode")
            if mode not in ("geometric", "graph_downstream"):
                raise CommandError(f"unknown region mode {mode!r}")
            target = cmd.get("target", "all")
            if target != "all" and target not in self.agents:
                raise CommandError(f"unknown target agent {target!r}")
            region = tasking.PriorityRegion(
                id=rid or f"region:{self._cmd_seq}", mode=mode,
                multiplier=float(cmd["multiplier"]),
                rect=tuple(cmd["rect"]) if "rect" in cmd else None,
                seed_node=cmd.get("seed_node"), target=target)
            if region.mode == "geometric" and region.rect is None:
                raise CommandError("geometric region needs a rect")
            if region.mode == "graph_downstream" and region.seed_node is None:
                raise CommandError("graph region needs a seed node")
            self.regions[region.id] = region
        elif kind == "artefact":
            guid = cmd.get("guid")
            entry = self.review.get(guid)
            if entry is None:
                raise CommandError(f"unknown report guid {guid!r}")
            action = cmd.get("action")
            if action == "reject":
                entry["status"] = "rejected"
            elif action == "accept":
                if entry["status"] == "accepted":
                    raise CommandError("report already accepted")
                track = self.base_tracker.tracks[guid]
                out = self.score_server.submit(track.cls, track.position,
                                               self.sim_time, guid)
                entry["status"] = "accepted"
                if not out.scored:
                    raise CommandError(f"report did not score: {out.reason}")
            else:
                raise CommandError(f"unknown artefact action {action!r}")
        else:
            raise CommandError(f"unknown command kind {kind!r}")

    def _do_drop(self, a: AgentState, t: float):
        node = comms.drop_node(a.id, a.droppers, (a.pose.x, a.pose.y), t,
                               self.cfg.comms)
        a.droppers -= 1
        self.dropped.append(node)

    # -- hashing and metrics --------------------------------------------------------

    def state_hash(self) -> str:
        """64-bit digest over the canonical field order.

        Order: tick count, score, then per agent sorted by id (x, y, yaw,
        speed, battery, mode index, fallen flag), then per comms node sorted
        by id (published seq, stored frame count), then region count and the
        base tracker's track count.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack(">qq", self.tick_count, self.score))
        for aid in self.order:
            a = self.agents[aid]
            h.update(aid.encode())
            h.update(struct.pack(">dddddqB", a.pose.x, a.pose.y, a.pose.yaw,
                                 a.v, a.battery, AGENT_MODES.index(a.mode),
                                 1 if a.fallen else 0))
        for n in sorted(self._comm_nodes(), key=lambda n: n.id):
            h.update(n.id.encode())
            h.update(struct.pack(">qq", n.published_seq,
                                 n.store.frame_count()))
        h.update(struct.pack(">qq", len(self.regions),
                             len(self.base_tracker.tracks)))
        return h.hexdigest()

    def collect_metrics(self) -> RunMetrics:
        elapsed = self.sim_time
        mode_table = {aid: _percent_row(self.agents[aid].mode_time)
                      for aid in self.order}
        planner_table = {aid: _percent_row(self.agents[aid].planner_time)
                         for aid in self.order}
        behaviour_table = {aid: _percent_row(self.agents[aid].behavior.stats)
                           for aid in self.order}
        data_bytes = self.base.store.bytes_by_kind()
        data_table = _percent_row(dict(data_bytes)) if data_bytes \
            else {"none": 100.0}
        visible = sum(1 for e in self.review.values() for _ in e["records"])
        reports_per_min = 60.0 * visible / elapsed if elapsed > 0 else 0.0
        savings = self.base_tracker.reports_saved + sum(
            self.agents[aid].tracker.reports_saved for aid in self.order)
        scored = sorted((ts, art, guid or "")
                        for art, (ts, guid) in self.score_server.scored.items())
        return RunMetrics(
            elapsed=elapsed,
            mode_table=mode_table,
            planner_table=planner_table,
            behaviour_table=behaviour_table,
            data_table=data_table,
            data_bytes=data_bytes,
            reports_per_min=reports_per_min,
            dedup_savings=savings,
            score=self.score,
            scored_artefacts=[(ts, art, guid) for ts, art, guid in scored])

    def console_snapshot(self, keyframe: bool = False) -> dict:
        """State digest for the operator console.

        Deltas carry agent statuses, reports, regions, and recent events;
        keyframes additionally carry the base's downsampled traversability
        tiles and the base topological graph so a console can join mid-run.
        """
        t = self.sim_time
        agents = []
        for aid in self.order:
            a = self.agents[aid]
            task = None
            if a.manual:
                task = a.manual[0].id
            elif a.market.bundle:
                task = a.market.bundle[0].id
            agents.append({
                "id": aid, "kind": a.spec.kind,
                "x": round(a.pose.x, 3), "y": round(a.pose.y, 3),
                "yaw": round(a.pose.yaw, 3), "v": round(a.v, 3),
                "battery": round(a.battery, 4), "mode": a.mode,
                "fallen": a.fallen, "in_comms": a.at_base,
                "sync_lag": round(max(0.0, t - a.last_base_contact), 2),
                "task": task, "goal_kind": a.goal_kind,
                "droppers": a.droppers, "airborne": a.airborne,
                "docked_on": a.docked_on,
            })
        reports = []
        for guid in sorted(self.review, key=lambda g: self.review[g]["order"]):
            e = self.review[guid]
            track = self.base_tracker.tracks.get(guid)
            reports.append({
                "guid": guid, "class": e["class"], "status": e["status"],
                "position": ([round(track.position[0], 3),
                              round(track.position[1], 3)]
                             if track is not None else None),
                "observers": (sorted(track.observers)
                              if track is not None else []),
                "updates": len(e["records"]), "first_tick": e["first_tick"],
            })
        snap = {
            "tick": self.tick_count,
            "time": round(t, 3),
            "score": self.score,
            "agents": agents,
            "reports": reports,
            "regions": [dataclasses.asdict(r)
                        for _, r in sorted(self.regions.items())],
            "comm_nodes": [{"id": n.id, "kind": n.kind,
                            "x": round(n.position[0], 3),
                            "y": round(n.position[1], 3),
                            "active": n.active(t)}
                           for n in self._comm_nodes()],
            "scored": [{"time": round(ts, 2), "artefact": art,
                        "guid": guid or ""}
                       for ts, art, guid in sorted(
                           (ts, art, guid) for art, (ts, guid)
                           in self.score_server.scored.items())],
            "events": [[round(ts, 2), msg] for ts, msg in self.event_log[-20:]],
        }
        if keyframe:
            snap["world"] = {"width": self.world.width,
                             "height": self.world.height,
                             "resolution": self.world.resolution,
                             "base": [self.world.base_pose.x,
                                      self.world.base_pose.y],
                             "name": self.scenario.name,
                             "duration": self.scenario.duration}
            snap["tiles"] = self._label_tiles()
            snap["graph"] = self.base_graph.export_snapshot()
        return snap

    def _label_tiles(self, factor: int = 4) -> dict:
        """Downsample the base's merged label grid: fatal wins, then
        traversable, unknown only when a whole block is unknown."""
        lbl = self.base_labels
        h, w = lbl.shape
        ph, pw = -h % factor, -w % factor
        padded = np.pad(lbl, ((0, ph), (0, pw)))
        blocks = padded.reshape((h + ph) // factor, factor,
                                (w + pw) // factor, factor)
        down = blocks.max(axis=(1, 3))
        rows = ["".join(str(int(v)) for v in row) for row in down]
        return {"factor": factor, "width": down.shape[1],
                "height": down.shape[0], "rows": rows}


# ---------------------------------------------------------------------------
# Helpers


def _frontier_cells(labels: np.ndarray, state: np.ndarray,
                    shared: np.ndarray,
                    peer_labels: np.ndarray) -> np.ndarray:
    """Flat indices of traversable cells touching unknown space (vectorized).

    Knowledge is team-level on both sides of the boundary: the candidate
    cell may be traversable in this agent's own analysis or in a shared
    teammate cost map, and the space beyond counts as unknown only while
    neither this agent (including virtual surfaces) nor any teammate has
    covered it.  Label-unknown alone does not make a cell unknown — cells
    observed by lidar beyond the traversability analysis range are still
    observed space.
    """
    unknown = (state == 0) & ~shared & (peer_labels == 0)
    near_unknown = np.zeros_like(unknown)
    near_unknown[1:, :] |= unknown[:-1, :]
    near_unknown[:-1, :] |= unknown[1:, :]
    near_unknown[:, 1:] |= unknown[:, :-1]
    near_unknown[:, :-1] |= unknown[:, 1:]
    mask = ((labels == LBL_TRAV) | (peer_labels == LBL_TRAV)) & near_unknown
    ys, xs = np.nonzero(mask)
    return ys * labels.shape[1] + xs


def _block_id(xy: tuple[float, float], world) -> str:
    ix, iy = world.cell_of(xy[0], xy[1])
    return f"{ix // 8}:{iy // 8}"


def _task_record(task: tasking.Task) -> dict:
    return {"id": task.id, "kind": task.kind, "location": task.location,
            "reward": task.reward, "duration": task.duration,
            "generator": task.generator}


def _task_from_record(rec: dict) -> Optional[tasking.Task]:
    try:
        return tasking.Task(str(rec["id"]), str(rec["kind"]),
                            str(rec["location"]), float(rec["reward"]),
                            float(rec["duration"]), str(rec["generator"]))
    except (KeyError, TypeError, ValueError):
        return None


def _detection_from_record(rec: dict) -> Detection:
    return Detection(agent=str(rec["agent"]), cls=str(rec["class"]),
                     position=(float(rec["position"][0]),
                               float(rec["position"][1])),
                     confidence=float(rec["confidence"]),
                     distance=float(rec["distance"]), tick=int(rec["tick"]))
