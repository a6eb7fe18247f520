"""Ground-truth environment: scenario ingestion and sensor/RF physics queries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .config import SimConfig
from .geometry import Pose2D, angle_diff

ARTEFACT_CLASSES = (
    "survivor", "backpack", "rope", "helmet", "fire_extinguisher",
    "drill", "vent", "gas", "cell_phone", "cube",
)
EMITTER_CLASSES = ("gas", "cell_phone")
VISUAL_CLASSES = tuple(c for c in ARTEFACT_CLASSES if c not in EMITTER_CLASSES)

AGENT_KINDS = ("tracked", "legged", "aerial")


class ScenarioError(ValueError):
    """Scenario document failed schema or semantic validation."""


@dataclass
class Emitter:
    kind: str                  # wifi | gas
    source_strength: float


@dataclass
class Artefact:
    id: str
    cls: str
    position: tuple[float, float, float]
    emitter: Optional[Emitter] = None


@dataclass
class DynamicEvent:
    id: str
    at_time: Optional[float]           # seconds, or None
    on_agent_enter: Optional[tuple[float, float, float, float]]  # x0,y0,x1,y1
    cells: list[tuple[int, int]]
    set_wall: bool                     # True: cells become walls, False: cleared
    fired: bool = False


@dataclass
class CameraSpec:
    fov: float = 70.0
    range: float = 15.0


@dataclass
class AgentSpec:
    id: str
    kind: str
    width: float = 0.7
    clearance_height: float = 0.8
    max_speed: float = 1.2
    slope_limit: float = 35.0
    step_limit: float = 0.2
    battery_minutes: float = 60.0
    node_droppers: int = 0
    marsupial_child: Optional[str] = None
    start: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))
    camera: CameraSpec = field(default_factory=CameraSpec)

    @property
    def is_aerial(self) -> bool:
        return self.kind == "aerial"


@dataclass
class ObservationBatch:
    observed: list[tuple[int, float]]
    free_columns: list[tuple[int, float]]


class GridWorld:
    def __init__(self, resolution: float, width: int, height: int,
                 ground: np.ndarray, wall: np.ndarray, ceil: np.ndarray,
                 artefacts: list[Artefact], events: list[DynamicEvent],
                 base_pose: Pose2D):
        if resolution <= 0:
            raise ScenarioError("resolution must be > 0")
        self.resolution = resolution
        self.width = width
        self.height = height
        self.ground = ground
        self.wall = wall
        self.ceil = ceil
        self.artefacts = artefacts
        self.events = events
        self.base_pose = base_pose
        self._validate()

    def _validate(self) -> None:
        if np.any(self.ceil < 0):
            raise ScenarioError("ceil must be >= 0")
        for a in self.artefacts:
            x, y = a.position[0], a.position[1]
            if not (0 <= x < self.width * self.resolution
                    and 0 <= y < self.height * self.resolution):
                raise ScenarioError(f"artefact {a.id} outside grid bounds")
        bx, by = self.cell_of(self.base_pose.x, self.base_pose.y)
        if self.wall[by, bx]:
            raise ScenarioError("base cell is a wall")

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (min(self.width - 1, max(0, int(x / self.resolution))),
                min(self.height - 1, max(0, int(y / self.resolution))))

    def cell_center(self, idx: int) -> tuple[float, float]:
        iy, ix = divmod(idx, self.width)
        return ((ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution)

    def in_bounds(self, x: float, y: float) -> bool:
        return (0 <= x < self.width * self.resolution
                and 0 <= y < self.height * self.resolution)

    def ground_at(self, x: float, y: float) -> float:
        cx, cy = self.cell_of(x, y)
        return float(self.ground[cy, cx])


# ---------------------------------------------------------------------------
# Scenario I/O

@dataclass
class Scenario:
    name: str
    seed: int
    world: GridWorld
    agents: list[AgentSpec]
    config: SimConfig
    duration: float = 1800.0
    raw_config: dict = field(default_factory=dict)
    script: list[dict] = field(default_factory=list)   # scheduled commands


def _require(data: dict, key: str, ctx: str):
    if key not in data:
        raise ScenarioError(f"missing field {ctx}.{key}")
    return data[key]


def load_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e}") from e
    if data.get("schema") != 1:
        raise ScenarioError("unsupported or missing schema version (need schema=1)")
    resolution = float(_require(data, "resolution", "scenario"))
    if resolution <= 0:
        raise ScenarioError("resolution must be > 0")
    grid = _require(data, "grid", "scenario")
    width = int(_require(grid, "width", "grid"))
    height = int(_require(grid, "height", "grid"))
    rows = _require(grid, "rows", "grid")
    if len(rows) != height:
        raise ScenarioError("grid.rows length does not match grid.height")
    ground = np.zeros((height, width), dtype=np.float64)
    wall = np.zeros((height, width), dtype=np.uint8)
    ceil = np.zeros((height, width), dtype=np.float64)
    for iy, row in enumerate(rows):
        ix = 0
        for count, rec in row:
            if ix + count > width:
                raise ScenarioError(f"grid.rows[{iy}] overruns width")
            ground[iy, ix:ix + count] = float(rec.get("h", 0.0))
            wall[iy, ix:ix + count] = 1 if rec.get("wall") else 0
            ceil[iy, ix:ix + count] = float(rec.get("ceil", 3.0))
            ix += count
        if ix != width:
            raise ScenarioError(f"grid.rows[{iy}] does not fill width")

    artefacts = []
    for i, a in enumerate(data.get("artefacts", [])):
        cls = _require(a, "class", f"artefacts[{i}]")
        if cls not in ARTEFACT_CLASSES:
            raise ScenarioError(f"artefacts[{i}].class unknown: {cls}")
        pos = _require(a, "position", f"artefacts[{i}]")
        emitter = None
        if "emitter" in a and a["emitter"] is not None:
            em = a["emitter"]
            if em.get("kind") not in ("wifi", "gas"):
                raise ScenarioError(f"artefacts[{i}].emitter.kind invalid")
            emitter = Emitter(em["kind"], float(em.get("source_strength", 1.0)))
        if cls in EMITTER_CLASSES and emitter is None:
            raise ScenarioError(f"artefacts[{i}]: class {cls} requires an emitter")
        if cls not in EMITTER_CLASSES and emitter is not None:
            raise ScenarioError(f"artefacts[{i}]: visual class {cls} must not carry an emitter")
        artefacts.append(Artefact(a.get("id", f"art{i}"), cls,
                                  (float(pos[0]), float(pos[1]),
                                   float(pos[2]) if len(pos) > 2 else 0.0),
                                  emitter))

    events = []
    for i, e in enumerate(data.get("events", [])):
        trig = _require(e, "trigger", f"events[{i}]")
        at_time = trig.get("at_time")
        region = trig.get("on_agent_enter")
        if at_time is None and region is None:
            raise ScenarioError(f"events[{i}].trigger needs at_time or on_agent_enter")
        eff = _require(e, "effect", f"events[{i}]")
        set_wall = eff.get("set", "wall") == "wall"
        cells = [(int(c[0]), int(c[1])) for c in _require(eff, "cells", f"events[{i}].effect")]
        events.append(DynamicEvent(e.get("id", f"ev{i}"),
                                   float(at_time) if at_time is not None else None,
                                   tuple(float(v) for v in region) if region else None,
                                   cells, set_wall))

    base = data.get("base", [0.5, 0.5])
    world = GridWorld(resolution, width, height, ground, wall, ceil,
                      artefacts, events, Pose2D(float(base[0]), float(base[1])))

    agents = []
    ids = set()
    for i, ag in enumerate(data.get("agents", [])):
        kind = _require(ag, "kind", f"agents[{i}]")
        if kind not in AGENT_KINDS:
            raise ScenarioError(f"agents[{i}].kind unknown: {kind}")
        aid = ag.get("id", f"r{i}")
        if aid in ids:
            raise ScenarioError(f"agents[{i}].id duplicated: {aid}")
        ids.add(aid)
        width_m = float(ag.get("width", 0.7))
        if width_m <= 0:
            raise ScenarioError(f"agents[{i}].width must be > 0")
        droppers = int(ag.get("node_droppers", 0))
        if not 0 <= droppers <= 4:
            raise ScenarioError(f"agents[{i}].node_droppers must be 0..4")
        start = ag.get("start", [world.base_pose.x, world.base_pose.y, 0.0])
        cam = ag.get("camera", {})
        agents.append(AgentSpec(
            id=aid, kind=kind, width=width_m,
            clearance_height=float(ag.get("clearance_height", 0.8)),
            max_speed=float(ag.get("max_speed", 1.5 if kind == "aerial" else 1.2)),
            slope_limit=float(ag.get("slope_limit", 30.0 if kind == "legged" else 35.0)),
            step_limit=float(ag.get("step_limit", 0.3 if kind == "legged" else 0.2)),
            battery_minutes=float(ag.get("battery_minutes",
                                         20.0 if kind == "aerial" else 60.0)),
            node_droppers=droppers,
            marsupial_child=ag.get("marsupial_child"),
            start=Pose2D(float(start[0]), float(start[1]),
                         float(start[2]) if len(start) > 2 else 0.0),
            camera=CameraSpec(float(cam.get("fov", 70.0)),
                              float(cam.get("range", 15.0))),
        ))
    for ag in agents:
        if ag.marsupial_child is not None and ag.marsupial_child not in ids:
            raise ScenarioError(f"agent {ag.id}: unknown marsupial_child {ag.marsupial_child}")

    script = []
    for i, s in enumerate(data.get("script", [])):
        t = _require(s, "t", f"script[{i}]")
        kind = _require(s, "kind", f"script[{i}]")
        if not isinstance(kind, str):
            raise ScenarioError(f"script[{i}].kind must be a string")
        entry = dict(s)
        entry["t"] = float(t)
        script.append(entry)
    script.sort(key=lambda s: s["t"])

    raw_cfg = data.get("config", {})
    config = SimConfig.from_dict(raw_cfg)
    return Scenario(name=data.get("name", "scenario"),
                    seed=int(data.get("seed", 0)),
                    world=world, agents=agents, config=config,
                    duration=float(data.get("duration", 1800.0)),
                    raw_config=raw_cfg, script=script)


def save_scenario(sc: Scenario) -> str:
    """Canonical serialization; load -> save -> load is bit-exact."""
    w = sc.world
    rows = []
    for iy in range(w.height):
        row = []
        run = None
        for ix in range(w.width):
            rec = {"h": float(w.ground[iy, ix]),
                   "wall": int(w.wall[iy, ix]),
                   "ceil": float(w.ceil[iy, ix])}
            if run is not None and run[1] == rec:
                run[0] += 1
            else:
                if run is not None:
                    row.append(run)
                run = [1, rec]
        row.append(run)
        rows.append(row)
    data = {
        "schema": 1,
        "name": sc.name,
        "seed": sc.seed,
        "duration": sc.duration,
        "resolution": w.resolution,
        "base": [w.base_pose.x, w.base_pose.y],
        "grid": {"width": w.width, "height": w.height, "rows": rows},
        "artefacts": [
            {"id": a.id, "class": a.cls, "position": list(a.position),
             **({"emitter": {"kind": a.emitter.kind,
                             "source_strength": a.emitter.source_strength}}
                if a.emitter else {})}
            for a in w.artefacts
        ],
        "events": [
            {"id": e.id,
             "trigger": ({"at_time": e.at_time} if e.at_time is not None
                         else {"on_agent_enter": list(e.on_agent_enter)}),
             "effect": {"set": "wall" if e.set_wall else "clear",
                        "cells": [list(c) for c in e.cells]}}
            for e in w.events
        ],
        "agents": [
            {"id": a.id, "kind": a.kind, "width": a.width,
             "clearance_height": a.clearance_height, "max_speed": a.max_speed,
             "slope_limit": a.slope_limit, "step_limit": a.step_limit,
             "battery_minutes": a.battery_minutes,
             "node_droppers": a.node_droppers,
             **({"marsupial_child": a.marsupial_child}
                if a.marsupial_child else {}),
             "start": [a.start.x, a.start.y, a.start.yaw],
             "camera": {"fov": a.camera.fov, "range": a.camera.range}}
            for a in sc.agents
        ],
        "config": sc.raw_config,
        **({"script": sc.script} if sc.script else {}),
    }
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Sensor / RF queries (pure functions of the world)

def sample_lidar(world: GridWorld, pose: Pose2D, rng: float,
                 n_rays: int = 360, sensor_height: float = 0.5,
                 wall_obs_height: float = 2.0) -> ObservationBatch:
    if not world.in_bounds(pose.x, pose.y):
        raise ValueError("pose outside world bounds")
    h_abs = world.ground_at(pose.x, pose.y) + sensor_height
    obs_i, obs_h, free_i, free_h = kernels.raycast(
        world.ground, world.wall, world.resolution,
        pose.x, pose.y, h_abs, rng, n_rays, wall_obs_height)
    return ObservationBatch(
        observed=list(zip(obs_i.tolist(), obs_h.tolist())),
        free_columns=list(zip(free_i.tolist(), free_h.tolist())))


def line_of_sight(world: GridWorld, x0: float, y0: float,
                  x1: float, y1: float) -> bool:
    return kernels.segment_wall_count(world.wall, world.resolution,
                                      x0, y0, x1, y1) == 0


def visible_artefacts(world: GridWorld, pose: Pose2D,
                      camera: CameraSpec) -> list[tuple[Artefact, float]]:
    if not 0 < camera.fov <= 360:
        raise ValueError("camera.fov must be in (0, 360]")
    out = []
    half = math.radians(camera.fov) / 2.0
    for a in world.artefacts:
        if a.cls not in VISUAL_CLASSES:
            continue
        d = math.hypot(a.position[0] - pose.x, a.position[1] - pose.y)
        if d > camera.range:
            continue
        if d > 1e-9 and camera.fov < 360:
            bearing = math.atan2(a.position[1] - pose.y, a.position[0] - pose.x)
            if abs(angle_diff(bearing, pose.yaw)) > half:
                continue
        if not line_of_sight(world, pose.x, pose.y, a.position[0], a.position[1]):
            continue
        out.append((a, d))
    return out


def rf_link(world: GridWorld, a: tuple[float, float], b: tuple[float, float],
            cfg) -> tuple[bool, float]:
    d = math.hypot(a[0] - b[0], a[1] - b[1])
    walls = 0 if d == 0.0 else kernels.segment_wall_count(
        world.wall, world.resolution, a[0], a[1], b[0], b[1])
    connected = ((walls == 0 and d <= cfg.r_los)
                 or (walls <= cfg.n_wall and d <= cfg.r_wall))
    if not connected:
        return False, 0.0
    frac = min(1.0, d / cfg.r_los)
    capacity = cfg.capacity_max - (cfg.capacity_max - cfg.capacity_min) * frac
    return True, max(cfg.capacity_min, capacity)


def field_strength(world: GridWorld, artefact: Artefact,
                   pos: tuple[float, float], cutoff: float = 30.0,
                   wall_attenuation: float = 0.5) -> float:
    if artefact.emitter is None:
        return 0.0
    ex, ey = artefact.position[0], artefact.position[1]
    d = math.hypot(pos[0] - ex, pos[1] - ey)
    if d >= cutoff:
        return 0.0
    walls = 0 if d == 0.0 else kernels.segment_wall_count(
        world.wall, world.resolution, ex, ey, pos[0], pos[1])
    return (artefact.emitter.source_strength * (1.0 - d / cutoff)
            * (wall_attenuation ** walls))


def apply_dynamic_events(world: GridWorld, sim_time: float,
                         agent_poses: list[Pose2D]) -> list[str]:
    """Fire due triggers (each at most once); returns fired event ids."""
    fired = []
    for e in world.events:
        if e.fired:
            continue
        due = False
        if e.at_time is not None and sim_time >= e.at_time:
            due = True
        if e.on_agent_enter is not None:
            x0, y0, x1, y1 = e.on_agent_enter
            for p in agent_poses:
                if x0 <= p.x <= x1 and y0 <= p.y <= y1:
                    due = True
                    break
        if due:
            for cx, cy in e.cells:
                if 0 <= cx < world.width and 0 <= cy < world.height:
                    world.wall[cy, cx] = 1 if e.set_wall else 0
            e.fired = True
            fired.append(e.id)
    return fired
