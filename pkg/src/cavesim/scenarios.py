"""Built-in scenario courses.

Each builder returns a schema-1 scenario document (a plain dict, JSON-ready).
``cavesim scenario --name <name> --out file.json`` writes one to disk.

Courses:
  desk     100x100 m three-branch cave: ramp climb, narrow tunnel, rubble
           field; 4 ground agents + 1 marsupial aerial; 10 artefacts.
  mule     straight gallery with an out-of-comms east end and a trench;
           exercises store-and-forward delivery by a passing agent.
  reroute  ring course with a short and a long corridor to the same room;
           an entry-triggered rockfall closes the short one.
  ledge    plateau ending in a drop, with a ramp down on the far side;
           exercises optimistic virtual surfaces resolving fatal/traversable.
"""

from __future__ import annotations

import json

import numpy as np


def _grid_rows(ground: np.ndarray, wall: np.ndarray, ceil: np.ndarray):
    """Run-length encode the three per-cell channels, row by row."""
    height, width = ground.shape
    rows = []
    for iy in range(height):
        row = []
        run = None
        for ix in range(width):
            rec = {"h": round(float(ground[iy, ix]), 4),
                   "wall": int(wall[iy, ix]),
                   "ceil": round(float(ceil[iy, ix]), 4)}
            if run is not None and run[1] == rec:
                run[0] += 1
            else:
                if run is not None:
                    row.append(run)
                run = [1, rec]
        row.append(run)
        rows.append(row)
    return rows


class CaveBuilder:
    """Carve corridors and rooms out of solid rock on a square grid."""

    def __init__(self, width_m: float, height_m: float, resolution: float):
        self.res = resolution
        self.w = int(round(width_m / resolution))
        self.h = int(round(height_m / resolution))
        self.ground = np.zeros((self.h, self.w))
        self.wall = np.ones((self.h, self.w), dtype=np.uint8)
        self.ceil = np.full((self.h, self.w), 3.0)

    def _cells(self, x0, y0, x1, y1):
        cx0 = max(0, int(x0 / self.res))
        cy0 = max(0, int(y0 / self.res))
        cx1 = min(self.w, int(round(x1 / self.res)))
        cy1 = min(self.h, int(round(y1 / self.res)))
        return cx0, cy0, cx1, cy1

    def carve(self, x0, y0, x1, y1):
        cx0, cy0, cx1, cy1 = self._cells(x0, y0, x1, y1)
        self.wall[cy0:cy1, cx0:cx1] = 0
        return self

    def fill(self, x0, y0, x1, y1):
        cx0, cy0, cx1, cy1 = self._cells(x0, y0, x1, y1)
        self.wall[cy0:cy1, cx0:cx1] = 1
        return self

    def raise_ground(self, x0, y0, x1, y1, dz):
        cx0, cy0, cx1, cy1 = self._cells(x0, y0, x1, y1)
        self.ground[cy0:cy1, cx0:cx1] += dz
        return self

    def ramp_y(self, x0, y0, x1, y1, z0, z1):
        """Linear rise from z0 at y0 to z1 at y1 within the rect."""
        cx0, cy0, cx1, cy1 = self._cells(x0, y0, x1, y1)
        for cy in range(cy0, cy1):
            t = (cy - cy0) / max(1, cy1 - 1 - cy0)
            self.ground[cy, cx0:cx1] = z0 + (z1 - z0) * t
        return self

    def rubble(self, x0, y0, x1, y1, amplitude, rng):
        cx0, cy0, cx1, cy1 = self._cells(x0, y0, x1, y1)
        bumps = rng.uniform(-amplitude, amplitude,
                            size=(cy1 - cy0, cx1 - cx0))
        self.ground[cy0:cy1, cx0:cx1] += bumps
        return self

    def document(self, *, name, seed, duration, base, artefacts=(),
                 events=(), agents=(), config=None) -> dict:
        self.ceil = self.ground + 3.0     # constant 3 m headroom
        return {
            "schema": 1,
            "name": name,
            "seed": seed,
            "duration": duration,
            "resolution": self.res,
            "base": list(base),
            "grid": {"width": self.w, "height": self.h,
                     "rows": _grid_rows(self.ground, self.wall, self.ceil)},
            "artefacts": list(artefacts),
            "events": list(events),
            "agents": list(agents),
            "config": config or {},
        }


def _tracked(aid, start, **kw):
    ag = {"id": aid, "kind": "tracked", "width": 0.7, "start": list(start)}
    ag.update(kw)
    return ag


def _art(aid, cls, x, y):
    return {"id": aid, "class": cls, "position": [x, y, 0.0]}


def desk_run(seed: int = 7) -> dict:
    """100x100 m three-branch course: ramp, narrow tunnel, rubble field."""
    rng = np.random.default_rng(seed)
    b = CaveBuilder(100.0, 100.0, 0.5)

    b.carve(2, 44, 14, 56)                 # entrance room, base inside
    b.carve(14, 47, 40, 53)                # main gallery east
    b.carve(40, 43, 50, 57)                # junction chamber

    # north branch: gallery with a long ramp up to an elevated room
    b.carve(43, 57, 48, 84)
    b.ramp_y(43, 60, 48, 74, 0.0, 2.5)
    b.raise_ground(43, 74, 48, 84, 2.5)
    b.carve(36, 84, 58, 94)
    b.raise_ground(36, 84, 58, 94, 2.5)

    # east branch: gallery with a 1 m narrow tunnel halfway
    b.carve(50, 47, 62, 53)
    b.carve(62, 49.5, 70, 50.5)            # the squeeze
    b.carve(70, 47, 88, 53)
    b.carve(88, 42, 96, 58)

    # south branch: gallery through a rubble field
    b.carve(43, 16, 48, 43)
    b.rubble(43, 20, 48, 36, 0.08, rng)
    b.carve(36, 6, 58, 16)

    artefacts = [
        _art("a0", "backpack", 10.0, 46.0),
        _art("a1", "helmet", 36.0, 51.5),
        _art("a2", "rope", 45.5, 70.0),
        _art("a3", "drill", 40.0, 90.0),
        _art("a4", "survivor", 52.0, 88.0),
        _art("a5", "fire_extinguisher", 75.0, 51.5),
        _art("a6", "cube", 92.0, 45.0),
        _art("a7", "backpack", 93.0, 55.0),
        _art("a8", "vent", 45.0, 25.0),
        _art("a9", "survivor", 50.0, 10.0),
    ]
    agents = [
        _tracked("r1", (6.0, 47.0, 0.0), node_droppers=2,
                 marsupial_child="u1"),
        _tracked("r2", (6.0, 50.0, 0.0), node_droppers=2),
        _tracked("r3", (6.0, 53.0, 0.0), node_droppers=1),
        _tracked("r4", (9.0, 50.0, 0.0)),
        {"id": "u1", "kind": "aerial", "width": 0.4,
         "clearance_height": 1.2, "start": [6.0, 47.0, 0.0]},
    ]
    config = {
        "auto_accept": True,
        "sensors": {"lidar_rays": 240, "lidar_range": 10.0},
        "comms": {"r_los": 35.0},
        "perception": {"fp_rate": 0.002},
    }
    # supervisor play book: relays down the gallery and at the junction,
    # aircraft launch once the junction is reached, then one relay pushed
    # up each branch so deep exploration stays on the mesh
    script = [
        {"t": 60.0, "kind": "drop_node", "agent": "r1"},
        {"t": 125.0, "kind": "drop_node", "agent": "r2"},
        {"t": 150.0, "kind": "teleop", "agent": "r1",
         "v": 0.0, "w": 0.0, "duration": 3.0},
        {"t": 151.0, "kind": "launch_uav", "agent": "r1"},
        {"t": 240.0, "kind": "waypoint", "agent": "r3", "x": 45.5, "y": 70.0},
        {"t": 240.0, "kind": "waypoint", "agent": "r2", "x": 45.5, "y": 28.0},
        {"t": 240.0, "kind": "waypoint", "agent": "r1", "x": 75.0, "y": 50.0},
        {"t": 420.0, "kind": "drop_node", "agent": "r3"},
        {"t": 450.0, "kind": "drop_node", "agent": "r2"},
        {"t": 480.0, "kind": "drop_node", "agent": "r1"},
    ]
    doc = b.document(name="desk_three_branch", seed=seed, duration=1800.0,
                     base=[5.0, 50.0], artefacts=artefacts, agents=agents,
                     config=config)
    doc["script"] = script
    return doc


def mule_course(seed: int = 3) -> dict:
    """Straight gallery whose east end is far outside base comms, with a
    trench just past the deepest artefact."""
    b = CaveBuilder(60.0, 30.0, 0.5)
    b.carve(1, 12, 56, 18)                 # main gallery
    b.carve(16, 18, 20, 27)                # north stub 1
    b.carve(32, 18, 36, 27)                # north stub 2
    b.raise_ground(53, 12, 56, 18, -1.5)   # trench at the east end

    artefacts = [
        _art("a0", "survivor", 51.5, 16.5),
        _art("a1", "backpack", 18.0, 25.0),
    ]
    agents = [
        _tracked("r1", (4.0, 13.5, 0.0)),
        _tracked("r2", (4.0, 16.5, 0.0)),
    ]
    config = {
        "auto_accept": True,
        "comms": {"r_los": 15.0},
        "sensors": {"lidar_rays": 120, "lidar_range": 6.0},
        "perception": {"fp_rate": 0.0},
    }
    return b.document(name="mule_gallery", seed=seed, duration=600.0,
                      base=[3.0, 15.0], artefacts=artefacts, agents=agents,
                      config=config)


def reroute_course(seed: int = 5) -> dict:
    """Ring: a short south corridor and a long west corridor both reach the
    north-east room; entering the room drops rock across the short one."""
    b = CaveBuilder(30.0, 30.0, 0.5)
    b.carve(1, 1, 8, 8)                    # base room (south-west)
    b.carve(8, 2, 26, 6)                   # short corridor east
    b.carve(22, 6, 26, 28)                 # up to the target room
    b.carve(16, 22, 29, 29)                # target room (north-east)
    b.carve(2, 8, 6, 26)                   # long corridor north
    b.carve(2, 24, 16, 28)                 # long corridor east leg

    # rockfall across the short corridor once any agent reaches the target
    blocked = [[cx, cy] for cx in range(int(14 / 0.5), int(18 / 0.5))
               for cy in range(int(2 / 0.5), int(6 / 0.5))]
    events = [{
        "id": "rockfall",
        "trigger": {"on_agent_enter": [22.0, 22.0, 29.0, 29.0]},
        "effect": {"set": "wall", "cells": blocked},
    }]
    artefacts = [_art("a0", "helmet", 27.0, 27.0)]
    agents = [_tracked("r1", (3.0, 3.0, 0.0))]
    config = {
        "auto_accept": True,
        "comms": {"r_los": 60.0},
        "sensors": {"lidar_rays": 120, "lidar_range": 6.0},
        "perception": {"fp_rate": 0.0},
    }
    return b.document(name="reroute_ring", seed=seed, duration=900.0,
                      base=[3.0, 3.0], artefacts=artefacts, agents=agents,
                      config=config)


def ledge_course(seed: int = 2) -> dict:
    """Plateau that ends in a sheer 1.5 m drop; a ramp on the south side
    reaches the lower floor."""
    b = CaveBuilder(30.0, 20.0, 0.5)
    b.carve(1, 1, 29, 19)
    b.raise_ground(1, 1, 15, 19, 1.5)      # western plateau, drop at x=15
    b.ramp_y(11, 1, 15, 8, 0.0, 1.5)       # ramp up the south face (absolute)

    artefacts = [_art("a0", "rope", 25.0, 10.0)]
    agents = [_tracked("r1", (4.0, 12.0, 0.0))]
    config = {
        "auto_accept": True,
        "sensors": {"lidar_rays": 180, "lidar_range": 8.0},
        "perception": {"fp_rate": 0.0},
    }
    return b.document(name="ledge_plateau", seed=seed, duration=600.0,
                      base=[3.0, 12.0], artefacts=artefacts, agents=agents,
                      config=config)


COURSES = {
    "desk": desk_run,
    "mule": mule_course,
    "reroute": reroute_course,
    "ledge": ledge_course,
}


def build(name: str, seed=None) -> dict:
    if name not in COURSES:
        raise KeyError(f"unknown course {name!r}; have {sorted(COURSES)}")
    return COURSES[name]() if seed is None else COURSES[name](seed)


def to_json(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":"))
