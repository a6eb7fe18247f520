"""Shared scenario-building helpers for the test suite."""

from __future__ import annotations

import json

import numpy as np


def grid_rows(ground: np.ndarray, wall: np.ndarray, ceil: np.ndarray):
    height, width = ground.shape
    rows = []
    for iy in range(height):
        row = []
        run = None
        for ix in range(width):
            rec = {"h": float(ground[iy, ix]), "wall": int(wall[iy, ix]),
                   "ceil": float(ceil[iy, ix])}
            if run is not None and run[1] == rec:
                run[0] += 1
            else:
                if run is not None:
                    row.append(run)
                run = [1, rec]
        row.append(run)
        rows.append(row)
    return rows


def make_scenario(width=10, height=10, resolution=1.0, ground=None, wall=None,
                  ceil=None, artefacts=(), events=(), agents=(), base=None,
                  seed=0, config=None, duration=600.0, name="test"):
    if ground is None:
        ground = np.zeros((height, width))
    if wall is None:
        wall = np.zeros((height, width), dtype=np.uint8)
    if ceil is None:
        ceil = np.full((height, width), 3.0)
    if base is None:
        base = [resolution * 0.5, resolution * 0.5]
    return {
        "schema": 1,
        "name": name,
        "seed": seed,
        "duration": duration,
        "resolution": resolution,
        "base": base,
        "grid": {"width": width, "height": height,
                 "rows": grid_rows(np.asarray(ground, dtype=float),
                                   np.asarray(wall), np.asarray(ceil, dtype=float))},
        "artefacts": list(artefacts),
        "events": list(events),
        "agents": list(agents),
        "config": config or {},
    }


def scenario_text(**kw) -> str:
    return json.dumps(make_scenario(**kw))


def tracked_agent(aid="r1", start=(1.5, 1.5, 0.0), **kw):
    ag = {"id": aid, "kind": "tracked", "width": 0.7, "start": list(start)}
    ag.update(kw)
    return ag
