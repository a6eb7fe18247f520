"""Pure-Python/numpy reference implementations of the hot kernels.

The compiled extension in ``_core`` mirrors these signatures exactly; the
package selects whichever is importable.  Both must produce identical output
for identical input (asserted in tests).
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def _dist(a: float, b: float) -> float:
    """sqrt-of-squares norm; kept hypot-free so the compiled backend
    reproduces it bit-for-bit with libc sqrt."""
    return math.sqrt(a * a + b * b)


def segment_wall_count(wall: np.ndarray, res: float,
                       x0: float, y0: float, x1: float, y1: float) -> int:
    """Count wall cells whose square the open segment (x0,y0)->(x1,y1) crosses.

    Supercover traversal: steps through every cell the segment touches.
    Endpoints' own cells are included.
    """
    h, w = wall.shape
    n = max(1, int(math.ceil(_dist(x1 - x0, y1 - y0) / (res * 0.25))))
    count = 0
    last = -1
    for k in range(n + 1):
        t = k / n
        cx = int((x0 + (x1 - x0) * t) / res)
        cy = int((y0 + (y1 - y0) * t) / res)
        if cx < 0 or cy < 0 or cx >= w or cy >= h:
            continue
        idx = cy * w + cx
        if idx == last:
            continue
        last = idx
        if wall[cy, cx]:
            count += 1
    return count


def raycast(ground: np.ndarray, wall: np.ndarray, res: float,
            sx: float, sy: float, sensor_h: float, rng: float,
            n_rays: int, wall_obs_height: float):
    """Horizon-culled 2.5D lidar cast.

    Returns (obs_idx, obs_h, free_idx, free_h) as numpy arrays.  A cell's
    ground is observed when its elevation angle from the sensor is at least
    the running maximum along the ray; occluded cells crossed by the free ray
    above them are reported with the height of that ray (free columns).
    Walls report an observed height above their ground and block the ray.
    """
    h, w = ground.shape
    obs: dict[int, float] = {}
    free: dict[int, float] = {}
    scx = int(sx / res)
    scy = int(sy / res)
    self_idx = scy * w + scx
    if 0 <= scx < w and 0 <= scy < h:
        obs[self_idx] = float(ground[scy, scx])
    step = res * 0.5
    n_steps = int(rng / step)
    for ray in range(n_rays):
        ang = 2.0 * math.pi * ray / n_rays
        dx = math.cos(ang) * step
        dy = math.sin(ang) * step
        t_max = -1e18
        last = self_idx
        blocked = False
        for k in range(1, n_steps + 1):
            px = sx + dx * k
            py = sy + dy * k
            cx = int(px / res)
            cy = int(py / res)
            if cx < 0 or cy < 0 or cx >= w or cy >= h:
                break
            idx = cy * w + cx
            if idx == last:
                continue
            last = idx
            if blocked:
                break
            d = _dist((cx + 0.5) * res - sx, (cy + 0.5) * res - sy)
            if d > rng or d <= 0.0:
                if d > rng:
                    break
                continue
            if wall[cy, cx]:
                obs[idx] = float(ground[cy, cx]) + wall_obs_height
                blocked = True
                continue
            g = float(ground[cy, cx])
            t = (g - sensor_h) / d
            if t >= t_max:
                t_max = t
                obs[idx] = g
            else:
                fh = sensor_h + t_max * d
                if idx not in free or fh < free[idx]:
                    free[idx] = fh
    for idx in obs:
        free.pop(idx, None)
    obs_items = sorted(obs.items())
    free_items = sorted(free.items())
    return (np.array([i for i, _ in obs_items], dtype=np.int64),
            np.array([v for _, v in obs_items], dtype=np.float64),
            np.array([i for i, _ in free_items], dtype=np.int64),
            np.array([v for _, v in free_items], dtype=np.float64))


def _footprint_offsets(radius_cells: float) -> np.ndarray:
    r = int(math.ceil(radius_cells))
    offs = []
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            if ox * ox + oy * oy <= radius_cells * radius_cells:
                offs.append((ox, oy))
    return np.array(offs, dtype=np.int64)


def _plane_gradient(n: int, sxx: float, sxy: float, syy: float,
                    sx: float, sy: float, sz: float,
                    sxz: float, syz: float) -> float:
    """Gradient magnitude of the least-squares plane z = a·x + b·y + c.

    Solves the 3x3 normal equations by Cramer's rule with a fixed operation
    order (kept in lockstep with the compiled backend).
    """
    fn = float(n)
    det = (sxx * (syy * fn - sy * sy)
           - sxy * (sxy * fn - sy * sx)
           + sx * (sxy * sy - syy * sx))
    if abs(det) < 1e-12:
        return 0.0
    det_a = (sxz * (syy * fn - sy * sy)
             - sxy * (syz * fn - sy * sz)
             + sx * (syz * sy - syy * sz))
    det_b = (sxx * (syz * fn - sz * sy)
             - sxz * (sxy * fn - sy * sx)
             + sx * (sxy * sz - syz * sx))
    return _dist(det_a / det, det_b / det)


def classify(heights: np.ndarray, state: np.ndarray, ceil_h: np.ndarray,
             res: float, cx: float, cy: float, rng: float,
             footprint_radius: float, slope_limit_deg: float,
             step_limit: float, clearance_h: float):
    """Slope/step/clearance classification around (cx, cy) within rng metres.

    A cell is fatal when its ceiling is below the clearance height, when it
    sits on a drop edge (a known 4-neighbour more than step_limit *below*
    it), or when the least-squares plane over the continuous part of the
    footprint is steeper than the slope limit.  A rise next to a cell does
    not poison it: the higher cell is the obstacle and earns the fatal
    label itself, so floors stay traversable right up to their walls.
    Heights further than step_limit from the centre height are
    discontinuities, not slope, and are left out of the plane fit.

    state: 0 unknown, 1 observed, 2 virtual. Returns (labels, prov):
    labels 0 unknown, 1 traversable, 2 fatal; prov 0 none, 1 observed,
    2 virtual (virtual if any virtual cell participates in the footprint).
    """
    h, w = heights.shape
    labels = np.zeros((h, w), dtype=np.uint8)
    prov = np.zeros((h, w), dtype=np.uint8)
    rc = footprint_radius / res
    offs = _footprint_offsets(rc)
    tan_limit = math.tan(math.radians(slope_limit_deg))
    x_lo = max(0, int((cx - rng) / res))
    x_hi = min(w - 1, int((cx + rng) / res))
    y_lo = max(0, int((cy - rng) / res))
    y_hi = min(h - 1, int((cy + rng) / res))
    for iy in range(y_lo, y_hi + 1):
        for ix in range(x_lo, x_hi + 1):
            if state[iy, ix] == 0:
                continue
            d = _dist((ix + 0.5) * res - cx, (iy + 0.5) * res - cy)
            if d > rng:
                continue
            p = 1 if state[iy, ix] == 1 else 2
            if ceil_h[iy, ix] < clearance_h:
                labels[iy, ix] = 2
                prov[iy, ix] = p
                continue
            hc = float(heights[iy, ix])
            virtual_in = state[iy, ix] == 2
            fatal = False
            # drop test: a known 4-neighbour more than step_limit below
            for qx, qy in ((ix - 1, iy), (ix + 1, iy),
                           (ix, iy - 1), (ix, iy + 1)):
                if qx < 0 or qy < 0 or qx >= w or qy >= h:
                    continue
                if state[qy, qx] == 0:
                    continue
                if hc - float(heights[qy, qx]) > step_limit:
                    fatal = True
            # Gather continuous footprint cells, accumulating the plane-fit
            # normal equations in a fixed order so every backend agrees
            # bit-for-bit.
            n_pts = 0
            sxx = sxy = syy = sx = sy = sz = sxz = syz = 0.0
            for ox, oy in offs:
                nx, ny = ix + ox, iy + oy
                if nx < 0 or ny < 0 or nx >= w or ny >= h:
                    continue
                if state[ny, nx] == 0:
                    continue
                if state[ny, nx] == 2:
                    virtual_in = True
                fz = float(heights[ny, nx])
                if abs(fz - hc) > step_limit:
                    continue
                fx = ox * res
                fy = oy * res
                n_pts += 1
                sxx += fx * fx
                sxy += fx * fy
                syy += fy * fy
                sx += fx
                sy += fy
                sz += fz
                sxz += fx * fz
                syz += fy * fz
            if not fatal and n_pts >= 3:
                grad = _plane_gradient(n_pts, sxx, sxy, syy, sx, sy,
                                       sz, sxz, syz)
                if grad > tan_limit:
                    fatal = True
            labels[iy, ix] = 2 if fatal else 1
            prov[iy, ix] = 2 if virtual_in else p
    return labels, prov


def footprint_clear(labels: np.ndarray, res: float,
                    x: float, y: float, radius: float) -> bool:
    """True when a circle of ``radius`` at (x, y) intersects no fatal cell square."""
    h, w = labels.shape
    r = radius
    x_lo = max(0, int((x - r) / res) - 1)
    x_hi = min(w - 1, int((x + r) / res) + 1)
    y_lo = max(0, int((y - r) / res) - 1)
    y_hi = min(h - 1, int((y + r) / res) + 1)
    r2 = r * r - 1e-9  # tolerate float noise at exact tangency
    for iy in range(y_lo, y_hi + 1):
        for ix in range(x_lo, x_hi + 1):
            if labels[iy, ix] != 2:
                continue
            # closest point of the cell square to the circle centre
            qx = min(max(x, ix * res), (ix + 1) * res)
            qy = min(max(y, iy * res), (iy + 1) * res)
            if (qx - x) ** 2 + (qy - y) ** 2 < r2:
                return False
    return True


def clearance_to_fatal(labels: np.ndarray, res: float,
                       x: float, y: float, search: float) -> float:
    """Distance from (x, y) to the nearest fatal cell square, capped at ``search``."""
    h, w = labels.shape
    x_lo = max(0, int((x - search) / res) - 1)
    x_hi = min(w - 1, int((x + search) / res) + 1)
    y_lo = max(0, int((y - search) / res) - 1)
    y_hi = min(h - 1, int((y + search) / res) + 1)
    best = search
    for iy in range(y_lo, y_hi + 1):
        for ix in range(x_lo, x_hi + 1):
            if labels[iy, ix] != 2:
                continue
            qx = min(max(x, ix * res), (ix + 1) * res)
            qy = min(max(y, iy * res), (iy + 1) * res)
            d = _dist(qx - x, qy - y)
            if d < best:
                best = d
    return best


def nearest_observed(heights: np.ndarray, state: np.ndarray,
                     ix: int, iy: int, max_r: int) -> float | None:
    """Height of the closest observed cell, searched ring by ring.

    Within the first Chebyshev shell containing an observed cell the winner is
    the smallest (squared distance, row, column) triple, so results do not
    depend on iteration order.
    """
    h, w = state.shape
    for r in range(1, max_r + 1):
        best = None
        for oy in range(-r, r + 1):
            for ox in range(-r, r + 1):
                if max(abs(ox), abs(oy)) != r:
                    continue
                nx, ny = ix + ox, iy + oy
                if 0 <= nx < w and 0 <= ny < h and state[ny, nx] == 1:
                    d2 = ox * ox + oy * oy
                    key = (d2, ny, nx)
                    if best is None or key < best[0]:
                        best = (key, float(heights[ny, nx]))
        if best is not None:
            return best[1]
    return None
