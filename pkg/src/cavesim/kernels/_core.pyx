# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Every function mirrors ``ref.py`` operation-for-operation (same traversal
order, same floating-point expression shapes, sqrt instead of hypot) so the
two backends return bit-identical results.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, ceil, cos, fabs, sin, sqrt, tan

cnp.import_array()

BACKEND = "compiled"


cdef inline double _dist(double a, double b) nogil:
    return sqrt(a * a + b * b)


def segment_wall_count(const unsigned char[:, ::1] wall, double res,
                       double x0, double y0, double x1, double y1):
    """Count wall cells whose square the open segment (x0,y0)->(x1,y1) crosses."""
    cdef long h = wall.shape[0]
    cdef long w = wall.shape[1]
    cdef long n = <long>ceil(_dist(x1 - x0, y1 - y0) / (res * 0.25))
    if n < 1:
        n = 1
    cdef long count = 0
    cdef long last = -1
    cdef long k, cx, cy, idx
    cdef double t
    for k in range(n + 1):
        t = (<double>k) / (<double>n)
        cx = <long>((x0 + (x1 - x0) * t) / res)
        cy = <long>((y0 + (y1 - y0) * t) / res)
        if cx < 0 or cy < 0 or cx >= w or cy >= h:
            continue
        idx = cy * w + cx
        if idx == last:
            continue
        last = idx
        if wall[cy, cx]:
            count += 1
    return count


def raycast(const double[:, ::1] ground, const unsigned char[:, ::1] wall,
            double res, double sx, double sy, double sensor_h, double rng,
            long n_rays, double wall_obs_height):
    """Horizon-culled 2.5D lidar cast; see the reference implementation."""
    cdef long h = ground.shape[0]
    cdef long w = ground.shape[1]
    cdef long total = h * w
    obs_mask_arr = np.zeros(total, dtype=np.uint8)
    obs_val_arr = np.zeros(total, dtype=np.float64)
    free_mask_arr = np.zeros(total, dtype=np.uint8)
    free_val_arr = np.zeros(total, dtype=np.float64)
    cdef unsigned char[::1] obs_mask = obs_mask_arr
    cdef double[::1] obs_val = obs_val_arr
    cdef unsigned char[::1] free_mask = free_mask_arr
    cdef double[::1] free_val = free_val_arr

    cdef long scx = <long>(sx / res)
    cdef long scy = <long>(sy / res)
    cdef long self_idx = scy * w + scx
    if 0 <= scx < w and 0 <= scy < h:
        obs_mask[self_idx] = 1
        obs_val[self_idx] = ground[scy, scx]
    cdef double step = res * 0.5
    cdef long n_steps = <long>(rng / step)
    cdef long ray, k, cx, cy, idx, last
    cdef double ang, dx, dy, t_max, px, py, d, g, t, fh
    cdef bint blocked
    for ray in range(n_rays):
        ang = 2.0 * M_PI * (<double>ray) / (<double>n_rays)
        dx = cos(ang) * step
        dy = sin(ang) * step
        t_max = -1e18
        last = self_idx
        blocked = False
        for k in range(1, n_steps + 1):
            px = sx + dx * k
            py = sy + dy * k
            cx = <long>(px / res)
            cy = <long>(py / res)
            if cx < 0 or cy < 0 or cx >= w or cy >= h:
                break
            idx = cy * w + cx
            if idx == last:
                continue
            last = idx
            if blocked:
                break
            d = _dist((<double>cx + 0.5) * res - sx,
                      (<double>cy + 0.5) * res - sy)
            if d > rng or d <= 0.0:
                if d > rng:
                    break
                continue
            if wall[cy, cx]:
                obs_mask[idx] = 1
                obs_val[idx] = ground[cy, cx] + wall_obs_height
                blocked = True
                continue
            g = ground[cy, cx]
            t = (g - sensor_h) / d
            if t >= t_max:
                t_max = t
                obs_mask[idx] = 1
                obs_val[idx] = g
            else:
                fh = sensor_h + t_max * d
                if not free_mask[idx] or fh < free_val[idx]:
                    free_mask[idx] = 1
                    free_val[idx] = fh

    cdef long i, n_obs = 0, n_free = 0
    for i in range(total):
        if obs_mask[i]:
            free_mask[i] = 0
            n_obs += 1
        elif free_mask[i]:
            n_free += 1
    obs_i_arr = np.empty(n_obs, dtype=np.int64)
    obs_h_arr = np.empty(n_obs, dtype=np.float64)
    free_i_arr = np.empty(n_free, dtype=np.int64)
    free_h_arr = np.empty(n_free, dtype=np.float64)
    cdef long[::1] obs_i = obs_i_arr
    cdef double[::1] obs_h = obs_h_arr
    cdef long[::1] free_i = free_i_arr
    cdef double[::1] free_h = free_h_arr
    cdef long a = 0, b = 0
    for i in range(total):
        if obs_mask[i]:
            obs_i[a] = i
            obs_h[a] = obs_val[i]
            a += 1
        elif free_mask[i]:
            free_i[b] = i
            free_h[b] = free_val[i]
            b += 1
    return obs_i_arr, obs_h_arr, free_i_arr, free_h_arr


cdef inline double _plane_gradient(long n, double sxx, double sxy, double syy,
                                   double sx, double sy, double sz,
                                   double sxz, double syz) nogil:
    cdef double fn = <double>n
    cdef double det = (sxx * (syy * fn - sy * sy)
                       - sxy * (sxy * fn - sy * sx)
                       + sx * (sxy * sy - syy * sx))
    if fabs(det) < 1e-12:
        return 0.0
    cdef double det_a = (sxz * (syy * fn - sy * sy)
                         - sxy * (syz * fn - sy * sz)
                         + sx * (syz * sy - syy * sz))
    cdef double det_b = (sxx * (syz * fn - sz * sy)
                         - sxz * (sxy * fn - sy * sx)
                         + sx * (sxy * sz - syz * sx))
    return _dist(det_a / det, det_b / det)


def classify(const double[:, ::1] heights, const unsigned char[:, ::1] state,
             const double[:, ::1] ceil_h, double res, double cx, double cy,
             double rng, double footprint_radius, double slope_limit_deg,
             double step_limit, double clearance_h):
    """Slope/step/clearance classification; see the reference implementation."""
    cdef long h = heights.shape[0]
    cdef long w = heights.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.uint8)
    prov_arr = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] labels = labels_arr
    cdef unsigned char[:, ::1] prov = prov_arr
    cdef double rc = footprint_radius / res
    cdef long r = <long>ceil(rc)
    # footprint offsets in the reference's (oy outer, ox inner) order
    cdef long max_offs = (2 * r + 1) * (2 * r + 1)
    offs_arr = np.empty((max_offs, 2), dtype=np.int64)
    cdef long[:, ::1] offs = offs_arr
    cdef long n_offs = 0
    cdef long ox, oy
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            if <double>(ox * ox + oy * oy) <= rc * rc:
                offs[n_offs, 0] = ox
                offs[n_offs, 1] = oy
                n_offs += 1
    # matches math.tan(math.radians(...)): radians is x * (pi / 180.0)
    cdef double tan_limit = tan(slope_limit_deg * (M_PI / 180.0))
    cdef long x_lo = <long>((cx - rng) / res)
    cdef long x_hi = <long>((cx + rng) / res)
    cdef long y_lo = <long>((cy - rng) / res)
    cdef long y_hi = <long>((cy + rng) / res)
    if x_lo < 0: x_lo = 0
    if y_lo < 0: y_lo = 0
    if x_hi > w - 1: x_hi = w - 1
    if y_hi > h - 1: y_hi = h - 1
    cdef long ix, iy, o, nx, ny, qx, qy, qi, n_pts
    cdef unsigned char p
    cdef bint virtual_in, fatal
    cdef double d, fx, fy, fz, hc, grad
    cdef double sxx, sxy, syy, sx_, sy_, sz_, sxz, syz
    for iy in range(y_lo, y_hi + 1):
        for ix in range(x_lo, x_hi + 1):
            if state[iy, ix] == 0:
                continue
            d = _dist((<double>ix + 0.5) * res - cx,
                      (<double>iy + 0.5) * res - cy)
            if d > rng:
                continue
            p = 1 if state[iy, ix] == 1 else 2
            if ceil_h[iy, ix] < clearance_h:
                labels[iy, ix] = 2
                prov[iy, ix] = p
                continue
            hc = heights[iy, ix]
            virtual_in = state[iy, ix] == 2
            fatal = False
            # drop test: a known 4-neighbour more than step_limit below
            for qi in range(4):
                if qi == 0:
                    qx = ix - 1; qy = iy
                elif qi == 1:
                    qx = ix + 1; qy = iy
                elif qi == 2:
                    qx = ix; qy = iy - 1
                else:
                    qx = ix; qy = iy + 1
                if qx < 0 or qy < 0 or qx >= w or qy >= h:
                    continue
                if state[qy, qx] == 0:
                    continue
                if hc - heights[qy, qx] > step_limit:
                    fatal = True
            n_pts = 0
            sxx = sxy = syy = sx_ = sy_ = sz_ = sxz = syz = 0.0
            for o in range(n_offs):
                ox = offs[o, 0]
                oy = offs[o, 1]
                nx = ix + ox
                ny = iy + oy
                if nx < 0 or ny < 0 or nx >= w or ny >= h:
                    continue
                if state[ny, nx] == 0:
                    continue
                if state[ny, nx] == 2:
                    virtual_in = True
                fz = heights[ny, nx]
                if fabs(fz - hc) > step_limit:
                    continue
                fx = ox * res
                fy = oy * res
                n_pts += 1
                sxx += fx * fx
                sxy += fx * fy
                syy += fy * fy
                sx_ += fx
                sy_ += fy
                sz_ += fz
                sxz += fx * fz
                syz += fy * fz
            if not fatal and n_pts >= 3:
                grad = _plane_gradient(n_pts, sxx, sxy, syy, sx_, sy_,
                                       sz_, sxz, syz)
                if grad > tan_limit:
                    fatal = True
            labels[iy, ix] = 2 if fatal else 1
            prov[iy, ix] = 2 if virtual_in else p
    return labels_arr, prov_arr


def footprint_clear(const unsigned char[:, ::1] labels, double res,
                    double x, double y, double radius):
    """True when a circle of ``radius`` at (x, y) intersects no fatal cell square."""
    cdef long h = labels.shape[0]
    cdef long w = labels.shape[1]
    cdef double r = radius
    cdef long x_lo = <long>((x - r) / res) - 1
    cdef long x_hi = <long>((x + r) / res) + 1
    cdef long y_lo = <long>((y - r) / res) - 1
    cdef long y_hi = <long>((y + r) / res) + 1
    if x_lo < 0: x_lo = 0
    if y_lo < 0: y_lo = 0
    if x_hi > w - 1: x_hi = w - 1
    if y_hi > h - 1: y_hi = h - 1
    cdef double r2 = r * r - 1e-9
    cdef long ix, iy
    cdef double qx, qy
    for iy in range(y_lo, y_hi + 1):
        for ix in range(x_lo, x_hi + 1):
            if labels[iy, ix] != 2:
                continue
            qx = min(max(x, ix * res), (ix + 1) * res)
            qy = min(max(y, iy * res), (iy + 1) * res)
            if (qx - x) * (qx - x) + (qy - y) * (qy - y) < r2:
                return False
    return True


def clearance_to_fatal(const unsigned char[:, ::1] labels, double res,
                       double x, double y, double search):
    """Distance from (x, y) to the nearest fatal cell square, capped at ``search``."""
    cdef long h = labels.shape[0]
    cdef long w = labels.shape[1]
    cdef long x_lo = <long>((x - search) / res) - 1
    cdef long x_hi = <long>((x + search) / res) + 1
    cdef long y_lo = <long>((y - search) / res) - 1
    cdef long y_hi = <long>((y + search) / res) + 1
    if x_lo < 0: x_lo = 0
    if y_lo < 0: y_lo = 0
    if x_hi > w - 1: x_hi = w - 1
    if y_hi > h - 1: y_hi = h - 1
    cdef double best = search
    cdef long ix, iy
    cdef double qx, qy, d
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


def nearest_observed(const double[:, ::1] heights,
                     const unsigned char[:, ::1] state,
                     long ix, long iy, long max_r):
    """Height of the closest observed cell, searched ring by ring.

    Within the first Chebyshev shell containing an observed cell the winner is
    the smallest (squared distance, row, column) triple, so results do not
    depend on iteration order.
    """
    cdef long h = state.shape[0]
    cdef long w = state.shape[1]
    cdef long r, ox, oy, nx, ny, d2
    cdef long best_d2, best_y, best_x
    cdef bint found
    for r in range(1, max_r + 1):
        found = False
        best_d2 = 0
        best_y = 0
        best_x = 0
        for oy in range(-r, r + 1):
            for ox in range(-r, r + 1):
                if max(ox if ox >= 0 else -ox, oy if oy >= 0 else -oy) != r:
                    continue
                nx = ix + ox
                ny = iy + oy
                if 0 <= nx < w and 0 <= ny < h and state[ny, nx] == 1:
                    d2 = ox * ox + oy * oy
                    if (not found or d2 < best_d2
                            or (d2 == best_d2 and (ny < best_y
                                or (ny == best_y and nx < best_x)))):
                        found = True
                        best_d2 = d2
                        best_y = ny
                        best_x = nx
        if found:
            return heights[best_y, best_x]
    return None
