"""Per-agent belief maps: height integration, virtual surfaces, traversability,
and frontier extraction."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .world import AgentSpec, ObservationBatch

UNKNOWN, OBSERVED, VIRTUAL = 0, 1, 2          # height-cell states
LBL_UNKNOWN, LBL_TRAV, LBL_FATAL = 0, 1, 2    # traversability labels


class HeightMap:
    def __init__(self, resolution: float, width: int, height: int):
        self.resolution = resolution
        self.width = width
        self.height = height
        self.heights = np.zeros((height, width), dtype=np.float64)
        self.state = np.zeros((height, width), dtype=np.uint8)
        self.ceil = np.full((height, width), np.inf)

    def copy(self) -> "HeightMap":
        m = HeightMap(self.resolution, self.width, self.height)
        m.heights = self.heights.copy()
        m.state = self.state.copy()
        m.ceil = self.ceil.copy()
        return m

    def observed_cells(self) -> set[int]:
        ys, xs = np.nonzero(self.state == OBSERVED)
        return set((ys * self.width + xs).tolist())


@dataclass
class TraversabilityMap:
    resolution: float
    labels: np.ndarray      # uint8 LBL_*
    prov: np.ndarray        # uint8 height-state provenance
    analysis_range: float
    generated_at: float


@dataclass
class FrontierCell:
    cell: int
    adjacent_unknown_count: int


def _nearest_observed_height(m: HeightMap, ix: int, iy: int,
                             max_r: int = 10) -> float | None:
    """Deterministic ring search for the closest observed cell's height."""
    h = kernels.nearest_observed(m.heights, m.state, ix, iy, max_r)
    return None if h is None else float(h)


def integrate_observation(m: HeightMap, obs: ObservationBatch,
                          resolution: float | None = None,
                          ceil_lookup=None) -> None:
    """Merge a lidar batch into the map in place.

    Observed cells always win; free columns become virtual surfaces whose
    height follows the nearest observed neighbour, pulled down to the free-ray
    height (the surface steepens as the sensor approaches an edge).
    """
    if resolution is not None and resolution != m.resolution:
        raise ValueError("observation resolution does not match map")
    w = m.width
    for idx, h in obs.observed:
        iy, ix = divmod(idx, w)
        m.heights[iy, ix] = h
        m.state[iy, ix] = OBSERVED
        if ceil_lookup is not None:
            m.ceil[iy, ix] = ceil_lookup(ix, iy)
    for idx, free_h in obs.free_columns:
        iy, ix = divmod(idx, w)
        if m.state[iy, ix] == OBSERVED:
            continue
        base = _nearest_observed_height(m, ix, iy)
        if base is None:
            continue
        m.heights[iy, ix] = min(base, free_h)
        m.state[iy, ix] = VIRTUAL
        if ceil_lookup is not None:
            m.ceil[iy, ix] = ceil_lookup(ix, iy)


def classify_traversability(m: HeightMap, spec: AgentSpec, rng: float,
                            around, generated_at: float = 0.0) -> TraversabilityMap:
    if rng <= 0:
        raise ValueError("analysis range must be > 0")
    if spec.is_aerial:
        # aerial agents ignore slope/step; fatal when the gap between the
        # observed surface and the ceiling is too small to fly through
        labels = np.where(m.state > 0,
                          np.where(m.ceil - m.heights < spec.clearance_height,
                                   LBL_FATAL, LBL_TRAV),
                          LBL_UNKNOWN).astype(np.uint8)
        prov = np.where(m.state > 0, m.state, 0).astype(np.uint8)
        return TraversabilityMap(m.resolution, labels, prov, rng, generated_at)
    ceil = np.where(np.isinf(m.ceil), 1e6, m.ceil)
    labels, prov = kernels.classify(
        m.heights, m.state, ceil, m.resolution,
        around.x, around.y, rng, spec.width / 2.0,
        spec.slope_limit, spec.step_limit, spec.clearance_height)
    return TraversabilityMap(m.resolution, labels, prov, rng, generated_at)


def merge_traversability(dst: TraversabilityMap, src: TraversabilityMap) -> None:
    """Accumulate a window analysis into a persistent map (newer labels win)."""
    mask = src.labels != LBL_UNKNOWN
    dst.labels[mask] = src.labels[mask]
    dst.prov[mask] = src.prov[mask]
    dst.generated_at = max(dst.generated_at, src.generated_at)


def empty_traversability(resolution: float, width: int, height: int) -> TraversabilityMap:
    return TraversabilityMap(resolution,
                             np.zeros((height, width), dtype=np.uint8),
                             np.zeros((height, width), dtype=np.uint8),
                             0.0, 0.0)


def extract_frontiers(trav: TraversabilityMap,
                      shared_observed: set[int]) -> list[FrontierCell]:
    h, w = trav.labels.shape
    out = []
    ys, xs = np.nonzero(trav.labels == LBL_TRAV)
    for iy, ix in zip(ys.tolist(), xs.tolist()):
        idx = iy * w + ix
        if idx in shared_observed:
            continue
        count = 0
        for nx, ny in ((ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)):
            if 0 <= nx < w and 0 <= ny < h and trav.labels[ny, nx] == LBL_UNKNOWN \
                    and (ny * w + nx) not in shared_observed:
                count += 1
        if count:
            out.append(FrontierCell(idx, count))
    return out


# ---------------------------------------------------------------------------
# Debug export: 16-bit grayscale PGM (P5), one channel per call

def export_height_pgm(m: HeightMap) -> bytes:
    mm = np.clip(np.round(m.heights * 1000.0) + 32768, 0, 65535).astype(">u2")
    mm[m.state == UNKNOWN] = 0
    header = f"P5\n{m.width} {m.height}\n65535\n".encode()
    return header + mm.tobytes()


def export_labels_pgm(trav: TraversabilityMap) -> bytes:
    h, w = trav.labels.shape
    code = (trav.labels.astype(">u2") * 3 + trav.prov.astype(">u2"))
    header = f"P5\n{w} {h}\n65535\n".encode()
    return header + code.tobytes()
