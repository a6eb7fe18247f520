import math

import numpy as np
import pytest

from cavesim.geometry import Pose2D
from cavesim.mapping import (
    FrontierCell,
    HeightMap,
    LBL_FATAL,
    LBL_TRAV,
    LBL_UNKNOWN,
    OBSERVED,
    UNKNOWN,
    VIRTUAL,
    classify_traversability,
    extract_frontiers,
    export_height_pgm,
    integrate_observation,
)
from cavesim.world import AgentSpec, ObservationBatch, load_scenario, sample_lidar

from helpers import scenario_text


def _spec(width=0.7, slope=35.0, step=0.2, kind="tracked"):
    return AgentSpec(id="r1", kind=kind, width=width, slope_limit=slope,
                     step_limit=step, clearance_height=0.8)


def _map(res=0.1, n=20):
    return HeightMap(res, n, n)


# -- integration ------------------------------------------------------------

def test_single_observation():
    m = _map()
    integrate_observation(m, ObservationBatch([(25, 0.5)], []))
    assert m.state[1, 5] == OBSERVED and m.heights[1, 5] == 0.5


def test_resolution_mismatch_rejected():
    m = _map()
    with pytest.raises(ValueError):
        integrate_observation(m, ObservationBatch([], []), resolution=0.5)


def test_idempotent_integration():
    m = _map()
    batch = ObservationBatch([(25, 0.5), (26, 0.6)], [(27, 0.9)])
    integrate_observation(m, batch)
    snap_h = m.heights.copy()
    snap_s = m.state.copy()
    integrate_observation(m, batch)
    assert np.array_equal(m.heights, snap_h) and np.array_equal(m.state, snap_s)


def test_observed_never_downgrades():
    m = _map()
    integrate_observation(m, ObservationBatch([(25, 0.5)], []))
    integrate_observation(m, ObservationBatch([], [(25, 0.2)]))
    assert m.state[1, 5] == OBSERVED
    # but virtual upgrades to observed
    integrate_observation(m, ObservationBatch([(26, 0.4)], [(27, 0.9)]))
    assert m.state[1, 7] == VIRTUAL
    integrate_observation(m, ObservationBatch([(27, 0.3)], []))
    assert m.state[1, 7] == OBSERVED


def test_ledge_batch_produces_virtual_cells():
    ground = np.zeros((20, 20))
    ground[:, :10] = 1.0
    sc = load_scenario(scenario_text(width=20, height=20, ground=ground,
                                     base=[5.5, 10.5]))
    batch = sample_lidar(sc.world, Pose2D(5.5, 10.5), 10.0)
    m = HeightMap(1.0, 20, 20)
    integrate_observation(m, batch)
    for ix in range(10, 13):
        assert m.state[10, ix] == VIRTUAL
        assert m.heights[10, ix] <= 1.0


def test_monotone_knowledge():
    rng = np.random.default_rng(3)
    m = _map(res=0.5, n=12)
    unknown_before = int(np.sum(m.state == UNKNOWN))
    for _ in range(20):
        obs = [(int(rng.integers(0, 144)), float(rng.normal())) for _ in range(5)]
        free = [(int(rng.integers(0, 144)), float(rng.normal() + 1)) for _ in range(3)]
        free = [(i, h) for i, h in free if i not in {j for j, _ in obs}]
        integrate_observation(m, ObservationBatch(obs, free))
        unknown_now = int(np.sum(m.state == UNKNOWN))
        assert unknown_now <= unknown_before
        unknown_before = unknown_now


# -- classification ---------------------------------------------------------

def _observe_all(m: HeightMap, heights: np.ndarray):
    m.heights[:] = heights
    m.state[:] = OBSERVED


def test_flat_plane_all_traversable():
    m = _map(res=0.1, n=20)
    _observe_all(m, np.zeros((20, 20)))
    trav = classify_traversability(m, _spec(), 10.0, Pose2D(1.0, 1.0))
    assert np.all(trav.labels == LBL_TRAV)


def test_step_boundary_fatal():
    m = _map(res=0.1, n=20)
    h = np.zeros((20, 20))
    h[:, 10:] = 0.3
    _observe_all(m, h)
    trav = classify_traversability(m, _spec(step=0.2), 10.0, Pose2D(1.0, 1.0))
    # the high-side edge column is a drop edge; the floor below the step
    # stays traversable right up to the face
    assert np.all(trav.labels[:, 10] == LBL_FATAL)
    assert np.all(trav.labels[:, :10] == LBL_TRAV)
    assert np.all(trav.labels[:, 11:] == LBL_TRAV)


def test_ramp_slope_thresholds():
    m = _map(res=0.1, n=20)
    h = np.tile(np.arange(20) * 0.1, (20, 1))  # 45 degree ramp along x
    _observe_all(m, h)
    fatal = classify_traversability(m, _spec(slope=30.0, step=10.0), 10.0,
                                    Pose2D(1.0, 1.0))
    ok = classify_traversability(m, _spec(slope=50.0, step=10.0), 10.0,
                                 Pose2D(1.0, 1.0))
    assert np.all(fatal.labels == LBL_FATAL)
    assert np.all(ok.labels == LBL_TRAV)


def test_low_ceiling_fatal():
    m = _map(res=0.1, n=10)
    _observe_all(m, np.zeros((10, 10)))
    m.ceil[:] = 10.0
    m.ceil[4, 4] = 0.5
    trav = classify_traversability(m, _spec(), 10.0, Pose2D(0.5, 0.5))
    assert trav.labels[4, 4] == LBL_FATAL


def _oracle_classify(m: HeightMap, spec: AgentSpec, rng: float, cx: float, cy: float):
    """Independent brute-force per-cell classifier."""
    res = m.resolution
    rc = spec.width / 2.0 / res
    tan_lim = math.tan(math.radians(spec.slope_limit))
    labels = np.zeros_like(m.state)
    for iy in range(m.height):
        for ix in range(m.width):
            if m.state[iy, ix] == UNKNOWN:
                continue
            if math.hypot((ix + 0.5) * res - cx, (iy + 0.5) * res - cy) > rng:
                continue
            if m.ceil[iy, ix] < spec.clearance_height:
                labels[iy, ix] = LBL_FATAL
                continue
            hc = m.heights[iy, ix]
            fatal = False
            # drop edge: a known 4-neighbour more than step_limit below
            for qx, qy in ((ix - 1, iy), (ix + 1, iy),
                           (ix, iy - 1), (ix, iy + 1)):
                if not (0 <= qx < m.width and 0 <= qy < m.height):
                    continue
                if m.state[qy, qx] == UNKNOWN:
                    continue
                if hc - m.heights[qy, qx] > spec.step_limit:
                    fatal = True
            # slope fit over the continuous part of the footprint
            cells = [(ox, oy) for oy in range(-int(rc) - 1, int(rc) + 2)
                     for ox in range(-int(rc) - 1, int(rc) + 2)
                     if ox * ox + oy * oy <= rc * rc
                     and 0 <= ix + ox < m.width and 0 <= iy + oy < m.height
                     and m.state[iy + oy, ix + ox] != UNKNOWN
                     and abs(m.heights[iy + oy, ix + ox] - hc) <= spec.step_limit]
            if not fatal and len(cells) >= 3:
                a = np.array([[ox * res, oy * res, 1.0] for ox, oy in cells])
                z = np.array([m.heights[iy + oy, ix + ox] for ox, oy in cells])
                coef, *_ = np.linalg.lstsq(a, z, rcond=None)
                if math.hypot(coef[0], coef[1]) > tan_lim:
                    fatal = True
            labels[iy, ix] = LBL_FATAL if fatal else LBL_TRAV
    return labels


def test_classification_matches_bruteforce_oracle():
    rng = np.random.default_rng(11)
    for trial in range(3):
        m = _map(res=0.1, n=12)
        h = rng.normal(scale=0.08, size=(12, 12)).round(3)
        m.heights[:] = h
        m.state[:] = rng.choice([UNKNOWN, OBSERVED], p=[0.2, 0.8], size=(12, 12))
        m.ceil[:] = 10.0
        spec = _spec()
        got = classify_traversability(m, spec, 5.0, Pose2D(0.6, 0.6))
        want = _oracle_classify(m, spec, 5.0, 0.6, 0.6)
        assert np.array_equal(got.labels, want)


def test_virtual_surface_steepens_to_fatal_before_edge():
    # platform at h=1.0 for x < 5 m, drop beyond; walk a sensor toward the edge
    res = 0.25
    n = 40
    ground = np.zeros((n, n))
    ground[:, :20] = 1.0
    sc = load_scenario(scenario_text(width=n, height=n, resolution=res,
                                     ground=ground, base=[1.0, 5.0]))
    spec = _spec()
    m = HeightMap(res, n, n)
    m.ceil[:] = 10.0
    edge_ix = 20  # first low cell column
    footprint_r = spec.width / 2.0
    saw_fatal_before_edge = False
    for x in np.arange(1.0, 4.9, 0.25):
        pose = Pose2D(float(x), 5.0)
        integrate_observation(m, sample_lidar(sc.world, pose, 4.0,
                                              sensor_height=0.5))
        trav = classify_traversability(m, spec, 4.0, pose)
        dist_to_edge = edge_ix * res - x
        if trav.labels[20, edge_ix] == LBL_FATAL and dist_to_edge > footprint_r:
            saw_fatal_before_edge = True
    assert saw_fatal_before_edge


def test_ramp_resolves_traversable_when_observed():
    # stairs-analogue ramp at 20 degrees: virtual first, traversable once seen
    res = 0.25
    n = 40
    ground = np.zeros((n, n))
    for ix in range(20, n):
        ground[:, ix] = (ix - 20) * res * math.tan(math.radians(20.0))
    sc = load_scenario(scenario_text(width=n, height=n, resolution=res,
                                     ground=ground, base=[1.0, 5.0]))
    spec = _spec()
    m = HeightMap(res, n, n)
    m.ceil[:] = 10.0
    for x in np.arange(1.0, 8.0, 0.5):
        integrate_observation(m, sample_lidar(sc.world, Pose2D(float(x), 5.0), 4.0))
    trav = classify_traversability(m, spec, 40.0, Pose2D(5.0, 5.0))
    ramp = trav.labels[20, 21:28]
    assert np.all(ramp == LBL_TRAV)


# -- frontiers ---------------------------------------------------------------

def _trav_map(labels):
    from cavesim.mapping import TraversabilityMap
    labels = np.asarray(labels, dtype=np.uint8)
    return TraversabilityMap(1.0, labels, np.ones_like(labels), 4.0, 0.0)


def test_fully_observed_no_frontiers():
    trav = _trav_map(np.full((5, 5), LBL_TRAV))
    assert extract_frontiers(trav, set()) == []


def test_corridor_frontier_band():
    labels = np.zeros((5, 10), dtype=np.uint8)
    labels[:, :5] = LBL_TRAV  # left half observed traversable, right unknown
    trav = _trav_map(labels)
    cells = {f.cell for f in extract_frontiers(trav, set())}
    assert cells == {iy * 10 + 4 for iy in range(5)}
    for f in extract_frontiers(trav, set()):
        assert f.adjacent_unknown_count >= 1


def test_teammate_observed_excluded():
    labels = np.zeros((3, 4), dtype=np.uint8)
    labels[:, :2] = LBL_TRAV
    trav = _trav_map(labels)
    shared = {iy * 4 + 1 for iy in range(3)} | {iy * 4 + 2 for iy in range(3)}
    assert extract_frontiers(trav, shared) == []


def test_height_export_is_pgm16():
    m = _map(res=0.5, n=4)
    data = export_height_pgm(m)
    assert data.startswith(b"P5\n4 4\n65535\n")
    assert len(data) == len(b"P5\n4 4\n65535\n") + 4 * 4 * 2
