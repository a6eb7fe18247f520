"""Stochastic artefact detection and the fleet-wide artefact tracker.

Detections are simulated per perception tick (noisy positions, misses, and a
Poisson false-positive stream).  A tracker fuses detections into globally
identified tracks and decides when an update is worth reporting to the
operator: only when the artefact was seen meaningfully closer than before.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .config import PerceptionConfig
from .geometry import Pose2D
from .world import (
    Artefact,
    CameraSpec,
    EMITTER_CLASSES,
    GridWorld,
    VISUAL_CLASSES,
    field_strength,
    visible_artefacts,
)

REPORT_NEW = "new"
REPORT_UPDATE = "update"
REPORT_SILENT = "silent"


@dataclass(frozen=True)
class Detection:
    agent: str
    cls: str
    position: tuple[float, float]
    confidence: float
    distance: float               # observation distance, m
    tick: int


@dataclass
class ArtefactTrack:
    guid: str
    cls: str
    position: tuple[float, float]         # confidence-weighted mean
    weight: float
    closest_report_distance: float
    observers: set[str] = field(default_factory=set)
    reported: bool = False


@dataclass(frozen=True)
class SignalMarker:
    kind: str                     # "wifi" | "gas"
    position: tuple[float, float]
    strength: float
    tick: int

    def __post_init__(self):
        if self.strength <= 0:
            raise ValueError("marker strength must be positive")


def simulate_detections(world: GridWorld, agent: str, pose: Pose2D,
                        camera: CameraSpec, rng: np.random.Generator,
                        tick: int, dt: float,
                        cfg: PerceptionConfig | None = None) -> list[Detection]:
    """One perception tick: misses, position noise, and false positives."""
    cfg = cfg or PerceptionConfig()
    out: list[Detection] = []
    for art, dist in visible_artefacts(world, pose, camera):
        if rng.random() >= cfg.p_tp:
            continue
        nx, ny = rng.normal(0.0, cfg.sigma_pos, size=2)
        out.append(Detection(
            agent=agent, cls=art.cls,
            position=(art.position[0] + float(nx), art.position[1] + float(ny)),
            confidence=float(rng.uniform(0.5, 1.0)),
            distance=dist, tick=tick))
    for _ in range(int(rng.poisson(cfg.fp_rate * dt))):
        ang = float(rng.uniform(0.0, 2.0 * math.pi))
        r = float(rng.uniform(1.0, camera.range))
        cls = VISUAL_CLASSES[int(rng.integers(0, len(VISUAL_CLASSES)))]
        out.append(Detection(
            agent=agent, cls=cls,
            position=(pose.x + r * math.cos(ang), pose.y + r * math.sin(ang)),
            confidence=float(rng.uniform(0.5, 0.8)),
            distance=r, tick=tick))
    return out


class Tracker:
    """Artefact tracks with fleet-unique identifiers.

    Tracks never expire; positions are remembered in the global frame so
    artefacts survive indefinitely once seen.
    """

    def __init__(self, cfg: PerceptionConfig | None = None):
        self.cfg = cfg or PerceptionConfig()
        self.tracks: dict[str, ArtefactTrack] = {}
        self.reports_saved = 0    # detections absorbed by other agents' tracks
        self._seq = 0

    def associate(self, det: Detection) -> str:
        """Nearest same-class track within the association radius, else new."""
        best: Optional[str] = None
        best_d = self.cfg.assoc_radius
        for guid in sorted(self.tracks):
            tr = self.tracks[guid]
            if tr.cls != det.cls:
                continue
            d = math.hypot(tr.position[0] - det.position[0],
                           tr.position[1] - det.position[1])
            if d < best_d - 1e-12 or (abs(d - best_d) <= 1e-12 and best is None):
                best, best_d = guid, d
        if best is not None:
            return best
        guid = f"{det.cls}:{det.agent}:{det.tick}:{self._seq}"
        self._seq += 1
        self.tracks[guid] = ArtefactTrack(
            guid=guid, cls=det.cls, position=det.position, weight=0.0,
            closest_report_distance=float("inf"))
        return guid

    def ingest(self, det: Detection) -> tuple[str, str]:
        """Associate, fuse, and classify the report action.

        Returns (guid, action) with action in {new, update, silent}.
        """
        guid = self.associate(det)
        tr = self.tracks[guid]
        if tr.observers and det.agent not in tr.observers:
            self.reports_saved += 1
        tr.observers.add(det.agent)
        w = tr.weight + det.confidence
        tr.position = (
            (tr.position[0] * tr.weight + det.position[0] * det.confidence) / w,
            (tr.position[1] * tr.weight + det.position[1] * det.confidence) / w)
        tr.weight = w
        action = report_policy(tr, det, self.cfg)
        if action != REPORT_SILENT:
            tr.closest_report_distance = det.distance
            tr.reported = True
        return guid, action

    def ingest_sorted(self, detections: Iterable[Detection]):
        """Deterministic bulk merge: sorted by (tick, agent, position)."""
        out = []
        for det in sorted(detections,
                          key=lambda d: (d.tick, d.agent, d.position)):
            out.append((self.ingest(det), det))
        return out


def report_policy(track: ArtefactTrack, det: Detection,
                  cfg: PerceptionConfig | None = None) -> str:
    """First sighting reports; later ones only if meaningfully closer."""
    cfg = cfg or PerceptionConfig()
    if not track.reported:
        return REPORT_NEW
    if det.distance <= track.closest_report_distance - cfg.report_closer:
        return REPORT_UPDATE
    return REPORT_SILENT


def sample_signals(world: GridWorld, pose: Pose2D, tick: int,
                   cfg: PerceptionConfig | None = None) -> list[SignalMarker]:
    """One marker per emitter whose field reaches the agent's position."""
    cfg = cfg or PerceptionConfig()
    out = []
    for art in world.artefacts:
        if art.emitter is None:
            continue
        s = field_strength(world, art, (pose.x, pose.y),
                           cutoff=cfg.field_cutoff,
                           wall_attenuation=cfg.wall_attenuation)
        if s > 0.0:
            out.append(SignalMarker(art.emitter.kind, (pose.x, pose.y),
                                    s, tick))
    return out


def report_record(guid: str, track: ArtefactTrack, det: Detection) -> dict:
    """Wire record consumed by scoring and the console review panel."""
    return {"guid": guid, "class": track.cls,
            "position": [track.position[0], track.position[1]],
            "distance": det.distance, "confidence": det.confidence,
            "agent": det.agent, "tick": det.tick}
