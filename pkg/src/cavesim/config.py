"""Tunable parameter blocks with scenario-overridable defaults.

Every block can be overridden from the scenario file; the values here are
calibration defaults, not measured truths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class CommsConfig:
    r_los: float = 50.0            # line-of-sight connect range, m
    r_wall: float = 15.0           # connect range when walls intervene, m
    n_wall: int = 1                # max wall cells tolerated on a link
    capacity_max: float = 2_000_000.0   # bytes/s at zero distance
    capacity_min: float = 50_000.0      # bytes/s floor while connected
    deploy_delay: float = 10.0     # s before a dropped node activates
    relay_store: bool = True       # dropped nodes participate in store-and-forward


@dataclass
class SensorConfig:
    lidar_range: float = 10.0      # minimum populated range, m
    lidar_rays: int = 360
    sensor_height: float = 0.5     # above local ground, m
    camera_fov: float = 70.0       # degrees
    camera_range: float = 15.0     # m
    wall_obs_height: float = 2.0   # height walls report above their ground, m


@dataclass
class MappingConfig:
    local_range: float = 4.0       # m, analysed at 5 Hz
    global_range: float = 6.0      # m, analysed at 1 Hz
    local_rate: float = 5.0        # Hz
    global_rate: float = 1.0       # Hz


@dataclass
class PlannerConfig:
    yaw_bins: int = 12             # 30 degree bins
    safety_margin: float = 0.01    # m, gaps planner
    virtual_cost_mult: float = 1.5
    slope_penalty: float = 0.02    # per degree of mean slope
    step_penalty: float = 2.0      # near-step proximity penalty
    gaps_iterations: int = 5
    gaps_step: float = 0.02        # m, clearance-ascent step
    horizon_max: float = 5.0       # m, trajectory envelope cap
    v_max: float = 1.2             # m/s
    a_max: float = 1.0             # m/s^2
    w_max: float = 1.5             # rad/s
    tip_threshold: float = 30.0    # degrees pitch/roll
    replan_period: float = 1.0     # s between full replans when a plan is live
    traj_rate: float = 25.0        # Hz regeneration


@dataclass
class GlobalNavConfig:
    superpixel_cells: int = 100
    penalty_factor: float = 10.0
    window_neighbourhood: int = 3
    cluster_radius: float = 5.0    # m graph distance
    fail_timeout: float = 20.0     # s without 1 m progress
    fail_progress: float = 1.0     # m
    slope_pen: float = 0.02        # per degree, matches local planner shape
    rough_pen: float = 1.0


@dataclass
class TaskingConfig:
    discount: float = 0.995        # per second
    max_tasks: int = 4
    max_duration: float = 600.0    # s
    explore_reward: float = 1.0
    explore_duration: float = 301.0  # s; > max_duration/2 so explore tasks never pair
    equiv_radius: float = 8.0      # m graph distance
    w_sep: float = 0.5
    market_period: float = 2.0     # s
    sync_age_max: float = 120.0    # s of un-uploaded data before a sync task
    battery_critical: float = 0.10  # fraction


@dataclass
class PerceptionConfig:
    p_tp: float = 0.3              # per 5 Hz tick while visible
    sigma_pos: float = 0.5         # m
    fp_rate: float = 3.4 / 60.0    # false positives per second, fleet-wide
    assoc_radius: float = 2.0      # m
    report_closer: float = 1.0     # m improvement needed to re-report
    field_cutoff: float = 30.0     # m emitter field cutoff
    wall_attenuation: float = 0.5  # field strength factor per wall cell


@dataclass
class UavConfig:
    d_reach: float = 1.0           # m, tree-to-frontier reach depth
    near_gate: float = 3.2         # m, unreachable check gate
    detour_gate: float = 2.0       # m, plan-end minus tree distance
    progress_timeout: float = 20.0  # s
    w_size: float = 1.0
    w_dist: float = 0.5
    w_align: float = 2.0
    w_reach: float = 10.0
    speed: float = 1.5             # m/s
    flight_minutes: float = 20.0
    launch_clearance: float = 1.0  # m

@dataclass
class FrameConfig:
    overlap_max: float = 0.9
    frame_period: float = 5.0      # s
    map_bytes_per_cell: int = 40
    detection_bytes: int = 50_000
    task_msg_bytes: int = 1_000


@dataclass
class SimConfig:
    dt: float = 0.04               # 25 Hz master tick
    auto_accept: bool = True       # base auto-submits reports when headless
    comms: CommsConfig = field(default_factory=CommsConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    global_nav: GlobalNavConfig = field(default_factory=GlobalNavConfig)
    tasking: TaskingConfig = field(default_factory=TaskingConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    uav: UavConfig = field(default_factory=UavConfig)
    frames: FrameConfig = field(default_factory=FrameConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        cfg = cls()
        for f in fields(cls):
            if f.name not in data:
                continue
            value = data[f.name]
            current = getattr(cfg, f.name)
            if isinstance(value, dict):
                for k, v in value.items():
                    if not hasattr(current, k):
                        raise ValueError(f"unknown config field {f.name}.{k}")
                    setattr(current, k, v)
            else:
                setattr(cfg, f.name, value)
        return cfg

    def to_dict(self) -> dict:
        out: dict = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "__dataclass_fields__"):
                out[f.name] = {k: getattr(v, k) for k in v.__dataclass_fields__}
            else:
                out[f.name] = v
        return out
