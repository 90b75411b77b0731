"""Deterministic fixed-step longitudinal driving world.

The ego car runs an adaptive-cruise gap policy on whatever lead the fusion
method reports; NPC vehicles follow timed waypoints (target speed and lane
changes). Physics is forward-Euler point-mass-with-extent kinematics in road
coordinates (arc length, lateral offset); collision tests use axis-aligned
rectangles in that frame.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .errors import SimulationError
from .fusion import Lead

# Ego longitudinal controller constants: a standard ACC gap policy. Only its
# qualitative behavior matters; it is the consumer the fusion output drives.
D_MIN = 4.0          # m, standstill gap
TAU = 1.5            # s, time-gap
A_MAX_ACCEL = 2.0    # m/s^2
A_MAX_BRAKE = 6.0    # m/s^2
KP_SPEED = 0.8       # cruise proportional gain
KP_GAP = 0.5         # gap proportional gain
KV_CLOSE = 1.0       # closing-speed gain

NPC_ACCEL = 3.0            # m/s^2, NPC speed tracking limit
LANE_CHANGE_DURATION = 2.0  # s, linear lateral ramp
SPEED_CAP_FACTOR = 1.5      # no vehicle exceeds 1.5x speed limit
GT_HORIZON = 100.0          # m, ground-truth sensing horizon


class VehicleClass(enum.Enum):
    CAR = "car"
    TRUCK = "truck"
    MOTORCYCLE = "motorcycle"
    BICYCLE = "bicycle"


# (length, width) in meters per class; only size and detectability matter.
VEHICLE_SIZES: dict[VehicleClass, tuple[float, float]] = {
    VehicleClass.CAR: (4.5, 1.9),
    VehicleClass.TRUCK: (7.0, 2.5),
    VehicleClass.MOTORCYCLE: (2.2, 0.8),
    VehicleClass.BICYCLE: (1.8, 0.6),
}


@dataclass(frozen=True)
class SimConfig:
    """Fixed-step simulation parameters. Physics runs at 1/physics_dt Hz;
    sensing, fusion, and control run synchronously at control_hz."""

    physics_dt: float = 0.01
    control_hz: int = 20
    horizon: float = 20.0
    road_length: float = 600.0
    lane_count: int = 3
    lane_width: float = 3.5
    speed_limit: float = 15.6
    rng_seed: int = 0
    warmup: float = 0.0

    def validate(self) -> None:
        if self.physics_dt <= 0:
            raise ValueError("physics_dt must be positive")
        period = 1.0 / self.control_hz
        steps = period / self.physics_dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("control period must be an integer multiple of physics_dt")
        ticks = self.horizon / self.physics_dt
        if abs(ticks - round(ticks)) > 1e-9:
            raise ValueError("horizon must be an integer number of physics steps")
        if self.lane_count < 1 or self.lane_width <= 0 or self.speed_limit <= 0:
            raise ValueError("invalid road geometry")

    @property
    def steps_per_tick(self) -> int:
        return round(1.0 / (self.control_hz * self.physics_dt))

    @property
    def n_ticks(self) -> int:
        return round(self.horizon * self.control_hz)

    @property
    def speed_cap(self) -> float:
        return SPEED_CAP_FACTOR * self.speed_limit


@dataclass(frozen=True)
class WeatherState:
    """Scene weather and lighting; each field is clamped to its search range."""

    cloudiness: float = 0.0
    precipitation: float = 0.0
    precipitation_deposits: float = 0.0
    wind_intensity: float = 0.0
    fog_density: float = 0.0
    fog_distance: float = 0.0
    wetness: float = 0.0
    fog_falloff: float = 0.0
    sun_azimuth: float = 0.0
    sun_altitude: float = 90.0


WEATHER_RANGES: dict[str, tuple[float, float]] = {
    "cloudiness": (0.0, 100.0),
    "precipitation": (0.0, 80.0),
    "precipitation_deposits": (0.0, 80.0),
    "wind_intensity": (0.0, 50.0),
    "fog_density": (0.0, 15.0),
    "fog_distance": (0.0, 100.0),
    "wetness": (0.0, 40.0),
    "fog_falloff": (0.0, 2.0),
    "sun_azimuth": (0.0, 360.0),
    "sun_altitude": (-90.0, 90.0),
}


@dataclass(slots=True)
class Waypoint:
    """A timed behavior change for an NPC."""

    time: float
    target_speed: float
    lane_change: int  # 0 stay, 1 left, 2 right


@dataclass(slots=True)
class NpcSpec:
    """Decoded plan for one NPC: spawn placement plus timed waypoints."""

    kind: VehicleClass
    spawn_lane: int
    spawn_gap: float      # m ahead of the ego spawn position
    spawn_speed: float
    waypoints: list[Waypoint]


@dataclass(slots=True)
class LaneChangeState:
    target_lane: int
    start_lat: float
    elapsed: float = 0.0


@dataclass(slots=True)
class VehicleState:
    id: int
    kind: VehicleClass
    length: float
    width: float
    lane_index: int
    lateral_offset: float
    longitudinal_pos: float
    speed: float
    lane_change: Optional[LaneChangeState] = None
    target_speed: float = 0.0
    next_waypoint: int = 0
    crashed: bool = False


@dataclass(frozen=True, slots=True)
class CollisionEvent:
    time: float
    npc_id: int
    ego_speed_at_impact: float
    in_lane: bool


@dataclass(slots=True)
class WorldState:
    time: float
    ego: VehicleState
    npcs: list[VehicleState]
    weather: WeatherState
    lane_width: float
    collision: Optional[CollisionEvent] = None


def lateral_pos(vehicle: VehicleState, lane_width: float) -> float:
    """Absolute lateral coordinate; lane 0 is rightmost, left is positive."""
    return vehicle.lane_index * lane_width + vehicle.lateral_offset


def make_vehicle(
    vid: int, kind: VehicleClass, lane: int, pos: float, speed: float
) -> VehicleState:
    length, width = VEHICLE_SIZES[kind]
    return VehicleState(
        id=vid,
        kind=kind,
        length=length,
        width=width,
        lane_index=lane,
        lateral_offset=0.0,
        longitudinal_pos=pos,
        speed=speed,
        target_speed=speed,
    )


def _rect_overlap(a: VehicleState, b: VehicleState, lane_width: float) -> bool:
    if abs(a.longitudinal_pos - b.longitudinal_pos) >= 0.5 * (a.length + b.length):
        return False
    return abs(lateral_pos(a, lane_width) - lateral_pos(b, lane_width)) < 0.5 * (
        a.width + b.width
    )


def _advance_npc(npc: VehicleState, spec: NpcSpec, cfg: SimConfig, now: float, dt: float) -> None:
    if npc.crashed:
        return
    waypoints = spec.waypoints
    while npc.next_waypoint < len(waypoints) and now >= waypoints[npc.next_waypoint].time - 1e-9:
        wp = waypoints[npc.next_waypoint]
        npc.next_waypoint += 1
        npc.target_speed = wp.target_speed
        if wp.lane_change:
            current_lat = lateral_pos(npc, cfg.lane_width)
            target = npc.lane_index + (1 if wp.lane_change == 1 else -1)
            if npc.lane_change is not None:
                target = npc.lane_change.target_lane + (1 if wp.lane_change == 1 else -1)
            if 0 <= target < cfg.lane_count:
                npc.lane_change = LaneChangeState(target, current_lat)

    npc.longitudinal_pos += npc.speed * dt
    dv = npc.target_speed - npc.speed
    step = max(-NPC_ACCEL * dt, min(NPC_ACCEL * dt, dv))
    npc.speed = max(0.0, min(npc.speed + step, cfg.speed_cap))

    move = npc.lane_change
    if move is not None:
        move.elapsed += dt
        frac = min(1.0, move.elapsed / LANE_CHANGE_DURATION)
        target_lat = move.target_lane * cfg.lane_width
        lat = move.start_lat + (target_lat - move.start_lat) * frac
        if frac >= 1.0:
            npc.lane_index = move.target_lane
            npc.lateral_offset = 0.0
            npc.lane_change = None
        else:
            npc.lateral_offset = lat - npc.lane_index * cfg.lane_width


def step_world(
    state: WorldState,
    accel_cmd: float,
    npc_specs: list[NpcSpec],
    cfg: SimConfig,
    dt: float,
) -> WorldState:
    """Advance one physics step. Mutates and returns `state`; the world is
    frozen once a collision event exists."""
    if state.collision is not None:
        raise SimulationError("step_world called on a collided (frozen) world")
    now = state.time
    ego = state.ego
    ego.longitudinal_pos += ego.speed * dt
    ego.speed = max(0.0, min(ego.speed + accel_cmd * dt, cfg.speed_cap))

    for npc, spec in zip(state.npcs, npc_specs):
        _advance_npc(npc, spec, cfg, now, dt)

    # NPC-NPC contact freezes both vehicles in place (a blocked road), which
    # keeps the world total instead of ending the run.
    npcs = state.npcs
    for i in range(len(npcs)):
        a = npcs[i]
        for j in range(i + 1, len(npcs)):
            b = npcs[j]
            if (a.crashed and b.crashed) or abs(
                a.longitudinal_pos - b.longitudinal_pos
            ) > 20.0:
                continue
            if _rect_overlap(a, b, cfg.lane_width):
                a.crashed = b.crashed = True
                a.speed = b.speed = 0.0

    state.time = now + dt
    for npc in npcs:
        if _rect_overlap(ego, npc, cfg.lane_width):
            lane_center = ego.lane_index * cfg.lane_width
            npc_lat = lateral_pos(npc, cfg.lane_width)
            in_lane = abs(npc_lat - lane_center) < 0.5 * (cfg.lane_width + npc.width)
            state.collision = CollisionEvent(
                time=state.time,
                npc_id=npc.id,
                ego_speed_at_impact=ego.speed,
                in_lane=in_lane,
            )
            break
    return state


def surface_gap(ego: VehicleState, npc: VehicleState) -> float:
    """Longitudinal clearance from the ego's front bumper to the NPC's rear
    bumper; what a forward-looking sensor actually ranges. Zero or negative
    means the bodies overlap longitudinally."""
    return (
        npc.longitudinal_pos
        - ego.longitudinal_pos
        - 0.5 * (ego.length + npc.length)
    )


def ground_truth_lead(
    state: WorldState, horizon: float = GT_HORIZON
) -> Optional[Lead]:
    """Nearest NPC ahead of the ego whose body overlaps the ego lane
    (including partial cut-in overlap), as a relative lead. rel_x is the
    bumper-to-bumper clearance."""
    ego = state.ego
    lane_width = state.lane_width
    lane_center = ego.lane_index * lane_width
    ego_lat = lateral_pos(ego, lane_width)
    best: Optional[VehicleState] = None
    best_dx = horizon
    for npc in state.npcs:
        dx = surface_gap(ego, npc)
        if dx <= 0.0 or dx > best_dx:
            continue
        npc_lat = lateral_pos(npc, lane_width)
        if abs(npc_lat - lane_center) < 0.5 * (lane_width + npc.width):
            best = npc
            best_dx = dx
    if best is None:
        return None
    return Lead(
        rel_x=best_dx,
        rel_y=lateral_pos(best, lane_width) - ego_lat,
        rel_v=best.speed - ego.speed,
    )


def ego_longitudinal_control(
    fused: Optional[Lead], ego_speed: float, target_speed: float
) -> float:
    """Acceleration command from the fused lead: cruise toward the target
    speed, bounded by a proportional gap/closing-speed law when a lead is
    present. Output saturates at the actuator limits."""
    cruise = KP_SPEED * (target_speed - ego_speed)
    if fused is None:
        accel = cruise
    else:
        desired_gap = D_MIN + TAU * ego_speed
        follow = KP_GAP * (fused.rel_x - desired_gap) + KV_CLOSE * fused.rel_v
        accel = min(cruise, follow)
    return max(-A_MAX_BRAKE, min(accel, A_MAX_ACCEL))
