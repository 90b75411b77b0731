"""Driving environments and the scenario search space.

A scenario genome is a flat 76-vector: six NPCs with a model-type index and
five timed waypoints of (speed delta, lane change) each, two lighting fields,
and eight weather fields. Spawn placement is part of the environment, not the
genome.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .world import (
    NpcSpec,
    SimConfig,
    VehicleClass,
    Waypoint,
    WeatherState,
    WEATHER_RANGES,
    make_vehicle,
    WorldState,
)

NPC_COUNT = 6
WAYPOINT_COUNT = 5
NPC_FIELDS = 1 + 2 * WAYPOINT_COUNT
GENOME_LENGTH = NPC_COUNT * NPC_FIELDS + 2 + 8  # 76

SPEED_DELTA_RANGE = (-100.0, 50.0)
WEATHER_FIELDS = (
    "cloudiness",
    "precipitation",
    "precipitation_deposits",
    "wind_intensity",
    "fog_density",
    "fog_distance",
    "wetness",
    "fog_falloff",
)
SUN_AZIMUTH_INDEX = NPC_COUNT * NPC_FIELDS
SUN_ALTITUDE_INDEX = SUN_AZIMUTH_INDEX + 1
WEATHER_OFFSET = SUN_ALTITUDE_INDEX + 1


@dataclass(frozen=True)
class NpcSpawn:
    lane: int
    gap: float         # m ahead of the ego spawn
    speed_frac: float  # fraction of the road speed limit


@dataclass(frozen=True)
class Environment:
    """A parameterized driving environment: road geometry, speed limit, and
    the fixed spawn layout of the six NPCs."""

    name: str
    speed_limit: float
    road_length: float
    lane_count: int
    lane_width: float
    curvature: float  # 1/m, positive bends left; affects sensor geometry only
    ego_lane: int
    ego_start: float
    model_classes: tuple[VehicleClass, ...]
    spawns: tuple[NpcSpawn, ...]


def _classes(*groups: tuple[VehicleClass, int]) -> tuple[VehicleClass, ...]:
    out: list[VehicleClass] = []
    for kind, count in groups:
        out.extend([kind] * count)
    return tuple(out)


# S1: straight local road. The spawn layout surrounds the ego with cut-in
# opportunities from both adjacent lanes plus same-lane leads.
S1 = Environment(
    name="s1",
    speed_limit=15.6,
    road_length=600.0,
    lane_count=3,
    lane_width=3.5,
    curvature=0.0,
    ego_lane=1,
    ego_start=10.0,
    model_classes=_classes(
        (VehicleClass.CAR, 14),
        (VehicleClass.TRUCK, 6),
        (VehicleClass.MOTORCYCLE, 4),
        (VehicleClass.BICYCLE, 4),
    ),
    spawns=(
        NpcSpawn(lane=1, gap=34.0, speed_frac=1.0),
        NpcSpawn(lane=0, gap=30.0, speed_frac=0.85),
        NpcSpawn(lane=2, gap=26.0, speed_frac=0.9),
        NpcSpawn(lane=0, gap=52.0, speed_frac=0.95),
        NpcSpawn(lane=2, gap=62.0, speed_frac=0.95),
        NpcSpawn(lane=1, gap=75.0, speed_frac=1.0),
    ),
)

# S2: left-curved highway; no two-wheelers, higher speed limit. In road
# coordinates the physics is identical, only sensor geometry changes.
S2 = Environment(
    name="s2",
    speed_limit=20.1,
    road_length=800.0,
    lane_count=3,
    lane_width=3.5,
    curvature=1.0 / 400.0,
    ego_lane=1,
    ego_start=10.0,
    model_classes=_classes((VehicleClass.CAR, 18), (VehicleClass.TRUCK, 6)),
    spawns=(
        NpcSpawn(lane=1, gap=42.0, speed_frac=1.0),
        NpcSpawn(lane=0, gap=36.0, speed_frac=0.85),
        NpcSpawn(lane=2, gap=32.0, speed_frac=0.9),
        NpcSpawn(lane=0, gap=58.0, speed_frac=0.95),
        NpcSpawn(lane=2, gap=68.0, speed_frac=0.95),
        NpcSpawn(lane=1, gap=85.0, speed_frac=1.0),
    ),
)

ENVIRONMENTS = {"s1": S1, "s2": S2}


def get_environment(name: str, overrides: Optional[dict] = None) -> Environment:
    try:
        env = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}", field="environment") from None
    if overrides:
        env = apply_environment_overrides(env, overrides)
    return env


def apply_environment_overrides(env: Environment, overrides: dict) -> Environment:
    """Apply a restricted set of overrides (spawn layout, curvature, road
    length); used by packaged fixtures and parity experiments."""
    allowed = {"spawns", "curvature", "road_length", "speed_limit", "ego_start"}
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(
            f"unsupported override(s): {sorted(unknown)}", field="environment_overrides"
        )
    fields = dict(overrides)
    if "spawns" in fields:
        spawns = fields["spawns"]
        if len(spawns) != NPC_COUNT:
            raise ConfigError(
                f"expected {NPC_COUNT} spawn entries", field="environment_overrides.spawns"
            )
        fields["spawns"] = tuple(
            NpcSpawn(lane=int(s[0]), gap=float(s[1]), speed_frac=float(s[2])) for s in spawns
        )
    return replace(env, **fields)


class GenomeSpace:
    """Per-coordinate bounds and kinds for an environment's search space."""

    def __init__(self, env: Environment):
        low = np.empty(GENOME_LENGTH)
        high = np.empty(GENOME_LENGTH)
        discrete = np.zeros(GENOME_LENGTH, dtype=bool)
        names: list[str] = []
        for i in range(NPC_COUNT):
            base = i * NPC_FIELDS
            low[base] = 0
            high[base] = len(env.model_classes) - 1
            discrete[base] = True
            names.append(f"npc{i}.model_type")
            for j in range(WAYPOINT_COUNT):
                s = base + 1 + 2 * j
                low[s], high[s] = SPEED_DELTA_RANGE
                names.append(f"npc{i}.wp{j}.speed_delta")
                low[s + 1], high[s + 1] = 0, 2
                discrete[s + 1] = True
                names.append(f"npc{i}.wp{j}.lane_change")
        low[SUN_AZIMUTH_INDEX], high[SUN_AZIMUTH_INDEX] = 0.0, 360.0
        names.append("lighting.sun_azimuth")
        low[SUN_ALTITUDE_INDEX], high[SUN_ALTITUDE_INDEX] = -90.0, 90.0
        names.append("lighting.sun_altitude")
        for k, field_name in enumerate(WEATHER_FIELDS):
            low[WEATHER_OFFSET + k], high[WEATHER_OFFSET + k] = WEATHER_RANGES[field_name]
            names.append(f"weather.{field_name}")
        self.env = env
        self.low = low
        self.high = high
        self.discrete = discrete
        self.names = tuple(names)

    def validate(self, genome: np.ndarray) -> None:
        if genome.shape != (GENOME_LENGTH,):
            raise ConfigError(
                f"genome must have length {GENOME_LENGTH}, got shape {genome.shape}",
                field="genome",
            )
        for i in range(GENOME_LENGTH):
            v = genome[i]
            if not (self.low[i] - 1e-9 <= v <= self.high[i] + 1e-9):
                raise ConfigError(
                    f"value {v} outside [{self.low[i]}, {self.high[i]}]",
                    field=f"genome.{self.names[i]}",
                )
            if self.discrete[i] and abs(v - round(v)) > 1e-9:
                raise ConfigError(
                    f"value {v} not integral", field=f"genome.{self.names[i]}"
                )


@dataclass(slots=True)
class ScenarioSpec:
    """A decoded, executable scenario."""

    env: Environment
    npcs: list[NpcSpec]
    weather: WeatherState


def decode_genome(genome: np.ndarray, space: GenomeSpace, horizon: float) -> ScenarioSpec:
    """Decode and validate a genome. Waypoint times are evenly distributed
    over the simulation horizon; a speed delta of -100 means a full stop and
    +50 means 50% above the road's speed limit."""
    space.validate(genome)
    env = space.env
    wp_interval = horizon / WAYPOINT_COUNT
    npcs: list[NpcSpec] = []
    for i in range(NPC_COUNT):
        base = i * NPC_FIELDS
        kind = env.model_classes[int(round(genome[base]))]
        spawn = env.spawns[i]
        waypoints = []
        for j in range(WAYPOINT_COUNT):
            delta = float(genome[base + 1 + 2 * j])
            lane_change = int(round(genome[base + 2 + 2 * j]))
            target = env.speed_limit * (1.0 + delta / 100.0)
            waypoints.append(Waypoint(time=j * wp_interval, target_speed=target, lane_change=lane_change))
        npcs.append(
            NpcSpec(
                kind=kind,
                spawn_lane=spawn.lane,
                spawn_gap=spawn.gap,
                spawn_speed=spawn.speed_frac * env.speed_limit,
                waypoints=waypoints,
            )
        )
    lighting = {
        "sun_azimuth": float(genome[SUN_AZIMUTH_INDEX]),
        "sun_altitude": float(genome[SUN_ALTITUDE_INDEX]),
    }
    weather_values = {
        name: float(genome[WEATHER_OFFSET + k]) for k, name in enumerate(WEATHER_FIELDS)
    }
    weather = WeatherState(**weather_values, **lighting)
    return ScenarioSpec(env=env, npcs=npcs, weather=weather)


def initial_world(spec: ScenarioSpec, cfg: SimConfig) -> WorldState:
    env = spec.env
    ego = make_vehicle(-1, VehicleClass.CAR, env.ego_lane, env.ego_start, cfg.speed_limit)
    ego.target_speed = cfg.speed_limit
    npcs = []
    for i, npc_spec in enumerate(spec.npcs):
        npcs.append(
            make_vehicle(
                i,
                npc_spec.kind,
                npc_spec.spawn_lane,
                env.ego_start + npc_spec.spawn_gap,
                npc_spec.spawn_speed,
            )
        )
    return WorldState(time=0.0, ego=ego, npcs=npcs, weather=spec.weather, lane_width=cfg.lane_width)


def genome_from_fields(
    space: GenomeSpace,
    npcs: Sequence[dict],
    sun_azimuth: float = 0.0,
    sun_altitude: float = 90.0,
    weather: Optional[dict] = None,
) -> np.ndarray:
    """Build a genome from readable per-NPC dicts; used by fixtures and
    tests. Each NPC dict: model_type plus a list of (speed_delta,
    lane_change) waypoint pairs (padded with no-ops)."""
    genome = np.zeros(GENOME_LENGTH)
    for i in range(NPC_COUNT):
        base = i * NPC_FIELDS
        spec = npcs[i] if i < len(npcs) else {}
        genome[base] = spec.get("model_type", 0)
        waypoints = list(spec.get("waypoints", []))
        while len(waypoints) < WAYPOINT_COUNT:
            waypoints.append((0.0, 0))
        for j, (delta, lane_change) in enumerate(waypoints[:WAYPOINT_COUNT]):
            genome[base + 1 + 2 * j] = delta
            genome[base + 2 + 2 * j] = lane_change
    genome[SUN_AZIMUTH_INDEX] = sun_azimuth
    genome[SUN_ALTITUDE_INDEX] = sun_altitude
    for k, name in enumerate(WEATHER_FIELDS):
        genome[WEATHER_OFFSET + k] = (weather or {}).get(name, 0.0)
    space.validate(genome)
    return genome
