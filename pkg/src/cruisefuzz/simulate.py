"""End-to-end scenario execution and trace recording.

A run is a pure function of (genome, fusion method, configuration): sensing,
fusion, and control execute synchronously every control tick with zero
latency, and physics advances at the fixed step in between. Traces serialize
to line-delimited JSON with a schema header; byte equality of two trace
files is the determinism contract.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sensors, world
from .errors import ConfigError
from .fusion import (
    FusionInput,
    FusionTuning,
    Lead,
    make_fusion,
    measurement_covariance,
)
from .objectives import DistThresholds
from .scenario import Environment, GenomeSpace, decode_genome, initial_world
from .sensors import SensorNoiseModel

TRACE_SCHEMA = "cruisefuzz.trace"
TRACE_VERSION = 1


@dataclass(frozen=True)
class OverrideWindow:
    """Replace the fusion output inside [t_start, t_end] with another
    method's output while the world keeps evolving normally."""

    t_start: float
    t_end: float
    method: str = "best_sensor"

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ConfigError("override window requires t_start < t_end", field="override")

    def active(self, t: float) -> bool:
        return self.t_start - 1e-9 <= t <= self.t_end + 1e-9


@dataclass(frozen=True)
class SimSetup:
    """Everything a run needs besides the genome and the fusion identifier."""

    env: Environment
    sim: world.SimConfig
    noise: SensorNoiseModel = SensorNoiseModel()
    tuning: FusionTuning = FusionTuning()
    thresholds: DistThresholds = DistThresholds()

    def space(self) -> GenomeSpace:
        return GenomeSpace(self.env)


def setup_for(
    env: Environment,
    noise: SensorNoiseModel = SensorNoiseModel(),
    tuning: FusionTuning = FusionTuning(),
    thresholds: DistThresholds = DistThresholds(),
    **sim_overrides,
) -> SimSetup:
    """Build a SimSetup whose SimConfig road geometry comes from the
    environment; keyword overrides go to the SimConfig."""
    sim = world.SimConfig(
        road_length=env.road_length,
        lane_count=env.lane_count,
        lane_width=env.lane_width,
        speed_limit=env.speed_limit,
        **sim_overrides,
    )
    return SimSetup(env=env, sim=sim, noise=noise, tuning=tuning, thresholds=thresholds)


@dataclass(slots=True)
class TraceFrame:
    time: float
    ego_pos: float
    ego_speed: float
    camera_leads: list[Lead]
    radar_leads: list[Lead]
    fusion_out: Optional[Lead]
    ground_truth: Optional[Lead]
    accel_cmd: float
    gate: Optional[str] = None


@dataclass(slots=True)
class SimulationTrace:
    frames: list[TraceFrame]
    fusion_method: str
    environment: str
    rng_seed: int
    horizon: float
    control_hz: int
    road_length: float
    speed_limit: float
    genome_sha256: str
    collision: Optional[world.CollisionEvent] = None
    override: Optional[OverrideWindow] = None

    def to_jsonl(self) -> str:
        lines = [json.dumps(self._header(), separators=(",", ":"))]
        for frame in self.frames:
            lines.append(json.dumps(_frame_record(frame), separators=(",", ":")))
        lines.append(json.dumps({"collision": _collision_record(self.collision)}, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def _header(self) -> dict:
        override = None
        if self.override is not None:
            override = {
                "t_start": self.override.t_start,
                "t_end": self.override.t_end,
                "method": self.override.method,
            }
        return {
            "schema": TRACE_SCHEMA,
            "version": TRACE_VERSION,
            "fusion": self.fusion_method,
            "environment": self.environment,
            "rng_seed": self.rng_seed,
            "horizon": self.horizon,
            "control_hz": self.control_hz,
            "road_length": self.road_length,
            "speed_limit": self.speed_limit,
            "genome_sha256": self.genome_sha256,
            "override": override,
        }

    @classmethod
    def from_jsonl(cls, text: str) -> "SimulationTrace":
        lines = [line for line in text.splitlines() if line]
        header = json.loads(lines[0])
        if header.get("schema") != TRACE_SCHEMA or header.get("version") != TRACE_VERSION:
            raise ConfigError("unrecognized trace schema", field="trace")
        frames = []
        collision = None
        for line in lines[1:]:
            record = json.loads(line)
            if "collision" in record and "t" not in record:
                collision = _collision_from(record["collision"])
            else:
                frames.append(_frame_from(record))
        override = None
        if header.get("override"):
            o = header["override"]
            override = OverrideWindow(o["t_start"], o["t_end"], o["method"])
        return cls(
            frames=frames,
            fusion_method=header["fusion"],
            environment=header["environment"],
            rng_seed=header["rng_seed"],
            horizon=header["horizon"],
            control_hz=header["control_hz"],
            road_length=header["road_length"],
            speed_limit=header["speed_limit"],
            genome_sha256=header["genome_sha256"],
            collision=collision,
            override=override,
        )


def _lead_record(lead: Optional[Lead]):
    if lead is None:
        return None
    if lead.confidence is None:
        return [lead.rel_x, lead.rel_y, lead.rel_v]
    return [lead.rel_x, lead.rel_y, lead.rel_v, lead.confidence]


def _lead_from(values) -> Optional[Lead]:
    if values is None:
        return None
    if len(values) == 4:
        return Lead(values[0], values[1], values[2], values[3])
    return Lead(values[0], values[1], values[2])


def _frame_record(frame: TraceFrame) -> dict:
    return {
        "t": frame.time,
        "ego_pos": frame.ego_pos,
        "ego_speed": frame.ego_speed,
        "camera": [_lead_record(l) for l in frame.camera_leads],
        "radar": [_lead_record(l) for l in frame.radar_leads],
        "fusion": _lead_record(frame.fusion_out),
        "gt": _lead_record(frame.ground_truth),
        "accel": frame.accel_cmd,
        "gate": frame.gate,
    }


def _frame_from(record: dict) -> TraceFrame:
    return TraceFrame(
        time=record["t"],
        ego_pos=record["ego_pos"],
        ego_speed=record["ego_speed"],
        camera_leads=[_lead_from(l) for l in record["camera"]],
        radar_leads=[_lead_from(l) for l in record["radar"]],
        fusion_out=_lead_from(record["fusion"]),
        ground_truth=_lead_from(record["gt"]),
        accel_cmd=record["accel"],
        gate=record.get("gate"),
    )


def _collision_record(event: Optional[world.CollisionEvent]):
    if event is None:
        return None
    return {
        "time": event.time,
        "npc_id": event.npc_id,
        "ego_speed": event.ego_speed_at_impact,
        "in_lane": event.in_lane,
    }


def _collision_from(record) -> Optional[world.CollisionEvent]:
    if record is None:
        return None
    return world.CollisionEvent(
        time=record["time"],
        npc_id=record["npc_id"],
        ego_speed_at_impact=record["ego_speed"],
        in_lane=record["in_lane"],
    )


def genome_sha256(genome: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(genome, dtype=np.float64).tobytes()).hexdigest()


def frame_line(frame: TraceFrame) -> str:
    """Canonical serialized form of one frame, for bit-exact comparisons."""
    return json.dumps(_frame_record(frame), separators=(",", ":"))


def run_simulation(
    genome: np.ndarray,
    fusion_method: str,
    setup: SimSetup,
    override: Optional[OverrideWindow] = None,
) -> SimulationTrace:
    """Run one scenario to collision or horizon and record a frame per
    control tick. Fully deterministic given (genome, fusion, setup,
    override)."""
    cfg = setup.sim
    cfg.validate()
    space = setup.space()
    spec = decode_genome(genome, space, cfg.horizon)
    state = initial_world(spec, cfg)
    curvature = setup.env.curvature

    r_camera = measurement_covariance(
        setup.noise.camera.sigma_x, setup.noise.camera.sigma_y, setup.noise.camera.sigma_v
    )
    r_radar = measurement_covariance(
        setup.noise.radar.sigma_x, setup.noise.radar.sigma_y, setup.noise.radar.sigma_v
    )
    tick_dt = 1.0 / cfg.control_hz
    base = make_fusion(
        fusion_method, tick_dt, r_camera, r_radar, setup.tuning, setup.thresholds
    )
    over = None
    if override is not None:
        over = make_fusion(
            override.method, tick_dt, r_camera, r_radar, setup.tuning, setup.thresholds
        )

    frames: list[TraceFrame] = []
    lane_half_width = 0.5 * cfg.lane_width
    for tick in range(cfg.n_ticks):
        t = tick * tick_dt
        gt = world.ground_truth_lead(state)
        cam = sensors.camera_sense(
            state, setup.noise, sensors.rng_stream(cfg.rng_seed, tick, sensors.CAMERA_SENSOR_ID), curvature
        )
        returns = sensors.radar_sense(
            state, setup.noise, sensors.rng_stream(cfg.rng_seed, tick, sensors.RADAR_SENSOR_ID), curvature
        )
        tracks = sensors.dbscan_cluster(
            returns, setup.noise.radar.dbscan_eps, setup.noise.radar.dbscan_min_samples
        )
        finput = FusionInput(
            camera_leads=[Lead(c.rel_x, c.rel_y, c.rel_v, c.confidence) for c in cam],
            radar_tracks=[Lead(r.rel_x, r.rel_y, r.rel_v) for r in tracks],
            ego_speed=state.ego.speed,
            lane_half_width=lane_half_width,
            tick=tick,
        )
        base_out = base.step(finput, gt)
        used = base_out
        if over is not None:
            over_out = over.step(finput, gt)
            if override.active(t):
                used = over_out

        if t < cfg.warmup - 1e-9:
            accel = 0.0
        else:
            accel = world.ego_longitudinal_control(used.primary, state.ego.speed, cfg.speed_limit)

        frames.append(
            TraceFrame(
                time=t,
                ego_pos=state.ego.longitudinal_pos,
                ego_speed=state.ego.speed,
                camera_leads=finput.camera_leads,
                radar_leads=finput.radar_tracks,
                fusion_out=used.primary,
                ground_truth=gt,
                accel_cmd=accel,
                gate=used.gate,
            )
        )

        for _ in range(cfg.steps_per_tick):
            world.step_world(state, accel, spec.npcs, cfg, cfg.physics_dt)
            if state.collision is not None:
                break
        if state.collision is not None:
            break

    return SimulationTrace(
        frames=frames,
        fusion_method=fusion_method,
        environment=setup.env.name,
        rng_seed=cfg.rng_seed,
        horizon=cfg.horizon,
        control_hz=cfg.control_hz,
        road_length=cfg.road_length,
        speed_limit=cfg.speed_limit,
        genome_sha256=genome_sha256(genome),
        collision=state.collision,
        override=override,
    )
