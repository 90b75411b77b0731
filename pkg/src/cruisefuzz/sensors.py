"""Parametric camera and radar models.

Both sensors view the ground-truth world through a field-of-view filter with
a nearest-body-per-bearing occlusion rule, then perturb what they see. The
camera attaches a confidence that degrades with distance, fog, darkness, and
per-class detectability. The radar emits several returns per target plus
world-stationary clutter; raw returns are condensed to tracks by DBSCAN.

Every per-tick random stream is derived from (seed, tick, sensor id), so
sensing is a pure function of the world state and those three integers.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .world import VehicleClass, VehicleState, WorldState, lateral_pos, surface_gap

CAMERA_SENSOR_ID = 1
RADAR_SENSOR_ID = 2

CAMERA_RANGE = 150.0
CAMERA_HALF_FOV = math.radians(25.0)
RADAR_RANGE = 174.0
RADAR_HALF_FOV = math.radians(15.0)
MAX_RADAR_TRACKS = 16


@dataclass(frozen=True, slots=True)
class CameraLead:
    rel_x: float
    rel_y: float
    rel_v: float
    confidence: float  # percent, [0, 100]


@dataclass(frozen=True, slots=True)
class RadarReturn:
    rel_x: float
    rel_y: float
    rel_v: float


@dataclass(frozen=True, slots=True)
class RadarTrack:
    """A DBSCAN cluster of raw returns: centroid position, mean speed."""

    rel_x: float
    rel_y: float
    rel_v: float


@dataclass(frozen=True)
class CameraNoise:
    """Camera detection model. Confidence starts at 100 and is scaled down
    multiplicatively by per-class detectability, distance, and linear weather
    penalties; detections below `min_confidence` are not emitted at all."""

    sigma_x: float = 0.8
    sigma_y: float = 0.2
    sigma_v: float = 0.6
    confidence_sigma: float = 3.0
    dropout: float = 0.02
    bias_x: float = 0.0
    min_confidence: float = 1.0
    distance_falloff: float = 0.003    # confidence fraction lost per meter
    lateral_falloff: float = 0.45      # per meter of lateral offset beyond the margin
    lateral_margin: float = 2.4        # m; the camera is a lead predictor, so
                                       # off-path vehicles score low confidence
    fog_penalty: float = 0.014         # per fog-density unit
    darkness_threshold: float = 15.0   # deg sun altitude; below it light degrades
    darkness_penalty: float = 0.0025    # per degree below the threshold
    precipitation_penalty: float = 0.001
    cloudiness_penalty: float = 0.0005
    wetness_dropout: float = 0.001     # extra dropout probability per wetness unit
    detectability: dict[VehicleClass, float] = field(
        default_factory=lambda: {
            VehicleClass.CAR: 1.0,
            VehicleClass.TRUCK: 1.0,
            VehicleClass.MOTORCYCLE: 0.85,
            VehicleClass.BICYCLE: 0.7,
        }
    )


@dataclass(frozen=True)
class RadarNoise:
    """Radar model: one track-level offset per target per tick plus small
    per-return jitter, Poisson clutter, and the DBSCAN condensation
    parameters."""

    sigma_x: float = 0.3
    sigma_y: float = 0.4
    sigma_v: float = 0.25
    return_jitter: float = 0.1
    returns_per_target: int = 6
    clutter_rate: float = 2.0
    dbscan_eps: float = 0.5
    dbscan_min_samples: int = 5


@dataclass(frozen=True)
class SensorNoiseModel:
    camera: CameraNoise = CameraNoise()
    radar: RadarNoise = RadarNoise()


def rng_stream(seed: int, tick: int, sensor_id: int):
    """Deterministic per-(seed, tick, sensor) random stream, portable across
    platforms and process boundaries."""
    digest = hashlib.sha256(struct.pack("<qqq", seed, tick, sensor_id)).digest()
    import random

    return random.Random(int.from_bytes(digest[:8], "little"))


def _curve_shift(rel_x: float, curvature: float) -> float:
    # Chord deviation of a road-following point seen from the ego tangent
    # frame; positive curvature (left bend) shifts targets left.
    return 0.5 * curvature * rel_x * rel_x


def visible_targets(
    state: WorldState, curvature: float, max_range: float, half_fov: float
) -> list[tuple[VehicleState, float, float]]:
    """NPCs ahead, inside the sensor cone, not occluded by a nearer body.
    Returns (vehicle, rel_x, rel_y) sorted by id, where rel_x is the
    bumper-to-bumper clearance; bearing and occlusion use body centers."""
    ego = state.ego
    ego_lat = lateral_pos(ego, state.lane_width)
    ahead = []
    for npc in state.npcs:
        gap = surface_gap(ego, npc)
        if gap <= 0.0:
            continue
        dx = npc.longitudinal_pos - ego.longitudinal_pos
        if dx > max_range:
            continue
        dy = lateral_pos(npc, state.lane_width) - ego_lat
        bearing = math.atan2(dy + _curve_shift(dx, curvature), dx)
        if abs(bearing) > half_fov:
            continue
        ahead.append((npc, gap, dy, dx, bearing))

    ahead.sort(key=lambda item: item[3])
    kept: list[tuple[VehicleState, float, float, float, float]] = []
    for npc, gap, dy, dx, bearing in ahead:
        occluded = False
        for blocker, _, _, odx, obearing in kept:
            half_angle = math.atan2(0.5 * blocker.width, odx)
            if abs(bearing - obearing) < half_angle:
                occluded = True
                break
        if not occluded:
            kept.append((npc, gap, dy, dx, bearing))
    kept.sort(key=lambda item: item[0].id)
    return [(npc, gap, dy) for npc, gap, dy, _, _ in kept]


def camera_confidence(
    kind: VehicleClass, rel_x: float, rel_y: float, weather, noise: CameraNoise
) -> float:
    """Deterministic part of the camera confidence, before measurement
    noise. Nonincreasing in fog density and lateral offset, nondecreasing in
    sun altitude below the darkness threshold."""
    detect = noise.detectability.get(kind, 1.0)
    fog = 1.0 - noise.fog_penalty * weather.fog_density * (1.0 + 0.5 * weather.fog_falloff)
    if weather.sun_altitude >= noise.darkness_threshold:
        light = 1.0
    else:
        light = 1.0 - noise.darkness_penalty * (noise.darkness_threshold - weather.sun_altitude)
    rain = 1.0 - noise.precipitation_penalty * weather.precipitation
    cloud = 1.0 - noise.cloudiness_penalty * weather.cloudiness
    distance = 1.0 - noise.distance_falloff * rel_x
    lateral = 1.0 - noise.lateral_falloff * max(0.0, abs(rel_y) - noise.lateral_margin)
    conf = 100.0 * detect
    for factor in (fog, light, rain, cloud, distance, lateral):
        conf *= max(0.0, factor)
    return conf


def camera_sense(
    state: WorldState, noise: SensorNoiseModel, rng, curvature: float = 0.0
) -> list[CameraLead]:
    """One camera frame. Five draws are consumed per visible target in a
    fixed order (dropout, confidence, x, y, v) regardless of emission, so the
    stream stays aligned."""
    cam = noise.camera
    weather = state.weather
    dropout_p = min(1.0, cam.dropout + cam.wetness_dropout * weather.wetness)
    leads = []
    for npc, dx, dy in visible_targets(state, curvature, CAMERA_RANGE, CAMERA_HALF_FOV):
        u = rng.random()
        conf_noise = rng.gauss(0.0, cam.confidence_sigma) if cam.confidence_sigma else 0.0
        nx = rng.gauss(0.0, cam.sigma_x) if cam.sigma_x else 0.0
        ny = rng.gauss(0.0, cam.sigma_y) if cam.sigma_y else 0.0
        nv = rng.gauss(0.0, cam.sigma_v) if cam.sigma_v else 0.0
        if u < dropout_p:
            continue
        conf = camera_confidence(npc.kind, dx, dy, weather, cam) + conf_noise
        conf = max(0.0, min(100.0, conf))
        if conf < cam.min_confidence:
            continue
        leads.append(
            CameraLead(
                rel_x=dx + cam.bias_x + nx,
                rel_y=dy + ny,
                rel_v=npc.speed - state.ego.speed + nv,
                confidence=conf,
            )
        )
    leads.sort(key=lambda lead: lead.rel_x)
    return leads


def _poisson(rng, rate: float) -> int:
    if rate <= 0.0:
        return 0
    limit = math.exp(-rate)
    n = 0
    p = rng.random()
    while p > limit:
        n += 1
        p *= rng.random()
    return n


def _in_radar_fov(x: float, y: float, curvature: float) -> bool:
    if x <= 0.0 or x > RADAR_RANGE:
        return False
    return abs(math.atan2(y + _curve_shift(x, curvature), x)) <= RADAR_HALF_FOV


def radar_sense(
    state: WorldState, noise: SensorNoiseModel, rng, curvature: float = 0.0
) -> list[RadarReturn]:
    """Raw radar returns: `returns_per_target` jittered copies of each
    visible target around a per-tick track-level offset, plus Poisson clutter
    that is stationary in the world frame. Anything landing outside the
    range/bearing cone is filtered out."""
    radar = noise.radar
    ego_speed = state.ego.speed
    returns: list[RadarReturn] = []
    for npc, dx, dy in visible_targets(state, curvature, RADAR_RANGE, RADAR_HALF_FOV):
        ox = rng.gauss(0.0, radar.sigma_x) if radar.sigma_x else 0.0
        oy = rng.gauss(0.0, radar.sigma_y) if radar.sigma_y else 0.0
        ov = rng.gauss(0.0, radar.sigma_v) if radar.sigma_v else 0.0
        rel_v = npc.speed - ego_speed + ov
        for _ in range(radar.returns_per_target):
            jx = rng.gauss(0.0, radar.return_jitter) if radar.return_jitter else 0.0
            jy = rng.gauss(0.0, radar.return_jitter) if radar.return_jitter else 0.0
            x = dx + ox + jx
            y = dy + oy + jy
            if _in_radar_fov(x, y, curvature):
                returns.append(RadarReturn(x, y, rel_v))
    for _ in range(_poisson(rng, radar.clutter_rate)):
        r = rng.uniform(1.0, RADAR_RANGE)
        bearing = rng.uniform(-RADAR_HALF_FOV, RADAR_HALF_FOV)
        y_sensor = r * math.tan(bearing)
        y_road = y_sensor - _curve_shift(r, curvature)
        v = -ego_speed + (rng.gauss(0.0, radar.sigma_v) if radar.sigma_v else 0.0)
        if _in_radar_fov(r, y_road, curvature):
            returns.append(RadarReturn(r, y_road, v))
    return returns


def dbscan_cluster(
    returns: list[RadarReturn], eps: float, min_samples: int
) -> list[RadarTrack]:
    """Standard DBSCAN on (rel_x, rel_y); noise points are discarded, each
    cluster becomes a centroid track with the mean speed. At most
    MAX_RADAR_TRACKS tracks are kept, nearest first."""
    if eps <= 0 or min_samples < 1:
        raise ValueError("eps must be positive and min_samples >= 1")
    n = len(returns)
    if n == 0:
        return []
    pts = np.empty((n, 2))
    for i, r in enumerate(returns):
        pts[i, 0] = r.rel_x
        pts[i, 1] = r.rel_y
    dx = pts[:, 0:1] - pts[:, 0:1].T
    dy = pts[:, 1:2] - pts[:, 1:2].T
    mask = dx * dx + dy * dy <= eps * eps
    neighbors: list[list[int]] = [[] for _ in range(n)]
    rows, cols = np.nonzero(mask)
    for i, j in zip(rows.tolist(), cols.tolist()):
        neighbors[i].append(j)

    labels = [-1] * n
    visited = [False] * n
    cluster = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        if len(neighbors[i]) < min_samples:
            continue
        labels[i] = cluster
        queue = list(neighbors[i])
        qi = 0
        while qi < len(queue):
            j = queue[qi]
            qi += 1
            if labels[j] == -1:
                labels[j] = cluster
            if not visited[j]:
                visited[j] = True
                if len(neighbors[j]) >= min_samples:
                    queue.extend(neighbors[j])
        cluster += 1

    sums = [[0.0, 0.0, 0.0, 0] for _ in range(cluster)]
    for i, label in enumerate(labels):
        if label < 0:
            continue
        acc = sums[label]
        r = returns[i]
        acc[0] += r.rel_x
        acc[1] += r.rel_y
        acc[2] += r.rel_v
        acc[3] += 1
    tracks = [
        RadarTrack(sx / count, sy / count, sv / count)
        for sx, sy, sv, count in sums
        if count
    ]
    tracks.sort(key=lambda t: t.rel_x)
    return tracks[:MAX_RADAR_TRACKS]
