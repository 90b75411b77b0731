"""The four lead-fusion methods behind one interface.

`default` is the rule-based gate flow (low-speed radar shortcut, 50%%
camera-confidence gate, camera/radar matching). `mathworks` is a linear
Kalman tracker with clutter filtering and in-lane ranking. `mathworks_plus`
additionally admits laterally approaching tracks. `best_sensor` is the
replay oracle that returns the sensor lead closest to ground truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import objectives
from .objectives import DistThresholds

FUSION_METHODS = ("default", "mathworks", "mathworks_plus", "best_sensor")


@dataclass(frozen=True, slots=True)
class Lead:
    """A sensed or fused leading-vehicle estimate in ego-relative road
    coordinates. `confidence` is present only for camera-sourced leads."""

    rel_x: float
    rel_y: float
    rel_v: float
    confidence: Optional[float] = None


@dataclass(slots=True)
class FusionInput:
    """One control tick's worth of sensor output."""

    camera_leads: list[Lead]
    radar_tracks: list[Lead]
    ego_speed: float
    lane_half_width: float
    tick: int


@dataclass(slots=True)
class FusionOutput:
    primary: Optional[Lead]
    method: str
    gate: Optional[str] = None
    secondary: Optional[Lead] = None


@dataclass(frozen=True)
class FusionTuning:
    """Constants of the fusion logics. The gate thresholds of `default` and
    the tracker constants of `mathworks` are deliberate parameters, not
    magic numbers, so experiments can vary them."""

    low_speed: float = 4.0            # m/s; below this the radar shortcut applies
    low_speed_close: float = 25.0     # m; "close" radar track for the shortcut
    confidence_gate: float = 50.0     # percent; camera leads at or below are ignored
    match_dx_base: float = 2.5        # m; camera/radar match gate offset
    match_dx_slope: float = 0.05      # per meter of range
    match_dv: float = 3.0             # m/s; camera/radar speed match gate
    stationary_speed: float = 0.5     # m/s absolute speed; clutter threshold
    association_gate: float = 3.0     # m euclidean; detection-to-track gate
    max_missed: int = 5               # ticks without an update before track death
    min_track_confidence: float = 5.0  # camera leads below this never enter the tracker
    process_noise: tuple[float, float, float] = (0.05, 0.05, 0.2)  # per second


# ---------------------------------------------------------------------------
# Rule-based fusion


def default_fusion(finput: FusionInput, tuning: FusionTuning = FusionTuning()) -> FusionOutput:
    """Gate flow of the rule-based method. Exactly one gate fires per tick:

    1. low ego speed with a close radar track -> nearest radar track
    2. no camera lead above the confidence gate -> no lead
    3. a radar track matches the best camera lead -> that radar track
    4. otherwise -> the best camera lead
    """
    radar = finput.radar_tracks
    if finput.ego_speed < tuning.low_speed:
        close = [r for r in radar if r.rel_x < tuning.low_speed_close]
        if close:
            primary = min(close, key=lambda r: r.rel_x)
            return FusionOutput(primary, "default", gate="low_speed_radar")

    confident = [
        lead for lead in finput.camera_leads if lead.confidence > tuning.confidence_gate
    ]
    if not confident:
        return FusionOutput(None, "default", gate="no_confident_camera")
    best_cam = min(confident, key=lambda lead: lead.rel_x)

    gate_dx = tuning.match_dx_base + tuning.match_dx_slope * best_cam.rel_x
    matches = [
        r
        for r in radar
        if abs(r.rel_x - best_cam.rel_x) < gate_dx
        and abs(r.rel_v - best_cam.rel_v) < tuning.match_dv
    ]
    if matches:
        primary = min(matches, key=lambda r: abs(r.rel_x - best_cam.rel_x))
        return FusionOutput(primary, "default", gate="radar_match")
    return FusionOutput(best_cam, "default", gate="camera")


# ---------------------------------------------------------------------------
# Linear Kalman tracker

_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
_I4 = np.eye(4)
# Initial position/speed uncertainty for a freshly spawned track. The lateral
# velocity slot is pinned near zero: it is held constant, never measured.
_P0 = np.diag([4.0, 4.0, 4.0, 1e-9])


@dataclass(slots=True)
class KalmanTrack:
    """Constant-velocity track over (x, y, vx); the lateral velocity state is
    carried but held constant because the control interface does not use it.
    `prev_abs_y` remembers the last tick's lateral magnitude for the
    cut-in-aware ranking rule."""

    state: np.ndarray          # (x, y, vx, vy) with vy frozen
    covariance: np.ndarray     # 4x4 symmetric PSD
    age: int = 0
    missed: int = 0
    id: int = 0
    prev_abs_y: Optional[float] = None

    def as_lead(self) -> Lead:
        return Lead(float(self.state[0]), float(self.state[1]), float(self.state[2]))


def transition_matrix(dt: float) -> np.ndarray:
    """Advance x by vx*dt; y and the frozen lateral velocity are untouched."""
    f = np.eye(4)
    f[0, 2] = dt
    return f


def kf_predict(
    track: KalmanTrack, dt: float, q: Optional[np.ndarray] = None
) -> KalmanTrack:
    """Time update. `q` is the process noise for `dt`; zero when omitted."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = transition_matrix(dt)
    state = f @ track.state
    cov = f @ track.covariance @ f.T
    if q is not None:
        cov = cov + q
    cov = 0.5 * (cov + cov.T)
    return KalmanTrack(state, cov, track.age, track.missed, track.id, track.prev_abs_y)


def kf_update(track: KalmanTrack, meas: Lead, r: np.ndarray) -> KalmanTrack:
    """Measurement update on (x, y, vx) in Joseph form, which keeps the
    posterior covariance symmetric PSD."""
    z = np.array([meas.rel_x, meas.rel_y, meas.rel_v])
    innovation = z - _H @ track.state
    s = _H @ track.covariance @ _H.T + r
    try:
        gain = np.linalg.solve(s, (track.covariance @ _H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular innovation covariance") from exc
    state = track.state + gain @ innovation
    ikh = _I4 - gain @ _H
    cov = ikh @ track.covariance @ ikh.T + gain @ r @ gain.T
    cov = 0.5 * (cov + cov.T)
    return KalmanTrack(state, cov, track.age, track.missed, track.id, track.prev_abs_y)


def process_noise_matrix(tuning: FusionTuning, dt: float) -> np.ndarray:
    qx, qy, qv = tuning.process_noise
    return np.diag([qx * dt, qy * dt, qv * dt, 0.0])


def measurement_covariance(sigma_x: float, sigma_y: float, sigma_v: float) -> np.ndarray:
    """Diagonal R with a small floor so noiseless configurations stay
    invertible."""
    floor = 1e-6
    return np.diag(
        [
            max(sigma_x * sigma_x, floor),
            max(sigma_y * sigma_y, floor),
            max(sigma_v * sigma_v, floor),
        ]
    )


class MathworksFusion:
    """Kalman-filter fusion: clutter filtering, nearest-neighbor association,
    per-track predict/update, and in-lane ranking of tracks by range.

    With `cut_in_aware` the candidate pool additionally admits tracks whose
    lateral magnitude shrank since the previous tick, so vehicles merging
    into the lane are considered before they are fully inside it.
    """

    def __init__(
        self,
        dt: float,
        r_camera: np.ndarray,
        r_radar: np.ndarray,
        tuning: FusionTuning = FusionTuning(),
        cut_in_aware: bool = False,
    ):
        self.dt = dt
        self.r_camera = r_camera
        self.r_radar = r_radar
        self.tuning = tuning
        self.cut_in_aware = cut_in_aware
        self.q = process_noise_matrix(tuning, dt)
        self.tracks: list[KalmanTrack] = []
        self._next_id = 0
        self.method = "mathworks_plus" if cut_in_aware else "mathworks"

    def _spawn(self, meas: Lead) -> KalmanTrack:
        state = np.array([meas.rel_x, meas.rel_y, meas.rel_v, 0.0])
        track = KalmanTrack(state, _P0.copy(), id=self._next_id)
        self._next_id += 1
        return track

    def candidates(self, lane_half_width: float) -> list[KalmanTrack]:
        """Tracks eligible to be the primary lead under the ranking rule."""
        out = []
        for track in self.tracks:
            x, y = float(track.state[0]), float(track.state[1])
            if x <= 0.0:
                continue
            in_lane = abs(y) <= lane_half_width
            approaching = (
                self.cut_in_aware
                and track.prev_abs_y is not None
                and abs(y) < track.prev_abs_y - 1e-9
            )
            if in_lane or approaching:
                out.append(track)
        return out

    def step(self, finput: FusionInput, gt: Optional[Lead] = None) -> FusionOutput:
        tuning = self.tuning
        # 1. Drop cluttered radar tracks: stationary in the world frame and
        #    outside the ego lane.
        radar = [
            r
            for r in finput.radar_tracks
            if not (
                abs(r.rel_v + finput.ego_speed) < tuning.stationary_speed
                and abs(r.rel_y) > finput.lane_half_width
            )
        ]
        camera = [
            c
            for c in finput.camera_leads
            if c.confidence is None or c.confidence >= tuning.min_track_confidence
        ]

        # 2. Predict, associate, update. Detections are consumed in a fixed
        #    order (camera then radar, each nearest-first) for determinism.
        self.tracks = [kf_predict(t, self.dt, self.q) for t in self.tracks]
        updated: set[int] = set()
        detections = [(lead, self.r_camera) for lead in sorted(camera, key=lambda l: l.rel_x)]
        detections += [(lead, self.r_radar) for lead in sorted(radar, key=lambda l: l.rel_x)]
        for lead, r in detections:
            best_i = -1
            best_d = tuning.association_gate
            for i, track in enumerate(self.tracks):
                d = math.hypot(lead.rel_x - track.state[0], lead.rel_y - track.state[1])
                if d < best_d:
                    best_d = d
                    best_i = i
            if best_i >= 0:
                self.tracks[best_i] = kf_update(self.tracks[best_i], lead, r)
                updated.add(self.tracks[best_i].id)
            else:
                track = self._spawn(lead)
                self.tracks.append(kf_update(track, lead, r))
                updated.add(track.id)

        survivors = []
        for track in self.tracks:
            track.age += 1
            track.missed = 0 if track.id in updated else track.missed + 1
            if track.missed <= tuning.max_missed:
                survivors.append(track)
        self.tracks = survivors

        # 3. Rank candidates by range and emit the nearest as primary.
        ranked = sorted(self.candidates(finput.lane_half_width), key=lambda t: t.state[0])
        for track in self.tracks:
            track.prev_abs_y = abs(float(track.state[1]))
        primary = ranked[0].as_lead() if ranked else None
        secondary = ranked[1].as_lead() if len(ranked) > 1 else None
        gate = f"tracks={len(self.tracks)},candidates={len(ranked)}"
        return FusionOutput(primary, self.method, gate=gate, secondary=secondary)


# ---------------------------------------------------------------------------
# Ground-truth oracle fusion


def best_sensor_fusion(
    finput: FusionInput,
    gt: Optional[Lead],
    thresholds: DistThresholds = DistThresholds(),
) -> FusionOutput:
    """Return the sensor lead closest to ground truth under the dimension
    count, breaking ties by l1 residual, then camera before radar. Used only
    by the replay machinery: it consumes ground truth."""
    leads: list[tuple[Lead, int]] = [(l, 0) for l in finput.camera_leads]
    leads += [(l, 1) for l in finput.radar_tracks]
    if gt is None or not leads:
        return FusionOutput(None, "best_sensor", gate="no_leads" if not leads else "no_gt")

    def key(item: tuple[int, tuple[Lead, int]]):
        idx, (lead, source) = item
        count = objectives.dist(lead, gt, thresholds)
        l1 = abs(lead.rel_x - gt.rel_x) + abs(lead.rel_y - gt.rel_y) + abs(lead.rel_v - gt.rel_v)
        return (count, l1, source, idx)

    _, (best, _) = min(enumerate(leads), key=key)
    return FusionOutput(
        Lead(best.rel_x, best.rel_y, best.rel_v, best.confidence),
        "best_sensor",
        gate="oracle",
    )


# ---------------------------------------------------------------------------
# Uniform step interface used by the simulation loop


class _Stateless:
    def __init__(self, fn, method: str):
        self._fn = fn
        self.method = method

    def step(self, finput: FusionInput, gt: Optional[Lead] = None) -> FusionOutput:
        return self._fn(finput, gt)


def make_fusion(
    method: str,
    dt: float,
    r_camera: np.ndarray,
    r_radar: np.ndarray,
    tuning: FusionTuning = FusionTuning(),
    thresholds: DistThresholds = DistThresholds(),
):
    """Instantiate a fusion method by identifier. Stateful methods get a
    fresh tracker; one instance must serve exactly one simulation."""
    if method == "default":
        return _Stateless(lambda fi, gt: default_fusion(fi, tuning), "default")
    if method == "best_sensor":
        return _Stateless(lambda fi, gt: best_sensor_fusion(fi, gt, thresholds), "best_sensor")
    if method == "mathworks":
        return MathworksFusion(dt, r_camera, r_radar, tuning, cut_in_aware=False)
    if method == "mathworks_plus":
        return MathworksFusion(dt, r_camera, r_radar, tuning, cut_in_aware=True)
    raise ValueError(f"unknown fusion method {method!r}")
