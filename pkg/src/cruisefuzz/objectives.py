"""Fault metric and fitness: the thresholded lead distance, the per-tick
fusion-fault predicate, the pre-crash fault fraction, the safety potential,
and the weighted scalar fitness minimized by the fuzzer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

if TYPE_CHECKING:
    from .fusion import FusionInput, Lead
    from .simulate import SimulationTrace, TraceFrame

# Count assigned when exactly one of the two leads is missing: every dimension
# is considered violated, so a dropped lead always out-scores a numeric miss.
MISSING_LEAD_DIST = 3


@dataclass(frozen=True)
class DistThresholds:
    """Per-dimension tolerances for the lead distance count."""

    th_x: float = 4.0
    th_y: float = 1.0
    th_v: float = 2.5

    def validate(self) -> None:
        if min(self.th_x, self.th_y, self.th_v) <= 0:
            raise ValueError("dist thresholds must be positive")


@dataclass(frozen=True)
class FaultConfig:
    """Fault-counting knobs: dimension-count threshold, fault tolerance, and
    the pre-crash window length in seconds."""

    th: int = 0
    th_err: float = 0.0
    pre_crash_m: float = 2.5

    def validate(self) -> None:
        if self.th < 0 or self.th != int(self.th):
            raise ValueError("th must be a nonnegative integer")
        if self.pre_crash_m <= 0:
            raise ValueError("pre_crash_m must be positive")


@dataclass(frozen=True)
class ObjectiveWeights:
    c_failure: float = -1.0
    c_d: float = 1.0
    c_fusion: float = -2.0


@dataclass(frozen=True)
class ObjectiveValues:
    f_failure: float
    f_d: float
    f_fusion: float
    fitness: float


def dist(a: Optional["Lead"], b: Optional["Lead"], th: DistThresholds) -> int:
    """Number of lead dimensions (x, y, v) differing by more than their
    threshold. Missing-vs-missing is 0; missing-vs-present is the maximum 3."""
    if a is None and b is None:
        return 0
    if a is None or b is None:
        return MISSING_LEAD_DIST
    count = 0
    if abs(a.rel_x - b.rel_x) > th.th_x:
        count += 1
    if abs(a.rel_y - b.rel_y) > th.th_y:
        count += 1
    if abs(a.rel_v - b.rel_v) > th.th_v:
        count += 1
    return count


def min_sensor_dist(
    sensor_leads: Sequence["Lead"], gt: Optional["Lead"], th: DistThresholds
) -> int:
    """Best (smallest) distance count any sensor lead achieves against the
    ground truth; the maximum count when no sensor produced a lead."""
    if not sensor_leads:
        return MISSING_LEAD_DIST
    return min(dist(lead, gt, th) for lead in sensor_leads)


def is_fusion_fault(
    finput: "FusionInput",
    fusion_out: Optional["Lead"],
    gt: Optional["Lead"],
    cfg: FaultConfig,
    th: DistThresholds,
) -> bool:
    """True when some sensor lead beats the fusion output against ground
    truth by more than the tolerance."""
    leads = list(finput.camera_leads) + list(finput.radar_tracks)
    return min_sensor_dist(leads, gt, th) + cfg.th_err < dist(fusion_out, gt, th)


def pre_crash_frames(trace: "SimulationTrace", pre_crash_m: float) -> list["TraceFrame"]:
    """Frames in the window of `pre_crash_m` seconds ending at the collision,
    or at the end of the horizon when the run did not collide. Clipped at the
    start of the trace for very early crashes."""
    if not trace.frames:
        raise ValueError("trace has no frames")
    t_end = trace.collision.time if trace.collision else trace.frames[-1].time
    t_start = max(0.0, t_end - pre_crash_m)
    return [f for f in trace.frames if t_start - 1e-9 <= f.time <= t_end + 1e-9]


def f_fusion(trace: "SimulationTrace", cfg: FaultConfig, th: DistThresholds) -> float:
    """Fraction of pre-crash frames where at least one sensor lead is within
    the count threshold of ground truth while the fusion output is not."""
    window = pre_crash_frames(trace, cfg.pre_crash_m)
    hits = 0
    for frame in window:
        gt = frame.ground_truth
        leads = list(frame.camera_leads) + list(frame.radar_leads)
        if not leads:
            continue
        if dist(frame.fusion_out, gt, th) <= cfg.th:
            continue
        if any(dist(lead, gt, th) <= cfg.th for lead in leads):
            hits += 1
    return hits / len(window)


def f_d(trace: "SimulationTrace", brake: float, d_cap: float = 100.0) -> float:
    """Normalized safety potential: worst-case gap to the lead minus the
    ego's minimum stopping distance, clipped to [0, d_cap] and scaled to
    [0, 1]. Frames with no lead contribute the cap."""
    if brake <= 0:
        raise ValueError("brake must be positive")
    worst = d_cap
    for frame in trace.frames:
        gt = frame.ground_truth
        if gt is None:
            continue
        margin = gt.rel_x - frame.ego_speed * frame.ego_speed / (2.0 * brake)
        if margin < worst:
            worst = margin
    return min(max(worst, 0.0), d_cap) / d_cap


def fitness(values: ObjectiveValues, weights: ObjectiveWeights) -> float:
    """Weighted sum of the three objectives; the fuzzer minimizes it."""
    return (
        weights.c_failure * values.f_failure
        + weights.c_d * values.f_d
        + weights.c_fusion * values.f_fusion
    )


def evaluate_trace(
    trace: "SimulationTrace",
    fault_cfg: FaultConfig,
    th: DistThresholds,
    weights: ObjectiveWeights,
    brake: float,
    d_cap: float = 100.0,
) -> ObjectiveValues:
    """Compute all objective values plus the scalar fitness for one trace."""
    failure = 1.0 if trace.collision is not None else 0.0
    fd = f_d(trace, brake, d_cap)
    ff = f_fusion(trace, fault_cfg, th)
    partial = ObjectiveValues(failure, fd, ff, 0.0)
    return ObjectiveValues(failure, fd, ff, fitness(partial, weights))
