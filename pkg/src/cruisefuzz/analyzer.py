"""Post-campaign triage.

Every archived collision is rerun once with best-sensor fusion substituted
during the pre-crash window; collisions that disappear are fusion errors.
Errors are deduplicated by the ego's speed-location coverage plane, groups
of F_fusion samples are compared with the two-sample KS statistic, and a
sanity replayer verifies the determinism contract on archived genomes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DeterminismError
from .fuzzer import EvaluationResult
from .simulate import (
    OverrideWindow,
    SimSetup,
    SimulationTrace,
    frame_line,
    run_simulation,
)

DEFAULT_ROAD_INTERVALS = 30
DEFAULT_SPEED_INTERVALS = 10
DEFAULT_SPEED_MAX = 40.0
TRAJECTORY_SAMPLE_HZ = 2.0

FUSION_ERROR = "fusion_error"
NOT_FUSION_ERROR = "not_fusion_error"


@dataclass(slots=True)
class TrajectoryVector:
    """Binary s x l speed-location coverage plane: one covered speed bin (of
    the average speed) per visited road interval."""

    plane: np.ndarray
    v_max: float

    @property
    def road_intervals(self) -> int:
        return self.plane.shape[0]

    @property
    def speed_intervals(self) -> int:
        return self.plane.shape[1]


def route_length(trace: SimulationTrace) -> float:
    """The ego's nominal route: the distance it covers cruising at the speed
    limit for the whole horizon. The road intervals of the coverage plane
    divide this, not the (longer) physical road."""
    return trace.speed_limit * trace.horizon


def trajectory_coverage(
    trace: SimulationTrace,
    s: int = DEFAULT_ROAD_INTERVALS,
    l: int = DEFAULT_SPEED_INTERVALS,
    v_max: float = DEFAULT_SPEED_MAX,
    sample_hz: float = TRAJECTORY_SAMPLE_HZ,
) -> TrajectoryVector:
    """Sample the ego (position, speed) at `sample_hz`, average speeds per
    road interval, and mark the speed bin of each visited interval."""
    if s < 1 or l < 1 or v_max <= 0:
        raise ValueError("need s, l >= 1 and v_max > 0")
    stride = max(1, round(trace.control_hz / sample_hz))
    road_bin = route_length(trace) / s
    speed_bin = v_max / l
    sums = [0.0] * s
    counts = [0] * s
    for frame in trace.frames[::stride]:
        r = min(int(frame.ego_pos / road_bin), s - 1)
        if r < 0:
            r = 0
        sums[r] += frame.ego_speed
        counts[r] += 1
    plane = np.zeros((s, l), dtype=np.uint8)
    for r in range(s):
        if counts[r]:
            avg = sums[r] / counts[r]
            c = min(int(avg / speed_bin), l - 1)
            plane[r, c] = 1
    return TrajectoryVector(plane, v_max)


def distinct(v1: TrajectoryVector, v2: TrajectoryVector) -> bool:
    """Two runs are distinct when their coverage planes differ anywhere."""
    if v1.plane.shape != v2.plane.shape:
        raise ValueError("coverage planes have different shapes")
    return bool(np.any(v1.plane != v2.plane))


def dedup_distinct(vectors: Sequence[TrajectoryVector]) -> list[bool]:
    """Greedy first-seen canonicalization in evaluation order: an entry is a
    new distinct error iff it differs from every previously kept
    representative. Returns the is-new flag per entry."""
    representatives: list[TrajectoryVector] = []
    flags = []
    for vector in vectors:
        new = all(distinct(vector, rep) for rep in representatives)
        if new:
            representatives.append(vector)
        flags.append(new)
    return flags


@dataclass(frozen=True, slots=True)
class ReplayResult:
    eval_id: str
    original_collided: bool
    counterfactual_collided: bool
    window: tuple[float, float]
    classification: str
    counterfactual_sha256: str

    @property
    def is_fusion_error(self) -> bool:
        return self.classification == FUSION_ERROR


def counterfactual_replay(
    result: EvaluationResult,
    m: float,
    setup: SimSetup,
    fusion_method: str,
    original_trace: Optional[SimulationTrace] = None,
    override_method: str = "best_sensor",
) -> ReplayResult:
    """Rerun one archived collision with the override fusion substituted
    from `m` seconds before the recorded collision to the horizon. The
    counterfactual frames before the window must match the original trace
    bit-exactly; divergence is a determinism fault."""
    if not result.collided or result.collision_time is None:
        raise ValueError("counterfactual replay requires a collided result")
    t_start = max(0.0, result.collision_time - m)
    window = OverrideWindow(t_start, setup.sim.horizon, method=override_method)
    counterfactual = run_simulation(result.genome, fusion_method, setup, override=window)

    original = original_trace if original_trace is not None else result.trace
    if original is not None:
        for orig, new in zip(original.frames, counterfactual.frames):
            if orig.time >= t_start - 1e-9:
                break
            if frame_line(orig) != frame_line(new):
                raise DeterminismError(
                    f"replay of {result.eval_id} diverged at t={orig.time} "
                    "before the override window"
                )
    collided = counterfactual.collision is not None
    classification = FUSION_ERROR if (result.collided and not collided) else NOT_FUSION_ERROR
    return ReplayResult(
        eval_id=result.eval_id,
        original_collided=result.collided,
        counterfactual_collided=collided,
        window=(t_start, setup.sim.horizon),
        classification=classification,
        counterfactual_sha256=counterfactual.sha256(),
    )


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: the supremum over x of the
    absolute difference of the empirical CDFs."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be nonempty")
    xa = np.sort(np.asarray(a, dtype=float))
    xb = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([xa, xb])
    cdf_a = np.searchsorted(xa, grid, side="right") / xa.size
    cdf_b = np.searchsorted(xb, grid, side="right") / xb.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ecdf_points(sample: Sequence[float]) -> list[tuple[float, float]]:
    """(value, cumulative fraction) pairs of the empirical CDF steps."""
    xs = np.sort(np.asarray(sample, dtype=float))
    n = xs.size
    return [(float(x), float(i + 1) / n) for i, x in enumerate(xs)]


@dataclass(slots=True)
class SanityTally:
    attempted: int = 0
    reproduced: int = 0
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.attempted == self.reproduced


def sanity_replay(
    results: Sequence[EvaluationResult],
    n: int,
    setup: SimSetup,
    fusion_method: str,
    rng: Optional[np.random.Generator] = None,
) -> SanityTally:
    """Rerun n archived collision and n non-collision genomes and check that
    the collided flag and the full trace reproduce bit-exactly (by trace
    hash). Any miss is a determinism fault in the stack."""
    rng = rng or np.random.default_rng(0)
    collided = [r for r in results if r.collided]
    clean = [r for r in results if not r.collided]
    if len(collided) < n or len(clean) < n:
        raise ValueError(
            f"need at least {n} collision and {n} non-collision results "
            f"(have {len(collided)}/{len(clean)})"
        )
    picks: list[EvaluationResult] = []
    for pool in (collided, clean):
        idx = rng.permutation(len(pool))[:n]
        picks.extend(pool[int(i)] for i in idx)

    tally = SanityTally()
    for result in picks:
        tally.attempted += 1
        trace = run_simulation(result.genome, fusion_method, setup)
        same_flag = (trace.collision is not None) == result.collided
        same_trace = trace.sha256() == result.trace_sha256
        if same_flag and same_trace:
            tally.reproduced += 1
        else:
            tally.mismatches.append(result.eval_id)
    return tally


# ---------------------------------------------------------------------------
# Report assembly

GROUPS = ("no_collision", "non_fusion_error", "fusion_error")


@dataclass
class CampaignReport:
    total_evaluations: int
    collisions: int
    fusion_errors: int
    distinct_fusion_errors: int
    per_generation: list[dict]
    f_fusion_samples: dict[str, list[float]]
    ks_statistics: dict[str, float]
    replays: list[ReplayResult]
    sanity: Optional[SanityTally] = None


def build_report(
    results: Sequence[EvaluationResult],
    replays: dict[str, ReplayResult],
    vectors: dict[str, TrajectoryVector],
    sanity: Optional[SanityTally] = None,
) -> CampaignReport:
    """Assemble per-generation cumulative counts, F_fusion sample groups and
    their KS statistics from evaluated results plus their replays.
    `vectors` holds the coverage plane of each collided evaluation."""
    samples: dict[str, list[float]] = {g: [] for g in GROUPS}
    error_vectors: list[TrajectoryVector] = []
    error_ids: list[str] = []
    for result in results:
        if not result.collided:
            samples["no_collision"].append(result.objectives.f_fusion)
            continue
        replay = replays.get(result.eval_id)
        if replay is not None and replay.is_fusion_error:
            samples["fusion_error"].append(result.objectives.f_fusion)
            error_vectors.append(vectors[result.eval_id])
            error_ids.append(result.eval_id)
        else:
            samples["non_fusion_error"].append(result.objectives.f_fusion)
    new_flags = dict(zip(error_ids, dedup_distinct(error_vectors)))

    per_generation = []
    collisions = errors = distinct_errors = 0
    generations = sorted({r.generation for r in results})
    for gen in generations:
        for result in results:
            if result.generation != gen:
                continue
            if result.collided:
                collisions += 1
                replay = replays.get(result.eval_id)
                if replay is not None and replay.is_fusion_error:
                    errors += 1
                    if new_flags[result.eval_id]:
                        distinct_errors += 1
        per_generation.append(
            {
                "generation": gen,
                "cumulative_collisions": collisions,
                "cumulative_fusion_errors": errors,
                "cumulative_distinct_fusion_errors": distinct_errors,
            }
        )

    ks: dict[str, float] = {}
    pairs = (
        ("fusion_error", "non_fusion_error"),
        ("fusion_error", "no_collision"),
        ("non_fusion_error", "no_collision"),
    )
    for ga, gb in pairs:
        if samples[ga] and samples[gb]:
            ks[f"{ga}_vs_{gb}"] = ks_two_sample(samples[ga], samples[gb])

    return CampaignReport(
        total_evaluations=len(results),
        collisions=collisions,
        fusion_errors=errors,
        distinct_fusion_errors=distinct_errors,
        per_generation=per_generation,
        f_fusion_samples=samples,
        ks_statistics=ks,
        replays=[replays[eid] for eid in sorted(replays)],
        sanity=sanity,
    )
