"""Packaged hand-authored scenarios.

Each fixture reproduces one of the showcased fusion failures end to end:
a cut-in the camera scores below the confidence gate, a camera/radar
mismatch that locks onto the wrong vehicle, the in-lane ranking rule
discarding an accurate cut-in track, and the cut-in-aware repair avoiding
a collision the stock tracker causes. The suite makes the failure stories
executable instead of narrative.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .analyzer import FUSION_ERROR, NOT_FUSION_ERROR, ReplayResult
from .errors import ConfigError
from .fuzzer import EvaluationResult
from .scenario import (
    S1,
    Environment,
    GenomeSpace,
    apply_environment_overrides,
    genome_from_fields,
)
from .sensors import CameraNoise, SensorNoiseModel
from .simulate import OverrideWindow, SimSetup, SimulationTrace, genome_sha256, run_simulation, setup_for
from .world import VehicleClass

# Names exposed on the CLI and the API.
FIXTURE_NAMES = (
    "camera_blind_cutin",
    "mismatch_cybertruck",
    "lane_gate_police",
    "cutin_truck_repair",
)
# The blind variant backs the not-a-fusion-error classification check; it is
# importable but not a CLI surface.
ALL_FIXTURES = FIXTURE_NAMES + ("all_sensors_blind",)

_BENIGN = {"model_type": 0, "waypoints": [(0.0, 0)] * 5}

# S1 model-type indices resolving to each class (see scenario.S1).
_CAR, _TRUCK, _BICYCLE = 0, 14, 24


@dataclass(frozen=True)
class Fixture:
    name: str
    description: str
    fusion: str
    expected_classification: str
    setup: SimSetup
    genome: np.ndarray
    # For the repair fixture: the method expected to avoid the collision.
    repair_method: Optional[str] = None


def _spawns(**at) -> list[tuple[int, float, float]]:
    """The fixtures' frozen spawn layout (independent of the library's
    default environments), with per-NPC overrides like npc1=(0, 10.0, 0.7)."""
    base = [(1, 34.0, 1.0), (0, 20.0, 0.7), (2, 18.0, 0.8), (0, 42.0, 0.9), (2, 50.0, 0.9), (1, 75.0, 1.0)]
    for idx, spawn in at.items():
        base[int(idx[3:])] = spawn
    return base


def _camera_blind_cutin() -> Fixture:
    # A bicycle cuts in from the right under fog and darkness; every camera
    # confidence sits below the 50% gate, so the rule-based fusion reports no
    # lead while the radar ranges the bicycle accurately.
    env = apply_environment_overrides(S1, {"spawns": _spawns()})
    space = GenomeSpace(env)
    genome = genome_from_fields(
        space,
        [
            _BENIGN,
            {"model_type": _BICYCLE, "waypoints": [(-60.0, 1)] + [(-60.0, 0)] * 4},
            {"model_type": _CAR, "waypoints": [(20.0, 0)] * 5},
            _BENIGN,
            _BENIGN,
            _BENIGN,
        ],
        sun_altitude=-60.0,
        weather={"fog_density": 15.0},
    )
    noise = SensorNoiseModel(camera=CameraNoise(confidence_sigma=1.0))
    return Fixture(
        name="camera_blind_cutin",
        description="bicycle cut-in suppressed by the camera confidence gate",
        fusion="default",
        expected_classification=FUSION_ERROR,
        setup=setup_for(env, noise=noise),
        genome=genome,
    )


def _all_sensors_blind() -> Fixture:
    # Variant where the radar bearing stays outside the cone until contact
    # and the camera never emits the bicycle: no sensor has the answer, so
    # best-sensor replay cannot avoid the crash.
    env = apply_environment_overrides(S1, {"spawns": _spawns(npc1=(0, 10.0, 0.7))})
    space = GenomeSpace(env)
    genome = genome_from_fields(
        space,
        [
            _BENIGN,
            {"model_type": _BICYCLE, "waypoints": [(-30.0, 1)] + [(-30.0, 0)] * 4},
            {"model_type": _CAR, "waypoints": [(20.0, 0)] * 5},
            _BENIGN,
            _BENIGN,
            _BENIGN,
        ],
    )
    detect = {
        VehicleClass.CAR: 1.0,
        VehicleClass.TRUCK: 1.0,
        VehicleClass.MOTORCYCLE: 0.55,
        VehicleClass.BICYCLE: 0.0,
    }
    noise = SensorNoiseModel(camera=CameraNoise(confidence_sigma=0.0, detectability=detect))
    return Fixture(
        name="all_sensors_blind",
        description="cut-in invisible to both sensors; collision is not fusion-induced",
        fusion="default",
        expected_classification=NOT_FUSION_ERROR,
        setup=setup_for(env, noise=noise),
        genome=genome,
    )


def _mismatch_cybertruck() -> Fixture:
    # The camera overestimates the range of the slowing lead; the radar
    # return of a truck one lane over happens to match that estimate, so the
    # matching gate locks onto the wrong vehicle and the ego under-brakes.
    bias, slow = 18.0, -55.0
    env = apply_environment_overrides(S1, {"spawns": _spawns(npc2=(2, 34.0 + bias, 1.0))})
    space = GenomeSpace(env)
    genome = genome_from_fields(
        space,
        [
            {"model_type": _CAR, "waypoints": [(slow, 0)] * 5},
            _BENIGN,
            {"model_type": _TRUCK, "waypoints": [(slow, 0)] * 5},
            _BENIGN,
            _BENIGN,
            _BENIGN,
        ],
    )
    noise = SensorNoiseModel(camera=CameraNoise(confidence_sigma=1.0, bias_x=bias))
    return Fixture(
        name="mismatch_cybertruck",
        description="camera range bias matched to an adjacent-lane truck's radar",
        fusion="default",
        expected_classification=FUSION_ERROR,
        setup=setup_for(env, noise=noise),
        genome=genome,
    )


def _lane_gate_police() -> Fixture:
    # A police car brakes to a stop while merging from the right. The
    # tracker ranks only in-lane tracks, so the accurate track is discarded
    # until the car's center crosses the lane boundary; too late to brake.
    env = apply_environment_overrides(S1, {"spawns": _spawns()})
    space = GenomeSpace(env)
    genome = genome_from_fields(
        space,
        [
            _BENIGN,
            {"model_type": _CAR, "waypoints": [(-100.0, 1)] + [(-100.0, 0)] * 4},
            {"model_type": _CAR, "waypoints": [(20.0, 0)] * 5},
            _BENIGN,
            _BENIGN,
            _BENIGN,
        ],
    )
    noise = SensorNoiseModel(camera=CameraNoise(confidence_sigma=1.0))
    return Fixture(
        name="lane_gate_police",
        description="stopping cut-in discarded by the in-lane ranking rule",
        fusion="mathworks",
        expected_classification=FUSION_ERROR,
        setup=setup_for(env, noise=noise),
        genome=genome,
    )


def _cutin_truck_repair(gap: float = 18.0, slow: float = -100.0, frac: float = 0.8) -> Fixture:
    # A truck merges from the left while braking hard. The stock tracker
    # admits it only once fully in lane and collides; the cut-in-aware
    # variant admits the laterally approaching track early enough to stop.
    env = apply_environment_overrides(S1, {"spawns": _spawns(npc2=(2, gap, frac))})
    space = GenomeSpace(env)
    genome = genome_from_fields(
        space,
        [
            _BENIGN,
            _BENIGN,
            {"model_type": _TRUCK, "waypoints": [(slow, 2)] + [(slow, 0)] * 4},
            _BENIGN,
            _BENIGN,
            _BENIGN,
        ],
    )
    noise = SensorNoiseModel(camera=CameraNoise(confidence_sigma=1.0))
    return Fixture(
        name="cutin_truck_repair",
        description="left-lane truck cut-in avoided by the cut-in-aware tracker",
        fusion="mathworks",
        expected_classification=FUSION_ERROR,
        setup=setup_for(env, noise=noise),
        genome=genome,
        repair_method="mathworks_plus",
    )


_BUILDERS = {
    "camera_blind_cutin": _camera_blind_cutin,
    "mismatch_cybertruck": _mismatch_cybertruck,
    "lane_gate_police": _lane_gate_police,
    "cutin_truck_repair": _cutin_truck_repair,
    "all_sensors_blind": _all_sensors_blind,
}


def build_fixture(name: str) -> Fixture:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ConfigError(f"unknown fixture {name!r}", field="fixture") from None
    return builder()


def cutin_suite(count: int = 12) -> list[Fixture]:
    """Parametric variants of the truck cut-in for the repair experiments:
    a grid over initial gap, deceleration target, and spawn speed."""
    gaps = (15.0, 16.0, 17.0, 18.0, 19.0)
    slows = (-100.0, -90.0)
    fracs = (0.8, 0.85)
    variants = []
    for gap in gaps:
        for slow in slows:
            for frac in fracs:
                variants.append((gap, slow, frac))
    out = []
    for i, (gap, slow, frac) in enumerate(variants[:count]):
        fixture = _cutin_truck_repair(gap=gap, slow=slow, frac=frac)
        out.append(replace(fixture, name=f"cutin_truck_{i:02d}"))
    return out


@dataclass
class FixtureReport:
    """Outcome of running one fixture end to end."""

    name: str
    fusion: str
    collided: bool
    collision_time: Optional[float]
    classification: Optional[str]
    expected_classification: str
    matches_expectation: bool
    gate_log: list[str]
    trace: SimulationTrace
    repair_collided: Optional[bool] = None


def run_fixture(fixture: Fixture, pre_crash_m: float = 2.5) -> FixtureReport:
    """Run the fixture under its designated fusion method, replay it with
    best-sensor fusion in the pre-crash window for classification, and (for
    the repair fixture) rerun fully under the repair method."""
    trace = run_simulation(fixture.genome, fixture.fusion, fixture.setup)
    collided = trace.collision is not None
    gate_log = [
        f"t={frame.time:.2f} gate={frame.gate} "
        f"fusion={'none' if frame.fusion_out is None else f'{frame.fusion_out.rel_x:.1f}m'} "
        f"gt={'none' if frame.ground_truth is None else f'{frame.ground_truth.rel_x:.1f}m'}"
        for frame in trace.frames
    ]
    classification = None
    if collided:
        window = OverrideWindow(
            max(0.0, trace.collision.time - pre_crash_m), fixture.setup.sim.horizon
        )
        counterfactual = run_simulation(
            fixture.genome, fixture.fusion, fixture.setup, override=window
        )
        classification = (
            FUSION_ERROR if counterfactual.collision is None else NOT_FUSION_ERROR
        )
    repair_collided = None
    if fixture.repair_method is not None:
        repaired = run_simulation(fixture.genome, fixture.repair_method, fixture.setup)
        repair_collided = repaired.collision is not None

    expected = fixture.expected_classification
    matches = collided and classification == expected
    if fixture.repair_method is not None:
        matches = matches and repair_collided is False
    return FixtureReport(
        name=fixture.name,
        fusion=fixture.fusion,
        collided=collided,
        collision_time=trace.collision.time if collided else None,
        classification=classification,
        expected_classification=expected,
        matches_expectation=matches,
        gate_log=gate_log,
        trace=trace,
        repair_collided=repair_collided,
    )


def fixture_result(fixture: Fixture, trace: SimulationTrace) -> EvaluationResult:
    """Wrap a fixture run as an evaluation result so it can flow through the
    replay and dedup machinery."""
    from . import objectives, world

    values = objectives.evaluate_trace(
        trace,
        objectives.FaultConfig(),
        fixture.setup.thresholds,
        objectives.ObjectiveWeights(),
        brake=world.A_MAX_BRAKE,
    )
    return EvaluationResult(
        eval_id=f"fixture_{fixture.name}",
        generation=0,
        index=0,
        genome=fixture.genome,
        objectives=values,
        collided=trace.collision is not None,
        collision_time=trace.collision.time if trace.collision else None,
        trace_sha256=trace.sha256(),
        genome_sha256=genome_sha256(fixture.genome),
        trace=trace,
    )
