"""Evolutionary scenario search and the baselines.

`ga_fusion` minimizes the full three-term fitness; `ga` drops the fusion
term; `random` draws fresh uniform genomes every generation. Selection is
binary tournament over duplicated candidates, variation is simulated binary
crossover plus polynomial mutation, and discrete coordinates are swapped on
crossover and uniformly resampled on mutation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import objectives, world
from .errors import ConfigError, SimulationError
from .objectives import DistThresholds, FaultConfig, ObjectiveValues, ObjectiveWeights
from .scenario import GENOME_LENGTH, GenomeSpace
from .simulate import OverrideWindow, SimSetup, SimulationTrace, genome_sha256, run_simulation

ALGORITHMS = ("ga_fusion", "ga", "random")


@dataclass(frozen=True)
class GAConfig:
    population: int = 50
    generations: int = 10
    crossover_eta: float = 5.0
    crossover_prob: float = 0.8
    mutation_eta: float = 5.0
    mutation_rate: Optional[float] = None  # None -> 5/k
    rng_seed: int = 0
    algorithm: str = "ga_fusion"

    def validate(self) -> None:
        if self.population < 2 or self.population % 2:
            raise ConfigError("population must be even and >= 2", field="ga.population")
        if self.generations < 1:
            raise ConfigError("generations must be >= 1", field="ga.generations")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ConfigError("crossover_prob must be in [0, 1]", field="ga.crossover_prob")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ConfigError("mutation_rate must be in [0, 1]", field="ga.mutation_rate")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}", field="ga.algorithm")

    @property
    def effective_mutation_rate(self) -> float:
        return self.mutation_rate if self.mutation_rate is not None else 5.0 / GENOME_LENGTH


@dataclass(slots=True)
class EvaluationResult:
    eval_id: str
    generation: int
    index: int
    genome: np.ndarray
    objectives: ObjectiveValues
    collided: bool
    collision_time: Optional[float]
    trace_sha256: str
    genome_sha256: str
    trace: Optional[SimulationTrace] = None  # kept for collisions only


@dataclass(slots=True)
class GenerationStats:
    generation: int
    evaluations: int
    collisions: int
    cumulative_collisions: int
    best_fitness: float
    mean_fitness: float


@dataclass
class CampaignState:
    results: list[EvaluationResult] = field(default_factory=list)
    archive: list[EvaluationResult] = field(default_factory=list)
    generations: list[GenerationStats] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Operators


def sample_random(space: GenomeSpace, rng: np.random.Generator) -> np.ndarray:
    """Uniform per-coordinate sample; discrete coordinates uniform over
    their integer sets."""
    genome = rng.uniform(space.low, space.high)
    disc = space.discrete
    u = rng.random(int(disc.sum()))
    counts = space.high[disc] - space.low[disc] + 1.0
    genome[disc] = space.low[disc] + np.floor(u * counts).clip(max=counts - 1)
    return genome


def tournament_select(
    population: list[np.ndarray], fitnesses: list[float], rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Binary tournament with duplication: every candidate enters twice, the
    duplicates are shuffled into pairs, each pair's lower-fitness member
    (ties to the lower index) wins, and winners are shuffled into parent
    pairs."""
    n = len(population)
    if n % 2:
        raise ConfigError("population must be even", field="ga.population")
    entrants = rng.permutation(np.repeat(np.arange(n), 2))
    winners = []
    for k in range(n):
        a, b = int(entrants[2 * k]), int(entrants[2 * k + 1])
        winners.append(a if (fitnesses[a], a) <= (fitnesses[b], b) else b)
    order = rng.permutation(n)
    return [(winners[int(order[2 * k])], winners[int(order[2 * k + 1])]) for k in range(n // 2)]


def sbx_pair_values(y1: float, y2: float, u: float, eta: float) -> tuple[float, float]:
    """Closed-form SBX for one coordinate: children symmetric about the
    parents' mean with spread factor beta(u); u = 0.5 gives beta = 1 and the
    children equal the parents."""
    if u <= 0.5:
        beta = (2.0 * u) ** (1.0 / (eta + 1.0))
    else:
        beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
    c1 = 0.5 * ((1.0 + beta) * y1 + (1.0 - beta) * y2)
    c2 = 0.5 * ((1.0 - beta) * y1 + (1.0 + beta) * y2)
    return c1, c2


def pm_delta(u: float, eta: float) -> float:
    """Closed-form polynomial-mutation delta in [-1, 1]; u = 0.5 gives 0."""
    if u < 0.5:
        return (2.0 * u) ** (1.0 / (eta + 1.0)) - 1.0
    return 1.0 - (2.0 * (1.0 - u)) ** (1.0 / (eta + 1.0))


def sbx_crossover(
    p1: np.ndarray,
    p2: np.ndarray,
    space: GenomeSpace,
    cfg: GAConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-wise SBX. Each coordinate is crossed with probability
    crossover_prob; continuous coordinates use the spread-factor recombination
    clipped to bounds, discrete coordinates are swapped half the time."""
    if p1.shape != p2.shape:
        raise ConfigError("parents must have the same length", field="genome")
    select = rng.random(GENOME_LENGTH) < cfg.crossover_prob
    u = rng.random(GENOME_LENGTH)
    c1 = p1.copy()
    c2 = p2.copy()
    for i in np.flatnonzero(select):
        if space.discrete[i]:
            if u[i] < 0.5:
                c1[i], c2[i] = p2[i], p1[i]
        else:
            a, b = sbx_pair_values(p1[i], p2[i], u[i], cfg.crossover_eta)
            c1[i] = min(max(a, space.low[i]), space.high[i])
            c2[i] = min(max(b, space.low[i]), space.high[i])
    return c1, c2


def polynomial_mutation(
    genome: np.ndarray, space: GenomeSpace, cfg: GAConfig, rng: np.random.Generator
) -> np.ndarray:
    """Coordinate-wise polynomial mutation at the configured rate; discrete
    coordinates are uniformly resampled instead."""
    rate = cfg.effective_mutation_rate
    select = rng.random(GENOME_LENGTH) < rate
    u = rng.random(GENOME_LENGTH)
    out = genome.copy()
    for i in np.flatnonzero(select):
        lo, hi = space.low[i], space.high[i]
        if space.discrete[i]:
            count = hi - lo + 1.0
            out[i] = lo + min(math.floor(u[i] * count), count - 1)
        else:
            delta = pm_delta(u[i], cfg.mutation_eta)
            out[i] = min(max(genome[i] + delta * (hi - lo), lo), hi)
    return out


# ---------------------------------------------------------------------------
# Campaign loop


def campaign_weights(weights: ObjectiveWeights, algorithm: str) -> ObjectiveWeights:
    """The `ga` baseline is the genetic algorithm with the fusion term
    zeroed out of the fitness."""
    if algorithm == "ga":
        return replace(weights, c_fusion=0.0)
    return weights


def evaluate_genome(
    genome: np.ndarray,
    generation: int,
    index: int,
    fusion_method: str,
    setup: SimSetup,
    fault_cfg: FaultConfig,
    thresholds: DistThresholds,
    weights: ObjectiveWeights,
    d_cap: float,
) -> EvaluationResult:
    trace = run_simulation(genome, fusion_method, setup)
    values = objectives.evaluate_trace(
        trace, fault_cfg, thresholds, weights, brake=world.A_MAX_BRAKE, d_cap=d_cap
    )
    collided = trace.collision is not None
    return EvaluationResult(
        eval_id=f"g{generation:03d}i{index:03d}",
        generation=generation,
        index=index,
        genome=genome,
        objectives=values,
        collided=collided,
        collision_time=trace.collision.time if collided else None,
        trace_sha256=trace.sha256(),
        genome_sha256=genome_sha256(genome),
        trace=trace if collided else None,
    )


def _evaluate_generation(
    population: list[np.ndarray],
    generation: int,
    fusion_method: str,
    setup: SimSetup,
    fault_cfg: FaultConfig,
    thresholds: DistThresholds,
    weights: ObjectiveWeights,
    d_cap: float,
    parallel: int,
) -> list[EvaluationResult]:
    args = [
        (genome, generation, i, fusion_method, setup, fault_cfg, thresholds, weights, d_cap)
        for i, genome in enumerate(population)
    ]
    if parallel <= 1:
        return [evaluate_genome(*a) for a in args]
    # Results are merged in genome-index order, so the archive and the rng
    # evolution are independent of completion order.
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = [pool.submit(evaluate_genome, *a) for a in args]
        results = []
        for i, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except Exception as exc:  # pragma: no cover - worker crash path
                raise SimulationError(
                    f"evaluation g{generation:03d}i{i:03d} failed: {exc}"
                ) from exc
        return results


def run_campaign(
    ga_cfg: GAConfig,
    setup: SimSetup,
    fusion_method: str,
    fault_cfg: FaultConfig = FaultConfig(),
    thresholds: DistThresholds = DistThresholds(),
    weights: ObjectiveWeights = ObjectiveWeights(),
    d_cap: float = 100.0,
    parallel: int = 1,
    on_generation: Optional[Callable[[GenerationStats], None]] = None,
    on_result: Optional[Callable[[EvaluationResult], None]] = None,
) -> CampaignState:
    """Run population x generations simulations; every evaluated collision is
    archived with its trace. Deterministic for a fixed configuration."""
    ga_cfg.validate()
    space = setup.space()
    rng = np.random.default_rng(ga_cfg.rng_seed)
    eff_weights = campaign_weights(weights, ga_cfg.algorithm)

    state = CampaignState()
    population = [sample_random(space, rng) for _ in range(ga_cfg.population)]
    for gen in range(ga_cfg.generations):
        results = _evaluate_generation(
            population, gen, fusion_method, setup, fault_cfg, thresholds,
            eff_weights, d_cap, parallel,
        )
        for result in results:
            state.results.append(result)
            if result.collided:
                state.archive.append(result)
            if on_result is not None:
                on_result(result)
        fitnesses = [r.objectives.fitness for r in results]
        stats = GenerationStats(
            generation=gen,
            evaluations=len(results),
            collisions=sum(r.collided for r in results),
            cumulative_collisions=len(state.archive),
            best_fitness=min(fitnesses),
            mean_fitness=sum(fitnesses) / len(fitnesses),
        )
        state.generations.append(stats)
        if on_generation is not None:
            on_generation(stats)

        if gen + 1 == ga_cfg.generations:
            break
        if ga_cfg.algorithm == "random":
            population = [sample_random(space, rng) for _ in range(ga_cfg.population)]
        else:
            pairs = tournament_select(population, fitnesses, rng)
            next_population: list[np.ndarray] = []
            for a, b in pairs:
                c1, c2 = sbx_crossover(population[a], population[b], space, ga_cfg, rng)
                next_population.append(polynomial_mutation(c1, space, ga_cfg, rng))
                next_population.append(polynomial_mutation(c2, space, ga_cfg, rng))
            population = next_population
    return state
