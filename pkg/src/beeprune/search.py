"""Artificial-bee-colony search over pruned channel structures.

One cycle runs three phases over a population of n food sources (candidate
structures):

* employed: every source generates a neighbour against a random partner and
  keeps it only if it scores strictly better;
* onlooker: sources are revisited with probability proportional to relative
  fitness, ``P = 0.9 * fit / max_fit + 0.1``, and improved the same way;
* scout: a source whose trial counter exceeds ``max_trials`` is abandoned
  and re-initialised uniformly at random.

Every decision is appended to an event history; the ``replay`` module can
re-validate a stored history against these rules. All randomness flows
through per-phase generators seeded from the run seed, so runs are exactly
reproducible (including with parallel employed evaluation, which changes
thread timing but not the event stream).

A structure's evaluation seed is derived from the structure itself, so
re-encounters hit the in-run fitness cache instead of re-training, and the
fitness of a structure does not depend on when the search stumbled on it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .arch import ArchitectureSpec
from .fitness import EvaluationError, EvaluationRequest, Evaluator
from .seeds import derive_seed
from .space import SearchSpace, Structure, build_space, neighbor, sample_uniform

logger = logging.getLogger(__name__)

HISTORY_VERSION = 1


@dataclass
class SearchConfig:
    """Knobs of one search run.

    Attributes:
        alpha: per-layer shrinkage fraction, a multiple of 0.1 in (0, 1].
        cycles: number of employed/onlooker/scout cycles.
        population: number of food sources (>= 2, a neighbour needs a
            partner).
        max_trials: consecutive failed improvements before a source is
            scouted.
        fitness_epochs: training budget forwarded to the evaluator.
        seed: root seed; all run randomness derives from it.
    """

    alpha: float
    cycles: int = 2
    population: int = 3
    max_trials: int = 2
    fitness_epochs: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        if self.max_trials < 0:
            raise ValueError(f"max_trials must be >= 0, got {self.max_trials}")
        if self.fitness_epochs < 1:
            raise ValueError(
                f"fitness_epochs must be >= 1, got {self.fitness_epochs}"
            )


@dataclass
class FoodSource:
    structure: Structure
    fitness: float
    trials: int = 0


@dataclass
class SearchState:
    """Mutable search state plus the append-only event history."""

    sources: list[FoodSource] = field(default_factory=list)
    cycle: int = 0
    best_structure: Optional[Structure] = None
    best_fitness: Optional[float] = None
    evaluations: int = 0
    history: list[dict] = field(default_factory=list)
    on_event: Optional[Callable[[dict], None]] = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def record(self, event: dict) -> None:
        self.history.append(event)
        if self.on_event is not None:
            self.on_event(event)

    def observe(self, structure: Structure, fitness: float) -> None:
        """Track the best fitness ever evaluated; emits a best-update event."""
        if self.best_fitness is None or fitness > self.best_fitness:
            self.best_fitness = fitness
            self.best_structure = structure
            self.record(
                {
                    "event": "best-update",
                    "cycle": self.cycle,
                    "structure": list(structure),
                    "fitness": fitness,
                    "evaluations": self.evaluations,
                }
            )


@dataclass(frozen=True)
class SearchResult:
    structure: Structure
    fitness: float
    evaluations: int
    history: list[dict]
    state: SearchState


def select_probability(fitness: float, max_fitness: float) -> float:
    """Onlooker selection probability: ``0.9 * fitness / max_fitness + 0.1``.

    The best source gets exactly 1.0 and nothing falls below 0.1. When every
    source sits at zero fitness the ratio is taken as 1, so all sources stay
    selectable.
    """
    if not 0.0 <= fitness <= max_fitness:
        raise ValueError(
            f"need 0 <= fitness <= max_fitness, got {fitness} and {max_fitness}"
        )
    ratio = 1.0 if max_fitness == 0.0 else fitness / max_fitness
    return 0.9 * ratio + 0.1


def _eval_seed(config: SearchConfig, structure: Sequence[int]) -> int:
    return derive_seed(config.seed, "eval", *structure)


def _call_evaluator(
    evaluator: Evaluator, structure: Structure, seed: int, epochs: int
) -> float:
    result = evaluator.evaluate(EvaluationRequest(structure, seed, epochs))
    fitness = float(result.fitness)
    if not 0.0 <= fitness <= 1.0:
        raise EvaluationError(f"evaluator returned fitness {fitness} outside [0, 1]")
    return fitness


def _evaluate(
    state: SearchState,
    evaluator: Evaluator,
    structure: Sequence[int],
    seed: int,
    epochs: int,
) -> float:
    """Evaluate through the run cache; failures are not cached."""
    key = (tuple(structure), seed, epochs)
    if key in state._cache:
        return state._cache[key]
    fitness = _call_evaluator(evaluator, tuple(structure), seed, epochs)
    state.evaluations += 1
    state._cache[key] = fitness
    return fitness


Outcome = Union[float, EvaluationError]


def _evaluate_many(
    state: SearchState,
    evaluator: Evaluator,
    jobs: list[tuple[Structure, int]],
    epochs: int,
    pool: Optional[ThreadPoolExecutor],
) -> list[Outcome]:
    """Evaluate a batch, optionally concurrently; outcomes in job order.

    The cache, evaluation counter, and returned outcomes are identical with
    and without a pool: distinct uncached jobs are dispatched, results are
    consumed in submission order.
    """
    if pool is None:
        outcomes: list[Outcome] = []
        for structure, seed in jobs:
            try:
                outcomes.append(_evaluate(state, evaluator, structure, seed, epochs))
            except EvaluationError as exc:
                outcomes.append(exc)
        return outcomes

    futures = {}
    order = []
    for structure, seed in jobs:
        key = (tuple(structure), seed, epochs)
        if key in state._cache or key in futures:
            continue
        futures[key] = pool.submit(
            _call_evaluator, evaluator, tuple(structure), seed, epochs
        )
        order.append(key)
    fresh: dict = {}
    for key in order:
        try:
            fitness = futures[key].result()
            state.evaluations += 1
            state._cache[key] = fitness
            fresh[key] = fitness
        except EvaluationError as exc:
            fresh[key] = exc
    results: list[Outcome] = []
    for structure, seed in jobs:
        key = (tuple(structure), seed, epochs)
        results.append(state._cache.get(key, fresh.get(key)))
    return results


def _partner_index(rng: np.random.Generator, population: int, j: int) -> int:
    """Uniform index over the other sources (single draw)."""
    g = int(rng.integers(0, population - 1))
    return g + 1 if g >= j else g


def _resolve_candidate(
    state: SearchState,
    phase: str,
    j: int,
    partner: int,
    candidate: Structure,
    outcome: Outcome,
    probability: Optional[float] = None,
) -> None:
    """Record a candidate evaluation and apply greedy replacement."""
    source = state.sources[j]
    event = {
        "event": "candidate",
        "cycle": state.cycle,
        "phase": phase,
        "source": j,
        "partner": partner,
    }
    if probability is not None:
        event["p"] = probability
    event["structure"] = list(candidate)
    if isinstance(outcome, EvaluationError):
        event["fitness"] = None
        event["error"] = str(outcome)
        event["evaluations"] = state.evaluations
        state.record(event)
        source.trials += 1
        state.record(
            {
                "event": "reject",
                "cycle": state.cycle,
                "phase": phase,
                "source": j,
                "trials": source.trials,
            }
        )
        logger.warning(
            "%s candidate %s for source %d failed: %s", phase, candidate, j, outcome
        )
        return
    fitness = outcome
    event["fitness"] = fitness
    event["evaluations"] = state.evaluations
    state.record(event)
    state.observe(candidate, fitness)
    if fitness > source.fitness:
        source.structure = candidate
        source.fitness = fitness
        source.trials = 0
        state.record(
            {
                "event": "replace",
                "cycle": state.cycle,
                "phase": phase,
                "source": j,
                "fitness": fitness,
            }
        )
    else:
        source.trials += 1
        state.record(
            {
                "event": "reject",
                "cycle": state.cycle,
                "phase": phase,
                "source": j,
                "trials": source.trials,
            }
        )


def init_population(
    space: SearchSpace,
    config: SearchConfig,
    evaluator: Evaluator,
    *,
    on_event: Optional[Callable[[dict], None]] = None,
    header: Optional[dict] = None,
) -> SearchState:
    """Sample and evaluate the initial population.

    An evaluation failure here propagates: a search cannot start without a
    scored population.
    """
    state = SearchState(on_event=on_event)
    if header is not None:
        state.record(header)
    rng = np.random.default_rng(derive_seed(config.seed, "init"))
    for j in range(config.population):
        structure = sample_uniform(space, rng)
        fitness = _evaluate(
            state, evaluator, structure, _eval_seed(config, structure),
            config.fitness_epochs,
        )
        state.sources.append(FoodSource(structure=structure, fitness=fitness))
        state.record(
            {
                "event": "init",
                "cycle": 0,
                "source": j,
                "structure": list(structure),
                "fitness": fitness,
                "evaluations": state.evaluations,
            }
        )
        state.observe(structure, fitness)
    return state


def employed_phase(
    state: SearchState,
    space: SearchSpace,
    config: SearchConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
    pool: Optional[ThreadPoolExecutor] = None,
) -> None:
    """Each source proposes one neighbour; greedy replacement.

    All random draws happen before any evaluation, so a thread pool can
    evaluate the batch without touching the random stream.
    """
    n = len(state.sources)
    plans = []
    for j in range(n):
        g = _partner_index(rng, n, j)
        cand = neighbor(
            state.sources[j].structure, state.sources[g].structure, space, rng
        )
        plans.append((j, g, cand))
    jobs = [(cand, _eval_seed(config, cand)) for _, _, cand in plans]
    outcomes = _evaluate_many(state, evaluator, jobs, config.fitness_epochs, pool)
    for (j, g, cand), outcome in zip(plans, outcomes):
        _resolve_candidate(state, "employed", j, g, cand, outcome)


def onlooker_phase(
    state: SearchState,
    space: SearchSpace,
    config: SearchConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
) -> None:
    """Fitness-proportional revisits; probabilities use live fitness values."""
    n = len(state.sources)
    for j in range(n):
        max_fitness = max(s.fitness for s in state.sources)
        p = select_probability(state.sources[j].fitness, max_fitness)
        if float(rng.uniform(0.0, 1.0)) > p:
            continue
        g = _partner_index(rng, n, j)
        cand = neighbor(
            state.sources[j].structure, state.sources[g].structure, space, rng
        )
        try:
            outcome: Outcome = _evaluate(
                state, evaluator, cand, _eval_seed(config, cand),
                config.fitness_epochs,
            )
        except EvaluationError as exc:
            outcome = exc
        _resolve_candidate(state, "onlooker", j, g, cand, outcome, probability=p)


def scout_phase(
    state: SearchState,
    space: SearchSpace,
    config: SearchConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
) -> None:
    """Re-initialise sources whose trial counters exceeded max_trials.

    Replacement is unconditional on success (even to a worse fitness). If the
    scout evaluation fails, the old source stays and its counter grows, so
    the scout retries next cycle.
    """
    for j, source in enumerate(state.sources):
        if source.trials <= config.max_trials:
            continue
        structure = sample_uniform(space, rng)
        event = {
            "event": "scout",
            "cycle": state.cycle,
            "source": j,
            "structure": list(structure),
        }
        try:
            fitness = _evaluate(
                state, evaluator, structure, _eval_seed(config, structure),
                config.fitness_epochs,
            )
        except EvaluationError as exc:
            source.trials += 1
            event["fitness"] = None
            event["error"] = str(exc)
            event["trials"] = source.trials
            event["evaluations"] = state.evaluations
            state.record(event)
            logger.warning("scout evaluation for source %d failed: %s", j, exc)
            continue
        source.structure = structure
        source.fitness = fitness
        source.trials = 0
        event["fitness"] = fitness
        event["trials"] = 0
        event["evaluations"] = state.evaluations
        state.record(event)
        state.observe(structure, fitness)


def run_search(
    space: Union[SearchSpace, ArchitectureSpec],
    config: SearchConfig,
    evaluator: Evaluator,
    *,
    arch_name: str = "",
    on_event: Optional[Callable[[dict], None]] = None,
    parallel: int = 1,
) -> SearchResult:
    """Run the full search loop.

    Args:
        space: either a prebuilt structure space (see
            :func:`space.build_space`) or an architecture spec, in which case
            the space is built from ``config.alpha`` and the header takes the
            architecture's name.
        config: run parameters; ``config.alpha`` must match the space.
        evaluator: fitness backend.
        arch_name: architecture name recorded in the history header
            (overridden by the spec's name when a spec is passed).
        on_event: optional callback invoked with each history event as it is
            recorded (the CLI streams events to disk through this).
        parallel: >1 dispatches employed-phase evaluations to that many
            threads; the event history is identical either way.

    Returns:
        SearchResult with the best structure ever evaluated, its fitness,
        the total number of evaluator calls, and the full event history.
    """
    if parallel < 1:
        raise ValueError("parallel must be >= 1")
    if not isinstance(space, SearchSpace):
        arch_name = space.name
        space = build_space(space, config.alpha)
    header = {
        "event": "run",
        "version": HISTORY_VERSION,
        "arch": arch_name,
        "alpha": space.alpha,
        "cycles": config.cycles,
        "population": config.population,
        "max_trials": config.max_trials,
        "fitness_epochs": config.fitness_epochs,
        "seed": config.seed,
        "candidates": [list(c) for c in space.candidates],
    }
    state = init_population(
        space, config, evaluator, on_event=on_event, header=header
    )
    pool = ThreadPoolExecutor(max_workers=parallel) if parallel > 1 else None
    try:
        for cycle in range(1, config.cycles + 1):
            state.cycle = cycle
            employed_phase(
                state, space, config, evaluator,
                np.random.default_rng(derive_seed(config.seed, "employed", cycle)),
                pool=pool,
            )
            onlooker_phase(
                state, space, config, evaluator,
                np.random.default_rng(derive_seed(config.seed, "onlooker", cycle)),
            )
            scout_phase(
                state, space, config, evaluator,
                np.random.default_rng(derive_seed(config.seed, "scout", cycle)),
            )
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    assert state.best_structure is not None and state.best_fitness is not None
    return SearchResult(
        structure=state.best_structure,
        fitness=state.best_fitness,
        evaluations=state.evaluations,
        history=state.history,
        state=state,
    )
