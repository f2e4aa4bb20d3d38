"""Colony mechanics: phase rules, counters, probabilities, determinism.

The scripted-phase tests drive one phase at a time with a hand-built state, a
deterministic fitness table, and a fake random stream, then compare the full
recorded event sequence against hand-computed expectations.
"""

import json
import math

import numpy as np
import pytest

from beeprune.fitness import EvaluationError, EvaluationRequest, EvaluationResult
from beeprune.fitness.synthetic import SyntheticEvaluator
from beeprune.search import (
    FoodSource,
    SearchConfig,
    SearchState,
    employed_phase,
    init_population,
    onlooker_phase,
    run_search,
    scout_phase,
    select_probability,
)
from beeprune.space import SearchSpace, candidate_counts
from conftest import load_bundled


class ScriptRng:
    """Hands out preset integer and uniform draws, in order."""

    def __init__(self, integers=(), uniforms=()):
        self._integers = list(integers)
        self._uniforms = list(uniforms)

    def integers(self, lo, hi):
        value = self._integers.pop(0)
        assert lo <= value < hi, (value, lo, hi)
        return value

    def uniform(self, lo, hi):
        return self._uniforms.pop(0)

    def exhausted(self):
        return not self._integers and not self._uniforms


class TableEvaluator:
    """Fitness looked up per structure; unknown structures are errors."""

    def __init__(self, table, fail=()):
        self.table = dict(table)
        self.fail = set(fail)
        self.requests = []

    def evaluate(self, request):
        self.requests.append(request)
        key = tuple(request.structure)
        if key in self.fail:
            raise EvaluationError(f"scripted failure for {key}")
        return EvaluationResult(fitness=self.table[key])


class ConstEvaluator:
    def __init__(self, fitness):
        self.fitness = fitness

    def evaluate(self, request):
        return EvaluationResult(fitness=self.fitness)


SPACE5 = SearchSpace((candidate_counts(64, 0.5),), 0.5)  # {6,13,19,26,32}
TABLE = {(6,): 0.2, (13,): 0.4, (26,): 0.6, (32,): 0.9}


def make_state(best=(0.6, (26,))):
    state = SearchState()
    state.sources = [
        FoodSource((13,), 0.4),
        FoodSource((26,), 0.6),
        FoodSource((6,), 0.2),
    ]
    state.cycle = 1
    state.best_fitness, state.best_structure = best[0], best[1]
    return state


CONFIG = SearchConfig(
    alpha=0.5, cycles=1, population=3, max_trials=2, fitness_epochs=1, seed=0
)


# -- selection probability -----------------------------------------------------


def test_select_probability_values():
    assert select_probability(1.0, 1.0) == 1.0
    assert select_probability(0.5, 1.0) == pytest.approx(0.55)
    assert select_probability(0.25, 1.0) == pytest.approx(0.325)
    assert select_probability(0.0, 1.0) == pytest.approx(0.1)
    # max at zero: ratio taken as 1, everything stays selectable
    assert select_probability(0.0, 0.0) == 1.0


def test_select_probability_range_errors():
    with pytest.raises(ValueError):
        select_probability(1.1, 1.0)
    with pytest.raises(ValueError):
        select_probability(-0.1, 1.0)


def test_select_probability_bounds_randomized():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        max_fit = float(rng.uniform(0.0, 1.0))
        fit = float(rng.uniform(0.0, max_fit))
        p = select_probability(fit, max_fit)
        assert 0.1 <= p <= 1.0
        assert (p == 1.0) == (fit == max_fit)


# -- employed phase, hand-computed ----------------------------------------------


def test_employed_phase_scripted():
    state = make_state()
    evaluator = TableEvaluator(TABLE)
    # per source: one partner draw, then one uniform per slot
    rng = ScriptRng(integers=[0, 1, 0], uniforms=[-1.0, 0.5, 0.0])
    employed_phase(state, SPACE5, CONFIG, evaluator, rng)
    assert rng.exhausted()

    # j=0: partner 1, r=-1.0 -> snap(13 - (-1)*13... 13 + (-1)(13-26)) = 26
    # j=1: partner 2, r=0.5  -> snap(26 + 0.5*(26-6)) = snap(36) = 32
    # j=2: partner 0, r=0.0  -> 6 stays
    expected = [
        {"event": "candidate", "cycle": 1, "phase": "employed", "source": 0,
         "partner": 1, "structure": [26], "fitness": 0.6, "evaluations": 3},
        {"event": "replace", "cycle": 1, "phase": "employed", "source": 0,
         "fitness": 0.6},
        {"event": "candidate", "cycle": 1, "phase": "employed", "source": 1,
         "partner": 2, "structure": [32], "fitness": 0.9, "evaluations": 3},
        {"event": "best-update", "cycle": 1, "structure": [32], "fitness": 0.9,
         "evaluations": 3},
        {"event": "replace", "cycle": 1, "phase": "employed", "source": 1,
         "fitness": 0.9},
        {"event": "candidate", "cycle": 1, "phase": "employed", "source": 2,
         "partner": 0, "structure": [6], "fitness": 0.2, "evaluations": 3},
        {"event": "reject", "cycle": 1, "phase": "employed", "source": 2,
         "trials": 1},
    ]
    assert state.history == expected
    assert [s.structure for s in state.sources] == [(26,), (32,), (6,)]
    assert [s.fitness for s in state.sources] == [0.6, 0.9, 0.2]
    assert [s.trials for s in state.sources] == [0, 0, 1]
    assert state.evaluations == 3


def test_employed_equal_fitness_rejects():
    # candidate scoring exactly the source fitness must not replace it
    state = make_state()
    state.sources[0].trials = 1
    evaluator = TableEvaluator({**TABLE, (19,): 0.4})
    # j=0 proposes 19 (same fitness 0.4): 13 + r*(13-26) = 19 at r = -6/13.
    # j=1 and j=2 propose themselves (r = 0), also equal-fitness rejects.
    rng = ScriptRng(integers=[0, 0, 0], uniforms=[-6 / 13, 0.0, 0.0])
    employed_phase(state, SPACE5, CONFIG, evaluator, rng)
    rejects = [e for e in state.history if e["event"] == "reject"]
    assert rejects[0]["source"] == 0
    assert rejects[0]["trials"] == 2  # 1 + 1: equal fitness counts as failure
    assert state.sources[0].structure == (13,)


def test_employed_failure_keeps_source():
    state = make_state()
    evaluator = TableEvaluator(TABLE, fail={(32,)})
    rng = ScriptRng(integers=[0, 1, 0], uniforms=[-1.0, 0.5, 0.0])
    employed_phase(state, SPACE5, CONFIG, evaluator, rng)
    cand = [e for e in state.history if e["event"] == "candidate"][1]
    assert cand["fitness"] is None
    assert "scripted failure" in cand["error"]
    assert state.sources[1].structure == (26,)
    assert state.sources[1].trials == 1
    # the two successful evaluations still happened
    assert state.evaluations == 2


def test_employed_out_of_range_fitness_is_failure():
    # a rogue evaluator sidestepping the result dataclass is still caught
    class Rogue:
        def evaluate(self, request):
            if tuple(request.structure) == (32,):
                return type("R", (), {"fitness": 1.5, "metrics": None})()
            return EvaluationResult(fitness=TABLE[tuple(request.structure)])

    state = make_state()
    evaluator = Rogue()
    rng = ScriptRng(integers=[0, 1, 0], uniforms=[-1.0, 0.5, 0.0])
    employed_phase(state, SPACE5, CONFIG, evaluator, rng)
    cand = [e for e in state.history if e["event"] == "candidate"][1]
    assert cand["fitness"] is None
    assert "outside [0, 1]" in cand["error"]


# -- onlooker phase, hand-computed ------------------------------------------------


def test_onlooker_phase_scripted():
    state = make_state()
    evaluator = TableEvaluator(TABLE)
    p1 = select_probability(0.6, 0.6)  # 1.0
    p2 = select_probability(0.2, 0.6)
    # j=0: gate 0.8 > p0=0.7 -> skipped (no partner/neighbor draws)
    # j=1: gate 0.5 <= 1.0, partner 0, r=-1 -> snap(26 - (26-13)) = 13
    # j=2: gate 0.39 <= p2 (~0.4), partner 1, r=1 -> snap(6 + (6-26)) = 6
    rng = ScriptRng(integers=[0, 1], uniforms=[0.8, 0.5, -1.0, 0.39, 1.0])
    onlooker_phase(state, SPACE5, CONFIG, evaluator, rng)
    assert rng.exhausted()
    expected = [
        {"event": "candidate", "cycle": 1, "phase": "onlooker", "source": 1,
         "partner": 0, "p": p1, "structure": [13], "fitness": 0.4,
         "evaluations": 1},
        {"event": "reject", "cycle": 1, "phase": "onlooker", "source": 1,
         "trials": 1},
        {"event": "candidate", "cycle": 1, "phase": "onlooker", "source": 2,
         "partner": 1, "p": p2, "structure": [6], "fitness": 0.2,
         "evaluations": 2},
        {"event": "reject", "cycle": 1, "phase": "onlooker", "source": 2,
         "trials": 1},
    ]
    assert state.history == expected
    assert state.evaluations == 2


def test_onlooker_probabilities_are_live():
    # after source 1 improves to 0.9 mid-pass, source 2's gate uses max 0.9
    state = make_state()
    evaluator = TableEvaluator(TABLE)
    p2_live = select_probability(0.2, 0.9)
    rng = ScriptRng(
        integers=[0, 1],
        uniforms=[
            0.99,        # j=0 gate: skip (p0 = 0.7)
            0.5, 0.3,    # j=1 gate, then r -> snap(26 + 0.3*20) = 32, replaces
            p2_live - 1e-9, 1.0,  # j=2 gate squeaks under the LIVE probability
        ],
    )
    onlooker_phase(state, SPACE5, CONFIG, evaluator, rng)
    cands = [e for e in state.history if e["event"] == "candidate"]
    assert cands[0]["structure"] == [32]
    assert cands[1]["p"] == pytest.approx(p2_live)


def test_onlooker_monte_carlo_frequencies():
    """Visit rates converge to Eq.-style gate probabilities (1.0, 0.55, 0.325)."""
    probs = (1.0, 0.55, 0.325)
    state = SearchState()
    state.sources = [
        FoodSource((32,), 1.0),
        FoodSource((13,), 0.5),
        FoodSource((6,), 0.25),
    ]
    state.cycle = 1
    evaluator = ConstEvaluator(0.0)  # candidates always lose; sources never move
    state.best_fitness, state.best_structure = 1.0, (32,)
    rng = np.random.default_rng(1234)
    n = 10_000
    for _ in range(n):
        onlooker_phase(state, SPACE5, CONFIG, evaluator, rng)
    visits = [0, 0, 0]
    for event in state.history:
        if event["event"] == "candidate":
            visits[event["source"]] += 1
    assert visits[0] == n  # p = 1.0 always passes the gate
    for j in (1, 2):
        sigma = math.sqrt(probs[j] * (1 - probs[j]) / n)
        assert abs(visits[j] / n - probs[j]) < 3 * sigma, (j, visits[j] / n)


# -- scout phase -------------------------------------------------------------------


def test_scout_triggers_strictly_above_max_trials():
    state = make_state()
    state.sources[0].trials = 3  # > M = 2 -> scouted
    state.sources[1].trials = 2  # == M -> left alone
    evaluator = TableEvaluator(TABLE)
    rng = ScriptRng(integers=[4])  # sample_uniform picks index 4 -> 32
    scout_phase(state, SPACE5, CONFIG, evaluator, rng)
    assert rng.exhausted()
    expected = [
        {"event": "scout", "cycle": 1, "source": 0, "structure": [32],
         "fitness": 0.9, "trials": 0, "evaluations": 1},
        {"event": "best-update", "cycle": 1, "structure": [32], "fitness": 0.9,
         "evaluations": 1},
    ]
    assert state.history == expected
    assert state.sources[0].structure == (32,)
    assert state.sources[0].trials == 0
    assert state.sources[1].trials == 2


def test_scout_accepts_worse_fitness():
    state = make_state()
    state.sources[1].trials = 5
    evaluator = TableEvaluator(TABLE)
    rng = ScriptRng(integers=[0])  # -> (6,), fitness 0.2 < current 0.6
    scout_phase(state, SPACE5, CONFIG, evaluator, rng)
    assert state.sources[1].structure == (6,)
    assert state.sources[1].fitness == 0.2
    assert state.sources[1].trials == 0


def test_scout_failure_keeps_source_and_counts():
    state = make_state()
    state.sources[0].trials = 3
    evaluator = TableEvaluator(TABLE, fail={(19,)})
    rng = ScriptRng(integers=[2])  # -> (19,), which fails
    scout_phase(state, SPACE5, CONFIG, evaluator, rng)
    event = state.history[0]
    assert event["event"] == "scout"
    assert event["fitness"] is None
    assert event["trials"] == 4
    assert state.sources[0].structure == (13,)
    assert state.sources[0].trials == 4


# -- init --------------------------------------------------------------------------


def test_init_population_events():
    evaluator = ConstEvaluator(0.5)
    state = init_population(SPACE5, CONFIG, evaluator, header={"event": "run"})
    kinds = [e["event"] for e in state.history]
    assert kinds[0] == "run"
    assert kinds.count("init") == 3
    # constant fitness: only the first init sets a new best
    assert kinds.count("best-update") == 1
    assert kinds[2] == "best-update"  # right after the first init
    assert len(state.sources) == 3
    assert all(s.fitness == 0.5 for s in state.sources)
    assert 1 <= state.evaluations <= 3  # duplicates may hit the run cache


def test_init_failure_propagates():
    class Broken:
        def evaluate(self, request):
            raise EvaluationError("no backend")

    with pytest.raises(EvaluationError, match="no backend"):
        init_population(SPACE5, CONFIG, Broken())


# -- full runs ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def mlp_space_and_target():
    spec = load_bundled("mlp-blobs")
    from beeprune.space import build_space

    space = build_space(spec, 0.7)
    target = tuple(c[len(c) // 2] for c in space.candidates)
    return space, target


def test_run_search_finds_good_structures(mlp_space_and_target):
    space, target = mlp_space_and_target
    evaluator = SyntheticEvaluator(space, target)
    config = SearchConfig(alpha=0.7, cycles=10, population=4, max_trials=2, seed=3)
    result = run_search(space, config, evaluator)
    assert result.fitness == max(
        e["fitness"]
        for e in result.history
        if e["event"] in ("init", "candidate", "scout") and e["fitness"] is not None
    )
    assert result.fitness > 0.9


def test_run_search_accepts_architecture_spec():
    spec = load_bundled("mlp-blobs")
    config = SearchConfig(alpha=0.7, cycles=2, population=3, seed=5)
    from beeprune.space import build_space

    space = build_space(spec, 0.7)
    evaluator = SyntheticEvaluator(space, tuple(c[0] for c in space.candidates))
    result = run_search(spec, config, evaluator)
    header = result.history[0]
    assert header["event"] == "run"
    assert header["arch"] == "mlp-blobs"
    assert header["candidates"] == [list(c) for c in space.candidates]


def test_run_search_deterministic(mlp_space_and_target):
    space, target = mlp_space_and_target
    evaluator = SyntheticEvaluator(space, target)
    config = SearchConfig(alpha=0.7, cycles=4, population=3, seed=11)
    a = run_search(space, config, evaluator)
    b = run_search(space, config, evaluator)
    assert [json.dumps(e) for e in a.history] == [json.dumps(e) for e in b.history]
    other = run_search(
        space, SearchConfig(alpha=0.7, cycles=4, population=3, seed=12), evaluator
    )
    assert [json.dumps(e) for e in other.history] != [json.dumps(e) for e in a.history]


def test_parallel_history_matches_sequential(mlp_space_and_target):
    space, target = mlp_space_and_target
    evaluator = SyntheticEvaluator(space, target)
    config = SearchConfig(alpha=0.7, cycles=4, population=4, seed=21)
    seq = run_search(space, config, evaluator, parallel=1)
    par = run_search(space, config, evaluator, parallel=4)
    assert [json.dumps(e) for e in seq.history] == [json.dumps(e) for e in par.history]
    assert seq.evaluations == par.evaluations


def test_evaluation_count_bounds(mlp_space_and_target):
    space, target = mlp_space_and_target
    evaluator = SyntheticEvaluator(space, target)
    config = SearchConfig(alpha=0.7, cycles=6, population=3, max_trials=1, seed=2)
    result = run_search(space, config, evaluator)
    n, T = config.population, config.cycles
    scouts = sum(1 for e in result.history if e["event"] == "scout")
    assert n <= result.evaluations <= n * (1 + 2 * T) + scouts
    # the cache ensures at most one evaluation per distinct structure
    distinct = {
        tuple(e["structure"])
        for e in result.history
        if e["event"] in ("init", "candidate", "scout")
    }
    assert result.evaluations <= len(distinct)


def test_run_search_rejects_bad_parallel(mlp_space_and_target):
    space, target = mlp_space_and_target
    evaluator = SyntheticEvaluator(space, target)
    with pytest.raises(ValueError):
        run_search(space, SearchConfig(alpha=0.7), evaluator, parallel=0)


# -- config validation ----------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"cycles": 0},
        {"population": 1},
        {"max_trials": -1},
        {"fitness_epochs": 0},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SearchConfig(alpha=0.5, **kwargs)
