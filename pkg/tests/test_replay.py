"""History validation: clean runs pass, tampered runs fail at the right line."""

import json

import pytest

from beeprune.replay import ReplayViolation, validate_history
from beeprune.search import SearchConfig, run_search
from beeprune.space import build_space
from beeprune.fitness.synthetic import SyntheticEvaluator
from conftest import load_bundled


def history_lines(seed=7, cycles=8, population=4, max_trials=1):
    spec = load_bundled("mlp-blobs")
    space = build_space(spec, 0.7)
    target = tuple(c[len(c) // 2] for c in space.candidates)
    config = SearchConfig(
        alpha=0.7, cycles=cycles, population=population,
        max_trials=max_trials, seed=seed,
    )
    result = run_search(space, config, SyntheticEvaluator(space, target))
    return [json.dumps(e) for e in result.history], result


@pytest.fixture(scope="module")
def real():
    lines, result = history_lines()
    events = [json.loads(line) for line in lines]
    return lines, events, result


def tampered(events, index, **changes):
    out = [dict(e) for e in events]
    out[index].update(changes)
    return [json.dumps(e) for e in out]


def find(events, predicate, nth=0):
    hits = [i for i, e in enumerate(events) if predicate(e)]
    assert len(hits) > nth, "fixture history lacks the event this test needs"
    return hits[nth]


# -- clean histories ---------------------------------------------------------


def test_real_history_validates(real):
    lines, events, result = real
    summary = validate_history(lines)
    assert summary.best_fitness == result.fitness
    assert summary.best_structure == list(result.structure)
    assert summary.evaluations == result.evaluations
    assert summary.population == 4
    assert summary.cycles == 8
    assert summary.counts["init"] == 4
    assert summary.counts["candidate"] > 0


def test_blank_lines_ignored(real):
    lines, _, result = real
    padded = ["", lines[0], "   "] + lines[1:] + ["", ""]
    summary = validate_history(padded)
    assert summary.best_fitness == result.fitness


# hand-written run in which a scout evaluation fails, leaving the source
# above the trial limit at the end of the cycle -- this must be accepted
FAILED_SCOUT = [
    {"event": "run", "version": 1, "arch": "toy", "alpha": 1.0, "cycles": 1,
     "population": 2, "max_trials": 0, "fitness_epochs": 1, "seed": 0,
     "candidates": [[1, 2, 3]]},
    {"event": "init", "cycle": 0, "source": 0, "structure": [2],
     "fitness": 0.5, "evaluations": 1},
    {"event": "best-update", "cycle": 0, "structure": [2], "fitness": 0.5,
     "evaluations": 1},
    {"event": "init", "cycle": 0, "source": 1, "structure": [1],
     "fitness": 0.2, "evaluations": 2},
    {"event": "candidate", "cycle": 1, "phase": "employed", "source": 0,
     "partner": 1, "structure": [3], "fitness": 0.4, "evaluations": 3},
    {"event": "reject", "cycle": 1, "phase": "employed", "source": 0,
     "trials": 1},
    {"event": "scout", "cycle": 1, "source": 0, "structure": [1],
     "fitness": None, "error": "boom", "trials": 2, "evaluations": 3},
]


def test_failed_scout_history_accepted():
    summary = validate_history([json.dumps(e) for e in FAILED_SCOUT])
    assert summary.best_fitness == 0.5
    assert summary.counts["scout"] == 1


def test_missing_scout_rejected():
    # same run without the scout: source 0 ends the cycle over the limit
    lines = [json.dumps(e) for e in FAILED_SCOUT[:-1]]
    with pytest.raises(ReplayViolation, match="missed scout"):
        validate_history(lines)


# -- header faults ------------------------------------------------------------


def test_missing_header(real):
    _, events, _ = real
    with pytest.raises(ReplayViolation, match="run header"):
        validate_history([json.dumps(e) for e in events[1:]])


def test_duplicate_header(real):
    lines, events, _ = real
    doubled = lines[:3] + [lines[0]] + lines[3:]
    with pytest.raises(ReplayViolation, match="duplicate run header"):
        validate_history(doubled)


def test_bad_version(real):
    _, events, _ = real
    with pytest.raises(ReplayViolation, match="unsupported history version"):
        validate_history(tampered(events, 0, version=2))


def test_unsorted_candidates(real):
    _, events, _ = real
    cands = [list(reversed(c)) for c in events[0]["candidates"]]
    with pytest.raises(ReplayViolation, match="ascending"):
        validate_history(tampered(events, 0, candidates=cands))


# -- stream faults -------------------------------------------------------------


def test_empty_history():
    with pytest.raises(ReplayViolation, match="empty history"):
        validate_history([])


def test_invalid_json(real):
    lines, _, _ = real
    with pytest.raises(ReplayViolation, match="not valid JSON") as exc:
        validate_history(lines[:2] + ["{{{"])
    assert exc.value.line == 3


def test_non_object_line(real):
    lines, _, _ = real
    with pytest.raises(ReplayViolation, match="not a JSON object"):
        validate_history(lines[:2] + ["42"])


def test_unknown_event(real):
    lines, _, _ = real
    with pytest.raises(ReplayViolation, match="unknown event type"):
        validate_history([lines[0], json.dumps({"event": "wiggle"})])


def test_truncated_history(real):
    lines, _, _ = real
    with pytest.raises(ReplayViolation):
        validate_history(lines[:3])  # header + first init + best-update


# -- rule faults ----------------------------------------------------------------


def test_non_improving_replace_rejected(real):
    _, events, _ = real
    # pick a candidate immediately resolved by a replace (no best-update between)
    n = 0
    while True:
        i = find(events, lambda e: e["event"] == "candidate", nth=n)
        if events[i + 1]["event"] == "replace":
            break
        n += 1
    with pytest.raises(ReplayViolation, match="strictly improve") as exc:
        validate_history(tampered(events, i, fitness=0.0))
    assert exc.value.line == i + 2  # the replace line, 1-based


def test_removed_best_update_rejected(real):
    _, events, _ = real
    i = find(events, lambda e: e["event"] == "best-update")
    lines = [json.dumps(e) for e in events[:i] + events[i + 1:]]
    with pytest.raises(ReplayViolation, match="not recorded"):
        validate_history(lines)


def test_wrong_best_fitness_rejected(real):
    _, events, _ = real
    i = find(events, lambda e: e["event"] == "best-update", nth=1)
    with pytest.raises(ReplayViolation, match="running maximum"):
        validate_history(tampered(events, i, fitness=events[i]["fitness"] / 2))


def test_wrong_reject_trials(real):
    _, events, _ = real
    i = find(events, lambda e: e["event"] == "reject")
    bad = tampered(events, i, trials=events[i]["trials"] + 1)
    with pytest.raises(ReplayViolation, match="reject trials") as exc:
        validate_history(bad)
    assert exc.value.line == i + 1


def test_structure_outside_candidates(real):
    _, events, _ = real
    i = find(events, lambda e: e["event"] == "init")
    structure = list(events[i]["structure"])
    structure[0] = 9999
    with pytest.raises(ReplayViolation, match="not a declared candidate"):
        validate_history(tampered(events, i, structure=structure))


def test_wrong_onlooker_probability(real):
    _, events, _ = real
    i = find(events, lambda e: e["event"] == "candidate" and "p" in e)
    with pytest.raises(ReplayViolation, match="onlooker probability"):
        validate_history(tampered(events, i, p=events[i]["p"] / 2))


def test_decreasing_evaluations(real):
    _, events, _ = real
    i = find(
        events,
        lambda e: e["event"] == "candidate" and e.get("evaluations", 0) > 1,
        nth=3,
    )
    with pytest.raises(ReplayViolation, match="decreasing"):
        validate_history(tampered(events, i, evaluations=0))


def test_double_init(real):
    _, events, _ = real
    # duplicate the first init after its best-update so need_best is clear
    i = find(events, lambda e: e["event"] == "init")
    assert events[i + 1]["event"] == "best-update"
    lines = [json.dumps(e) for e in events[: i + 2]] + [json.dumps(events[i])]
    with pytest.raises(ReplayViolation, match="initialised twice"):
        validate_history(lines)


def test_scout_without_enough_trials():
    events = [dict(e) for e in FAILED_SCOUT]
    # drop the reject so source 0 still has 0 trials when the scout appears
    events = events[:5] + [events[6]]
    events[5]["trials"] = 1
    with pytest.raises(ReplayViolation, match="scout for source 0"):
        validate_history([json.dumps(e) for e in events])


def test_summary_counts_match(real):
    lines, events, _ = real
    summary = validate_history(lines)
    for kind in ("init", "candidate", "replace", "reject", "best-update"):
        assert summary.counts.get(kind, 0) == sum(
            1 for e in events if e["event"] == kind
        )
