"""Validation of stored search histories.

A history is one JSON object per line: a run header followed by the event
stream (see :mod:`beeprune.search`). The validator re-applies every recorded
decision against the search rules and flags the first inconsistency:
structures outside the declared candidate space, replacements that do not
strictly improve, wrong trial bookkeeping, missed scouts, out-of-order
phases, or a best-fitness trace that is not the running maximum.

Random draws are not recorded, so the validator checks consistency of the
decisions, not that a specific generator produced them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .search import select_probability

_PHASE_RANK = {"employed": 0, "onlooker": 1, "scout": 2}

_HANDLERS = {
    "run": "_on_run",
    "init": "_on_init",
    "candidate": "_on_candidate",
    "replace": "_on_replace",
    "reject": "_on_reject",
    "scout": "_on_scout",
    "best-update": "_on_best_update",
}


class ReplayViolation(Exception):
    """A history line contradicts the search rules."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class ReplaySummary:
    arch: str
    population: int
    cycles: int
    evaluations: int
    best_fitness: float
    best_structure: list[int]
    counts: dict[str, int] = field(default_factory=dict)


@dataclass
class _Source:
    structure: tuple[int, ...]
    fitness: float
    trials: int = 0


def _require(cond: bool, line: int, message: str) -> None:
    if not cond:
        raise ReplayViolation(line, message)


def _is_fitness(value: object) -> bool:
    return (
        isinstance(value, (int, float))
        and not isinstance(value, bool)
        and 0.0 <= float(value) <= 1.0
    )


class _Validator:
    def __init__(self, header: dict, line: int) -> None:
        _require(header.get("event") == "run", line, "first event must be the run header")
        _require(header.get("version") == 1, line, f"unsupported history version {header.get('version')!r}")
        self.population = header.get("population")
        self.cycles = header.get("cycles")
        self.max_trials = header.get("max_trials")
        _require(isinstance(self.population, int) and self.population >= 2, line, "header population must be an int >= 2")
        _require(isinstance(self.cycles, int) and self.cycles >= 1, line, "header cycles must be an int >= 1")
        _require(isinstance(self.max_trials, int) and self.max_trials >= 0, line, "header max_trials must be an int >= 0")
        cands = header.get("candidates")
        _require(isinstance(cands, list) and len(cands) > 0, line, "header candidates missing")
        for i, lst in enumerate(cands):
            ok = (
                isinstance(lst, list)
                and len(lst) > 0
                and all(isinstance(v, int) and not isinstance(v, bool) for v in lst)
                and list(lst) == sorted(set(lst))
            )
            _require(ok, line, f"candidates[{i}] must be a strictly ascending int list")
        self.candidates = [tuple(lst) for lst in cands]
        self.arch = str(header.get("arch", ""))

        self.sources: list[Optional[_Source]] = [None] * self.population
        self.pending: dict[int, dict] = {}
        self.cycle = 0
        self.phase_rank = -1
        self.scouted: set[int] = set()
        self.running_max: Optional[float] = None
        self.running_argmax: Optional[list[int]] = None
        self.reported_best: Optional[float] = None
        self.need_best = False
        self.last_evaluations = 0
        self.evaluations = 0
        self.best_structure: list[int] = []
        self.counts: dict[str, int] = {}

    # -- helpers ---------------------------------------------------------

    def _structure(self, event: dict, line: int) -> tuple[int, ...]:
        st = event.get("structure")
        _require(isinstance(st, list) and len(st) == len(self.candidates), line,
                 "structure missing or has wrong length")
        for i, v in enumerate(st):
            _require(isinstance(v, int) and not isinstance(v, bool), line,
                     f"structure[{i}] is not an integer")
            _require(v in self.candidates[i], line,
                     f"structure[{i}] = {v} is not a declared candidate")
        return tuple(st)

    def _source_index(self, event: dict, line: int) -> int:
        j = event.get("source")
        _require(isinstance(j, int) and 0 <= j < self.population, line,
                 f"source index {j!r} out of range")
        return j

    def _observe(self, structure: tuple[int, ...], fitness: float) -> None:
        if self.running_max is None or fitness > self.running_max:
            self.running_max = fitness
            self.running_argmax = list(structure)
            self.need_best = True

    def _check_evaluations(self, event: dict, line: int) -> None:
        ev = event.get("evaluations")
        _require(isinstance(ev, int) and ev >= self.last_evaluations, line,
                 "evaluations counter missing or decreasing")
        self.last_evaluations = ev
        self.evaluations = ev

    def _enter_cycle_phase(self, cycle: object, rank: int, line: int) -> None:
        _require(isinstance(cycle, int), line, "event has no cycle")
        _require(all(s is not None for s in self.sources), line,
                 "cycle events before the population was initialised")
        if cycle != self.cycle:
            _require(cycle == self.cycle + 1, line,
                     f"cycle jumped from {self.cycle} to {cycle}")
            _require(cycle <= self.cycles, line,
                     f"cycle {cycle} exceeds the declared {self.cycles}")
            self._check_cycle_closed(line)
            self.cycle = cycle
            self.phase_rank = -1
            self.scouted = set()
        _require(rank >= self.phase_rank, line,
                 "phases out of order within a cycle")
        self.phase_rank = rank

    def _check_cycle_closed(self, line: int) -> None:
        """A cycle may only end with trials > max_trials after a failed scout."""
        _require(not self.pending, line,
                 "candidate without a replace/reject resolution")
        if self.cycle >= 1:
            for j, src in enumerate(self.sources):
                assert src is not None
                _require(src.trials <= self.max_trials or j in self.scouted, line,
                         f"source {j} left cycle {self.cycle} with "
                         f"{src.trials} > max_trials trials (missed scout)")

    # -- event handlers ----------------------------------------------------

    def handle(self, event: dict, line: int) -> None:
        kind = event.get("event")
        _require(isinstance(kind, str), line, "event without a type")
        if self.need_best:
            _require(kind == "best-update", line,
                     "a new best fitness was observed but not recorded")
        self.counts[kind] = self.counts.get(kind, 0) + 1
        _require(kind in _HANDLERS, line, f"unknown event type {kind!r}")
        getattr(self, _HANDLERS[kind])(event, line)

    def _on_run(self, event: dict, line: int) -> None:
        raise ReplayViolation(line, "duplicate run header")

    def _on_init(self, event: dict, line: int) -> None:
        _require(event.get("cycle") == 0, line, "init events must be in cycle 0")
        _require(self.cycle == 0, line, "init event after the first cycle began")
        j = self._source_index(event, line)
        _require(self.sources[j] is None, line, f"source {j} initialised twice")
        structure = self._structure(event, line)
        fitness = event.get("fitness")
        _require(_is_fitness(fitness), line, "init fitness missing or out of [0, 1]")
        self._check_evaluations(event, line)
        self.sources[j] = _Source(structure, float(fitness))
        self._observe(structure, float(fitness))

    def _on_candidate(self, event: dict, line: int) -> None:
        phase = event.get("phase")
        _require(phase in ("employed", "onlooker"), line,
                 f"invalid candidate phase {phase!r}")
        self._enter_cycle_phase(event.get("cycle"), _PHASE_RANK[phase], line)
        j = self._source_index(event, line)
        _require(j not in self.pending, line,
                 f"source {j} already has an unresolved candidate")
        g = event.get("partner")
        _require(isinstance(g, int) and 0 <= g < self.population and g != j, line,
                 f"invalid partner index {g!r}")
        structure = self._structure(event, line)
        fitness = event.get("fitness")
        error = event.get("error")
        if fitness is None:
            _require(isinstance(error, str) and error != "", line,
                     "failed candidate must carry an error message")
        else:
            _require(_is_fitness(fitness), line, "candidate fitness out of [0, 1]")
            _require(error is None, line, "candidate carries both fitness and error")
        if phase == "onlooker":
            src = self.sources[j]
            assert src is not None
            live_max = max(s.fitness for s in self.sources if s is not None)
            expected = select_probability(src.fitness, live_max)
            p = event.get("p")
            _require(isinstance(p, float) and math.isclose(p, expected, rel_tol=1e-9, abs_tol=1e-12),
                     line, f"onlooker probability {p!r} != expected {expected}")
        self._check_evaluations(event, line)
        self.pending[j] = {
            "phase": phase,
            "cycle": event.get("cycle"),
            "structure": structure,
            "fitness": None if fitness is None else float(fitness),
        }
        if fitness is not None:
            self._observe(structure, float(fitness))

    def _pop_pending(self, event: dict, line: int, j: int) -> dict:
        _require(j in self.pending, line,
                 f"{event.get('event')} for source {j} without a pending candidate")
        pend = self.pending.pop(j)
        _require(pend["phase"] == event.get("phase"), line,
                 "resolution phase does not match its candidate")
        _require(pend["cycle"] == event.get("cycle"), line,
                 "resolution cycle does not match its candidate")
        return pend

    def _on_replace(self, event: dict, line: int) -> None:
        phase = event.get("phase")
        _require(phase in ("employed", "onlooker"), line,
                 f"invalid replace phase {phase!r}")
        self._enter_cycle_phase(event.get("cycle"), _PHASE_RANK[phase], line)
        j = self._source_index(event, line)
        pend = self._pop_pending(event, line, j)
        src = self.sources[j]
        assert src is not None
        _require(pend["fitness"] is not None, line,
                 "replace after a failed evaluation")
        _require(pend["fitness"] > src.fitness, line,
                 f"replacement does not strictly improve "
                 f"({pend['fitness']} <= {src.fitness})")
        _require(event.get("fitness") == pend["fitness"], line,
                 "replace fitness does not match its candidate")
        src.structure = pend["structure"]
        src.fitness = pend["fitness"]
        src.trials = 0

    def _on_reject(self, event: dict, line: int) -> None:
        phase = event.get("phase")
        _require(phase in ("employed", "onlooker"), line,
                 f"invalid reject phase {phase!r}")
        self._enter_cycle_phase(event.get("cycle"), _PHASE_RANK[phase], line)
        j = self._source_index(event, line)
        pend = self._pop_pending(event, line, j)
        src = self.sources[j]
        assert src is not None
        if pend["fitness"] is not None:
            _require(pend["fitness"] <= src.fitness, line,
                     f"rejected candidate fitness {pend['fitness']} beats the "
                     f"source fitness {src.fitness}")
        _require(event.get("trials") == src.trials + 1, line,
                 f"reject trials {event.get('trials')!r} != {src.trials + 1}")
        src.trials += 1

    def _on_scout(self, event: dict, line: int) -> None:
        self._enter_cycle_phase(event.get("cycle"), _PHASE_RANK["scout"], line)
        j = self._source_index(event, line)
        src = self.sources[j]
        assert src is not None
        _require(src.trials > self.max_trials, line,
                 f"scout for source {j} with only {src.trials} trials "
                 f"(max_trials {self.max_trials})")
        self.scouted.add(j)
        structure = self._structure(event, line)
        fitness = event.get("fitness")
        self._check_evaluations(event, line)
        if fitness is None:
            _require(isinstance(event.get("error"), str), line,
                     "failed scout must carry an error message")
            _require(event.get("trials") == src.trials + 1, line,
                     "failed scout must increment trials")
            src.trials += 1
            return
        _require(_is_fitness(fitness), line, "scout fitness out of [0, 1]")
        _require(event.get("trials") == 0, line, "scout must reset trials to 0")
        src.structure = structure
        src.fitness = float(fitness)
        src.trials = 0
        self._observe(structure, float(fitness))

    def _on_best_update(self, event: dict, line: int) -> None:
        _require(self.need_best, line, "best-update without a new maximum")
        fitness = event.get("fitness")
        _require(_is_fitness(fitness), line, "best-update fitness out of [0, 1]")
        _require(fitness == self.running_max, line,
                 f"best-update fitness {fitness!r} != running maximum "
                 f"{self.running_max!r}")
        _require(self.reported_best is None or fitness > self.reported_best, line,
                 "best fitness did not strictly increase")
        structure = self._structure(event, line)
        _require(list(structure) == self.running_argmax, line,
                 "best-update structure is not the one that achieved the maximum")
        self._check_evaluations(event, line)
        self.reported_best = float(fitness)
        self.best_structure = list(structure)
        self.need_best = False

    # -- finish ------------------------------------------------------------

    def finish(self, line: int) -> ReplaySummary:
        _require(all(s is not None for s in self.sources), line,
                 "history ended before the population was initialised")
        _require(not self.need_best, line,
                 "history ended with an unrecorded best fitness")
        self._check_cycle_closed(line)
        _require(self.cycle == self.cycles, line,
                 f"history ends at cycle {self.cycle} of {self.cycles}")
        _require(self.reported_best is not None, line, "history records no best")
        assert self.reported_best is not None
        return ReplaySummary(
            arch=self.arch,
            population=self.population,
            cycles=self.cycles,
            evaluations=self.evaluations,
            best_fitness=self.reported_best,
            best_structure=self.best_structure,
            counts=dict(self.counts),
        )


def validate_history(lines: Iterable[str]) -> ReplaySummary:
    """Validate a stored history, returning its summary.

    Args:
        lines: the history file's lines (blank lines are ignored).

    Raises:
        ReplayViolation: the first rule violation found, with its line number.
    """
    validator: Optional[_Validator] = None
    line_no = 0
    for line_no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            event = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReplayViolation(line_no, f"not valid JSON: {exc}") from exc
        if not isinstance(event, dict):
            raise ReplayViolation(line_no, "event is not a JSON object")
        if validator is None:
            validator = _Validator(event, line_no)
        else:
            validator.handle(event, line_no)
    if validator is None:
        raise ReplayViolation(max(line_no, 1), "empty history")
    return validator.finish(line_no + 1)
