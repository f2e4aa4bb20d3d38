"""Fitness evaluation backends.

A fitness evaluator maps a pruned structure to a score in [0, 1]. The search
treats evaluators as black boxes behind a single method::

    result = evaluator.evaluate(EvaluationRequest(structure, seed, epochs))

`evaluate` either returns an :class:`EvaluationResult` or raises
:class:`EvaluationError`; the search layer decides whether a failure is fatal
(during population init) or just costs the candidate (everywhere else).

Backends:

* :mod:`beeprune.fitness.synthetic` -- closed-form score, for fast and exact
  search tests;
* :mod:`beeprune.fitness.toy` -- a small numpy MLP trained on a synthetic
  blob dataset, with weight inheritance from a trained full model;
* :mod:`beeprune.fitness.external` -- a subprocess speaking the line-JSON
  wire protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, runtime_checkable


class EvaluationError(Exception):
    """An evaluation failed; the structure gets no fitness value."""


@dataclass(frozen=True)
class EvaluationRequest:
    """One fitness query.

    Attributes:
        structure: per-slot channel counts.
        seed: evaluation seed; equal (structure, seed, epochs) requests must
            produce equal results on every backend.
        epochs: training budget for backends that train.
    """

    structure: tuple[int, ...]
    seed: int
    epochs: int


@dataclass(frozen=True)
class EvaluationResult:
    fitness: float
    metrics: Optional[Mapping[str, float]] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.fitness <= 1.0:
            raise ValueError(f"fitness must lie in [0, 1], got {self.fitness!r}")


@runtime_checkable
class Evaluator(Protocol):
    def evaluate(self, request: EvaluationRequest) -> EvaluationResult: ...
