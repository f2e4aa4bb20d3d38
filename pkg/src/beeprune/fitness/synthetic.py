"""Closed-form fitness for exercising the search without any training.

The score of a structure is a Gaussian bump centred on a target structure,
computed over per-slot values normalised by the slot's largest candidate:

    fitness = exp(-sum_i (x_i - t_i)^2 / sharpness)

It is deterministic, ignores the request's seed and epochs, peaks at exactly
1.0 on the target, and decays smoothly with distance, which makes exhaustive
oracles cheap to compute in tests.
"""

from __future__ import annotations

import math
from typing import Sequence

from . import EvaluationRequest, EvaluationResult
from ..space import SearchSpace, validate_structure


class SyntheticEvaluator:
    """Distance-to-target fitness over a search space.

    Args:
        space: the search space structures are validated against.
        target: the structure scoring 1.0; must be a member of the space.
        sharpness: positive decay scale; smaller values make the bump
            narrower.
    """

    def __init__(
        self, space: SearchSpace, target: Sequence[int], sharpness: float = 0.5
    ) -> None:
        if sharpness <= 0:
            raise ValueError(f"sharpness must be positive, got {sharpness}")
        self.space = space
        self.target = validate_structure(space, target)
        self.sharpness = float(sharpness)
        self._scales = tuple(float(c[-1]) for c in space.candidates)

    def score(self, structure: Sequence[int]) -> float:
        structure = validate_structure(self.space, structure)
        d2 = 0.0
        for value, tgt, scale in zip(structure, self.target, self._scales):
            diff = (value - tgt) / scale
            d2 += diff * diff
        return math.exp(-d2 / self.sharpness)

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        return EvaluationResult(fitness=self.score(request.structure))
