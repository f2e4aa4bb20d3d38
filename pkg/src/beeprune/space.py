"""Shrunk per-layer channel-count search spaces.

For a slot with base channel count ``c`` and a shrinkage fraction ``alpha``
(a multiple of 0.1 in (0, 1]), the candidate counts are

    { round(0.1*c), round(0.2*c), ..., round(alpha*c) }

with round-half-up integer rounding, a floor of one channel, and duplicates
removed. The structure space is the cartesian product of the per-slot
candidate lists; its size is the product of their lengths (``(10*alpha)**L``
when the base counts are large enough that no candidates collide).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arch import ArchitectureSpec

Structure = tuple[int, ...]


class InvalidAlphaError(ValueError):
    """alpha is not a multiple of 0.1 in (0, 1]."""


@dataclass(frozen=True)
class SearchSpace:
    """Per-slot candidate channel counts, each tuple sorted ascending."""

    candidates: tuple[tuple[int, ...], ...]
    alpha: float

    @property
    def dimension(self) -> int:
        return len(self.candidates)


def _alpha_tenths(alpha: float) -> int:
    if not math.isfinite(alpha):
        raise InvalidAlphaError(
            f"alpha must be a multiple of 0.1 in (0, 1], got {alpha!r}"
        )
    tenths = round(alpha * 10)
    if not math.isclose(alpha * 10, tenths, abs_tol=1e-9) or not 1 <= tenths <= 10:
        raise InvalidAlphaError(
            f"alpha must be a multiple of 0.1 in (0, 1], got {alpha!r}"
        )
    return tenths


def candidate_counts(base: int, alpha: float) -> tuple[int, ...]:
    """Candidate channel counts for one slot with ``base`` channels.

    Exact integer arithmetic: ``round_half_up(k*base/10)`` for k in
    1..10*alpha, floored at 1, deduplicated, ascending.
    """
    if base < 1:
        raise ValueError(f"base channel count must be positive, got {base}")
    tenths = _alpha_tenths(alpha)
    counts = {max(1, (2 * k * base + 10) // 20) for k in range(1, tenths + 1)}
    return tuple(sorted(counts))


def build_space(spec: ArchitectureSpec, alpha: float) -> SearchSpace:
    """Build the shrunk search space for an architecture's slots."""
    if not spec.slots:
        raise ValueError(
            f"architecture '{spec.name}' has no prunable layers to search over"
        )
    cands = tuple(candidate_counts(slot.base_channels, alpha) for slot in spec.slots)
    return SearchSpace(candidates=cands, alpha=alpha)


def space_size(space: SearchSpace) -> int:
    """Number of structures in the space (exact integer)."""
    return math.prod(len(c) for c in space.candidates)


def snap(value: float, slot: int, space: SearchSpace) -> int:
    """Snap an arbitrary value to the nearest candidate of one slot.

    Ties between two equidistant candidates resolve toward the smaller
    (cheaper) one; values outside the candidate range clamp to the extremes.
    """
    if math.isnan(value):
        raise ValueError("cannot snap NaN to a candidate channel count")
    cands = space.candidates[slot]
    i = bisect.bisect_left(cands, value)
    if i == 0:
        return cands[0]
    if i == len(cands):
        return cands[-1]
    lo, hi = cands[i - 1], cands[i]
    return hi if (hi - value) < (value - lo) else lo


def validate_structure(space: SearchSpace, structure: Sequence[int]) -> Structure:
    """Check slot-wise membership; returns the structure as a tuple of ints."""
    result = tuple(int(v) for v in structure)
    if len(result) != space.dimension:
        raise ValueError(
            f"structure has {len(result)} entries, space has {space.dimension} slots"
        )
    for i, (value, cands) in enumerate(zip(result, space.candidates)):
        if value not in cands:
            raise ValueError(
                f"slot {i}: {value} is not a candidate (allowed: {list(cands)})"
            )
    return result


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> Structure:
    """Draw a structure uniformly over the space (slot draws independent)."""
    return tuple(
        cands[int(rng.integers(0, len(cands)))] for cands in space.candidates
    )


def neighbor(
    source: Sequence[int],
    partner: Sequence[int],
    space: SearchSpace,
    rng: np.random.Generator,
) -> Structure:
    """Generate a neighbouring structure from a source and a partner.

    Each slot moves from the source value along its difference with the
    partner, scaled by an independent uniform draw in [-1, 1], then snaps
    back onto the slot's candidate list. A slot where source and partner
    agree never moves; the result is always a member of the space.
    """
    out = []
    for i, (sv, pv) in enumerate(zip(source, partner)):
        r = float(rng.uniform(-1.0, 1.0))
        out.append(snap(sv + r * (sv - pv), i, space))
    return tuple(out)
