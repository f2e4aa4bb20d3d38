"""Deterministic seed derivation.

Every random decision in the package draws from a numpy Generator whose seed
is derived from the run's root seed plus a label path (phase name, cycle
index, source index, ...). Two runs with the same root seed therefore consume
identical random streams regardless of parallelism or caching, and unrelated
phases never share a stream.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1


def derive_seed(root: int, *labels: object) -> int:
    """Derive a stable 64-bit child seed from ``root`` and a label path.

    Args:
        root: integer root seed for the run.
        labels: any hashable-as-text path components, e.g.
            ``("eval", 3, "employed", 0)``.

    Returns:
        An integer in ``[0, 2**64)``. Distinct label paths give independent
        seeds; the mapping is stable across processes and platforms.
    """
    text = str(int(root)) + "/" + "/".join(str(part) for part in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK64
