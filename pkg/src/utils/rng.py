"""
Seeded random streams.

All randomness goes through numpy's Philox counter-based generator keyed by
(seed, stream). Philox output is fixed by its algorithm, not by numpy's
default bit generator, so sequences are stable across platforms and numpy
releases that keep the Generator API.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """
    Independent generator for `(seed, stream)`. Distinct streams never share
    a key, so e.g. ensemble members or instances can draw in any order.
    """

    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
