"""Seeded, splittable random streams.

All randomness in the package flows through numpy's PCG64 generator seeded
via ``SeedSequence``. Streams are derived from an integer seed plus an
optional tuple of stream ids, so independent substreams (one per sampled
record, per training epoch, ...) are reproducible across platforms and
independent of scheduling order.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, *stream)``.

    Distinct ``stream`` tuples give statistically independent streams.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))
