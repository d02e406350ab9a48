"""Counter-keyed random streams.

Every random draw in the simulator comes from a Philox generator whose key is
derived from ``(master_seed, domain, *counters)``. Streams therefore depend only
on *what* they are for (which round, which cluster, which client), never on the
order in which they are requested, which keeps runs schedule-independent.
"""

from __future__ import annotations

import enum

import numpy as np


class Domain(enum.IntEnum):
    TOPOLOGY = 1
    NOISE = 2
    SAMPLING = 3
    SUITE = 4
    INIT = 5
    ENSEMBLE = 6
    MONTE_CARLO = 7


def stream(seed: int, domain: Domain | int, *counters: int) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, domain, *counters)``."""
    key = (int(domain),) + tuple(int(c) for c in counters)
    if any(c < 0 for c in key):
        raise ValueError(f"stream counters must be non-negative, got {key}")
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
