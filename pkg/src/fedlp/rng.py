"""Named RNG streams split from one master seed.

Every random draw in a run flows from a single master seed through
counter-based stream splitting (numpy SeedSequence spawn keys). A stream is
addressed by (purpose, *indices), e.g. ("mask", round, client), so any
component can be re-executed in isolation and results do not depend on the
order in which streams are first used.
"""

from __future__ import annotations

import numpy as np

_PURPOSES = {
    "model_init": 0,
    "head_init": 1,
    "select": 2,
    "shuffle": 3,
    "mask": 4,
    "hetero_assign": 5,
    "partition": 6,
    "test_split": 7,
    "prop1": 8,
    "data": 9,
}


def substream(master_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return the generator for the (purpose, *indices) stream of a master seed."""
    try:
        code = _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    key = (code,) + tuple(int(i) for i in indices)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(master_seed: int, purpose: str, *indices: int) -> int:
    """Collapse a named stream into a plain integer seed for APIs that take one."""
    return int(substream(master_seed, purpose, *indices).integers(0, 2**63))
