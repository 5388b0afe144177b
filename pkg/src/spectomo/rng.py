"""Named random substreams derived from a single root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the substream ``name`` under ``seed``.

    Streams with different names are statistically independent, and a given
    ``(seed, name)`` pair always yields the same sequence regardless of which
    other streams were drawn first.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
