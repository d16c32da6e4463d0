"""Named, reproducible random streams.

Every stochastic component pulls its own generator from a RngHub keyed by a
domain label, so adding a new consumer never shifts the draws of an existing
one. The same (root seed, domain) pair always yields the same stream.
"""

from __future__ import annotations

import zlib

import numpy as np


class RngHub:
    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def rng(self, domain: str) -> np.random.Generator:
        """Return the generator for ``domain``, creating it on first use."""
        gen = self._streams.get(domain)
        if gen is None:
            key = zlib.crc32(domain.encode("utf-8"))
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
            gen = np.random.Generator(np.random.PCG64(seq))
            self._streams[domain] = gen
        return gen
