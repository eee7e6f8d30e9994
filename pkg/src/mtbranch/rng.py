"""Reproducible random substreams keyed by (master seed, stream tag, replicate)."""

import numpy as np

DEFAULT_SEED = 20050617

# stream tags keep the independent sides of a check on disjoint substreams
FORWARD = 1
TRUNK = 2
CHAIN = 3
UNIFORM_TRUNK = 4
BIASED_TREE = 5


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream ``key`` of master ``seed``.

    The same ``(seed, key)`` always yields the same stream, whatever process
    or worker draws from it.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


class Draws:
    """Buffered scalar draws from a generator, for event-by-event loops."""

    def __init__(self, rng: np.random.Generator, block: int = 256):
        self.rng = rng
        self.block = block
        self._u = []
        self._e = []

    def uniform(self) -> float:
        if not self._u:
            self._u = self.rng.random(self.block).tolist()[::-1]
        return self._u.pop()

    def exponential(self) -> float:
        if not self._e:
            self._e = self.rng.standard_exponential(self.block).tolist()[::-1]
        return self._e.pop()
