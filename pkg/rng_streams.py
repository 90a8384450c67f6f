"""
rng_streams.py - Reproducible random substreams for the simulators

Every simulated path (or oracle run) owns a counter-based Philox stream
keyed by (seed, *keys), e.g. (seed, path_index) or
(seed, horizon_index, path_index). A path never shares a stream with
another path, so results do not depend on how paths are spread over
worker processes.
"""

from typing import Tuple

import numpy as np

BLOCK_SIZE = 4096


def make_generator(seed: int, *keys: int) -> np.random.Generator:
    root = np.random.SeedSequence([int(seed)] + [int(k) for k in keys])
    return np.random.Generator(np.random.Philox(root))


class UniformStream:
    """
    Uniform(0, 1) draws served from blocks of a keyed Philox generator.

    Draw order is fixed, so the i-th call always returns the i-th uniform of
    the substream regardless of block size.
    """

    def __init__(self, seed: int, *keys: int, block_size: int = BLOCK_SIZE):
        self.key: Tuple[int, ...] = (int(seed),) + tuple(int(k) for k in keys)
        self._gen = make_generator(seed, *keys)
        self._block_size = block_size
        self._block = np.empty(0)
        self._pos = 0
        self.drawn = 0

    def uniform(self) -> float:
        if self._pos >= len(self._block):
            self._block = self._gen.random(self._block_size)
            self._pos = 0
        value = self._block[self._pos]
        self._pos += 1
        self.drawn += 1
        return float(value)

    def exponential(self, rate: float) -> float:
        # 1 - U lies in (0, 1], so the log is finite
        return -np.log1p(-self.uniform()) / rate
