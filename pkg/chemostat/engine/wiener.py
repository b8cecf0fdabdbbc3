"""
Counter-addressable Wiener increments.

Every (seed, path) pair owns an independent Philox stream whose key is
``(path << 64) | seed``. Steps are grouped in chunks; chunk ``k`` of a path is
drawn from the stream positioned at counter word ``k`` so any chunk can be
regenerated without replaying earlier ones, and paths never depend on the order
in which they are evaluated.
"""
import logging
from typing import Iterator, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1
CHUNK_STEPS = 1024


class WienerSource:
    """Gaussian increments N(0, dt) addressed by (seed, path, step, channel)"""

    def __init__(self, seed: int, n_channels: int, dt: float):
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.seed = int(seed) & SEED_MASK
        self.n_channels = n_channels
        self.dt = dt
        self._scale = np.sqrt(dt)

    def _generator(self, path: int, chunk: int) -> np.random.Generator:
        bit_generator = np.random.Philox(key=(int(path) << 64) | self.seed, counter=[0, 0, chunk, 0])
        return np.random.Generator(bit_generator)

    def chunk(self, paths: Sequence[int], chunk: int) -> np.ndarray:
        """Standard-normal draws for one chunk, shape (CHUNK_STEPS, n_paths, n_channels), unscaled."""
        out = np.empty((CHUNK_STEPS, len(paths), self.n_channels))
        for k, path in enumerate(paths):
            out[:, k, :] = self._generator(path, chunk).standard_normal((CHUNK_STEPS, self.n_channels))
        return out

    def iter_blocks(self, paths: Sequence[int], n_steps: int, start: int = 0) -> Iterator[Tuple[int, np.ndarray]]:
        """
        Yield (first step index, increments) blocks covering steps [start, start + n_steps)

        Increments are scaled by sqrt(dt) and shaped (steps, n_paths, n_channels).
        """
        step = start
        stop = start + n_steps
        while step < stop:
            chunk_index, offset = divmod(step, CHUNK_STEPS)
            take = min(CHUNK_STEPS - offset, stop - step)
            block = self.chunk(paths, chunk_index)[offset:offset + take] * self._scale
            yield step, block
            step += take

    def increments(self, paths: Sequence[int], n_steps: int, start: int = 0) -> np.ndarray:
        """All increments of steps [start, start + n_steps) in one array."""
        blocks = [block for _, block in self.iter_blocks(paths, n_steps, start)]
        if not blocks:
            return np.empty((0, len(paths), self.n_channels))
        return np.concatenate(blocks, axis=0)


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` fine increments into coarse ones along axis 0."""
    n_steps = increments.shape[0]
    if n_steps % factor:
        raise ValueError(f"{n_steps} fine steps are not divisible by the coarsening factor {factor}")
    return increments.reshape((n_steps // factor, factor) + increments.shape[1:]).sum(axis=1)
