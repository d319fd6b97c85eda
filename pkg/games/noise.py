"""
Counter-based Gaussian noise for path blocks.

Each (seed, block) pair owns a Philox key; the step index is written into
the counter, so the increments of step k never depend on how many numbers
earlier steps drew. Blocks can therefore be simulated in any order and on
any number of threads with bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import ConfigurationError

STEP_SHIFT = 192


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    block: int
    n_paths: int
    width: int

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must lie in [0, 2^64), got {self.seed}")
        if self.block < 0 or self.n_paths < 1 or self.width < 1:
            raise ConfigurationError("noise stream needs block >= 0, n_paths >= 1, width >= 1")

    @property
    def key(self) -> int:
        return self.seed * 2**64 + self.block

    def normals(self, step: int) -> np.ndarray:
        """Standard normals of shape (n_paths, width) for one time step."""
        bit_generator = np.random.Philox(key=self.key, counter=step << STEP_SHIFT)
        return np.random.Generator(bit_generator).standard_normal((self.n_paths, self.width))

    def increments(self, step: int, dt: float) -> np.ndarray:
        """Brownian increments sqrt(dt) Z for one time step."""
        return np.sqrt(dt) * self.normals(step)


def block_sizes(n_paths: int, block_size: int) -> list[int]:
    """Split n_paths into full blocks followed by one remainder block."""
    if n_paths < 1 or block_size < 1:
        raise ConfigurationError("n_paths and block_size must be positive")
    full, rest = divmod(n_paths, block_size)
    return [block_size] * full + ([rest] if rest else [])
