"""Uniform periodic grid shared by the spectral solvers."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid with ``n`` nodes ``x_min + j*dx`` on the periodic box [x_min, x_max)."""

    n: int = 256
    x_min: float = -12.0
    x_max: float = 12.0

    def __post_init__(self):
        if self.n < 64 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 64, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("grid bounds must satisfy x_min < x_max")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT ordering."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @cached_property
    def k_half(self) -> np.ndarray:
        """Angular wavenumbers for real-input transforms."""
        return 2 * np.pi * np.fft.rfftfreq(self.n, d=self.dx)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.x_min) & (x < self.x_max)

    def nearest_index(self, x) -> np.ndarray:
        idx = np.rint((np.asarray(x) - self.x_min) / self.dx).astype(np.int64)
        return np.clip(idx, 0, self.n - 1)

    def bracket(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Lower node index and fractional offset in [0, 1) of each coordinate.

        The upper neighbour of the last node wraps to node 0 (periodic box).
        """
        u = (np.asarray(x, dtype=float) - self.x_min) / self.dx
        j = np.floor(u).astype(np.int64)
        t = u - j
        j = np.clip(j, 0, self.n - 1)
        return j, np.clip(t, 0.0, 1.0)

    def wrap(self, x) -> np.ndarray:
        return self.x_min + np.mod(np.asarray(x) - self.x_min, self.length)
