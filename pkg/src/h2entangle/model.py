"""Molecular geometry and the soft-core interaction potentials."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .grid import Grid1D


@dataclass(frozen=True)
class SofteningParams:
    """Softening constants (length squared, a.u.) of the three soft-core potentials."""

    a_en: float = 1.0
    a_ee: float = 1.0
    a_nn: float = 0.5

    def __post_init__(self):
        if min(self.a_en, self.a_ee, self.a_nn) <= 0:
            raise ValueError("softening parameters must be strictly positive")


@dataclass(frozen=True)
class NuclearConfig:
    """Two fixed nuclei on the line, X1 <= X2."""

    X1: float
    X2: float

    def __post_init__(self):
        if self.X1 > self.X2:
            raise ValueError("nuclei must be ordered X1 <= X2")

    @classmethod
    def from_distance(cls, d: float) -> "NuclearConfig":
        """Molecule centred at the origin with internuclear distance ``d``."""
        if d < 0:
            raise ValueError("internuclear distance must be non-negative")
        return cls(-0.5 * d, 0.5 * d)

    @property
    def distance(self) -> float:
        return self.X2 - self.X1

    @property
    def positions(self) -> tuple[float, float]:
        return (self.X1, self.X2)


DEFAULT_SOFTENING = SofteningParams()


def v_en(x, X, p: SofteningParams = DEFAULT_SOFTENING):
    """Electron-nucleus attraction -1/sqrt(a_en + (x-X)^2)."""
    x = np.asarray(x, dtype=float)
    return -1.0 / np.sqrt(p.a_en + (x - X) ** 2)


def v_ee(x1, x2, p: SofteningParams = DEFAULT_SOFTENING):
    """Electron-electron repulsion 1/sqrt(a_ee + (x1-x2)^2)."""
    x1 = np.asarray(x1, dtype=float)
    return 1.0 / np.sqrt(p.a_ee + (x1 - np.asarray(x2, dtype=float)) ** 2)


def v_nn(d, p: SofteningParams = DEFAULT_SOFTENING):
    """Nucleus-nucleus repulsion 1/sqrt(a_nn + d^2)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("internuclear distance must be non-negative")
    out = 1.0 / np.sqrt(p.a_nn + d**2)
    return float(out) if out.ndim == 0 else out


def _positions(nuclei) -> tuple[float, ...]:
    if isinstance(nuclei, NuclearConfig):
        return nuclei.positions
    if isinstance(nuclei, Sequence) or isinstance(nuclei, np.ndarray):
        return tuple(float(X) for X in nuclei)
    raise TypeError(f"cannot interpret {nuclei!r} as nuclear positions")


def one_body_potential(x, nuclei, p: SofteningParams = DEFAULT_SOFTENING) -> np.ndarray:
    """Attraction of one electron at ``x`` to every nucleus."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for X in _positions(nuclei):
        out = out + v_en(x, X, p)
    return out


def total_potential_grid(
    grid: Grid1D,
    nuclei,
    p: SofteningParams = DEFAULT_SOFTENING,
    ee_scale: float = 1.0,
) -> np.ndarray:
    """Two-electron potential V[i, j] at (x1, x2) = (x[i], x[j]).

    ``nuclei`` is a NuclearConfig or any sequence of nuclear positions.
    The constant nucleus-nucleus repulsion is not included. ``ee_scale``
    multiplies the electron-electron term (0 switches it off).
    """
    x = grid.x
    ven = one_body_potential(x, nuclei, p)
    V = ven[:, None] + ven[None, :]
    if ee_scale:
        V = V + ee_scale * v_ee(x[:, None], x[None, :], p)
    return V
