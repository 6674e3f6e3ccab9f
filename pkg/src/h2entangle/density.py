"""Discretised one-body reduced density matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid1D

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
PSD_TOL = 1e-8


class DensityMatrixError(ValueError):
    pass


@dataclass
class DensityMatrix:
    """rho(x, x') on grid nodes; the trace is sum_x rho(x, x) * dx."""

    grid: Grid1D
    entries: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        if self.entries.shape != (n, n):
            raise DensityMatrixError(f"expected a {n}x{n} matrix, got {self.entries.shape}")

    @property
    def dx(self) -> float:
        return self.grid.dx

    def operator(self) -> np.ndarray:
        """Matrix scaled by dx, whose eigenvalues are the occupation numbers."""
        return self.entries * self.dx

    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)) * self.dx)

    def purity(self) -> float:
        """Tr[rho^2] from the element sum (valid for Hermitian rho)."""
        return float(np.sum(np.abs(self.entries) ** 2) * self.dx**2)

    def eigenvalues(self) -> np.ndarray:
        op = self.operator()
        return np.linalg.eigvalsh(0.5 * (op + op.conj().T))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def check(
        self,
        hermitian_tol: float = HERMITIAN_TOL,
        trace_tol: float = TRACE_TOL,
        psd_tol: float = PSD_TOL,
    ) -> "DensityMatrix":
        """Raise DensityMatrixError unless rho is Hermitian, unit-trace and PSD."""
        herm = self.hermiticity_error()
        if herm > hermitian_tol:
            raise DensityMatrixError(f"not Hermitian: max deviation {herm:.3e}")
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise DensityMatrixError(f"trace {tr!r} differs from 1")
        lam = self.eigenvalues()[0]
        if lam < -psd_tol:
            raise DensityMatrixError(f"not positive semidefinite: eigenvalue {lam:.3e}")
        return self

    def frobenius_distance(self, other: "DensityMatrix") -> float:
        """Hilbert-Schmidt distance between the dx-scaled operators."""
        if other.grid != self.grid:
            raise DensityMatrixError("density matrices live on different grids")
        return float(np.linalg.norm(self.entries - other.entries) * self.dx)


def rdm_from_waves(grid: Grid1D, waves: np.ndarray) -> DensityMatrix:
    """rho(x, x') = (1/M) sum_k conj(w_k(x)) w_k(x') for waves stacked as rows."""
    waves = np.atleast_2d(waves)
    if waves.shape[0] == 0:
        raise DensityMatrixError("cannot build a density matrix from zero waves")
    entries = waves.conj().T @ waves / waves.shape[0]
    return DensityMatrix(grid, entries)
