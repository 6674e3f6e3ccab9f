"""Monte Carlo walkers drawn from the exact two-body density and conditional waves."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .density import DensityMatrix, DensityMatrixError
from .exact import Wavefunction2D
from .grid import Grid1D

log = logging.getLogger(__name__)

# Walkers are drawn in fixed-size blocks, each from its own child seed, so the
# stream assigned to a walker depends only on (seed, walker index).
SAMPLING_BLOCK = 16384
DEAD_SLICE_NORM = 1e-12


@dataclass
class ConfigWalkerSet:
    """M configuration-space walkers (x1^k, x2^k)."""

    x1: np.ndarray
    x2: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.x1)

    @property
    def pairs(self) -> np.ndarray:
        return np.column_stack([self.x1, self.x2])

    def positions(self, electron: int) -> np.ndarray:
        return self.x1 if electron == 0 else self.x2


def block_generators(seed: int | None, count: int, block: int = SAMPLING_BLOCK):
    """Yield (slice, Generator) pairs covering ``count`` items in fixed blocks."""
    nblocks = max(1, -(-count // block))
    children = np.random.SeedSequence(seed).spawn(nblocks)
    for b, ss in enumerate(children):
        yield slice(b * block, min(count, (b + 1) * block)), np.random.default_rng(ss)


def sample_configurations(psi: Wavefunction2D, M: int, seed: int | None = 0) -> ConfigWalkerSet:
    """Independent draws from |Psi|^2 by inversion over grid cells, jittered within the cell.

    Cells are centred on the grid nodes; a jitter leaving the periodic box is
    wrapped back into it.
    """
    if M < 1:
        raise ValueError("need at least one walker")
    grid = psi.grid
    cdf = np.cumsum(psi.density().ravel())
    cdf /= cdf[-1]
    x1 = np.empty(M)
    x2 = np.empty(M)
    for sl, rng in block_generators(seed, M):
        # three consecutive draws per walker: cell, jitter along x1, jitter along x2
        u = rng.random((sl.stop - sl.start, 3))
        cell = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), cdf.size - 1)
        i1, i2 = np.unravel_index(cell, (grid.n, grid.n))
        x1[sl] = grid.x[i1] + (u[:, 1] - 0.5) * grid.dx
        x2[sl] = grid.x[i2] + (u[:, 2] - 0.5) * grid.dx
    return ConfigWalkerSet(grid.wrap(x1), grid.wrap(x2), seed)


@dataclass
class ConditionalWaveSet:
    """Normalised slices of Psi through each walker's partner coordinate.

    Wave k of electron i is Psi evaluated with the other electron held at the
    walker's partner coordinate, linearly interpolated between the two
    neighbouring grid columns. It is stored as two column indices and two
    coefficients into a slice matrix, so M can be large.
    """

    grid: Grid1D
    slices: tuple[np.ndarray, np.ndarray]
    lower: tuple[np.ndarray, np.ndarray]
    coeffs: tuple[np.ndarray, np.ndarray]
    alive: tuple[np.ndarray, np.ndarray]
    dead_count: int = 0

    def __len__(self) -> int:
        return len(self.lower[0])

    def count(self, electron: int) -> int:
        return int(self.alive[electron].sum())

    def _select(self, electron, idx):
        alive = self.alive[electron]
        if idx is None:
            return np.flatnonzero(alive)
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return idx[alive[idx]]

    def waves(self, electron: int, idx=None) -> np.ndarray:
        """Materialise the selected (live) waves as rows."""
        sel = self._select(electron, idx)
        B = self.slices[electron]
        j = self.lower[electron][sel]
        c = self.coeffs[electron][sel]
        jp = (j + 1) % self.grid.n
        return c[:, :1] * B[:, j].T + c[:, 1:] * B[:, jp].T

    def _coefficients(self, electron, sel):
        n = self.grid.n
        j = self.lower[electron][sel]
        cols = np.concatenate([j, (j + 1) % n])
        used, inv = np.unique(cols, return_inverse=True)
        C = np.zeros((len(sel), len(used)), dtype=self.coeffs[electron].dtype)
        rows = np.arange(len(sel))
        np.add.at(C, (rows, inv[: len(sel)]), self.coeffs[electron][sel, 0])
        np.add.at(C, (rows, inv[len(sel) :]), self.coeffs[electron][sel, 1])
        return used, C

    def rdm(self, electron: int, idx=None) -> DensityMatrix:
        """(1/M) sum_k conj(psi_k(x)) psi_k(x') over the selected live waves."""
        sel = self._select(electron, idx)
        if len(sel) == 0:
            raise DensityMatrixError("no surviving conditional waves")
        used, C = self._coefficients(electron, sel)
        W = C.conj().T @ C / len(sel)
        Bu = self.slices[electron][:, used]
        entries = Bu.conj() @ W @ Bu.T
        return DensityMatrix(self.grid, entries)

    def overlap_influence(self, electron: int, idx, rho: DensityMatrix) -> np.ndarray:
        """h_k = (1/M) sum_l |<psi_k|psi_l>|^2, evaluated as psi_k rho psi_k^* dx^2."""
        sel = self._select(electron, idx)
        used, C = self._coefficients(electron, sel)
        Bu = self.slices[electron][:, used]
        Q = Bu.T @ rho.entries @ Bu.conj() * self.grid.dx**2
        return np.real(np.einsum("ka,ab,kb->k", C, Q, C.conj()))


def conditional_waves(psi: Wavefunction2D, walkers: ConfigWalkerSet) -> ConditionalWaveSet:
    """Conditional one-electron waves of every walker, for both electrons.

    A wave whose slice norm falls below 1e-12 is discarded and counted.
    """
    grid = psi.grid
    a = psi.amplitudes
    dx = grid.dx
    # electron 1 varies along rows of Psi with x2 fixed: slices are columns of Psi
    slices = (a, a.T.copy())
    partner = (walkers.x2, walkers.x1)
    lower, coeffs, alive = [], [], []
    dead = 0
    for B, xp in zip(slices, partner):
        j, t = grid.bracket(xp)
        jp = (j + 1) % grid.n
        G = B.conj().T @ B * dx
        gjj = np.real(G[j, j])
        gpp = np.real(G[jp, jp])
        gjp = np.real(G[j, jp])
        norm2 = (1 - t) ** 2 * gjj + 2 * t * (1 - t) * gjp + t**2 * gpp
        norm = np.sqrt(np.maximum(norm2, 0.0))
        ok = norm >= DEAD_SLICE_NORM
        safe = np.where(ok, norm, 1.0)
        c = np.column_stack([(1 - t) / safe, t / safe]).astype(B.dtype)
        lower.append(j)
        coeffs.append(c)
        alive.append(ok)
        dead += int((~ok).sum())
    if dead:
        log.warning("discarded %d conditional waves with vanishing slice norm", dead)
    return ConditionalWaveSet(grid, slices, tuple(lower), tuple(coeffs), tuple(alive), dead)


def conditional_rdm(waves: ConditionalWaveSet, electron: int = 0) -> DensityMatrix:
    """Conditional reduced density matrix of one electron from all its live waves."""
    return waves.rdm(electron)
