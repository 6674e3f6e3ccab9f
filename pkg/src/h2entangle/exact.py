"""Exact two-electron ground state by imaginary-time split-step Fourier propagation."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft

from .density import DensityMatrix
from .grid import Grid1D
from .model import (
    DEFAULT_SOFTENING,
    NuclearConfig,
    SofteningParams,
    _positions,
    total_potential_grid,
    v_nn,
)

log = logging.getLogger(__name__)

CHECK_INTERVAL = 10


class PropagationError(FloatingPointError):
    """Non-finite amplitudes after a step; the time step is too large for the grid."""


@dataclass
class Wavefunction2D:
    """Psi(x1, x2) with ``amplitudes[i, j]`` at (x[i], x[j]) on a shared grid."""

    grid: Grid1D
    amplitudes: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (n, n):
            raise ValueError(f"expected {n}x{n} amplitudes, got {self.amplitudes.shape}")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)) * self.grid.dx)

    def normalized(self) -> "Wavefunction2D":
        return Wavefunction2D(self.grid, self.amplitudes / self.norm())

    def density(self) -> np.ndarray:
        """|Psi|^2 (probability per unit area)."""
        return np.abs(self.amplitudes) ** 2

    def exchanged(self) -> "Wavefunction2D":
        return Wavefunction2D(self.grid, self.amplitudes.T.copy())

    def exchange_asymmetry(self) -> float:
        return float(np.max(np.abs(self.amplitudes - self.amplitudes.T)))

    def phase_aligned(self) -> np.ndarray:
        """Amplitudes times the global phase that makes them as real as possible."""
        a = self.amplitudes
        theta = 0.5 * np.angle(np.sum(a * a))
        return a * np.exp(-1j * theta)


@dataclass
class GroundStateResult:
    psi: Wavefunction2D
    energy: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def initial_guess(grid: Grid1D, nuclei: NuclearConfig, width: float = 1.0) -> Wavefunction2D:
    """Exchange-symmetrised product of unit-width Gaussians centred on the nuclei."""
    X1, X2 = nuclei.positions
    x = grid.x

    def g(c):
        return np.exp(-((x - c) ** 2) / (2 * width**2))

    amp = np.outer(g(X1), g(X2)) + np.outer(g(X2), g(X1))
    return Wavefunction2D(grid, amp).normalized()


class SplitStepPropagator:
    """Symmetric imaginary-time split-step operator on a 2D grid.

    Real input stays real (half-spectrum transforms); complex input uses full FFTs.
    """

    def __init__(self, grid: Grid1D, V: np.ndarray, dtau: float):
        if not dtau > 0:
            raise ValueError("dtau must be positive")
        if V.shape != (grid.n, grid.n):
            raise ValueError("potential is not defined on the wavefunction grid")
        self.grid = grid
        self.dtau = dtau
        k, kh = grid.k, grid.k_half
        self.T_full = 0.5 * (k[:, None] ** 2 + k[None, :] ** 2)
        self.T_half = 0.5 * (k[:, None] ** 2 + kh[None, :] ** 2)
        self.expV = np.exp(-V * dtau)
        self._cache: dict[tuple[bool, float], np.ndarray] = {}

    def _kinetic(self, real: bool, tau: float) -> np.ndarray:
        key = (real, tau)
        if key not in self._cache:
            T = self.T_half if real else self.T_full
            self._cache[key] = np.exp(-T * tau)
        return self._cache[key]

    def _transforms(self, real: bool):
        n = self.grid.n
        if real:
            return fft.rfft2, lambda a: fft.irfft2(a, s=(n, n))
        return fft.fft2, fft.ifft2

    def _normalize(self, a: np.ndarray) -> np.ndarray:
        norm = np.sqrt(np.sum(np.abs(a) ** 2)) * self.grid.dx
        if not np.isfinite(norm) or norm == 0:
            raise PropagationError(f"non-finite amplitudes after a step with dtau={self.dtau}")
        return a / norm

    def advance(self, a: np.ndarray, steps: int = 1) -> np.ndarray:
        """Apply ``steps`` symmetric steps with renormalisation after each.

        Consecutive kinetic half-steps are fused; renormalisation is a scalar
        and commutes with the propagator, so the result matches stepping one
        at a time.
        """
        real = not np.iscomplexobj(a)
        fwd, inv = self._transforms(real)
        half = self._kinetic(real, 0.5 * self.dtau)
        full = self._kinetic(real, self.dtau)
        spec = fwd(a) * half
        for s in range(steps):
            a = self._normalize(inv(spec) * self.expV)
            spec = fwd(a) * (half if s == steps - 1 else full)
        a = inv(spec)
        if not np.all(np.isfinite(a)):
            raise PropagationError(f"non-finite amplitudes after a step with dtau={self.dtau}")
        return self._normalize(a)


def imaginary_time_step(psi: Wavefunction2D, V: np.ndarray, dtau: float) -> Wavefunction2D:
    """One step exp(-T dtau/2) exp(-V dtau) exp(-T dtau/2), renormalised."""
    prop = SplitStepPropagator(psi.grid, V, dtau)
    return Wavefunction2D(psi.grid, prop.advance(psi.amplitudes, 1))


def kinetic_expectation(grid: Grid1D, amplitudes: np.ndarray) -> complex:
    """<Psi| -1/2 (d^2/dx1^2 + d^2/dx2^2) |Psi> with spectral derivatives."""
    k = grid.k
    T = 0.5 * (k[:, None] ** 2 + k[None, :] ** 2)
    Tpsi = fft.ifft2(T * fft.fft2(amplitudes))
    return complex(np.sum(np.conj(amplitudes) * Tpsi) * grid.dx**2)


def _electronic_energy(grid: Grid1D, amplitudes: np.ndarray, V: np.ndarray) -> float:
    kin = kinetic_expectation(grid, amplitudes)
    pot = np.sum(V * np.abs(amplitudes) ** 2) * grid.dx**2
    return float(kin.real + pot)


def nuclear_repulsion(nuclei, p: SofteningParams = DEFAULT_SOFTENING) -> float:
    pos = _positions(nuclei)
    return float(
        sum(v_nn(abs(pos[b] - pos[a]), p) for a in range(len(pos)) for b in range(a + 1, len(pos)))
    )


def energy_exact(
    psi: Wavefunction2D,
    nuclei,
    p: SofteningParams = DEFAULT_SOFTENING,
    ee_scale: float = 1.0,
) -> float:
    """Total energy <T> + <V_en + V_ee> + V_nn of a normalised two-electron state."""
    V = total_potential_grid(psi.grid, nuclei, p, ee_scale)
    return _electronic_energy(psi.grid, psi.amplitudes, V) + nuclear_repulsion(nuclei, p)


def relax_to_ground_state(
    psi0: Wavefunction2D,
    V: np.ndarray,
    dtau: float = 0.01,
    tol: float = 1e-8,
    max_iters: int = 20000,
    constant: float = 0.0,
) -> GroundStateResult:
    """Propagate in imaginary time until the energy drifts by less than ``tol``.

    The energy (without ``constant``, e.g. the nuclear repulsion) is checked
    every ten steps. Exhausting ``max_iters`` returns ``converged=False``.
    ``history`` holds the total energy at every check, including the start.
    """
    grid = psi0.grid
    prop = SplitStepPropagator(grid, V, dtau)
    a = psi0.amplitudes
    if not np.any(a.imag):
        a = a.real.copy()
    a = prop._normalize(a)
    e_prev = _electronic_energy(grid, a, V)
    history = [e_prev + constant]
    it = 0
    converged = False
    while it < max_iters:
        steps = min(CHECK_INTERVAL, max_iters - it)
        a = prop.advance(a, steps)
        it += steps
        e = _electronic_energy(grid, a, V)
        history.append(e + constant)
        if abs(e - e_prev) < tol and steps == CHECK_INTERVAL:
            converged = True
            break
        e_prev = e
    if not converged:
        log.warning("imaginary-time relaxation not converged after %d steps", it)
    return GroundStateResult(
        psi=Wavefunction2D(grid, a),
        energy=history[-1],
        iterations=it,
        converged=converged,
        history=history,
    )


def solve_ground_state(
    nuclei: NuclearConfig,
    grid: Grid1D | None = None,
    p: SofteningParams = DEFAULT_SOFTENING,
    dtau: float = 0.01,
    tol: float = 1e-8,
    max_iters: int = 20000,
    ee_scale: float = 1.0,
) -> GroundStateResult:
    """Ground state of the molecule from the default symmetric Gaussian guess."""
    grid = grid or Grid1D()
    V = total_potential_grid(grid, nuclei, p, ee_scale)
    return relax_to_ground_state(
        initial_guess(grid, nuclei), V, dtau, tol, max_iters, constant=nuclear_repulsion(nuclei, p)
    )


def exact_rdm(psi: Wavefunction2D, electron: int = 0) -> DensityMatrix:
    """rho(x, x') = sum_{x2} Psi(x, x2) conj(Psi(x', x2)) dx, tracing out the other electron."""
    a = psi.amplitudes if electron == 0 else psi.amplitudes.T
    return DensityMatrix(psi.grid, a @ a.conj().T * psi.grid.dx)


_SNAPSHOT_HEADER = struct.Struct("<q6d")


def save_snapshot(path, psi: Wavefunction2D, d: float, p: SofteningParams = DEFAULT_SOFTENING) -> Path:
    """Binary snapshot: header then n*n complex amplitudes, little endian, row-major in x1."""
    g = psi.grid
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(g.n, g.x_min, g.x_max, d, p.a_en, p.a_ee, p.a_nn))
        fh.write(np.ascontiguousarray(psi.amplitudes, dtype="<c16").tobytes())
    return path


def load_snapshot(path) -> tuple[Wavefunction2D, float, SofteningParams]:
    raw = Path(path).read_bytes()
    if len(raw) < _SNAPSHOT_HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    n, x_min, x_max, d, a_en, a_ee, a_nn = _SNAPSHOT_HEADER.unpack_from(raw)
    body = raw[_SNAPSHOT_HEADER.size :]
    if len(body) != n * n * 16:
        raise ValueError(f"{path}: expected {n * n * 16} bytes of amplitudes, found {len(body)}")
    amp = np.frombuffer(body, dtype="<c16").reshape(n, n)
    psi = Wavefunction2D(Grid1D(n, x_min, x_max), amp.astype(complex))
    return psi, d, SofteningParams(a_en, a_ee, a_nn)
