"""Time-dependent quantum Monte Carlo ground state: guide waves coupled to walkers.

Each electron i carries M guide waves phi_i^k relaxed in imaginary time under
the nuclear attraction plus a kernel-weighted effective repulsion from the
other electrons' walkers. Walker k of electron i drifts along
grad(phi_i^k)/phi_i^k and diffuses, so it samples |phi_i^k|^2.
"""
from __future__ import annotations

import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft

from .density import DensityMatrix, rdm_from_waves
from .exact import PropagationError, nuclear_repulsion
from .grid import Grid1D
from .model import DEFAULT_SOFTENING, NuclearConfig, SofteningParams, one_body_potential, v_ee

log = logging.getLogger(__name__)

SIGMA_EVERY = 20
ENERGY_WINDOW = 50
PAIRWISE_MAX_WALKERS = 512
TINY_WAVE = 1e-12
BLOCK = 8192


# -- containers ---------------------------------------------------------------


@dataclass
class GuideWaveSet:
    """Guide waves ``waves[i, k]`` of walker k, electron i, on a shared grid."""

    grid: Grid1D
    waves: np.ndarray

    @property
    def n_electrons(self) -> int:
        return self.waves.shape[0]

    def __len__(self) -> int:
        return self.waves.shape[1]

    def count(self, electron: int) -> int:
        return len(self)

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.waves) ** 2, axis=-1) * self.grid.dx)

    def of(self, electron: int, idx=None) -> np.ndarray:
        w = self.waves[electron]
        return w if idx is None else w[idx]

    def rdm(self, electron: int, idx=None) -> DensityMatrix:
        return rdm_from_waves(self.grid, self.of(electron, idx))

    def overlap_influence(self, electron: int, idx, rho: DensityMatrix) -> np.ndarray:
        """h_k = (1/M) sum_l |<phi_k|phi_l>|^2 for the selected waves."""
        A = self.of(electron, idx)
        return np.real(np.einsum("kx,xy,ky->k", A, rho.entries, A.conj(), optimize=True)) * self.grid.dx**2


@dataclass
class TdqmcWalkerSet:
    """Walker positions ``x[i, k]`` of electron i, walker k."""

    x: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return self.x.shape[1]

    def positions(self, electron: int) -> np.ndarray:
        return self.x[electron]

    @property
    def x1(self) -> np.ndarray:
        return self.x[0]

    @property
    def x2(self) -> np.ndarray:
        return self.x[1]


@dataclass
class NonlocalLength:
    sigma: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if np.any(~(self.sigma > 0)):
            raise ValueError("nonlocality lengths must be positive")


@dataclass
class TdqmcResult:
    waves: GuideWaveSet
    walkers: TdqmcWalkerSet
    sigma: NonlocalLength
    energy: float
    energy_stderr: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)


# -- kernel and effective potential --------------------------------------------


def kernel(xj, xjk, sigma):
    """Gaussian nonlocality kernel exp(-|xj - xjk|^2 / (2 sigma^2))."""
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")
    d = np.asarray(xj, dtype=float) - np.asarray(xjk, dtype=float)
    return np.exp(-(d**2) / (2 * np.asarray(sigma, dtype=float) ** 2))


def effective_potential(
    i: int,
    k: int,
    grid: Grid1D,
    walkers: TdqmcWalkerSet,
    sigma: NonlocalLength,
    p: SofteningParams = DEFAULT_SOFTENING,
) -> np.ndarray:
    """V_eff^k(x) felt by walker k of electron i, by direct summation over all walkers."""
    out = np.zeros(grid.n)
    for j in range(walkers.x.shape[0]):
        if j == i:
            continue
        xj = walkers.x[j]
        w = kernel(xj, xj[k], sigma.sigma[j])
        out += w @ v_ee(grid.x[None, :], xj[:, None], p) / w.sum()
    return out


class EffectivePotential:
    """Effective potentials of all walkers of one electron for a frozen walker table.

    ``mode='pairwise'`` sums over walkers directly (cost M^2 n). ``mode='gridded'``
    deposits the partner walkers on the grid nodes with linear weights and
    interpolates the kernel-weighted table at each walker (cost n^3 + M n).
    """

    def __init__(self, i, grid, walkers, sigma, p=DEFAULT_SOFTENING, mode="auto", ee_scale=1.0):
        self.i = i
        self.grid = grid
        self.p = p
        self.ee_scale = ee_scale
        M = len(walkers)
        if mode == "auto":
            mode = "pairwise" if M <= PAIRWISE_MAX_WALKERS else "gridded"
        if mode not in ("pairwise", "gridded"):
            raise ValueError(f"unknown effective-potential mode {mode!r}")
        self.mode = mode
        self.partners = [j for j in range(walkers.x.shape[0]) if j != i]
        self.x = walkers.x
        self.sigma = sigma.sigma
        if mode == "gridded":
            self._tables = [self._table(walkers.x[j], self.sigma[j]) for j in self.partners]
        else:
            self._vee = [v_ee(grid.x[None, :], walkers.x[j][:, None], p) for j in self.partners]

    def _table(self, xj, sig):
        g = self.grid
        nodes = g.x_min + g.dx * np.arange(g.n + 1)
        u = np.clip((xj - g.x_min) / g.dx, 0, g.n)
        lo = np.minimum(np.floor(u).astype(np.int64), g.n - 1)
        t = u - lo
        counts = np.bincount(lo, weights=1 - t, minlength=g.n + 1) + np.bincount(
            lo + 1, weights=t, minlength=g.n + 1
        )
        K = kernel(nodes[None, :], nodes[:, None], sig) * counts[None, :]
        Z = K.sum(axis=1)
        return (K @ v_ee(nodes[:, None], g.x[None, :], self.p)) / Z[:, None]

    def __call__(self, idx=slice(None)) -> np.ndarray:
        """Rows V_eff^k(x) for walkers ``idx`` of electron i."""
        g = self.grid
        rows = np.arange(self.x.shape[1])[idx].size
        out = np.zeros((rows, g.n))
        for n_j, j in enumerate(self.partners):
            xk = self.x[j][idx]
            if self.mode == "gridded":
                table = self._tables[n_j]
                u = np.clip((xk - g.x_min) / g.dx, 0, g.n)
                lo = np.minimum(np.floor(u).astype(np.int64), g.n - 1)
                t = (u - lo)[:, None]
                term = (1 - t) * table[lo] + t * table[lo + 1]
            else:
                w = kernel(self.x[j][None, :], xk[:, None], self.sigma[j])
                term = (w @ self._vee[n_j]) / w.sum(axis=1, keepdims=True)
            out += term
        return self.ee_scale * out

    def normalizers(self, idx=slice(None)) -> np.ndarray:
        """Z_j^k for every partner j (rows) and walker k in ``idx`` (pairwise sums)."""
        return np.array(
            [kernel(self.x[j][None, :], self.x[j][idx][:, None], self.sigma[j]).sum(axis=1) for j in self.partners]
        )


# -- guide-wave propagation ----------------------------------------------------


def _normalize_rows(w: np.ndarray, dx: float) -> np.ndarray:
    norm = np.sqrt(np.sum(np.abs(w) ** 2, axis=-1, keepdims=True) * dx)
    if not np.all(np.isfinite(norm)) or np.any(norm == 0):
        raise PropagationError("non-finite guide wave after a step; dtau too large")
    return w / norm


def _guide_step(w: np.ndarray, V: np.ndarray, dtau: float, grid: Grid1D):
    """Split-step update of real waves (rows); returns waves and their half spectrum."""
    n = grid.n
    half = np.exp(-0.25 * grid.k_half**2 * dtau)
    a = fft.irfft(half * fft.rfft(w, axis=-1), n=n, axis=-1) * np.exp(-V * dtau)
    spec = half * fft.rfft(a, axis=-1)
    a = fft.irfft(spec, n=n, axis=-1)
    norm = np.sqrt(np.sum(a**2, axis=-1, keepdims=True) * grid.dx)
    if not np.all(np.isfinite(norm)) or np.any(norm == 0):
        raise PropagationError("non-finite guide wave after a step; dtau too large")
    return a / norm, spec / norm


def propagate_guide_wave(wave: np.ndarray, V: np.ndarray, dtau: float, grid: Grid1D) -> np.ndarray:
    """One symmetric imaginary-time split-step of one or many 1D waves, renormalised."""
    if not dtau > 0:
        raise ValueError("dtau must be positive")
    wave = np.asarray(wave)
    if np.iscomplexobj(wave):
        half = np.exp(-0.25 * grid.k**2 * dtau)
        a = fft.ifft(half * fft.fft(wave, axis=-1), axis=-1) * np.exp(-V * dtau)
        a = fft.ifft(half * fft.fft(a, axis=-1), axis=-1)
        return _normalize_rows(a, grid.dx)
    return _guide_step(wave, V, dtau, grid)[0]


def _derivatives(spec: np.ndarray, grid: Grid1D):
    n = grid.n
    ik = 1j * grid.k_half
    ik[-1] = 0.0  # Nyquist mode has no real first derivative for even n
    d1 = fft.irfft(ik * spec, n=n, axis=-1)
    d2 = fft.irfft(-(grid.k_half**2) * spec, n=n, axis=-1)
    return d1, d2


def spectral_derivatives(wave: np.ndarray, grid: Grid1D):
    """First and second derivatives of real waves (rows) by spectral differentiation."""
    return _derivatives(fft.rfft(np.asarray(wave, dtype=float), axis=-1), grid)


def _ratio_at(x, phi, dphi, grid):
    """dphi/phi at positions x, interpolated linearly between bracketing nodes.

    Returns the ratio and a mask of walkers whose bracketing |phi| is below TINY_WAVE.
    """
    j, t = grid.bracket(x)
    jp = (j + 1) % grid.n
    rows = np.arange(len(x))
    f0, f1 = phi[rows, j], phi[rows, jp]
    tiny = (np.abs(f0) < TINY_WAVE) | (np.abs(f1) < TINY_WAVE)
    r0 = dphi[rows, j] / np.where(np.abs(f0) < TINY_WAVE, TINY_WAVE, f0)
    r1 = dphi[rows, jp] / np.where(np.abs(f1) < TINY_WAVE, TINY_WAVE, f1)
    return (1 - t) * r0 + t * r1, tiny


def drift_velocity(x, wave, grid: Grid1D) -> np.ndarray:
    wave = np.atleast_2d(wave)
    d1, _ = spectral_derivatives(wave, grid)
    return _ratio_at(np.atleast_1d(x), wave, d1, grid)[0]


def _move(x, v, dtau, noise, grid, counters):
    v_max = 10.0 / np.sqrt(dtau)
    clamped = np.abs(v) > v_max
    v = np.clip(v, -v_max, v_max)
    new = x + v * dtau + noise * np.sqrt(dtau)
    inside = grid.contains(new)
    if counters is not None:
        counters["walker_steps"] += len(x)
        counters["clamp_hits"] += int(clamped.sum())
        counters["boundary_rejections"] += int((~inside).sum())
    return np.where(inside, new, x)


def walker_step(x, wave, dtau: float, rng: np.random.Generator, grid: Grid1D, counters: Counter | None = None):
    """Drift-diffusion move x + v_D dtau + eta sqrt(dtau) with v_D = phi'/phi at x.

    The drift is clamped to |v_D| <= 10/sqrt(dtau); a move leaving the box is
    rejected. Works on a single walker or on rows of walkers and waves.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = drift_velocity(x, wave, grid)
    out = _move(x, v, dtau, rng.standard_normal(len(x)), grid, counters)
    return float(out[0]) if scalar else out


def update_sigma(walkers: TdqmcWalkerSet, alpha: float = 1.0) -> NonlocalLength:
    """sigma_j = alpha * sample standard deviation of electron j's walkers."""
    if len(walkers) < 2:
        raise ValueError("need at least two walkers to estimate a spread")
    std = np.std(walkers.x, axis=1, ddof=1)
    if np.any(std == 0):
        raise ValueError("degenerate walker cloud: zero spread")
    return NonlocalLength(alpha * std, alpha)


# -- estimators ---------------------------------------------------------------


def _local_energies(x, phis, d2s, nuclei, p, ee_scale, grid):
    n_el, M = x.shape
    e = np.zeros(M)
    bad = np.zeros(M, dtype=bool)
    for i in range(n_el):
        r, tiny = _ratio_at(x[i], phis[i], d2s[i], grid)
        e += -0.5 * r + one_body_potential(x[i], nuclei, p)
        bad |= tiny
    if ee_scale:
        for i in range(n_el):
            for j in range(i + 1, n_el):
                e += ee_scale * v_ee(x[i], x[j], p)
    return e, ~bad


def local_energies(
    waves: GuideWaveSet,
    walkers: TdqmcWalkerSet,
    nuclei,
    p: SofteningParams = DEFAULT_SOFTENING,
    ee_scale: float = 1.0,
):
    """Per-walker local energies (without V_nn) and the mask of walkers kept."""
    d2 = np.stack([spectral_derivatives(waves.waves[i], waves.grid)[1] for i in range(waves.n_electrons)])
    return _local_energies(walkers.x, waves.waves, d2, nuclei, p, ee_scale, waves.grid)


def energy_tdqmc(
    waves: GuideWaveSet,
    walkers: TdqmcWalkerSet,
    nuclei,
    p: SofteningParams = DEFAULT_SOFTENING,
    ee_scale: float = 1.0,
) -> float:
    """Walker average of the local energies plus the nuclear repulsion.

    Walkers sitting where their guide wave is below 1e-12 are left out.
    """
    e, keep = local_energies(waves, walkers, nuclei, p, ee_scale)
    if not keep.all():
        log.warning("excluded %d walkers at vanishing guide-wave amplitude", int((~keep).sum()))
    return float(np.mean(e[keep])) + nuclear_repulsion(nuclei, p)


def tdqmc_rdm(waves: GuideWaveSet, electron: int = 0) -> DensityMatrix:
    """rho_i(x, x') = (1/M) sum_k conj(phi_i^k(x)) phi_i^k(x')."""
    return waves.rdm(electron)


# -- relaxation ---------------------------------------------------------------


def initial_state(
    grid: Grid1D,
    nuclei: NuclearConfig,
    M: int,
    rng: np.random.Generator,
    symmetric: bool = True,
    width: float = 1.0,
):
    """Gaussian guide waves on the nuclei and walkers drawn from them.

    With ``symmetric`` every other walker pair has its electrons swapped between
    the nuclei, so the ensemble represents both exchange lobes of the singlet.
    """
    X1, X2 = nuclei.positions
    c1 = np.full(M, X1)
    c2 = np.full(M, X2)
    if symmetric:
        c1[1::2], c2[1::2] = X2, X1
    centres = np.stack([c1, c2])
    w = np.exp(-((grid.x[None, None, :] - centres[:, :, None]) ** 2) / (2 * width**2))
    w = w / np.sqrt(np.sum(w**2, axis=-1, keepdims=True) * grid.dx)
    x = centres + rng.standard_normal(centres.shape) * (width / np.sqrt(2))
    x = np.clip(x, grid.x_min, grid.x_max - grid.dx)
    return w, x


def relax_tdqmc(
    nuclei: NuclearConfig,
    M: int = 1000,
    dtau: float = 0.03,
    tol: float = 2e-3,
    max_iters: int = 3000,
    seed: int | None = 0,
    grid: Grid1D | None = None,
    p: SofteningParams = DEFAULT_SOFTENING,
    alpha: float = 1.0,
    ee_scale: float = 1.0,
    min_iters: int = 400,
    mode: str = "auto",
    symmetric: bool = True,
    sigma_override: float | None = None,
) -> TdqmcResult:
    """Self-consistent imaginary-time relaxation of guide waves and walkers.

    Per iteration: effective potentials from the current walkers, one guide-wave
    step per wave, one drift-diffusion step per walker against its own wave,
    and every 20 iterations sigma is re-estimated. Converged once the 50-iteration
    moving average of the energy moves by less than ``tol`` (after ``min_iters``).
    ``sigma_override`` pins sigma to a fixed value instead.
    """
    grid = grid or Grid1D()
    ss = np.random.SeedSequence(seed)
    init_ss, *walk_ss = ss.spawn(3)
    waves, x = initial_state(grid, nuclei, M, np.random.default_rng(init_ss), symmetric)
    rngs = [np.random.default_rng(s) for s in walk_ss]
    n_el = waves.shape[0]
    walkers = TdqmcWalkerSet(x, seed)
    ven = one_body_potential(grid.x, nuclei, p)
    counters: Counter = Counter()
    history: list[float] = []
    e_nn = nuclear_repulsion(nuclei, p)

    def sigma_now():
        if sigma_override is not None:
            return NonlocalLength(np.full(n_el, sigma_override), alpha)
        return update_sigma(walkers, alpha)

    sigma = sigma_now()
    converged = False
    it = 0
    e_local = np.zeros(M)
    keep = np.ones(M, dtype=bool)
    while it < max_iters:
        if it and it % SIGMA_EVERY == 0:
            sigma = sigma_now()
        veffs = [EffectivePotential(i, grid, walkers, sigma, p, mode, ee_scale) for i in range(n_el)]
        noise = [rngs[i % len(rngs)].standard_normal(M) for i in range(n_el)]
        new_x = np.empty_like(walkers.x)
        for start in range(0, M, BLOCK):
            blk = slice(start, min(M, start + BLOCK))
            d2s = []
            for i in range(n_el):
                V = ven[None, :] + veffs[i](blk)
                w, spec = _guide_step(waves[i, blk], V, dtau, grid)
                waves[i, blk] = w
                d1, d2 = _derivatives(spec, grid)
                v, _ = _ratio_at(walkers.x[i, blk], w, d1, grid)
                new_x[i, blk] = _move(walkers.x[i, blk], v, dtau, noise[i][blk], grid, counters)
                d2s.append(d2)
            e_local[blk], keep[blk] = _local_energies(
                new_x[:, blk], waves[:, blk], d2s, nuclei, p, ee_scale, grid
            )
        walkers.x = new_x
        it += 1
        counters["excluded_walkers"] += int((~keep).sum())
        history.append(float(np.mean(e_local[keep])) + e_nn)
        if it >= max(min_iters, 2 * ENERGY_WINDOW):
            recent = np.mean(history[-ENERGY_WINDOW:])
            before = np.mean(history[-2 * ENERGY_WINDOW : -ENERGY_WINDOW])
            if abs(recent - before) < tol:
                converged = True
                break
    if not converged:
        log.warning("TDQMC relaxation not converged after %d iterations", it)
    window = history[-ENERGY_WINDOW:]
    stderr = float(np.std(e_local[keep], ddof=1) / np.sqrt(keep.sum())) if keep.sum() > 1 else float("nan")
    return TdqmcResult(
        waves=GuideWaveSet(grid, waves),
        walkers=walkers,
        sigma=sigma,
        energy=float(np.mean(window)),
        energy_stderr=stderr,
        iterations=it,
        converged=converged,
        history=history,
        counters=counters,
    )


def alpha_scan(nuclei: NuclearConfig, alphas=(0.6, 0.8, 1.0, 1.2, 1.4), **kwargs):
    """Relax at each sigma multiplier; returns [(alpha, energy, stderr)] and the minimiser."""
    rows = []
    for a in alphas:
        res = relax_tdqmc(nuclei, alpha=a, **kwargs)
        rows.append((a, res.energy, res.energy_stderr))
    best = min(rows, key=lambda r: r[1])[0]
    return rows, best


# -- checkpoints --------------------------------------------------------------

_CKPT_HEAD = struct.Struct("<qqq3d")


def save_checkpoint(path, result: TdqmcResult, d: float) -> Path:
    """Binary checkpoint: header, guide waves as complex128 pairs, walker positions (little endian)."""
    g = result.waves.grid
    n_el, M, n = result.waves.waves.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(M, n_el, n, g.x_min, g.x_max, d))
        fh.write(np.asarray(result.sigma.sigma, dtype="<f8").tobytes())
        fh.write(struct.pack("<qq", result.iterations, -1 if result.walkers.seed is None else result.walkers.seed))
        fh.write(np.ascontiguousarray(result.waves.waves, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(result.walkers.x, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    M, n_el, n, x_min, x_max, d = _CKPT_HEAD.unpack_from(raw)
    off = _CKPT_HEAD.size
    sigma = np.frombuffer(raw, "<f8", n_el, off)
    off += 8 * n_el
    iteration, seed = struct.unpack_from("<qq", raw, off)
    off += 16
    expected = off + 16 * n_el * M * n + 8 * n_el * M
    if len(raw) != expected:
        raise ValueError(f"{path}: checkpoint size {len(raw)} does not match header ({expected})")
    waves = np.frombuffer(raw, "<c16", n_el * M * n, off).reshape(n_el, M, n)
    off += 16 * n_el * M * n
    x = np.frombuffer(raw, "<f8", n_el * M, off).reshape(n_el, M)
    grid = Grid1D(n, x_min, x_max)
    return {
        "waves": GuideWaveSet(grid, waves.real.copy() if not np.any(waves.imag) else waves.copy()),
        "walkers": TdqmcWalkerSet(x.copy(), None if seed < 0 else seed),
        "sigma": NonlocalLength(sigma.copy()),
        "iteration": iteration,
        "d": d,
    }
