"""Global and local linear entanglement entropy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityMatrix

TRACE_REJECT = 1e-6
MIN_REGION_WALKERS = 10


class ConvergenceError(RuntimeError):
    pass


def linear_entropy(rho: DensityMatrix) -> float:
    """S = 1 - Tr[rho^2]."""
    tr = rho.trace()
    if abs(tr - 1.0) > TRACE_REJECT:
        raise ValueError(f"density matrix trace {tr!r} is not 1")
    return 1.0 - rho.purity()


def linear_entropy_spectral(rho: DensityMatrix) -> float:
    """S = 1 - sum_j lambda_j^2 from the occupation numbers."""
    lam = rho.eigenvalues()
    return float(1.0 - np.sum(lam**2))


def global_entropy_curve(d_values, method: str = "exact", electron: int = 0, **solver_kwargs):
    """[(d, S)] from the exact or TDQMC reduced density matrix at each distance.

    Raises ConvergenceError if a solver fails to converge at any distance.
    """
    from .exact import exact_rdm, solve_ground_state
    from .model import NuclearConfig
    from .tdqmc import relax_tdqmc, tdqmc_rdm

    out = []
    for d in d_values:
        nuclei = NuclearConfig.from_distance(float(d))
        if method == "exact":
            res = solve_ground_state(nuclei, **solver_kwargs)
            rho = exact_rdm(res.psi, electron)
        elif method == "tdqmc":
            res = relax_tdqmc(nuclei, **solver_kwargs)
            rho = tdqmc_rdm(res.waves, electron)
        else:
            raise ValueError(f"unknown method {method!r}")
        if not res.converged:
            raise ConvergenceError(f"{method} solver did not converge at d={d}")
        out.append((float(d), linear_entropy(rho)))
    return out


@dataclass(frozen=True)
class PartitionSpec:
    """Squares of side ``side`` centred at (s_m, -s_m), tiling the anti-diagonal."""

    n_regions: int
    side: float
    centers: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return self.centers[:, 0]

    def region_of(self, x1, x2) -> np.ndarray:
        """Region index of each walker, -1 outside every square.

        Squares are half-open [c - side/2, c + side/2) along both axes.
        """
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        s0 = self.s[0] - 0.5 * self.side
        m1 = np.floor((x1 - s0) / self.side).astype(np.int64)
        # x2 in [lo, hi) is -x2 in (-hi, -lo]
        m2 = np.ceil((-x2 - s0) / self.side).astype(np.int64) - 1
        ok = (m1 == m2) & (m1 >= 0) & (m1 < self.n_regions)
        return np.where(ok, m1, -1)


def build_partition(d: float, walkers, n_regions: int = 50) -> PartitionSpec:
    """Partition along the line through the two density lobes.

    Centres s_m span [-R, R] with R = max_k |x1^k - x2^k| / 2 and side 2R/n_regions.
    """
    if len(walkers) == 0:
        raise ValueError("empty walker set")
    if n_regions < 1:
        raise ValueError("need at least one region")
    R = float(np.max(np.abs(walkers.x1 - walkers.x2))) / 2
    if R == 0:
        raise ValueError("degenerate walker cloud: zero extent along the anti-diagonal")
    side = 2 * R / n_regions
    s = -R + side * (np.arange(n_regions) + 0.5)
    return PartitionSpec(n_regions, side, np.column_stack([s, -s]))


@dataclass
class RegionRDM:
    index: int
    s: float
    count: int
    rho: DensityMatrix | None
    purity_stderr: float = float("nan")

    @property
    def populated(self) -> bool:
        return self.rho is not None


def local_rdms(partition: PartitionSpec, walkers, waves, electron: int = 0, floor: int = MIN_REGION_WALKERS):
    """Unit-trace RDM of one electron for each region, built from the waves of its walkers.

    Regions holding fewer than ``floor`` walkers are returned unpopulated. The
    standard error of each region's purity uses the first-order influence of
    each wave, 2 * std(h_k) / sqrt(M_m).
    """
    region = partition.region_of(walkers.x1, walkers.x2)
    alive = getattr(waves, "alive", None)
    if alive is not None:
        region = np.where(alive[electron], region, -1)
    out = []
    for m in range(partition.n_regions):
        idx = np.flatnonzero(region == m)
        s = float(partition.s[m])
        if len(idx) < max(floor, 1):
            out.append(RegionRDM(m, s, len(idx), None))
            continue
        rho = waves.rdm(electron, idx)
        h = waves.overlap_influence(electron, idx, rho)
        se = 2 * np.std(h, ddof=1) / np.sqrt(len(idx)) if len(idx) > 1 else float("nan")
        out.append(RegionRDM(m, s, len(idx), rho, float(se)))
    return out


class ProfileShapeError(ValueError):
    pass


@dataclass
class ProfileEntry:
    s: float
    S: float
    count: int
    stderr: float


@dataclass
class EntropyProfile:
    entries: list[ProfileEntry]
    side: float
    normalized_peak: bool = False
    uncovered: int = 0
    unpopulated: int = 0

    @property
    def s(self) -> np.ndarray:
        return np.array([e.s for e in self.entries])

    @property
    def S(self) -> np.ndarray:
        return np.array([e.S for e in self.entries])

    @property
    def counts(self) -> np.ndarray:
        return np.array([e.count for e in self.entries])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([e.stderr for e in self.entries])

    def peak(self) -> ProfileEntry:
        if not self.entries:
            raise ProfileShapeError("no populated regions")
        return self.entries[int(np.argmax(self.S))]

    def normalized(self) -> "EntropyProfile":
        top = self.peak().S if self.entries else 0.0
        scale = 1.0 / top if top > 0 else 1.0
        entries = [ProfileEntry(e.s, e.S * scale, e.count, e.stderr * scale) for e in self.entries]
        return EntropyProfile(entries, self.side, True, self.uncovered, self.unpopulated)


def local_entropy_profile(regions, partition: PartitionSpec, normalize: bool = False, total: int | None = None):
    """S_m = 1 - Tr[(rho^m)^2] over the populated regions, ordered by s."""
    entries = []
    for r in regions:
        if not r.populated:
            continue
        entries.append(ProfileEntry(r.s, linear_entropy(r.rho), r.count, r.purity_stderr))
    covered = sum(r.count for r in regions)
    prof = EntropyProfile(
        entries,
        partition.side,
        uncovered=0 if total is None else total - covered,
        unpopulated=sum(1 for r in regions if not r.populated),
    )
    return prof.normalized() if normalize else prof


def profile_width(profile: EntropyProfile, tie_tol: float = 1e-12) -> float:
    """Full width at half maximum, interpolating linearly between region centres.

    A profile with a single nonzero region has the region side as its width.
    """
    s = profile.s
    S = profile.S
    if len(S) == 0:
        raise ProfileShapeError("empty profile")
    top = float(np.max(S))
    if top <= 0 or np.allclose(S, top, rtol=0, atol=tie_tol * max(1.0, abs(top))):
        raise ProfileShapeError(f"flat profile (max {top:.3e}); width undefined")
    ties = np.flatnonzero(S >= top - tie_tol * abs(top))
    if np.any(np.diff(ties) > 1):
        raise ProfileShapeError(f"multiple separated maxima at s = {s[ties].tolist()}")
    i0, i1 = ties[0], ties[-1]
    half = 0.5 * top
    if np.count_nonzero(S > half) == 1 and np.count_nonzero(S > 0) == 1:
        return float(profile.side)

    def crossing(i, step):
        j = i
        while 0 <= j + step < len(S) and S[j + step] > half:
            j += step
        if not 0 <= j + step < len(S):
            # no half-maximum crossing inside the profile: extend by half a region
            return s[j] + step * 0.5 * profile.side
        a, b = S[j], S[j + step]
        return s[j] + (s[j + step] - s[j]) * (a - half) / (a - b)

    return float(crossing(i1, +1) - crossing(i0, -1))
