from collections import Counter

import numpy as np
import pytest

from h2entangle import tdqmc
from h2entangle.grid import Grid1D
from h2entangle.model import NuclearConfig, one_body_potential, v_ee
from h2entangle.tdqmc import (
    EffectivePotential,
    GuideWaveSet,
    NonlocalLength,
    TdqmcWalkerSet,
    alpha_scan,
    drift_velocity,
    effective_potential,
    energy_tdqmc,
    initial_state,
    kernel,
    load_checkpoint,
    local_energies,
    propagate_guide_wave,
    relax_tdqmc,
    save_checkpoint,
    spectral_derivatives,
    tdqmc_rdm,
    update_sigma,
    walker_step,
)

G = Grid1D(64, -10.0, 10.0)
NC = NuclearConfig.from_distance(2.0)


def gaussian(grid, c=0.0, w=1.0):
    f = np.exp(-((grid.x - c) ** 2) / (2 * w**2))
    return f / np.sqrt(np.sum(f**2) * grid.dx)


@pytest.fixture(scope="module")
def cloud():
    rng = np.random.default_rng(11)
    _, x = initial_state(G, NC, 300, rng)
    walkers = TdqmcWalkerSet(x + 0.3 * rng.standard_normal(x.shape))
    return walkers, update_sigma(walkers)


def test_kernel():
    assert kernel(1.0, 1.0, 0.5) == 1.0
    assert kernel(1.0, 0.0, 1.0) == pytest.approx(np.exp(-0.5))
    with pytest.raises(ValueError):
        kernel(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        NonlocalLength([1.0, -1.0])


def test_pairwise_potential_matches_direct_sum(cloud):
    walkers, sigma = cloud
    veff = EffectivePotential(0, G, walkers, sigma, mode="pairwise")
    rows = veff()
    for k in (0, 17, 299):
        assert np.allclose(rows[k], effective_potential(0, k, G, walkers, sigma), atol=1e-12)
    assert np.allclose(veff(slice(10, 20)), rows[10:20])


def test_gridded_potential_close_to_pairwise(cloud):
    walkers, sigma = cloud
    g = Grid1D()
    # deposit and table interpolation errors are O(dx^2)
    a = EffectivePotential(1, g, walkers, sigma, mode="pairwise")()
    b = EffectivePotential(1, g, walkers, sigma, mode="gridded")()
    assert np.max(np.abs(a - b)) < 1e-3 * np.max(np.abs(a))
    with pytest.raises(ValueError):
        EffectivePotential(1, G, walkers, sigma, mode="fast")


def test_normalisers_at_least_one(cloud):
    walkers, sigma = cloud
    Z = EffectivePotential(0, G, walkers, sigma).normalizers()
    assert Z.shape == (1, 300) and np.all(Z >= 1.0)


def test_limits_of_the_nonlocality_length(cloud):
    walkers, sigma = cloud
    # sigma -> 0: each walker feels only its own partner
    tiny = EffectivePotential(0, G, walkers, NonlocalLength([1e-6, 1e-6]), mode="pairwise")()
    assert np.allclose(tiny, v_ee(G.x[None, :], walkers.x2[:, None]), atol=1e-10)
    # sigma -> infinity: everyone feels the same Hartree potential
    huge = EffectivePotential(0, G, walkers, NonlocalLength([1e6, 1e6]), mode="pairwise")()
    hartree = v_ee(G.x[None, :], walkers.x2[:, None]).mean(axis=0)
    assert np.allclose(huge, hartree[None, :], atol=1e-9)


def test_single_walker_effective_potential():
    walkers = TdqmcWalkerSet(np.array([[-1.0], [1.2]]))
    veff = EffectivePotential(0, G, walkers, NonlocalLength([0.7, 0.7]))()
    assert np.allclose(veff[0], v_ee(G.x, 1.2))


def test_guide_wave_relaxes_to_oscillator_ground_state():
    g = Grid1D(128, -10.0, 10.0)
    V = 0.5 * g.x**2
    w = gaussian(g, 1.0, 2.0)
    for _ in range(2000):
        w = propagate_guide_wave(w, V, 0.01, g)
        assert np.sum(w**2) * g.dx == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w, gaussian(g), atol=1e-4)
    with pytest.raises(ValueError):
        propagate_guide_wave(w, V, 0.0, g)
    # complex waves follow the same dynamics
    wc = propagate_guide_wave(w.astype(complex), V, 0.01, g)
    assert np.allclose(wc, propagate_guide_wave(w, V, 0.01, g), atol=1e-12)


def test_spectral_derivatives_of_gaussian():
    g = Grid1D(128, -10.0, 10.0)
    f = np.exp(-(g.x**2) / 2)
    d1, d2 = spectral_derivatives(f, g)
    assert np.allclose(d1, -g.x * f, atol=1e-10)
    assert np.allclose(d2, (g.x**2 - 1) * f, atol=1e-10)


def test_drift_of_gaussian_is_minus_x():
    g = Grid1D(256, -10.0, 10.0)
    x = np.linspace(-2.0, 2.0, 9) + 0.013
    # linear interpolation of the exact ratio -x between nodes is exact
    assert np.allclose(drift_velocity(x, np.tile(np.exp(-(g.x**2) / 2), (9, 1)), g), -x, atol=1e-8)


def test_walkers_sample_squared_guide_wave():
    g = Grid1D(256, -10.0, 10.0)
    rng = np.random.default_rng(3)
    M = 4000
    wave = np.tile(np.exp(-(g.x**2) / 2), (M, 1))
    x = rng.uniform(-3, 3, M)
    counters = Counter()
    for _ in range(600):
        x = walker_step(x, wave, 0.02, rng, g, counters)
    # |phi|^2 = exp(-x^2): mean 0, variance 1/2 (up to O(dtau) time-step bias)
    assert abs(x.mean()) < 4 * np.sqrt(0.5 / M)
    assert x.var() == pytest.approx(0.5, rel=0.06)
    assert counters["walker_steps"] == 600 * M
    assert isinstance(walker_step(0.1, wave[0], 0.02, rng, g), float)


def test_clamp_and_boundary_rejection():
    g = Grid1D(64, -1.0, 1.0)
    counters = Counter()
    # node of a steep wave right next to the walker forces a clamp
    wave = np.tanh(50 * (g.x - 0.002))[None, :]
    x = walker_step(np.array([0.0]), wave, 0.01, np.random.default_rng(0), g, counters)
    assert counters["clamp_hits"] == 1
    assert np.all(g.contains(x))
    out = Counter()
    far = tdqmc._move(np.array([0.95]), np.array([0.0]), 0.01, np.array([10.0]), g, out)
    assert far[0] == 0.95 and out["boundary_rejections"] == 1


def test_update_sigma():
    w = TdqmcWalkerSet(np.array([[0.0, 1.0, 2.0], [1.0, 1.0, 4.0]]))
    s = update_sigma(w, alpha=2.0)
    assert np.allclose(s.sigma, 2.0 * np.array([1.0, np.sqrt(3.0)]))
    with pytest.raises(ValueError):
        update_sigma(TdqmcWalkerSet(np.zeros((2, 5))))
    with pytest.raises(ValueError):
        update_sigma(TdqmcWalkerSet(np.zeros((2, 1))))


def test_local_energy_kinetic_term():
    g = Grid1D(128, -10.0, 10.0)
    waves = np.tile(np.exp(-(g.x**2) / 2), (2, 5, 1))
    # no nuclei: -1/2 phi''/phi = (1 - x^2)/2 per electron
    nodes = np.tile(g.x[60:65], (2, 1))
    e, keep = local_energies(GuideWaveSet(g, waves), TdqmcWalkerSet(nodes), [], ee_scale=0.0)
    assert keep.all()
    assert np.allclose(e, 1 - nodes[0] ** 2, atol=1e-8)
    # between nodes the ratio is interpolated linearly: error <= dx^2 / 8 * |r''| per electron
    mid = nodes + 0.37 * g.dx
    e, _ = local_energies(GuideWaveSet(g, waves), TdqmcWalkerSet(mid), [], ee_scale=0.0)
    assert np.allclose(e, 1 - mid[0] ** 2, atol=2 * g.dx**2 / 8 + 1e-8)


def test_local_energy_of_an_eigenstate_has_no_variance():
    g = Grid1D(128, -10.0, 10.0)
    nc = [0.0]
    # ground state of the soft-core atom on this grid
    phi = np.exp(-(g.x**2) / 2)
    V = one_body_potential(g.x, nc)
    for _ in range(6000):
        phi = propagate_guide_wave(phi, V, 0.005, g)
    waves = np.tile(phi, (2, 7, 1))
    x = np.tile(g.x[54:75:3], (2, 1))
    e, _ = local_energies(GuideWaveSet(g, waves), TdqmcWalkerSet(x), nc, ee_scale=0.0)
    assert np.std(e) < 1e-5


def test_relaxation_keeps_unit_norm_and_valid_rdm():
    res = relax_tdqmc(NC, M=60, grid=G, seed=1, min_iters=100, max_iters=200)
    assert np.allclose(res.waves.norms(), 1.0, atol=1e-12)
    for e in (0, 1):
        tdqmc_rdm(res.waves, e).check()
    assert res.iterations <= 200 and len(res.history) == res.iterations
    assert res.energy_stderr > 0


def test_relaxation_is_deterministic_and_block_independent(monkeypatch):
    a = relax_tdqmc(NC, M=40, grid=G, seed=9, min_iters=100, max_iters=120)
    monkeypatch.setattr(tdqmc, "BLOCK", 7)
    b = relax_tdqmc(NC, M=40, grid=G, seed=9, min_iters=100, max_iters=120)
    assert np.array_equal(a.walkers.x, b.walkers.x)
    assert np.array_equal(a.waves.waves, b.waves.waves)
    assert a.history == b.history
    c = relax_tdqmc(NC, M=40, grid=G, seed=10, min_iters=100, max_iters=120)
    assert not np.array_equal(a.walkers.x, c.walkers.x)


def test_large_sigma_makes_waves_identical():
    def spread(iters):
        res = relax_tdqmc(NC, M=20, grid=G, seed=2, sigma_override=1e6, min_iters=iters, max_iters=iters)
        out = []
        for e in (0, 1):
            W = res.waves.of(e)
            out.append(np.sqrt(np.sum((W[:, None, :] - W[None, :, :]) ** 2, axis=-1) * G.dx).max())
        return max(out)

    s = [spread(n) for n in (100, 400, 1000)]
    assert s[0] > s[1] > s[2] and s[2] < 1e-3


def test_single_walker_pair_runs():
    res = relax_tdqmc(NC, M=1, grid=G, seed=0, sigma_override=1.0, min_iters=100, max_iters=150)
    assert res.waves.waves.shape == (2, 1, G.n)
    assert tdqmc_rdm(res.waves).purity() == pytest.approx(1.0, abs=1e-12)


def test_steady_state_is_stationary():
    res = relax_tdqmc(NC, M=200, grid=G, seed=4, tol=0.0, max_iters=900)
    assert not res.converged
    tail = np.array(res.history[-500:])
    slope = np.polyfit(np.arange(500), tail, 1)[0]
    assert abs(slope) < 2e-3 / 50
    steps = res.counters["walker_steps"]
    assert res.counters["clamp_hits"] < 1e-3 * steps
    assert res.counters["boundary_rejections"] < 1e-4 * steps


def test_energy_function_matches_run_estimate():
    res = relax_tdqmc(NC, M=100, grid=G, seed=6, min_iters=100, max_iters=200)
    e = energy_tdqmc(res.waves, res.walkers, NC)
    assert e == pytest.approx(res.history[-1], abs=1e-12)


def test_symmetric_initialisation_alternates_nuclei():
    waves, x = initial_state(G, NC, 6, np.random.default_rng(0))
    peaks = G.x[np.argmax(waves, axis=-1)]
    assert np.allclose(peaks[0], G.x[np.argmin(np.abs(G.x + 1.0))] * np.array([1, -1, 1, -1, 1, -1]), atol=G.dx)
    _, x1 = initial_state(G, NC, 6, np.random.default_rng(0), symmetric=False)
    assert np.all(np.abs(waves[0] - waves[1][::-1]).sum(axis=-1) >= 0)
    assert x1.shape == (2, 6)


def test_alpha_scan_picks_minimum():
    rows, best = alpha_scan(NC, alphas=(0.8, 1.2), M=30, grid=G, seed=1, min_iters=100, max_iters=120)
    assert len(rows) == 2 and best == min(rows, key=lambda r: r[1])[0]


def test_checkpoint_round_trip(tmp_path):
    res = relax_tdqmc(NC, M=12, grid=G, seed=5, min_iters=100, max_iters=110)
    path = save_checkpoint(tmp_path / "run.ckpt", res, 2.0)
    ck = load_checkpoint(path)
    assert ck["d"] == 2.0 and ck["iteration"] == res.iterations
    assert np.array_equal(ck["waves"].waves, res.waves.waves)
    assert np.array_equal(ck["walkers"].x, res.walkers.x)
    assert np.allclose(ck["sigma"].sigma, res.sigma.sigma)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_walker_at_gaussian_centre_diffuses_freely():
    g = Grid1D(256, -10.0, 10.0)
    wave = np.tile(np.exp(-(g.x**2) / 2), (20000, 1))
    x0 = np.zeros(20000)
    assert np.allclose(drift_velocity(x0[:1], wave[:1], g), 0.0, atol=1e-10)
    x = walker_step(x0, wave, 0.04, np.random.default_rng(1), g)
    assert x.var() == pytest.approx(0.04, rel=0.05)
    small = walker_step(np.full(3, 0.7), wave[:3], 1e-10, np.random.default_rng(1), g)
    assert np.allclose(small, 0.7, atol=1e-4)
