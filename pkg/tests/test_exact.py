import numpy as np
import pytest

from h2entangle.entropy import linear_entropy
from h2entangle.exact import (
    PropagationError,
    SplitStepPropagator,
    Wavefunction2D,
    energy_exact,
    exact_rdm,
    imaginary_time_step,
    initial_guess,
    kinetic_expectation,
    load_snapshot,
    nuclear_repulsion,
    relax_to_ground_state,
    save_snapshot,
    solve_ground_state,
)
from h2entangle.grid import Grid1D
from h2entangle.model import NuclearConfig, SofteningParams, total_potential_grid, v_nn

from oracles import fd_ground_energy_extrapolated, spectral_ground_energy


def gaussian2d(grid, w=1.0, c1=0.0, c2=0.0):
    g1 = np.exp(-((grid.x - c1) ** 2) / (2 * w**2))
    g2 = np.exp(-((grid.x - c2) ** 2) / (2 * w**2))
    return Wavefunction2D(grid, np.outer(g1, g2)).normalized()


@pytest.mark.parametrize("w", [0.7, 1.0, 1.6])
def test_gaussian_kinetic_energy(small_grid, w):
    # <T> = 1/(4 w^2) per dimension for exp(-x^2 / (2 w^2))
    psi = gaussian2d(small_grid, w)
    assert kinetic_expectation(small_grid, psi.amplitudes).real == pytest.approx(1 / (2 * w**2), rel=1e-8)


def test_harmonic_oscillator_ground_state(small_grid):
    x = small_grid.x
    V = 0.5 * (x[:, None] ** 2 + x[None, :] ** 2)
    res = relax_to_ground_state(gaussian2d(small_grid, 1.7, 0.4, -0.3), V, dtau=0.01)
    assert res.converged
    assert res.energy == pytest.approx(1.0, abs=1e-4)
    exact = gaussian2d(small_grid, 1.0).amplitudes.real
    overlap = abs(np.sum(res.psi.amplitudes * exact)) * small_grid.dx**2
    assert overlap == pytest.approx(1.0, abs=1e-6)


def test_energy_matches_lanczos_on_same_grid(ground_d2_small, small_grid):
    V = total_potential_grid(small_grid, NuclearConfig.from_distance(2.0))
    ref = spectral_ground_energy(small_grid, V) + v_nn(2.0)
    assert ground_d2_small.energy == pytest.approx(ref, abs=1e-4)


def test_single_atom_matches_finite_difference(grid):
    V = total_potential_grid(grid, [0.0], ee_scale=0.0)
    res = relax_to_ground_state(gaussian2d(grid), V)
    assert res.converged
    assert res.energy / 2 == pytest.approx(fd_ground_energy_extrapolated([0.0]), abs=1e-4)


def test_fused_steps_match_single_steps(small_grid):
    V = total_potential_grid(small_grid, NuclearConfig.from_distance(1.0))
    psi = initial_guess(small_grid, NuclearConfig.from_distance(1.0))
    prop = SplitStepPropagator(small_grid, V, 0.02)
    fused = prop.advance(psi.amplitudes.real, 7)
    one = psi
    for _ in range(7):
        one = imaginary_time_step(one, V, 0.02)
    assert np.allclose(fused, one.amplitudes, atol=1e-12)
    # complex and real transform paths agree
    assert np.allclose(prop.advance(psi.amplitudes, 7), fused, atol=1e-12)


def test_propagator_validates_inputs(small_grid):
    V = np.zeros((small_grid.n, small_grid.n))
    with pytest.raises(ValueError):
        SplitStepPropagator(small_grid, V, 0.0)
    with pytest.raises(ValueError):
        SplitStepPropagator(small_grid, V[:5], 0.01)


@pytest.mark.filterwarnings("ignore:overflow")
def test_huge_time_step_raises(small_grid):
    V = total_potential_grid(small_grid, NuclearConfig.from_distance(1.0)) * 1e3
    with pytest.raises(PropagationError):
        relax_to_ground_state(initial_guess(small_grid, NuclearConfig.from_distance(1.0)), V, dtau=1e3)


def test_non_convergence_is_reported(small_grid):
    res = solve_ground_state(NuclearConfig.from_distance(2.0), small_grid, max_iters=30)
    assert not res.converged and res.iterations == 30


def test_energy_history_non_increasing(ground_d3):
    h = np.array(ground_d3.history[1:])
    assert np.all(np.diff(h) <= 1e-9)


def test_ground_state_symmetry_and_realness(ground_d3):
    psi = ground_d3.psi
    assert psi.exchange_asymmetry() < 1e-8
    assert np.max(np.abs(psi.phase_aligned().imag)) < 1e-6
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)


@pytest.fixture(scope="module")
def ground_d6():
    return solve_ground_state(NuclearConfig.from_distance(6.0))


def edge_mass(psi):
    """Probability that electron 1 lies within 1 a.u. of the box edge."""
    g = psi.grid
    marginal = psi.density().sum(axis=1) * g.dx
    edge = (g.x < g.x_min + 1.0) | (g.x >= g.x_max - 1.0)
    return marginal[edge].sum() * g.dx


def test_tail_mass_compact_molecule():
    psi = solve_ground_state(NuclearConfig.from_distance(0.0)).psi
    assert edge_mass(psi) < 1e-8


_TAIL_REASON = "outer-electron tail reaches 2e-8 (d=3) and 3e-7 (d=6) within 1 a.u. of the +-12 box edge"


@pytest.mark.xfail(strict=True, reason=_TAIL_REASON)
def test_tail_mass_d3(ground_d3):
    assert edge_mass(ground_d3.psi) < 1e-8


@pytest.mark.xfail(strict=True, reason=_TAIL_REASON)
def test_tail_mass_d6(ground_d6):
    assert edge_mass(ground_d6.psi) < 1e-8


def test_box_size_does_not_matter(ground_d6):
    # same spacing, twice the box: periodic wraparound has no visible effect
    wide = solve_ground_state(NuclearConfig.from_distance(6.0), Grid1D(512, -24.0, 24.0))
    assert abs(wide.energy - ground_d6.energy) < 1e-6


def test_energy_function_agrees_with_solver(ground_d3):
    nc = NuclearConfig.from_distance(3.0)
    assert energy_exact(ground_d3.psi, nc) == pytest.approx(ground_d3.energy, abs=1e-8)


def test_time_step_audit(ground_d3):
    res = solve_ground_state(NuclearConfig.from_distance(3.0), dtau=0.005)
    assert abs(res.energy - ground_d3.energy) < 1e-6


def test_grid_convergence(ground_d3):
    res = solve_ground_state(NuclearConfig.from_distance(3.0), Grid1D(512))
    assert abs(res.energy - ground_d3.energy) < 1e-4


def test_exact_rdm_of_product_state_is_pure(small_grid):
    rho = exact_rdm(gaussian2d(small_grid, 1.0, 0.5, -1.0)).check()
    assert rho.purity() == pytest.approx(1.0, abs=1e-8)


def test_exact_rdm_two_lobes(ground_d3, grid):
    rho = exact_rdm(ground_d3.psi).check()
    assert rho.trace() == pytest.approx(1.0, abs=1e-10)
    diag = np.real(np.diag(rho.entries))
    left = grid.x[np.argmax(np.where(grid.x < 0, diag, -1))]
    right = grid.x[np.argmax(np.where(grid.x > 0, diag, -1))]
    assert left == pytest.approx(-1.5, abs=0.3) and right == pytest.approx(1.5, abs=0.3)
    # both electrons share the same reduced state
    assert np.allclose(exact_rdm(ground_d3.psi, 1).entries, rho.entries, atol=1e-10)
    assert 0 < linear_entropy(rho) < 0.5


def test_nuclear_repulsion():
    nc = NuclearConfig.from_distance(2.0)
    assert nuclear_repulsion(nc) == pytest.approx(v_nn(2.0))
    assert nuclear_repulsion([0.0]) == 0.0


def test_snapshot_round_trip(tmp_path, ground_d2_small):
    p = SofteningParams(1.0, 1.0, 0.5)
    path = save_snapshot(tmp_path / "psi.bin", ground_d2_small.psi, 2.0, p)
    psi, d, p2 = load_snapshot(path)
    assert d == 2.0 and p2 == p and psi.grid == ground_d2_small.psi.grid
    assert np.array_equal(psi.amplitudes, ground_d2_small.psi.amplitudes)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ValueError):
        load_snapshot(path)
