import numpy as np
import pytest

from phi4lab.counterterm import (HomogeneousRefs, PositivityError, contraction_probe, fk_positivity,
                                 gradient_constant, nonsolvability_demo, phi_limit, phi_map, rho_nu,
                                 sandwich_constant, solve_counterterm, solve_limiting, unorm)
from phi4lab.fields import make_interaction
from phi4lab.kernels import green, homogeneous_diag, lattice_symbol, quantum_weights
from phi4lab.lattice import PotentialSpec, SpectralData, build_grid, eval_potential

NU = 0.05


@pytest.fixture(scope="module")
def setup():
    grid = build_grid(2.5, 16)
    spec = PotentialSpec(kappa=16.0)
    bare = eval_potential(spec, grid)
    v = make_interaction(grid, 4 * grid.spacing)
    return grid, spec, bare, v


@pytest.fixture(scope="module")
def solved(setup):
    grid, spec, bare, v = setup
    return solve_counterterm(bare, grid, v, NU, 16.0, tol=1e-10)


def test_rho_single_mode():
    g = build_grid(1.0, 8)
    u = np.random.default_rng(0).standard_normal((g.size, 1))
    u /= np.sqrt(g.weight * np.sum(u ** 2))
    sd = SpectralData(np.array([1.0]), u, g.weight, g, 0.0, 1.5, g.size, 0.0)
    assert np.allclose(rho_nu(sd, 1.0), u[:, 0] ** 2 / (np.e - 1))


def test_rho_small_nu_tends_to_green():
    from phi4lab.lattice import assemble_hamiltonian, spectral_decompose
    g = build_grid(2.0, 12)
    sd = spectral_decompose(assemble_hamiltonian(g, eval_potential(PotentialSpec(theta=2), g), 4.0))
    r = rho_nu(sd, 1e-6)
    assert np.all(r > 0)
    # the -nu/2 contact term stays as a 1/a^2 lattice delta
    assert np.allclose(r, green(sd).diag - 0.5e-6 / sd.weight, rtol=1e-6)


def test_rho_requires_positive_nu(small):
    with pytest.raises(ValueError):
        rho_nu(small[3], 0.0)


def test_constant_shift_on_periodic_grid():
    pg = build_grid(1.5, 16, "periodic")
    kappa, c = 4.0, 3.0
    v = make_interaction(pg, 4 * pg.spacing)
    bare = np.full(pg.size, 2.0)
    refs = HomogeneousRefs.build(pg, kappa, v, NU)
    parts = phi_map(np.full(pg.size, c), bare, v, NU, kappa, pg, refs, parts=True)
    shift = parts.value - bare - (parts.tau - refs.tau0)
    rho_c = homogeneous_diag(pg, quantum_weights(lattice_symbol(pg, kappa) + c, NU))
    assert np.allclose(shift, rho_c - refs.rho0, rtol=1e-9, atol=1e-12)


def test_phi_rejects_nonpositive(setup):
    grid, _, bare, v = setup
    with pytest.raises(PositivityError):
        phi_map(-bare, bare, v, NU, 16.0, grid)


def test_solver_converges(solved, setup):
    st = solved
    assert st.converged and st.status == "converged"
    assert st.iterations <= 50
    assert st.residual_history[-1] <= 1e-10
    assert st.q < 1


def test_solver_ball_and_monotone(solved):
    for row in solved.log:
        assert 0.5 < row["min_U_over_bare"] and row["max_U_over_bare"] < 1.5
    r = solved.residual_history
    assert all(b < a for a, b in zip(r[1:], r[2:]))


def test_fixed_point_reapplication(solved, setup):
    grid, _, bare, v = setup
    assert unorm(phi_map(solved.iterate, bare, v, NU, 16.0, grid) - solved.iterate, bare) <= 1e-8


def test_uniqueness_from_second_start(solved, setup):
    grid, _, bare, v = setup
    other = solve_counterterm(bare, grid, v, NU, 16.0, tol=1e-10, start=1.1 * bare)
    assert other.converged
    assert unorm(other.iterate - solved.iterate, bare) <= 1e-9


def test_small_kappa_flagged(setup):
    grid, _, bare, v = setup
    st = solve_counterterm(bare, grid, v, NU, 0.01, max_iter=60)
    assert st.status in ("positivity_lost", "not_contracting")


def test_contraction_improves_with_kappa(setup):
    grid, _, bare, v = setup
    q16 = contraction_probe(bare, grid, v, NU, 16.0, pairs=3)["q"]
    q256 = contraction_probe(bare, grid, v, NU, 256.0, pairs=3)["q"]
    assert q256 < q16 < 1


def test_fk_positivity_margins(solved, setup):
    grid, _, bare, v = setup
    refs = HomogeneousRefs.build(grid, 16.0, v, NU)
    parts = phi_map(solved.iterate, bare, v, NU, 16.0, grid, refs, parts=True)
    m = fk_positivity(parts, refs)
    assert m["tau_margin"] >= -1e-10 and m["rho_margin"] >= -1e-10


def test_limiting_solution(setup):
    grid, spec, bare, _ = setup
    st = solve_limiting(bare, grid, 16.0)
    assert st.converged
    assert unorm(phi_limit(st.iterate, bare, 16.0, grid) - st.iterate, bare) <= 1e-8
    assert np.isfinite(sandwich_constant(st.iterate, bare))
    assert np.isfinite(gradient_constant(st.iterate, grid, spec))


def test_sandwich_constant_trivial():
    b = np.array([1.0, 2.0, 4.0])
    assert sandwich_constant(b, b) == 1.0
    assert sandwich_constant(2 * b, b) == 2.0


def test_nonsolvability_homogeneous():
    grid = build_grid(1.0, 23)
    rep = nonsolvability_demo("homogeneous", [8 * grid.spacing, 4 * grid.spacing], grid)
    assert rep.epsilons == sorted(rep.epsilons, reverse=True)
    assert max(rep.residuals) <= 1e-8


def test_nonsolvability_constructed_instance():
    grid = build_grid(1.0, 23)
    beta = 1.0 + 0.3 * np.cos(grid.points[:, 0])
    rep = nonsolvability_demo("power", [6 * grid.spacing], grid, rcond=1e-10, beta=beta)
    assert max(rep.residuals) <= 1e-8
    assert rep.alpha_error < 1e-6


def test_nonsolvability_step_floor():
    grid = build_grid(1.0, 23)
    eps = [8 * grid.spacing, 6 * grid.spacing, 4 * grid.spacing]
    step = nonsolvability_demo("step", eps, grid)
    homog = nonsolvability_demo("homogeneous", eps, grid)
    assert min(step.residuals) > 100 * max(max(homog.residuals), 1e-14)


def test_nonsolvability_epsilon_too_small():
    grid = build_grid(1.0, 23)
    with pytest.raises(ValueError, match="4a"):
        nonsolvability_demo("step", [2 * grid.spacing], grid)
