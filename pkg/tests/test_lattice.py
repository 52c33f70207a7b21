import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from phi4lab.lattice import (PotentialSpec, SpectralError, assemble_hamiltonian, build_grid, eval_potential,
                             spectral_decompose, verify_growth_assumption)


def test_grid_dirichlet_spacing():
    g = build_grid(8, 64)
    assert g.size == 4096
    assert g.spacing == 16 / 65


def test_grid_periodic_spacing():
    assert build_grid(8, 64, "periodic").spacing == 0.25


@pytest.mark.parametrize("L,n", [(8, 4), (0.0, 16), (-1.0, 16)])
def test_grid_rejects_bad_input(L, n):
    with pytest.raises(ValueError):
        build_grid(L, n)


@given(st.floats(0.1, 20), st.integers(8, 40), st.sampled_from(["dirichlet", "periodic"]))
@settings(max_examples=30, deadline=None)
def test_grid_points_reproducible(L, n, bc):
    g1, g2 = build_grid(L, n, bc), build_grid(L, n, bc)
    assert g1.spacing > 0
    assert np.array_equal(g1.points, g2.points)
    assert np.all(np.abs(g1.points) <= L + 1e-12)


def test_potential_closed_forms():
    x = np.array([[0.0, 0.0], [1.5, 0.0], [1.0, 0.0]])
    assert PotentialSpec("power", theta=2).value(x)[0] == 1.0
    assert PotentialSpec("step", theta=2).value(x)[1] == 2.0
    assert PotentialSpec("rapid", rapid_exponent=1).value(x)[2] == pytest.approx(np.e ** 2)


def test_tabulated_shape_mismatch():
    spec = PotentialSpec("tabulated", table=np.ones(10))
    with pytest.raises(ValueError, match="tabulated"):
        eval_potential(spec, build_grid(1, 8))


def test_hamiltonian_symmetric_exactly(small):
    grid, spec, U, _ = small
    H = assemble_hamiltonian(grid, U, 4.0).matrix
    assert abs(H - H.T).max() == 0
    assert np.all(np.diff(H.indptr) <= 5)


def test_periodic_plane_waves():
    g = build_grid(1.0, 10, "periodic")
    a, kappa = g.spacing, 0.7
    H = assemble_hamiltonian(g, np.zeros(g.size), kappa).matrix
    p = 2 * np.pi * np.array([2, 3]) / (g.n * a)
    wave = np.exp(1j * g.points @ p)
    lam = kappa + (2 - np.cos(p[0] * a) - np.cos(p[1] * a)) / a ** 2
    assert np.allclose(H @ wave, lam * wave, atol=1e-9)


def test_constant_potential_shifts_spectrum():
    g = build_grid(1.0, 9)
    e0 = spectral_decompose(assemble_hamiltonian(g, np.zeros(g.size), 1.0)).eigenvalues
    e1 = spectral_decompose(assemble_hamiltonian(g, np.ones(g.size), 1.0)).eigenvalues
    assert np.allclose(e1 - e0, 1.0, atol=1e-10)


def test_dirichlet_ground_state_closed_form():
    g = build_grid(np.pi / 2, 12)
    a, kappa = g.spacing, 2.0
    lam = spectral_decompose(assemble_hamiltonian(g, np.zeros(g.size), kappa)).eigenvalues[0]
    expected = kappa + (2 - 2 * np.cos(np.pi / (g.n + 1))) / a ** 2
    assert lam == pytest.approx(expected, rel=1e-12)


def test_spectral_diag_toy():
    sd = spectral_decompose(sp.diags([1.0, 2.0, 3.0]).tocsr())
    assert np.allclose(sd.eigenvalues, [1, 2, 3])
    assert np.allclose(np.abs(sd.eigenvectors), np.eye(3))


def test_spectral_random_symmetric():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((50, 50))
    A = A @ A.T + 50 * np.eye(50)
    sd = spectral_decompose(A)
    res = np.linalg.norm(A @ sd.eigenvectors - sd.eigenvectors * sd.eigenvalues, axis=0) / sd.eigenvalues
    assert res.max() <= 1e-9


def test_spectral_kmax_too_large():
    with pytest.raises(ValueError):
        spectral_decompose(sp.identity(4).tocsr(), k_max=5)


def test_spectral_error_names_index():
    g = build_grid(2.5, 10)
    H = assemble_hamiltonian(g, eval_potential(PotentialSpec(), g), 4.0)
    with pytest.raises(SpectralError, match="eigenpair"):
        spectral_decompose(H, tol_eig=1e-30)


def test_orthonormal_under_lattice_weight(small):
    grid, _, _, sd = small
    U = sd.eigenvectors
    assert np.allclose(grid.weight * U.T @ U, np.eye(U.shape[1]), atol=1e-10)


def test_completeness_and_floor(small):
    grid, spec, U, sd = small
    H = assemble_hamiltonian(grid, U, spec.kappa).matrix.toarray()
    rec = grid.weight * sd.combine(sd.eigenvalues)
    assert np.linalg.norm(rec - H) / np.linalg.norm(H) < 1e-8
    assert sd.eigenvalues.min() >= spec.kappa + U.min() - 1e-9
    assert sd.trace_s == pytest.approx(np.sum(sd.eigenvalues ** -1.5))


def test_partial_decomposition_matches_dense(small):
    grid, spec, U, sd = small
    part = spectral_decompose(assemble_hamiltonian(grid, U, spec.kappa), k_max=20, dense=False)
    assert np.allclose(part.eigenvalues, sd.eigenvalues[:20], rtol=1e-10)


def test_grid_refinement_low_modes():
    spec = PotentialSpec()
    lows = []
    for n in (40, 80):
        g = build_grid(2.5, n)
        lows.append(spectral_decompose(assemble_hamiltonian(g, eval_potential(spec, g), 4.0), k_max=10, dense=False).eigenvalues)
    assert np.max(np.abs(lows[1] / lows[0] - 1)) < 0.02


def test_growth_power_exact():
    rep = verify_growth_assumption(PotentialSpec("power", theta=2), build_grid(3, 20))
    assert rep.c_P == pytest.approx(1.0) and rep.C_P == pytest.approx(1.0)
    assert rep.P_holds and rep.D_holds


def test_growth_step_fails_gradient():
    rep = verify_growth_assumption(PotentialSpec("step", theta=2), build_grid(3, 20))
    assert rep.P_holds
    assert not rep.D_holds


def test_growth_rapid_holds():
    rep = verify_growth_assumption(PotentialSpec("rapid", rapid_exponent=1, gamma=0.9), build_grid(2, 20))
    assert rep.D_holds and np.isfinite(rep.grad_C)
