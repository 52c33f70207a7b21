import numpy as np
import pytest

from phi4lab.fields import (InteractionEvaluator, interaction_value, l2_distance_exact, l2_distance_quadrature,
                            interaction_floor, make_interaction, nelson_tail, sample_free_field, tau_and_E, wick_mass)
from phi4lab.kernels import green
from phi4lab.lattice import PotentialSpec, assemble_hamiltonian, build_grid, eval_potential, spectral_decompose

N = 16.0
BATCH = 40000


@pytest.fixture(scope="module")
def batch(small):
    grid, _, _, sd = small
    return sample_free_field(sd, N, "exp", BATCH, seed=11)


@pytest.fixture(scope="module")
def GN(small):
    return green(small[3], N)


@pytest.fixture(scope="module")
def toy():
    g = build_grid(1.0, 8)
    sd = spectral_decompose(assemble_hamiltonian(g, eval_potential(PotentialSpec(theta=2), g), 1.0))
    return g, sd


def _z(samples, target):
    m = samples.mean(axis=0)
    s = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    return np.abs(m - target) / s


def test_interaction_normalized_positive_type(small):
    grid = small[0]
    for k in (2, 4, 6):
        v = make_interaction(grid, k * grid.spacing)
        assert v.mass == pytest.approx(1.0, abs=1e-12)
        assert v.min_dft() >= -1e-10


def test_interaction_below_two_spacings(small):
    grid = small[0]
    with pytest.raises(ValueError, match="2a"):
        make_interaction(grid, 1.5 * grid.spacing)


def test_field_zero_mean(batch):
    phi = batch.fields
    assert np.all(_z(phi.real, 0.0) <= 4) and np.all(_z(phi.imag, 0.0) <= 4)


def test_mode_moments(batch):
    X = batch.coords
    assert np.all(_z(np.abs(X) ** 2, 1.0) <= 4.5)
    assert np.all(_z((X * X).real, 0.0) <= 4.5)


def test_field_covariance(batch, GN):
    rng = np.random.default_rng(5)
    phi = batch.fields
    for x, y in rng.integers(0, phi.shape[1], size=(50, 2)):
        prod = phi[:, x] * phi[:, y].conj()
        assert _z(prod.real, GN.entries[x, y]) <= 4
        assert _z(prod.imag, 0.0) <= 4
        assert _z((phi[:, x] * phi[:, y]).real, 0.0) <= 4


def test_field_reproducible(small):
    sd = small[3]
    a = sample_free_field(sd, N, batch_size=100, seed=3, workers=2)
    b = sample_free_field(sd, N, batch_size=100, seed=3, workers=2)
    c = sample_free_field(sd, N, batch_size=100, seed=4, workers=2)
    assert np.array_equal(a.fields, b.fields)
    assert not np.array_equal(a.fields, c.fields)


def test_fields_follow_coords(batch, small):
    sd = small[3]
    c = np.sqrt(np.exp(-sd.eigenvalues / N) / sd.eigenvalues)
    keep = c ** 2 > 1e-16 * (c ** 2).max()
    rebuilt = batch.coords[:10] @ (sd.eigenvectors[:, keep] * c[keep]).T
    assert np.allclose(rebuilt, batch.fields[:10])


def test_wick_mass_mean_zero(batch, GN):
    assert np.all(_z(wick_mass(batch, GN), 0.0) <= 4.5)


def test_wick_mass_pairing(batch, GN):
    w = wick_mass(batch, GN)
    rng = np.random.default_rng(6)
    for x, y in rng.integers(0, w.shape[1], size=(20, 2)):
        assert _z(w[:, x] * w[:, y], np.abs(GN.entries[x, y]) ** 2) <= 4


def test_wick_mass_gauge(batch, GN):
    assert np.allclose(wick_mass(batch.fields * np.exp(0.7j), GN), wick_mass(batch.fields, GN))


def test_wick_mass_mismatch(batch, small):
    with pytest.raises(ValueError):
        wick_mass(batch, green(small[3], 2 * N))


def test_local_interaction_at_zero_field(small, GN):
    grid = small[0]
    val = interaction_value(np.zeros((1, grid.size), complex), GN, "V_N").value[0]
    assert val == pytest.approx(0.5 * grid.weight * np.sum(2 * GN.diag ** 2))
    assert val > 0


@pytest.mark.parametrize("kind", ["V_N", "V_eps", "W_eps"])
def test_interactions_mean_zero(batch, GN, small, kind):
    v = make_interaction(small[0], 4 * small[0].spacing)
    vals = interaction_value(batch, GN, kind, v).value
    assert _z(vals, 0.0) <= 4


@pytest.mark.parametrize("alpha", [np.pi / 3, np.pi / 2])
def test_interactions_gauge_invariant(batch, GN, small, alpha):
    ev = InteractionEvaluator(GN, make_interaction(small[0], 4 * small[0].spacing))
    phi = batch.fields[:200]
    for kind in ("V_N", "V_eps", "W_eps"):
        assert np.allclose(ev.value(phi * np.exp(1j * alpha), kind), ev.value(phi, kind), rtol=1e-12, atol=1e-10)


def test_local_floor_holds(batch, GN, small):
    rep = interaction_floor(GN, small[3])
    vals = interaction_value(batch, GN, "V_N").value
    assert vals.min() >= rep["direct_floor"] >= rep["floor"]
    assert rep["C"] > 0


def test_tau_local_is_diagonal(GN, small):
    tau, E, tau0 = tau_and_E(GN, make_interaction(small[0], kind="local"))
    assert np.allclose(tau, GN.diag)
    assert np.all(tau > 0)
    assert tau0 > 0


def test_tau_rejects_small_epsilon(GN, small):
    v = make_interaction(small[0], 4 * small[0].spacing)
    v.epsilon = small[0].spacing
    with pytest.raises(ValueError):
        tau_and_E(GN, v)


def test_l2_same_cutoff_is_zero(small):
    assert l2_distance_exact(small[3], "V_N,V_M", N=8.0, M=8.0) == 0.0


@pytest.mark.parametrize("pair,kwargs", [("V_N,V_M", dict(N=2.0, M=8.0)), ("V_eps,W_eps", dict(N=4.0)),
                                         ("V_eps,V", dict(N=4.0))])
def test_l2_exact_matches_quadrature(toy, pair, kwargs):
    g, sd = toy
    two = sd.restrict(2)
    v = make_interaction(g, 3 * g.spacing)
    exact = l2_distance_exact(two, pair, v=None if pair == "V_N,V_M" else v, **kwargs)
    quad = l2_distance_quadrature(two, pair, v=None if pair == "V_N,V_M" else v, **kwargs)
    assert exact > 0
    assert quad == pytest.approx(exact, rel=1e-8)


def test_l2_exact_matches_sampling(small):
    grid, _, _, sd = small
    M = 4 * N
    ba = sample_free_field(sd, np.inf, batch_size=BATCH, seed=21)
    lam = sd.eigenvalues
    # couple two cutoffs on shared coordinates
    cN, cM = np.sqrt(np.exp(-lam / N) / lam), np.sqrt(np.exp(-lam / M) / lam)
    X = ba.coords[:, :lam.size] if ba.coords.shape[1] == lam.size else None
    if X is None:
        pytest.skip("modes were pruned")
    phiN, phiM = X @ (sd.eigenvectors * cN).T, X @ (sd.eigenvectors * cM).T
    d = InteractionEvaluator(green(sd, M)).V_local(phiM) - InteractionEvaluator(green(sd, N)).V_local(phiN)
    exact2 = l2_distance_exact(sd, "V_N,V_M", N=N, M=M) ** 2
    assert _z(d ** 2, exact2) <= 4


def test_w_minus_v_closed_form_vs_sampling(batch, GN, small):
    v = make_interaction(small[0], 4 * small[0].spacing)
    ev = InteractionEvaluator(GN, v)
    d = ev.V_eps(batch.fields) - ev.W_eps(batch.fields)
    exact2 = l2_distance_exact(small[3], "V_eps,W_eps", v=v, N=N) ** 2
    assert _z(d ** 2, exact2) <= 4


def test_nelson_tail_positive_values():
    tc = nelson_tail(np.abs(np.random.default_rng(0).standard_normal(1000)) + 0.1)
    assert np.all(tc.prob == 0) and tc.inconclusive


def test_nelson_tail_monotone():
    tc = nelson_tail(np.random.default_rng(1).standard_normal(100000))
    assert tc.monotone and not tc.inconclusive
