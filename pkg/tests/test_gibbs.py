import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from phi4lab.fields import InteractionEvaluator, make_interaction, sample_free_field
from phi4lab.gibbs import corr_estimate, free_corr, ibp_corr_check, partition_estimate, upsilon, wick_monomial
from phi4lab.kernels import KernelMatrix, green
from phi4lab.lattice import PotentialSpec, assemble_hamiltonian, build_grid, eval_potential, spectral_decompose
from phi4lab.stats import z_score


@pytest.fixture(scope="module")
def toy():
    g = build_grid(1.0, 8)
    sd = spectral_decompose(assemble_hamiltonian(g, eval_potential(PotentialSpec(theta=2), g), 1.0))
    return g, sd


@pytest.fixture(scope="module")
def one_mode(toy):
    """Single-mode field phi = c u X with the local quartic; |X|^2 is Exp(1)."""
    g, sd = toy
    one = sd.restrict(1)
    c2 = 1.0 / one.eigenvalues[0]
    u = one.eigenvectors[:, 0]
    A = 0.5 * g.weight * c2 ** 2 * np.sum(u ** 4)
    f = lambda r: np.exp(-r - A * (r * r - 4 * r + 2))
    zeta = quad(f, 0, np.inf)[0]
    m1 = quad(lambda r: r * f(r), 0, np.inf)[0] / zeta
    G = KernelMatrix(c2 * np.outer(u, u), "green", {"N": np.inf}, g.weight, g)
    batch = sample_free_field(one, np.inf, batch_size=200000, seed=8)
    V = InteractionEvaluator(G).V_local(batch.fields)
    return dict(c2=c2, u=u, zeta=zeta, m1=m1, G=G, phi=batch.fields, V=V)


def test_partition_trivial():
    assert partition_estimate(np.zeros(1000)) == (1.0, 0.0)


def test_partition_rejects_nonfinite():
    with pytest.raises(ValueError):
        partition_estimate(np.array([0.0, np.nan, 1.0]))


def test_partition_one_mode_quadrature(one_mode):
    est, err = partition_estimate(one_mode["V"])
    assert abs(est - one_mode["zeta"]) <= 3 * err


def test_partition_seed_consistency(toy):
    g, sd = toy
    one = sd.restrict(1)
    G = green(one) if one.complete else KernelMatrix(one.combine(1 / one.eigenvalues), "green", {"N": np.inf},
                                                     g.weight, g)
    ev = InteractionEvaluator(G)
    ests = [partition_estimate(ev.V_local(sample_free_field(one, np.inf, batch_size=50000, seed=s).fields))
            for s in (1, 2)]
    assert z_score(ests[0][0], ests[0][1], ests[1][0], ests[1][1]) <= 4


def test_gamma1_one_mode_quadrature(one_mode):
    u, c2 = one_mode["u"], one_mode["c2"]
    x, xt = int(np.argmax(u)), int(np.argmax(u)) + 1
    est = corr_estimate(one_mode["phi"], one_mode["V"], [x], [xt], one_mode["G"].entries)
    target = c2 * u[x] * u[xt] * one_mode["m1"]
    assert abs(est.value.real - target) <= 3 * est.stderr


def test_free_corr_small_p():
    G = np.random.default_rng(0).standard_normal((5, 5))
    assert free_corr(G, [1], [3]) == G[1, 3]
    assert free_corr(G, [0, 1], [2, 3]) == pytest.approx(G[0, 2] * G[1, 3] + G[0, 3] * G[1, 2])
    brute = sum(np.prod([G[[0, 1, 4][i], [2, 3, 1][s[i]]] for i in range(3)]) for s in itertools.permutations(range(3)))
    assert free_corr(G, [0, 1, 4], [2, 3, 1]) == pytest.approx(brute)


@pytest.fixture(scope="module")
def free_batch(small):
    grid, _, _, sd = small
    b = sample_free_field(sd, 16.0, batch_size=60000, seed=31)
    return b.fields, green(sd, 16.0).entries


def test_free_corr_matches_sampling(free_batch):
    phi, G = free_batch
    rng = np.random.default_rng(4)
    for _ in range(20):
        for p in (1, 2):
            pts = rng.integers(0, phi.shape[1], size=2 * p)
            x, xt = list(pts[:p]), list(pts[p:])
            est = corr_estimate(phi, None, x, xt, G)
            assert abs(est.value.real - free_corr(G, x, xt)) <= 4 * est.stderr


def test_free_wick_two_point_vanishes(free_batch):
    phi, G = free_batch
    est = corr_estimate(phi, None, [40], [41], G, wick=True)
    assert abs(est.value.real) <= 4 * est.stderr
    assert abs(est.value_combination.real) <= 4 * est.stderr_combination


def test_wick_routes_agree_interacting(small, free_batch):
    phi, G = free_batch
    grid = small[0]
    Gk = KernelMatrix(G, "green_truncated", {"N": 16.0}, grid.weight, grid)
    V = InteractionEvaluator(Gk).V_local(phi)
    for p, x, xt in ((1, [100], [120]), (2, [100, 101], [120, 136])):
        est = corr_estimate(phi, V, x, xt, G, wick=True)
        assert abs(est.value - est.value_combination) <= 4 * np.hypot(est.stderr, est.stderr_combination)


def test_hermitian_symmetry(free_batch, small):
    phi, G = free_batch
    V = np.abs(phi[:, 100]) ** 2
    a = corr_estimate(phi, V, [100], [117], G)
    b = corr_estimate(phi, V, [117], [100], G)
    assert a.value == pytest.approx(np.conj(b.value), abs=1e-15)


def test_wick_monomial_gauge(free_batch):
    phi, G = free_batch
    w1 = wick_monomial(phi[:50], G, [3, 4], [5, 6])
    w2 = wick_monomial(phi[:50] * np.exp(0.4j), G, [3, 4], [5, 6])
    assert np.allclose(w1, w2)


def test_normalizer_zero_rejected(free_batch):
    phi, G = free_batch
    with pytest.raises(ValueError):
        # one sample carries all the weight: zeta_hat equals its own stderr
        corr_estimate(phi[:100], np.r_[0.0, np.full(99, 1e3)], [1], [2], G, blocks=100)


def test_upsilon_examples():
    assert upsilon([[2.0, 0.0]], 12) == pytest.approx(1 / 4097)
    assert upsilon([[2.0, 0.0], [2.5, 0.0]], 12) == pytest.approx(1 / 4097)
    assert upsilon([[0.0, 0.0], [0.0, 0.0]], 12) == 1.0
    assert upsilon([[0.0, 0.0], [3.0, 0.0]], 2) == pytest.approx(1 / 10)


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=6), st.floats(1, 14),
       st.randoms())
@settings(max_examples=60, deadline=None)
def test_upsilon_permutation_invariant(pts, theta, rnd):
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    u = upsilon(pts, theta)
    assert 0 < u <= 1
    assert upsilon(shuffled, theta) == pytest.approx(u, rel=1e-12)


def test_ibp_free(toy):
    g, sd = toy
    rep = ibp_corr_check(sd.restrict(4), 20, 27, interacting=False, batch_size=50000, seed=2)
    assert rep.ibp_value == 0
    assert rep.agree


def test_ibp_quartic(toy):
    g, sd = toy
    rep = ibp_corr_check(sd.restrict(4), 20, 27, batch_size=200000, seed=3, coupling=20.0)
    assert rep.agree
    assert abs(rep.corr_value) > 4 * rep.corr_stderr


def test_holomorphic_derivative_annihilates_phi(toy):
    """Finite-difference d/d conj(X) of phi(y) vanishes and of conj(phi(y)) gives c u(y)."""
    _, sd = toy
    K = 3
    c = 1 / np.sqrt(sd.eigenvalues[:K])
    B = (sd.eigenvectors[:, :K] * c).T
    X = np.array([0.3 + 0.1j, -0.5j, 1.0])
    h = 1e-6
    for k in range(K):
        e = np.zeros(K)
        e[k] = h
        dre = ((X + e) @ B - (X - e) @ B) / (2 * h)
        dim = ((X + 1j * e) @ B - (X - 1j * e) @ B) / (2 * h)
        assert np.allclose(0.5 * (dre + 1j * dim), 0, atol=1e-8)
        dre_c = (np.conj((X + e) @ B) - np.conj((X - e) @ B)) / (2 * h)
        dim_c = (np.conj((X + 1j * e) @ B) - np.conj((X - 1j * e) @ B)) / (2 * h)
        assert np.allclose(0.5 * (dre_c + 1j * dim_c), B[k], atol=1e-8)
