"""Reweighting estimators for the interacting measure: partition function,
correlation functions (plain and Wick-ordered), free correlations, the decay
weight Upsilon and the integration-by-parts representation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Optional, Sequence

import numpy as np

from .stats import jackknife, ratio_jackknife, worker_rng, shard_sizes, z_score
from .fields import complex_normal


def partition_estimate(values: np.ndarray, blocks: int = 50) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite interaction values in batch")
    w = np.exp(-values)
    if np.all(w == w[0]):
        return float(w[0]), 0.0
    est, err = jackknife(lambda m: m, w[:, None], blocks)
    return float(est[0]), float(err[0])


def free_corr(G: np.ndarray, x_idx: Sequence[int], xt_idx: Sequence[int]) -> float:
    """Permanent sum_pi prod_i G(x_i, xt_pi(i))."""
    p = len(x_idx)
    if len(xt_idx) != p:
        raise ValueError("x and x-tilde blocks differ in length")
    if p == 0:
        return 1.0
    total = 0.0
    for pi in itertools.permutations(range(p)):
        term = 1.0
        for i in range(p):
            term *= G[x_idx[i], xt_idx[pi[i]]]
        total += term
    return float(total)


@dataclass
class CorrelationEstimate:
    points: tuple
    p: int
    value: complex
    stderr: float
    interaction_kind: str
    zeta_hat: float
    zeta_stderr: float
    wick: bool = False
    value_combination: Optional[complex] = None
    stderr_combination: Optional[float] = None

    def row(self, seed: int) -> dict:
        return {"p": self.p, "points": list(self.points), "kind": self.interaction_kind,
                "value_re": float(np.real(self.value)), "value_im": float(np.imag(self.value)),
                "stderr": float(self.stderr), "zeta_hat": self.zeta_hat, "seed": seed}


def _monomial(phi: np.ndarray, x_cols: Sequence[int], xt_cols: Sequence[int]) -> np.ndarray:
    out = np.ones(phi.shape[0], dtype=complex)
    for c in x_cols:
        out = out * phi[:, c]
    for c in xt_cols:
        out = out * np.conj(phi[:, c])
    return out


def _matchings(p: int):
    """Partial matchings between x-slots and xt-slots: lists of (i, j) pairs."""
    for k in range(p + 1):
        for xs in itertools.combinations(range(p), k):
            for ys in itertools.permutations(range(p), k):
                yield list(zip(xs, ys))


def wick_monomial(phi: np.ndarray, G: np.ndarray, x_cols, xt_cols) -> np.ndarray:
    """:prod conj(phi(xt_j)) prod phi(x_i): with only phi/conj(phi) contractions."""
    p = len(x_cols)
    out = np.zeros(phi.shape[0], dtype=complex)
    for match in _matchings(p):
        coef = (-1.0) ** len(match)
        for i, j in match:
            coef *= G[x_cols[i], xt_cols[j]]
        used_x = {i for i, _ in match}
        used_y = {j for _, j in match}
        rest_x = [x_cols[i] for i in range(p) if i not in used_x]
        rest_y = [xt_cols[j] for j in range(p) if j not in used_y]
        out += coef * _monomial(phi, rest_x, rest_y)
    return out


def _combination_terms(p: int):
    """Terms of the Wick combination formula with explicit S_p symmetrization.

    Yields (coefficient, x-slots of gamma_k, xt-slots of gamma_k, x-slots, xt-slots of gamma0).
    """
    perms = list(itertools.permutations(range(p)))
    norm = 1.0 / (len(perms) ** 2)
    for k in range(p + 1):
        coef = comb(p, k) ** 2 * (-1.0) ** (p - k) * norm
        for s in perms:
            for t in perms:
                yield coef, s[:k], t[:k], s[k:], t[k:]


def corr_estimate(phi: np.ndarray, values: Optional[np.ndarray], x_cols: Sequence[int], xt_cols: Sequence[int],
                  G: np.ndarray, wick: bool = False, kind: str = "none", blocks: int = 50,
                  points: tuple = ()) -> CorrelationEstimate:
    """Ratio estimator E[monomial e^{-V}] / E[e^{-V}] with jackknife errors.

    phi holds the field at the needed sites (columns); G is the covariance on those columns.
    With wick=True the Wick-ordered correlation is computed directly from Wick monomials and
    also through the combination formula over gamma_k and free gamma0; both are returned.
    """
    p = len(x_cols)
    n = phi.shape[0]
    w = np.ones(n) if values is None else np.exp(-np.asarray(values, dtype=float))
    zeta, zeta_err = partition_estimate(np.zeros(n) if values is None else values, blocks)
    if zeta_err > 0 and abs(zeta) <= 4 * zeta_err:
        raise ValueError("normalizer is statistically zero")
    if not wick:
        est, err = ratio_jackknife(_monomial(phi, x_cols, xt_cols) * w, w, blocks)
        return CorrelationEstimate(points, p, complex(est), float(err), kind, zeta, zeta_err)
    direct, derr = ratio_jackknife(wick_monomial(phi, G, x_cols, xt_cols) * w, w, blocks)
    # combination route: gamma_k on every needed sub-tuple, gamma0 exact
    subsets = {}
    terms = []
    for coef, xs, ys, xr, yr in _combination_terms(p):
        key = (tuple(x_cols[i] for i in xs), tuple(xt_cols[j] for j in ys))
        if key not in subsets:
            subsets[key] = len(subsets)
        g0 = free_corr(G, [x_cols[i] for i in xr], [xt_cols[j] for j in yr])
        terms.append((coef * g0, subsets[key]))
    cols = [None] * len(subsets)
    for (xk, yk), idx in subsets.items():
        cols[idx] = _monomial(phi, xk, yk) * w
    data = np.column_stack(cols + [w.astype(complex)])
    m = len(subsets)
    coefs = np.zeros(m, dtype=complex)
    for cf, idx in terms:
        coefs[idx] += cf

    def combo(means):
        return np.array([np.dot(coefs, means[:m] / means[m])])

    est, err = jackknife(combo, data, blocks)
    return CorrelationEstimate(points, p, complex(direct), float(derr), kind, zeta, zeta_err, True,
                               complex(est[0]), float(err[0]))


def upsilon(points, theta: float) -> float:
    """Product over connected components (edges |y_i - y_j| <= 1) of 1/(1 + |rep|^theta),
    rep being the member of smallest norm."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = pts.shape[0]
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(k):
        for j in range(i + 1, k):
            if np.linalg.norm(pts[i] - pts[j]) <= 1.0:
                parent[find(i)] = find(j)
    norms = np.linalg.norm(pts, axis=1)
    reps = {}
    for i in range(k):
        r = find(i)
        reps[r] = min(reps.get(r, np.inf), norms[i])
    return float(np.prod([1.0 / (1.0 + m ** theta) for m in reps.values()]))


@dataclass
class IBPReport:
    ibp_value: complex
    ibp_stderr: float
    corr_value: complex
    corr_stderr: float
    z: float
    modes: int
    batch: int
    details: dict = field(default_factory=dict)

    @property
    def agree(self) -> bool:
        return bool(self.z <= 4.0)


def ibp_corr_check(spectral, x: int, xt: int, N: float = np.inf, cutoff: str = "exp", interacting: bool = True,
                   batch_size: int = 100000, seed: int = 0, coupling: float = 1.0, blocks: int = 50,
                   chunk: int = 20000) -> IBPReport:
    """Compare the Wick-ordered two-point function from reweighting with the derivative
    representation (1/zeta) E[e^{-V}((Lbar V)(L V) - Lbar L V)] on a few-mode field.

    V is coupling * the local quartic; L_x = sum_k c_k u_k(x) d/d conj(X_k), so that
    L_x conj(phi(y)) = G(x, y) and L_x phi(y) = 0.
    """
    from .kernels import cutoff_weights
    K = spectral.count_retained
    if K > 6:
        raise ValueError("derivative check limited to K <= 6 modes")
    lam = spectral.eigenvalues
    c = np.sqrt(cutoff_weights(lam, N, cutoff) / lam)
    B = (spectral.eigenvectors * c).T
    G = (spectral.eigenvectors * c ** 2) @ spectral.eigenvectors.T
    Gd = np.diag(G)
    a2 = spectral.weight
    rows = []
    for wk, size in enumerate(shard_sizes(batch_size, 1)):
        rng = worker_rng(seed, wk)
        done = 0
        while done < size:
            m = min(chunk, size - done)
            X = complex_normal(rng, (m, K))
            phi = X @ B
            mod = np.abs(phi) ** 2
            if interacting:
                V = coupling * 0.5 * a2 * np.sum(mod * mod - 4 * Gd * mod + 2 * Gd * Gd, axis=1)
                LV = coupling * a2 * ((mod - 2 * Gd) * phi) @ G[x]
                LbV = coupling * a2 * ((mod - 2 * Gd) * np.conj(phi)) @ G[xt]
                LbLV = coupling * a2 * ((2 * mod - 2 * Gd) @ (G[x] * G[xt]))
            else:
                V = np.zeros(m)
                LV = LbV = LbLV = np.zeros(m)
            w = np.exp(-V)
            ibp = w * (LbV * LV - LbLV)
            cor = w * (np.conj(phi[:, xt]) * phi[:, x] - G[x, xt])
            rows.append(np.column_stack([ibp, cor, w.astype(complex)]))
            done += m
    data = np.concatenate(rows)
    est, err = jackknife(lambda mm: mm[:2] / mm[2], data, blocks)
    z = z_score(est[0].real, err[0], est[1].real, err[1]) if abs(est[0] - est[1]) > 1e-14 else 0.0
    return IBPReport(complex(est[0]), float(err[0]), complex(est[1]), float(err[1]), z, K, batch_size)
