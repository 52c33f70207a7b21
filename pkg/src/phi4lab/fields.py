"""Gaussian free field sampling, Wick-ordered interactions, renormalisation data
(tau, E), exact L2 distances between interactions and the tail of e^{-V}."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.signal import fftconvolve

from .kernels import KernelMatrix, cutoff_weights, homogeneous_green_row
from .lattice import LatticeGrid, SpectralData
from .stats import shard_sizes, worker_rng


def bump(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r, dtype=float)
    m = r < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


@dataclass
class InteractionPotentialSpec:
    """Lattice interaction kernel v^eps as a centered stencil with a^2 sum(stencil) = 1.

    kind 'bump' is the autocorrelation of a smooth bump of radius eps/2 (support radius eps);
    kind 'local' is the lattice delta 1/a^2 at one site.
    """
    stencil: np.ndarray
    spacing: float
    epsilon: float
    kind: str = "bump"

    @property
    def half(self) -> int:
        return self.stencil.shape[0] // 2

    @property
    def support_radius(self) -> float:
        return self.epsilon if self.kind == "bump" else 0.0

    @property
    def mass(self) -> float:
        return float(self.stencil.sum() * self.spacing ** 2)

    @property
    def abs_mass(self) -> float:
        return float(np.abs(self.stencil).sum() * self.spacing ** 2)

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero stencil entries as integer offsets (k, 2) and values v(h)."""
        h = self.half
        I, J = np.nonzero(self.stencil)
        return np.column_stack([I - h, J - h]), self.stencil[I, J]

    def min_dft(self, n: int = 256) -> float:
        pad = np.zeros((n, n))
        k = self.stencil.shape[0]
        pad[:k, :k] = self.stencil
        pad = np.roll(pad, (-self.half, -self.half), axis=(0, 1))
        return float(np.min(np.real(np.fft.fft2(pad))) * self.spacing ** 2)

    def convolve(self, f: np.ndarray, grid: LatticeGrid) -> np.ndarray:
        """(v * f)(x) = a^2 sum_y v(x - y) f(y) on the grid (zero outside for Dirichlet)."""
        F = np.asarray(f).reshape(grid.shape)
        a2 = grid.weight
        mode = "wrap" if grid.boundary == "periodic" else "constant"
        return (a2 * ndimage.convolve(F, self.stencil, mode=mode, cval=0.0)).ravel()

    def operator(self, grid: LatticeGrid, values: Optional[np.ndarray] = None) -> sp.csr_matrix:
        """Sparse matrix M(x, y) = a^2 v(x - y) [* values(x, y)] over grid sites."""
        rows, cols, vals = [], [], []
        n = grid.n
        idx = np.arange(grid.size).reshape(n, n)
        for (di, dj), w in zip(*self.offsets()):
            if grid.boundary == "periodic":
                src = idx
                dst = np.roll(np.roll(idx, -di, axis=0), -dj, axis=1)
            else:
                src = idx[max(0, -di):n - max(0, di), max(0, -dj):n - max(0, dj)]
                dst = idx[max(0, di):n - max(0, -di), max(0, dj):n - max(0, -dj)]
            rows.append(src.ravel())
            cols.append(dst.ravel())
            vals.append(np.full(src.size, grid.weight * w))
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        if values is not None:
            v = v * values[r, c]
        return sp.csr_matrix((v, (r, c)), shape=(grid.size, grid.size))


def make_interaction(grid: LatticeGrid, epsilon: Optional[float] = None, kind: str = "bump") -> InteractionPotentialSpec:
    a = grid.spacing
    if kind == "local":
        return InteractionPotentialSpec(np.array([[1.0 / (a * a)]]), a, 0.0, "local")
    if epsilon is None or epsilon < 2 * a * (1 - 1e-12):
        raise ValueError(f"epsilon={epsilon} below 2a={2 * a:.4g}: interaction unresolved on the lattice")
    m = int(np.ceil(epsilon / (2 * a)))
    z = np.arange(-m, m + 1) * a
    X, Y = np.meshgrid(z, z, indexing="ij")
    b = bump(np.hypot(X, Y) / (epsilon / 2))
    v = fftconvolve(b, b[::-1, ::-1])
    v[v < 1e-300] = 0.0
    v /= v.sum() * a * a
    return InteractionPotentialSpec(v, a, float(epsilon), "bump")


# free field

def field_modes(spectral: SpectralData, N: float, cutoff: str = "exp", rel_cut: float = 1e-16):
    """Mode amplitudes c_k = sqrt(theta(lam/N)/lam) with negligible modes dropped."""
    lam = spectral.eigenvalues
    c2 = cutoff_weights(lam, N, cutoff) / lam
    keep = c2 > rel_cut * c2.max()
    return np.sqrt(c2[keep]), spectral.eigenvectors[:, keep]


def green_from_modes(c: np.ndarray, U: np.ndarray) -> np.ndarray:
    return (U * c ** 2) @ U.T


@dataclass
class FieldBatch:
    coords: np.ndarray
    fields: np.ndarray
    N: float
    cutoff: str
    seed: int
    workers: int = 1

    @property
    def batch_size(self) -> int:
        return self.fields.shape[0]


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def iter_field_chunks(spectral: SpectralData, N: float, cutoff: str, batch_size: int, seed: int,
                      workers: int = 1, chunk: int = 4096, modes=None) -> Iterator[FieldBatch]:
    """Deterministic stream of field chunks; shard w draws from the stream of (seed, w)."""
    c, U = modes if modes is not None else field_modes(spectral, N, cutoff)
    B = (U * c).T
    for w, size in enumerate(shard_sizes(batch_size, workers)):
        rng = worker_rng(seed, w)
        done = 0
        while done < size:
            m = min(chunk, size - done)
            X = complex_normal(rng, (m, c.size))
            yield FieldBatch(X, X @ B, N, cutoff, seed, workers)
            done += m


def sample_free_field(spectral: SpectralData, N: float, cutoff: str = "exp", batch_size: int = 1,
                      seed: int = 0, workers: int = 1) -> FieldBatch:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    chunks = list(iter_field_chunks(spectral, N, cutoff, batch_size, seed, workers))
    return FieldBatch(np.concatenate([b.coords for b in chunks]), np.concatenate([b.fields for b in chunks]),
                      N, cutoff, seed, workers)


def wick_mass(batch, G: KernelMatrix) -> np.ndarray:
    phi = batch.fields if isinstance(batch, FieldBatch) else batch
    if isinstance(batch, FieldBatch) and G.params.get("N", np.inf) != batch.N:
        raise ValueError("kernel cutoff does not match the batch")
    return np.abs(phi) ** 2 - G.diag[None, :]


# interactions

def tau_and_E(G: KernelMatrix, v: InteractionPotentialSpec, kappa: Optional[float] = None):
    """tau(x) = a^2 sum v(x - y) G(x, y), E = a^4/2 sum v G^2 and the periodic reference tau0."""
    grid = G.grid
    if v.kind == "bump" and v.epsilon < 2 * grid.spacing * (1 - 1e-12):
        raise ValueError("epsilon below 2a")
    M = v.operator(grid, G.entries)
    tau = np.asarray(M.sum(axis=1)).ravel()
    M2 = v.operator(grid, G.entries ** 2)
    E = 0.5 * grid.weight * float(M2.sum())
    kappa = kappa if kappa is not None else G.params.get("kappa")
    tau0 = None
    if kappa is not None:
        tau0 = homogeneous_tau(grid.periodic_companion(), kappa, v, G.params.get("N", np.inf),
                               G.params.get("cutoff", "exp"))
    return tau, E, tau0


def homogeneous_tau(pgrid: LatticeGrid, kappa: float, v: InteractionPotentialSpec, N: float = np.inf,
                    cutoff: str = "exp") -> float:
    row = homogeneous_green_row(pgrid, kappa, N, cutoff)
    c = pgrid.n // 2
    total = 0.0
    for (di, dj), w in zip(*v.offsets()):
        total += w * row[(c + di) % pgrid.n, (c + dj) % pgrid.n]
    return float(pgrid.weight * total)


class InteractionEvaluator:
    """Per-sample V_N (local), V^eps and W^eps for fields with covariance G."""

    def __init__(self, G: KernelMatrix, v: Optional[InteractionPotentialSpec] = None):
        self.G = G
        self.grid = G.grid
        self.a2 = G.weight
        self.Gd = G.diag
        self.v = v
        if v is not None:
            self.Vop = v.operator(self.grid)
            self.M = v.operator(self.grid, G.entries)  # a^2 v G
            self.tau = np.asarray(self.M.sum(axis=1)).ravel()
            self.E = 0.5 * self.a2 * float(v.operator(self.grid, G.entries ** 2).sum())
            self.vGd = self.Vop @ self.Gd
            self.const_v = 0.5 * self.a2 * (float(self.Gd @ self.vGd) + 2.0 * self.E / self.a2)

    def V_local(self, phi: np.ndarray) -> np.ndarray:
        m = np.abs(phi) ** 2
        Gd = self.Gd[None, :]
        return 0.5 * self.a2 * np.sum(m * m - 4.0 * Gd * m + 2.0 * Gd * Gd, axis=1)

    def V_eps(self, phi: np.ndarray) -> np.ndarray:
        m = np.abs(phi) ** 2
        mv = np.asarray(self.Vop @ m.T).T
        quart = 0.5 * self.a2 * np.sum(m * mv, axis=1)
        mass = self.a2 * (m @ self.vGd)
        Mphi = np.asarray(self.M @ phi.conj().T).T
        cross = self.a2 * np.real(np.sum(phi * Mphi, axis=1))
        return quart - mass - cross + self.const_v

    def W_eps(self, phi: np.ndarray) -> np.ndarray:
        w = np.abs(phi) ** 2 - self.Gd[None, :]
        wv = np.asarray(self.Vop @ w.T).T
        return 0.5 * self.a2 * np.sum(w * wv, axis=1) - self.a2 * (w @ self.tau) - self.E

    def value(self, phi: np.ndarray, kind: str) -> np.ndarray:
        if kind == "V_N":
            return self.V_local(phi)
        if self.v is None:
            raise ValueError(f"{kind} needs an interaction potential")
        if kind == "V_eps":
            return self.V_eps(phi)
        if kind == "W_eps":
            return self.W_eps(phi)
        raise ValueError(f"unknown interaction kind {kind!r}")


@dataclass
class InteractionValue:
    kind: str
    value: np.ndarray
    params: dict = field(default_factory=dict)


def interaction_value(batch, G: KernelMatrix, kind: str, v: Optional[InteractionPotentialSpec] = None) -> InteractionValue:
    phi = batch.fields if isinstance(batch, FieldBatch) else np.asarray(batch)
    ev = InteractionEvaluator(G, v)
    eps = None if v is None else v.epsilon
    return InteractionValue(kind, ev.value(phi, kind), {"N": G.params.get("N"), "eps": eps})


def interaction_floor(G: KernelMatrix, spectral: SpectralData, v: Optional[InteractionPotentialSpec] = None,
                  gamma: Optional[float] = None) -> dict:
    """Deterministic floor -C N^gamma log N for V_N^eps (v=None means the local quartic).

    With S = 1 + a^2 sum|v| every sample obeys V >= -(S^2-1)/2 a^4 sum v G_xx G_yy
    ('direct'), which is at least -(S^2-1)/2 sup G_xx tr G_N, and
    tr G_N <= c_gamma N^gamma tr h^{-1-gamma} with c_gamma = sup y^gamma e^{-y}.
    """
    grid = G.grid
    v = v if v is not None else make_interaction(grid, kind="local")
    S = 1.0 + v.abs_mass
    gamma = spectral.s - 1.0 if gamma is None else gamma
    N = G.params["N"]
    if not np.isfinite(N) or N <= 1:
        raise ValueError("the floor needs a finite cutoff N > 1")
    c_gamma = gamma ** gamma * np.exp(-gamma)
    trace_bound = c_gamma * N ** gamma * float(np.sum(spectral.eigenvalues ** (-1.0 - gamma)))
    half = 0.5 * (S * S - 1.0)
    floor = -half * float(G.diag.max()) * trace_bound
    direct = -half * grid.weight * float(G.diag @ (v.operator(grid) @ G.diag))
    return {"floor": floor, "C": float(-floor / (N ** gamma * np.log(N))), "S": S, "gamma": gamma,
            "direct_floor": direct}


# exact L2 distances

def _quartic_kernel(v: InteractionPotentialSpec, grid: LatticeGrid) -> sp.csr_matrix:
    """K(x, y) = a^4 v(x - y) as a sparse matrix."""
    return v.operator(grid) * grid.weight


def quartic_pairing(vA: InteractionPotentialSpec, vB: InteractionPotentialSpec, C: np.ndarray,
                    grid: LatticeGrid) -> float:
    """E[Q_A Q_B] for Q = 1/2 sum K(x,y) :|phi(x)|^2 |phi(y)|^2: and cross covariance C.

    Equals 1/4 sum KA KB (C(x,y)C(x~,y~) + C(x,y~)C(x~,y))^2, split into a trace term and
    a shifted-product term that runs over the offsets of the smaller stencil.
    """
    if vA.stencil.size > vB.stencil.size:
        vA, vB = vB, vA
    KA, KB = _quartic_kernel(vA, grid), _quartic_kernel(vB, grid)
    P = C * C
    T1 = float(np.sum(np.asarray(KA @ P) * np.asarray(KB @ P).T))
    n = grid.n
    S = grid.size
    idx = np.arange(S).reshape(n, n)
    T2 = 0.0
    a4 = grid.weight ** 2
    for (di, dj), w in zip(*vA.offsets()):
        if (di, dj) < (0, 0):
            continue  # the term for -h equals the term for h
        mult = 1.0 if (di, dj) == (0, 0) else 2.0
        src = idx[max(0, -di):n - max(0, di), max(0, -dj):n - max(0, dj)].ravel()
        dst = idx[max(0, di):n - max(0, -di), max(0, dj):n - max(0, -dj)].ravel()
        D = C[src] * C[dst]
        T2 += mult * a4 * w * float(np.sum(D * np.asarray((KB @ D.T).T)))
    return 0.5 * (T1 + T2)


def quadratic_pairing(J: np.ndarray, C: np.ndarray) -> float:
    """E[(sum J(x,y) :conj(phi(x)) phi(y):)^2] = tr(J C J C)."""
    JC = J @ C
    return float(np.sum(JC * JC.T))


def cross_covariance(spectral: SpectralData, N: float, M: float, cutoff: str = "exp") -> np.ndarray:
    lam = spectral.eigenvalues
    w = np.sqrt(cutoff_weights(lam, N, cutoff) * cutoff_weights(lam, M, cutoff)) / lam
    return spectral.combine(w)


def l2_distance_exact(spectral: SpectralData, pair: str, v: Optional[InteractionPotentialSpec] = None,
                      N: float = np.inf, M: Optional[float] = None, cutoff: str = "exp") -> float:
    """Closed-form L2(P) distance between two interactions via Wick pairings (no sampling)."""
    grid = spectral.grid
    if pair == "V_N,V_M":
        if M is None:
            raise ValueError("pair V_N,V_M needs M")
        if M == N:
            return 0.0
        vv = v if v is not None else make_interaction(grid, kind="local")
        GN = cross_covariance(spectral, N, N, cutoff)
        GM = cross_covariance(spectral, M, M, cutoff)
        CNM = cross_covariance(spectral, N, M, cutoff)
        sq = (quartic_pairing(vv, vv, GM, grid) - 2.0 * quartic_pairing(vv, vv, CNM, grid)
              + quartic_pairing(vv, vv, GN, grid))
    elif pair == "V_eps,W_eps":
        G = cross_covariance(spectral, N, N, cutoff)
        Mv = v.operator(grid, G).toarray()
        tau = Mv.sum(axis=1)
        J = grid.weight * Mv - np.diag(grid.weight * tau)
        sq = quadratic_pairing(J, G)
    elif pair == "V_eps,V":
        G = cross_covariance(spectral, N, N, cutoff)
        loc = make_interaction(grid, kind="local")
        sq = (quartic_pairing(v, v, G, grid) - 2.0 * quartic_pairing(v, loc, G, grid)
              + quartic_pairing(loc, loc, G, grid))
    else:
        raise ValueError(f"unknown pair {pair!r}")
    return float(np.sqrt(max(sq, 0.0)))


def l2_distance_quadrature(spectral: SpectralData, pair: str, v: Optional[InteractionPotentialSpec] = None,
                           N: float = np.inf, M: Optional[float] = None, cutoff: str = "exp",
                           order: int = 6) -> float:
    """Same distance as l2_distance_exact by tensor Gauss-Hermite quadrature over <= 2 modes."""
    from numpy.polynomial.hermite import hermgauss
    K = spectral.count_retained
    if K > 2:
        raise ValueError("quadrature oracle limited to two modes")
    grid = spectral.grid
    x, w = hermgauss(order)
    z, w = np.sqrt(2.0) * x, w / np.sqrt(np.pi)
    mesh = np.meshgrid(*([z] * 2 * K), indexing="ij")
    Z = np.stack([m.ravel() for m in mesh], axis=1)
    W = np.prod(np.stack([m.ravel() for m in np.meshgrid(*([w] * 2 * K), indexing="ij")], axis=1), axis=1)
    X = (Z[:, 0::2] + 1j * Z[:, 1::2]) / np.sqrt(2.0)

    def values(NN, kind, vv):
        c, U = field_modes(spectral, NN, cutoff, rel_cut=0.0)
        G = KernelMatrix(green_from_modes(c, U), "green" if np.isinf(NN) else "green_truncated",
                         {"N": NN, "cutoff": cutoff}, grid.weight, grid)
        return InteractionEvaluator(G, vv).value(X @ (U * c).T, kind)

    if pair == "V_N,V_M":
        kind = "V_N" if v is None else "V_eps"
        diff = values(M, kind, v) - values(N, kind, v)
    elif pair == "V_eps,W_eps":
        diff = values(N, "V_eps", v) - values(N, "W_eps", v)
    elif pair == "V_eps,V":
        diff = values(N, "V_eps", v) - values(N, "V_N", v)
    else:
        raise ValueError(f"unknown pair {pair!r}")
    return float(np.sqrt(np.sum(W * diff * diff)))


# Nelson tail

@dataclass
class TailCurve:
    log_t: np.ndarray
    prob: np.ndarray
    counts: np.ndarray
    exponent: Optional[float]
    monotone: bool
    concave: bool
    inconclusive: bool
    n: int

    def rows(self):
        return [{"log_t": float(lt), "log_P": float(np.log(p)) if p > 0 else float("-inf"), "count": int(c)}
                for lt, p, c in zip(self.log_t, self.prob, self.counts)]


def nelson_tail(values: np.ndarray, n_grid: int = 24, min_events: int = 30, z: float = 4.0) -> TailCurve:
    """Empirical P(e^{-V} > t) on a grid of log t in (0, max(-V)).

    Concavity is checked for log P against log t with a binomial noise allowance;
    the stretched exponent is the slope of log(-log P) against log log t (every log t > 0
    point with enough events; at desk scale these all sit below log t = 1).
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    top = float(np.max(-values))
    if top <= 0:
        lt = np.linspace(0.0, 1.0, n_grid + 1)[1:]
        return TailCurve(lt, np.zeros_like(lt), np.zeros(lt.size, int), None, True, True, True, n)
    lt = np.linspace(0.0, top, n_grid + 2)[1:-1]
    s = np.sort(-values)
    counts = n - np.searchsorted(s, lt, side="right")
    prob = counts / n
    monotone = bool(np.all(np.diff(prob) <= 0))
    ok = counts >= min_events
    inconclusive = bool(ok.sum() < 3)
    concave = True
    exponent = None
    if not inconclusive:
        y = np.log(prob[ok])
        sig = np.sqrt((1.0 - prob[ok]) / counts[ok])
        d2 = y[2:] - 2 * y[1:-1] + y[:-2]
        sd2 = np.sqrt(sig[2:] ** 2 + 4 * sig[1:-1] ** 2 + sig[:-2] ** 2)
        concave = bool(np.all(d2 <= z * sd2))
        m = ok & (prob < 1.0)
        if m.sum() >= 3:
            exponent = float(np.polyfit(np.log(lt[m]), np.log(-np.log(prob[m])), 1)[0])
    return TailCurve(lt, prob, counts, exponent, monotone, concave, inconclusive, n)
