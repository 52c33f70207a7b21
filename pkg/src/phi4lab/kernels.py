"""Grid kernels built from spectral data, homogeneous periodic references and
decay-envelope fits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import LatticeGrid, PotentialSpec, SpectralData

KINDS = ("green", "green_truncated", "green_truncation_error", "heat", "quantum_green",
         "quantum_green_partial")


class TailError(RuntimeError):
    pass


@dataclass
class KernelMatrix:
    entries: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    weight: float = 1.0
    grid: Optional[LatticeGrid] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def diag(self) -> np.ndarray:
        return np.diagonal(self.entries).copy()

    def apply(self, f: np.ndarray) -> np.ndarray:
        """(K f)(x) = a^2 sum_y K(x, y) f(y)."""
        return self.weight * (self.entries @ f)

    def quadratic_form(self, f: np.ndarray) -> float:
        return float(self.weight * np.vdot(f, self.apply(f)).real)


def cutoff_weights(lam: np.ndarray, N: float, cutoff: str = "exp") -> np.ndarray:
    if np.isinf(N):
        return np.ones_like(lam)
    if cutoff == "exp":
        return np.exp(-lam / N)
    if cutoff == "sharp":
        return (lam <= N).astype(float)
    raise ValueError(f"unknown cutoff {cutoff!r}")


def green_weights(lam, N=np.inf, cutoff="exp"):
    return cutoff_weights(lam, N, cutoff) / lam


def quantum_weights(lam, nu, t_partial=0.0):
    """nu e^{t nu lam} / (e^{nu lam} - 1), evaluated without overflow."""
    x = nu * np.asarray(lam, dtype=float)
    return nu * np.exp(-(1.0 - t_partial) * x) / (-np.expm1(-x))


def _tail_estimate(spectral: SpectralData, w_last: float) -> float:
    missing = spectral.dimension - spectral.count_retained
    return float(max(missing, 0) * w_last)


def _kernel(spectral: SpectralData, w: np.ndarray, kind: str, params: dict) -> KernelMatrix:
    return KernelMatrix(spectral.combine(w), kind, params, spectral.weight, spectral.grid)


def green(spectral: SpectralData, N: float = np.inf, cutoff: str = "exp", tail_tol: float = 1e-6) -> KernelMatrix:
    lam = spectral.eigenvalues
    w = green_weights(lam, N, cutoff)
    if not spectral.complete:
        tail = _tail_estimate(spectral, float(cutoff_weights(lam[-1:], N, cutoff)[0] / lam[-1]))
        if tail > tail_tol * w[0]:
            raise TailError(f"retained-mode tail {tail:.3e} exceeds tail_tol; raise k_max")
    kind = "green" if np.isinf(N) else "green_truncated"
    return _kernel(spectral, w, kind, {"N": float(N), "cutoff": cutoff, "kappa": spectral.kappa})


def truncation_error(spectral: SpectralData, N: float, cutoff: str = "exp") -> KernelMatrix:
    """|G_N - G| as a kernel."""
    lam = spectral.eigenvalues
    w = (1.0 - cutoff_weights(lam, N, cutoff)) / lam
    K = _kernel(spectral, w, "green_truncation_error", {"N": float(N), "cutoff": cutoff})
    K.entries = np.abs(K.entries)
    return K


def heat_kernel(spectral: SpectralData, t: float) -> KernelMatrix:
    if not t > 0:
        raise ValueError("t must be positive")
    return _kernel(spectral, np.exp(-t * spectral.eigenvalues), "heat", {"t": float(t)})


def quantum_green(spectral: SpectralData, nu: float, t_partial: float = 0.0) -> KernelMatrix:
    if not nu > 0:
        raise ValueError("nu must be positive")
    if not 0.0 <= t_partial < 1.0:
        raise ValueError("t_partial must lie in [0, 1)")
    kind = "quantum_green" if t_partial == 0 else "quantum_green_partial"
    return _kernel(spectral, quantum_weights(spectral.eigenvalues, nu, t_partial), kind,
                   {"nu": float(nu), "t": float(t_partial)})


def green_gradient(K: KernelMatrix, grid: LatticeGrid) -> np.ndarray:
    """Finite-difference gradient of K(., y) in the first argument; shape (2, sites, sites)."""
    if K.kind not in ("green", "green_truncated", "quantum_green"):
        raise ValueError("gradient is defined for green-type kernels")
    n = grid.n
    E = K.entries.reshape(n, n, -1)
    gx, gy = np.gradient(E, grid.spacing, axis=(0, 1))
    return np.stack([gx.reshape(n * n, -1), gy.reshape(n * n, -1)])


# homogeneous references on a periodic grid

def lattice_symbol(grid: LatticeGrid, kappa: float) -> np.ndarray:
    """Eigenvalues of h with U = 0 on the periodic grid, indexed by FFT momenta."""
    a = grid.spacing
    p = 2 * np.pi * np.fft.fftfreq(grid.n, d=a)
    P1, P2 = np.meshgrid(p, p, indexing="ij")
    return kappa + (2.0 - np.cos(P1 * a) - np.cos(P2 * a)) / (a * a)


def homogeneous_row(grid: LatticeGrid, weights: np.ndarray) -> np.ndarray:
    """Translation-invariant kernel K(0, z) on the periodic grid, centered (fftshifted)."""
    if grid.boundary != "periodic":
        raise ValueError("homogeneous kernels live on a periodic grid")
    row = np.real(np.fft.ifft2(weights)) / grid.weight
    return np.fft.fftshift(row)


def homogeneous_green_row(grid: LatticeGrid, kappa: float, N: float = np.inf, cutoff: str = "exp"):
    return homogeneous_row(grid, green_weights(lattice_symbol(grid, kappa), N, cutoff))


def homogeneous_diag(grid: LatticeGrid, weights: np.ndarray) -> float:
    return float(np.mean(weights) / grid.weight)


# envelope fits

ENVELOPES = ("prop61_boundG", "prop61_GN_minus_G", "prop63_gradG", "prop74_Gnu", "lemma62_heat")


@dataclass
class BoundFit:
    envelope_form: str
    fitted_c: float
    fitted_C: float
    violation_fraction: float
    sample_pairs: int
    excluded_below_floor: int = 0
    max_ratio_location: tuple = ()

    @property
    def passed(self) -> bool:
        return bool(self.fitted_c > 0 and np.isfinite(self.fitted_C) and self.violation_fraction == 0)

    def to_row(self) -> dict:
        return {"form": self.envelope_form, "c": self.fitted_c, "C": self.fitted_C,
                "pairs": self.sample_pairs, "violation_fraction": self.violation_fraction,
                "excluded_below_floor": self.excluded_below_floor,
                "max_ratio_location": list(self.max_ratio_location)}


def support_line(ell: np.ndarray, B: np.ndarray, iters: int = 200) -> tuple[float, float]:
    """Supporting line log C - c B of the points (B, ell), tangent where B equals its mean.

    log C(c) = max(ell + c B) is convex in c; the chosen c minimizes log C(c) - c mean(B),
    i.e. the tightest uniform envelope on average. Every point lies on or below the line.
    """
    Bbar = float(np.mean(B))
    span = float(np.ptp(B)) or 1.0
    scale = float(np.ptp(ell) + 1.0) / span
    lo, hi = -scale, scale
    while B[np.argmax(ell + lo * B)] > Bbar and lo > -1e12:
        lo *= 2
    while B[np.argmax(ell + hi * B)] < Bbar and hi < 1e12:
        hi *= 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if B[np.argmax(ell + mid * B)] < Bbar:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            break
    c = 0.5 * (lo + hi)
    logC = float(np.max(ell + c * B))
    return c, logC


def fit_envelope(values: np.ndarray, A: np.ndarray, B: np.ndarray, form: str,
                 floor_rel: float = 1e-12, locations: Optional[np.ndarray] = None) -> BoundFit:
    """Fit values <= C A exp(-c B) with the supporting-line rule."""
    values = np.asarray(values, dtype=float)
    vmax = float(np.max(np.abs(values))) if values.size else 0.0
    keep = values > floor_rel * vmax
    excluded = int(values.size - keep.sum())
    v, A, B = values[keep], A[keep], B[keep]
    if v.size < 2:
        raise ValueError("not enough pairs above the noise floor")
    ell = np.log(v) - np.log(A)
    c, logC = support_line(ell, B)
    bound = logC - c * B
    viol = float(np.mean(ell > bound + 1e-9 * np.maximum(1.0, np.abs(bound))))
    k = int(np.argmax(ell + c * B))
    loc = tuple(np.asarray(locations)[keep][k].tolist()) if locations is not None else (k,)
    return BoundFit(form, float(c), float(np.exp(logC)), viol, int(v.size), excluded, loc)


def _pairs(grid: LatticeGrid, min_sep: float, symmetric: bool):
    pts = grid.points
    S = grid.size
    I, J = np.triu_indices(S, k=1) if symmetric else np.nonzero(~np.eye(S, dtype=bool))
    r = np.hypot(*(pts[I] - pts[J]).T)
    m = r >= min_sep * grid.spacing * (1 - 1e-12)
    return I[m], J[m], r[m]


def envelope_terms(K, spec: PotentialSpec, form: str, grid: Optional[LatticeGrid] = None, min_sep: float = 2.0):
    """Pair indices, distances, kernel magnitudes and the (A, B) of an envelope C A e^{-c B}."""
    if form not in ENVELOPES or form == "lemma62_heat":
        raise ValueError(f"form {form!r} is not a static kernel envelope")
    if form == "prop63_gradG":
        if grid is None:
            raise ValueError("gradient fits need the grid")
        mag = np.hypot(K[0], K[1])
        I, J, r = _pairs(grid, min_sep, symmetric=False)
        return I, J, r, mag[I, J], 1.0 / r, r * np.sqrt(spec.g_tilde(grid.radius[J]))
    grid = grid or K.grid
    expected = {"prop61_boundG": ("green", "green_truncated"),
                "prop61_GN_minus_G": ("green_truncation_error",),
                "prop74_Gnu": ("quantum_green",)}[form]
    if K.kind not in expected:
        raise ValueError(f"form {form} needs a kernel of kind {expected}, got {K.kind}")
    I, J, r = _pairs(grid, min_sep, symmetric=True)
    vals = np.abs(K.entries[I, J])
    radius = grid.radius
    gmax = np.maximum(spec.g_tilde(radius[I]), spec.g_tilde(radius[J]))
    if form == "prop61_GN_minus_G":
        q = K.params["N"] * r * r
        A = np.where(q <= 1.0, 1.0 + np.log(1.0 / np.minimum(q, 1.0)), 1.0 / q)
        B = np.maximum(q - 1.0, 0.0)
    else:
        x = r * np.sqrt(gmax)
        logterm = np.maximum(np.log(1.0 / x), 0.0)
        if form == "prop61_boundG":
            cap = np.log(K.params["N"]) if np.isfinite(K.params.get("N", np.inf)) else np.inf
        else:
            cap = np.log(1.0 / K.params["nu"])
        A = np.maximum(np.minimum(logterm, cap), 1.0)
        B = x
    return I, J, r, vals, A, B


def fit_decay_bound(K, spec: PotentialSpec, form: str, grid: Optional[LatticeGrid] = None,
                    min_sep: float = 2.0, floor_rel: float = 1e-12) -> BoundFit:
    """Fit (c, C) of one of the kernel envelopes over all pairs with |x - y| >= min_sep * a.

    K is a KernelMatrix, or for prop63_gradG the (2, sites, sites) gradient array.
    """
    I, J, r, vals, A, B = envelope_terms(K, spec, form, grid, min_sep)
    fit = fit_envelope(vals, A, B, form, floor_rel, np.column_stack([I, J]))
    if not fit.fitted_c > 0:
        raise ValueError(f"envelope {form} failed: fitted c = {fit.fitted_c:.4g}")
    return fit


def riemann_trace_gap(spectral_U: SpectralData, spectral_U2: SpectralData, nu: float) -> tuple[float, float]:
    """L1 norm of T - T_nu and sup |T| for two potentials on one grid."""
    if spectral_U.eigenvectors.shape[0] != spectral_U2.eigenvectors.shape[0]:
        raise ValueError("spectral data live on different grids")
    lam1, lam2 = spectral_U.eigenvalues, spectral_U2.eigenvalues
    T = spectral_U.diagonal(1.0 / lam1) - spectral_U2.diagonal(1.0 / lam2)
    Tn = spectral_U.diagonal(quantum_weights(lam1, nu)) - spectral_U2.diagonal(quantum_weights(lam2, nu))
    return float(spectral_U.weight * np.sum(np.abs(T - Tn))), float(np.max(np.abs(T)))
