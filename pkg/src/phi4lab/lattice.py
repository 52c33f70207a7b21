"""Lattice discretization of the trap, potentials, the one-particle Hamiltonian
h = kappa - Laplacian/2 + U and its spectral decomposition."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

DENSE_MAX_SITES = 80 * 80


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True)
class LatticeGrid:
    half_width: float
    n: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"points per side must be an integer >= 8, got {self.n}")
        if self.boundary not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def spacing(self) -> float:
        if self.boundary == "dirichlet":
            return 2.0 * self.half_width / (self.n + 1)
        return 2.0 * self.half_width / self.n

    @property
    def weight(self) -> float:
        return self.spacing ** 2

    @property
    def size(self) -> int:
        return self.n * self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def axis(self) -> np.ndarray:
        a = self.spacing
        if self.boundary == "dirichlet":
            return -self.half_width + a * np.arange(1, self.n + 1)
        return -self.half_width + a * np.arange(self.n)

    @property
    def points(self) -> np.ndarray:
        """Site coordinates, shape (n*n, 2), row-major with the first axis slow."""
        x = self.axis
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def radius(self) -> np.ndarray:
        p = self.points
        return np.hypot(p[:, 0], p[:, 1])

    def periodic_companion(self) -> "LatticeGrid":
        """Periodic grid with the same spacing, used for homogeneous references."""
        if self.boundary == "periodic":
            return self
        return LatticeGrid(self.spacing * (self.n + 1) / 2.0, self.n + 1, "periodic")

    def nearest_site(self, x) -> int:
        x = np.asarray(x, dtype=float)
        i = np.clip(np.rint((x - self.axis[0]) / self.spacing).astype(int), 0, self.n - 1)
        return int(i[0] * self.n + i[1])

    def to_dict(self) -> dict:
        return {"L": self.half_width, "n": self.n, "boundary": self.boundary}


def build_grid(half_width: float, n: int, boundary: str = "dirichlet") -> LatticeGrid:
    return LatticeGrid(float(half_width), int(n), boundary)


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "power"
    theta: float = 12.0
    rapid_exponent: float = 1.0
    gamma: float = 0.9
    kappa: float = 4.0
    table: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("power", "step", "rapid", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    def value(self, x: np.ndarray) -> np.ndarray:
        """Closed-form U at points x of shape (..., 2)."""
        r = np.hypot(x[..., 0], x[..., 1])
        if self.kind == "power":
            return 1.0 + r ** self.theta
        if self.kind == "step":
            return 1.0 + np.floor(r) ** self.theta
        if self.kind == "rapid":
            return np.exp((1.0 + r * r) ** self.rapid_exponent)
        raise ValueError("tabulated potentials have no closed form off the grid")

    def g(self, r: np.ndarray) -> np.ndarray:
        """Radial non-decreasing reference profile g(|x|) for the decay envelopes."""
        r = np.asarray(r, dtype=float)
        if self.kind == "rapid":
            return np.exp((1.0 + r * r) ** self.rapid_exponent)
        return 1.0 + r ** self.theta

    def g_tilde(self, r: np.ndarray) -> np.ndarray:
        return self.g(self.gamma * np.asarray(r, dtype=float))

    @property
    def growth_class(self) -> str:
        return "P" if self.kind in ("step", "tabulated") else "D"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "theta": self.theta, "C": self.rapid_exponent,
                "gamma": self.gamma, "kappa": self.kappa}


def eval_potential(spec: PotentialSpec, grid: LatticeGrid) -> np.ndarray:
    if spec.kind == "tabulated":
        tab = np.asarray(spec.table, dtype=float)
        if tab.size != grid.size:
            raise ValueError(f"tabulated potential has {tab.size} values, grid has {grid.size} sites")
        U = tab.ravel().copy()
    else:
        U = spec.value(grid.points)
    if not np.all(U > 0):
        raise ValueError("potential must be strictly positive")
    return U


@dataclass
class OperatorMatrix:
    matrix: sp.csr_matrix
    grid: Optional[LatticeGrid]
    kappa: float
    potential: np.ndarray

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def _second_difference(n: int, periodic: bool) -> sp.csr_matrix:
    D = sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="lil")
    if periodic:
        D[0, n - 1] = -1.0
        D[n - 1, 0] = -1.0
    return D.tocsr()


def assemble_hamiltonian(grid: LatticeGrid, potential: np.ndarray, kappa: float) -> OperatorMatrix:
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    potential = np.asarray(potential, dtype=float).ravel()
    if potential.size != grid.size:
        raise ValueError("potential does not match the grid")
    if np.any(potential < 0):
        raise ValueError("potential must be nonnegative")
    n, a = grid.n, grid.spacing
    D = _second_difference(n, grid.boundary == "periodic") / (a * a)
    I = sp.identity(n, format="csr")
    lap = sp.kron(D, I) + sp.kron(I, D)
    H = (0.5 * lap + sp.diags(kappa + potential)).tocsr()
    return OperatorMatrix(H, grid, float(kappa), potential)


@dataclass
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns u_k, orthonormal under weight * sum
    weight: float = 1.0
    grid: Optional[LatticeGrid] = None
    kappa: Optional[float] = None
    s: float = 1.5
    dimension: int = 0
    max_residual: float = 0.0

    @property
    def count_retained(self) -> int:
        return self.eigenvalues.size

    @property
    def complete(self) -> bool:
        return self.count_retained == self.dimension

    @property
    def trace_s(self) -> float:
        return float(np.sum(self.eigenvalues ** (-self.s)))

    def restrict(self, k: int) -> "SpectralData":
        return SpectralData(self.eigenvalues[:k].copy(), self.eigenvectors[:, :k].copy(), self.weight,
                            self.grid, self.kappa, self.s, self.dimension, self.max_residual)

    def combine(self, weights: np.ndarray) -> np.ndarray:
        """Kernel sum_k w_k u_k(x) u_k(y) as a dense matrix."""
        U = self.eigenvectors
        return (U * weights) @ U.T

    def diagonal(self, weights: np.ndarray) -> np.ndarray:
        return (self.eigenvectors ** 2) @ weights


def spectral_decompose(H, k_max: Optional[int] = None, tol_eig: float = 1e-9, s: float = 1.5,
                       dense: Optional[bool] = None) -> SpectralData:
    """Ascending eigenpairs of H (an OperatorMatrix or a bare symmetric matrix)."""
    if isinstance(H, OperatorMatrix):
        M, grid, kappa = H.matrix, H.grid, H.kappa
    else:
        M, grid, kappa = H, None, None
    dim = M.shape[0]
    k = dim if k_max is None else int(k_max)
    if k > dim or k < 1:
        raise ValueError(f"k_max={k} outside [1, {dim}]")
    if dense is None:
        dense = k == dim or dim <= 400
    if dense:
        if dim > DENSE_MAX_SITES:
            raise ValueError(f"dense decomposition refused for {dim} sites; pass k_max")
        A = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        if k == dim:
            w, V = sla.eigh(A, driver="evd")
        else:
            w, V = sla.eigh(A, subset_by_index=[0, k - 1], driver="evr")
    else:
        w, V = eigsh(sp.csc_matrix(M), k=k, sigma=0.0, which="LM", tol=0.0)
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    Mv = M @ V
    res = np.linalg.norm(Mv - V * w, axis=0) / np.abs(w)
    bad = np.flatnonzero(res > tol_eig)
    if bad.size:
        i = int(bad[0])
        raise SpectralError(f"eigenpair {i} (lambda={w[i]:.6g}) residual {res[i]:.3e} exceeds tol {tol_eig:g}")
    weight = grid.weight if grid is not None else 1.0
    U = V / np.sqrt(weight)
    return SpectralData(w, U, weight, grid, kappa, s, dim, float(res.max()))


def gradient_field(f: np.ndarray, grid: LatticeGrid) -> np.ndarray:
    """Finite-difference gradient of a grid field, shape (2, n*n)."""
    F = np.asarray(f).reshape(grid.shape)
    gx, gy = np.gradient(F, grid.spacing)
    return np.stack([gx.ravel(), gy.ravel()])


@dataclass
class GrowthReport:
    kind: str
    c_P: float
    C_P: float
    P_holds: bool
    c_D: Optional[float] = None
    grad_C: Optional[float] = None
    grad_C_refined: Optional[float] = None
    D_holds: Optional[bool] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_growth_assumption(spec: PotentialSpec, grid: LatticeGrid) -> GrowthReport:
    """Fit the sandwich constants of the growth assumption over the grid sites.

    The gradient check uses centered differences at two step sizes. A bound that
    holds must give comparable constants at both; a jump makes the refined one blow up.
    """
    x = grid.points
    U = eval_potential(spec, grid)
    ref = 1.0 + grid.radius ** spec.theta
    ratio = U / ref
    c_P, C_P = float(ratio.min()), float(ratio.max())
    rep = GrowthReport(spec.kind, c_P, C_P, bool(c_P > 0 and np.isfinite(C_P)))
    if spec.kind == "tabulated":
        return rep
    g = spec.g(grid.radius)
    c_D = float(np.min(U / g))
    gt = spec.g_tilde(grid.radius) ** 1.5

    def grad_const(h):
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        gx = (spec.value(x + ex) - spec.value(x - ex)) / (2 * h)
        gy = (spec.value(x + ey) - spec.value(x - ey)) / (2 * h)
        return float(np.max(np.hypot(gx, gy) / gt))

    h = grid.spacing / 2
    C1, C2 = grad_const(h), grad_const(h / 8)
    g_ok = bool(np.min(g / ref) > 0)
    D_ok = bool(c_D > 0 and g_ok and np.isfinite(C2) and C2 <= 2.0 * C1)
    rep.c_D, rep.grad_C, rep.grad_C_refined, rep.D_holds = c_D, C1, C2, D_ok
    return rep
