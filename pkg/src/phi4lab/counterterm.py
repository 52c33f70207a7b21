"""Counterterm fixed-point problem: the map Phi(U) = bare + (tau^U - tau^0) + v*(rho^U - rho^0),
its limiting version, contraction probes and the least-squares nonsolvability demo."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .fields import InteractionPotentialSpec, homogeneous_tau, make_interaction
from .kernels import homogeneous_diag, lattice_symbol, quantum_weights
from .lattice import LatticeGrid, assemble_hamiltonian, eval_potential, gradient_field, spectral_decompose, PotentialSpec


class PositivityError(RuntimeError):
    pass


def unorm(f: np.ndarray, bare: np.ndarray) -> float:
    """sup |f / bare|"""
    return float(np.max(np.abs(f / bare)))


def rho_nu(spectral, nu: float) -> np.ndarray:
    if not nu > 0:
        raise ValueError("nu must be positive")
    return spectral.diagonal(quantum_weights(spectral.eigenvalues, nu))


@dataclass
class HomogeneousRefs:
    """Translation-invariant tau^{eps,0} and rho_nu^0 from the periodic companion grid."""
    tau0: float
    rho0: float
    g0: float  # G^0(x, x)

    @classmethod
    def build(cls, grid: LatticeGrid, kappa: float, v: Optional[InteractionPotentialSpec], nu: Optional[float]):
        pg = grid.periodic_companion()
        lam = lattice_symbol(pg, kappa)
        tau0 = homogeneous_tau(pg, kappa, v) if v is not None else np.nan
        rho0 = homogeneous_diag(pg, quantum_weights(lam, nu)) if nu else np.nan
        return cls(float(tau0), float(rho0), homogeneous_diag(pg, 1.0 / lam))


@dataclass
class PhiParts:
    value: np.ndarray
    tau: np.ndarray
    rho: Optional[np.ndarray]
    gdiag: np.ndarray


def _decompose(U: np.ndarray, grid: LatticeGrid, kappa: float):
    if np.any(U <= 0):
        raise PositivityError("iterate left the positive cone")
    return spectral_decompose(assemble_hamiltonian(grid, U, kappa))


def phi_map(U_iter: np.ndarray, bare: np.ndarray, v: InteractionPotentialSpec, nu: float, kappa: float,
            grid: LatticeGrid, refs: Optional[HomogeneousRefs] = None, parts: bool = False):
    """One application of Phi; fresh spectral decomposition of h with potential U_iter."""
    refs = refs or HomogeneousRefs.build(grid, kappa, v, nu)
    sd = _decompose(U_iter, grid, kappa)
    G = sd.combine(1.0 / sd.eigenvalues)
    tau = np.asarray(v.operator(grid, G).sum(axis=1)).ravel()
    rho = rho_nu(sd, nu)
    out = bare + (tau - refs.tau0) + v.convolve(rho - refs.rho0, grid)
    if parts:
        return PhiParts(out, tau, rho, np.diagonal(G).copy())
    return out


def phi_limit(U_iter: np.ndarray, bare: np.ndarray, kappa: float, grid: LatticeGrid,
              refs: Optional[HomogeneousRefs] = None) -> np.ndarray:
    """U -> bare + 2 diag(h_U^{-1} - h_0^{-1})."""
    refs = refs or HomogeneousRefs.build(grid, kappa, None, None)
    if np.any(U_iter <= 0):
        raise PositivityError("iterate left the positive cone")
    H = assemble_hamiltonian(grid, U_iter, kappa).matrix.toarray()
    gd = np.diagonal(sla.inv(H, check_finite=False)) / grid.weight
    return bare + 2.0 * (gd - refs.g0)


@dataclass
class CountertermState:
    bare: np.ndarray
    iterate: np.ndarray
    residual_history: list = field(default_factory=list)
    contraction_history: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    converged: bool = False
    status: str = "running"
    log: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residual_history)

    @property
    def q(self) -> float:
        """Largest contraction ratio over the tail of the run (after two iterations)."""
        tail = [r for r in self.contraction_history[1:] if np.isfinite(r)]
        return float(max(tail)) if tail else float("nan")


def _iterate(step, bare, start, tol, max_iter, params, ball: float = 1.0) -> CountertermState:
    U = np.array(start, dtype=float)
    st = CountertermState(bare, U, params=params)
    prev = None
    worse = 0
    for m in range(max_iter):
        try:
            new = step(U)
        except PositivityError:
            st.status = "positivity_lost"
            return st
        res = unorm(new - U, bare)
        ratio = res / prev if prev else float("nan")
        st.residual_history.append(res)
        st.contraction_history.append(ratio)
        st.log.append({"m": m, "residual": res, "contraction_ratio": ratio,
                       "min_U_over_bare": float(np.min(new / bare)), "max_U_over_bare": float(np.max(new / bare))})
        U = new
        st.iterate = U
        if np.any(U <= 0) or unorm(U - bare, bare) >= ball:
            st.status = "positivity_lost"
            return st
        if res <= tol:
            st.converged, st.status = True, "converged"
            return st
        worse = worse + 1 if (prev is not None and ratio >= 1.0) else 0
        if worse >= 3 or not np.isfinite(res):
            st.status = "not_contracting"
            return st
        prev = res
    st.status = "max_iter"
    return st


def solve_counterterm(bare: np.ndarray, grid: LatticeGrid, v: InteractionPotentialSpec, nu: float, kappa: float,
                      tol: float = 1e-10, max_iter: int = 200, start: Optional[np.ndarray] = None,
                      refs: Optional[HomogeneousRefs] = None) -> CountertermState:
    refs = refs or HomogeneousRefs.build(grid, kappa, v, nu)
    step = lambda U: phi_map(U, bare, v, nu, kappa, grid, refs)
    params = {"eps": v.epsilon, "nu": nu, "kappa": kappa}
    return _iterate(step, bare, bare if start is None else start, tol, max_iter, params)


def solve_limiting(bare: np.ndarray, grid: LatticeGrid, kappa: float, tol: float = 1e-10, max_iter: int = 200,
                   start: Optional[np.ndarray] = None) -> CountertermState:
    refs = HomogeneousRefs.build(grid, kappa, None, None)
    step = lambda U: phi_limit(U, bare, kappa, grid, refs)
    return _iterate(step, bare, bare if start is None else start, tol, max_iter, {"limiting": True, "kappa": kappa})


def first_step_profile(bare: np.ndarray, grid: LatticeGrid, spec: PotentialSpec, v: InteractionPotentialSpec,
                       nu: float, kappas: Sequence[float]) -> dict:
    """sup |Phi(bare) - bare| / g for each kappa, plus the log-log slope."""
    g = spec.g(grid.radius)
    vals = [float(np.max(np.abs(phi_map(bare, bare, v, nu, k, grid) - bare) / g)) for k in kappas]
    slope = float(np.polyfit(np.log(kappas), np.log(vals), 1)[0])
    return {"kappa": list(map(float, kappas)), "sup_ratio": vals, "slope": slope}


def contraction_probe(bare: np.ndarray, grid: LatticeGrid, v: InteractionPotentialSpec, nu: float, kappa: float,
                      pairs: int = 10, r: float = 0.5, seed: int = 0) -> dict:
    """Empirical Lipschitz ratios of Phi on random pairs in the ball of radius r around bare."""
    from .stats import worker_rng
    refs = HomogeneousRefs.build(grid, kappa, v, nu)
    rng = worker_rng(seed, 0, int(kappa))
    ratios = []
    for _ in range(pairs):
        u1 = bare * (1.0 + r * rng.uniform(-1, 1, bare.size))
        u2 = bare * (1.0 + r * rng.uniform(-1, 1, bare.size))
        d = unorm(phi_map(u1, bare, v, nu, kappa, grid, refs) - phi_map(u2, bare, v, nu, kappa, grid, refs), bare)
        ratios.append(d / unorm(u1 - u2, bare))
    return {"kappa": float(kappa), "ratios": ratios, "q": float(max(ratios))}


def detect_kappa0(bare, grid, v, nu, kappas: Sequence[float], tol: float = 1e-8, max_iter: int = 60) -> dict:
    """First kappa in an increasing sweep whose run converges with monotone residuals."""
    rows = []
    kappa0 = None
    for k in kappas:
        st = solve_counterterm(bare, grid, v, nu, k, tol=tol, max_iter=max_iter)
        mono = bool(np.all(np.diff(st.residual_history[1:]) < 0)) if st.iterations > 2 else st.converged
        rows.append({"kappa": float(k), "status": st.status, "iterations": st.iterations, "monotone": mono})
        if kappa0 is None and st.converged and mono:
            kappa0 = float(k)
    return {"kappa0": kappa0, "rows": rows}


def sandwich_constant(U: np.ndarray, bare: np.ndarray) -> float:
    """Smallest C with bare/C <= U <= C bare."""
    return float(max(np.max(U / bare), np.max(bare / U)))


def gradient_constant(U: np.ndarray, grid: LatticeGrid, spec: PotentialSpec) -> float:
    """max |grad U| / g(gamma x)^{3/2} with centered differences."""
    gr = gradient_field(U, grid)
    return float(np.max(np.hypot(gr[0], gr[1]) / spec.g_tilde(grid.radius) ** 1.5))


def fk_positivity(parts: PhiParts, refs: HomogeneousRefs) -> dict:
    """Margins tau^0 - tau and rho^0 - rho (both nonnegative for a confining trap)."""
    return {"tau_margin": float(np.min(refs.tau0 - parts.tau)),
            "rho_margin": float(np.min(refs.rho0 - parts.rho)) if parts.rho is not None else None}


@dataclass
class NonsolvabilityReport:
    epsilons: list
    residuals: list
    potential_kind: str
    rcond: float
    alpha_error: Optional[float] = None


def least_squares_alpha(Vop, tau: np.ndarray, rcond: float = 1e-10):
    """Truncated-SVD least squares for Vop alpha = tau; returns alpha and the relative residual."""
    A = Vop.toarray() if hasattr(Vop, "toarray") else np.asarray(Vop)
    alpha = sla.lstsq(A, tau, cond=rcond, lapack_driver="gelsd")[0]
    res = float(np.linalg.norm(A @ alpha - tau) / np.linalg.norm(tau))
    return alpha, res


def nonsolvability_demo(potential_kind: str, epsilons: Sequence[float], grid: LatticeGrid, kappa: float = 4.0,
                        theta: float = 12.0, rcond: float = 1e-3, beta: Optional[np.ndarray] = None,
                        const: float = 1.0) -> NonsolvabilityReport:
    """For each eps solve min ||v^eps * alpha - tau^eps||_2 and record the relative residual.

    'homogeneous' uses the periodic companion of the grid with U = const; otherwise the
    Dirichlet grid with the given potential kind. With beta given, tau is replaced by v*beta.
    On a finite lattice v^eps is invertible in principle, so alpha is restricted to the
    singular directions with sigma >= rcond * sigma_max: a lattice stand-in for 'alpha smooth'.
    """
    eps = sorted(map(float, epsilons), reverse=True)
    for e in eps:
        if e < 4 * grid.spacing * (1 - 1e-12):
            raise ValueError(f"epsilon {e} below 4a")
    if potential_kind == "homogeneous":
        g = grid.periodic_companion()
        U = np.full(g.size, const)
    else:
        g = grid
        U = eval_potential(PotentialSpec(kind=potential_kind, theta=theta, kappa=kappa), g)
    H = assemble_hamiltonian(g, U, kappa).matrix.toarray()
    G = sla.inv(H, check_finite=False) / g.weight
    residuals = []
    alpha_err = None
    for e in eps:
        v = make_interaction(g, e)
        Vop = v.operator(g)
        if beta is not None:
            tau = Vop @ beta
        else:
            tau = np.asarray(v.operator(g, G).sum(axis=1)).ravel()
        alpha, res = least_squares_alpha(Vop, tau, rcond)
        residuals.append(res)
        if beta is not None:
            alpha_err = max(alpha_err or 0.0, float(np.max(np.abs(alpha - beta)) / np.max(np.abs(beta))))
    return NonsolvabilityReport(eps, residuals, potential_kind, rcond, alpha_err)
