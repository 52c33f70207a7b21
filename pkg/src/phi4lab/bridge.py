"""Brownian-bridge Feynman-Kac estimates of heat kernels and of the quantum density,
plus the heat-kernel envelope fit."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import BoundFit, fit_envelope
from .lattice import PotentialSpec
from .stats import pmap, shard_sizes, worker_rng


def psi(z: np.ndarray, t: float) -> np.ndarray:
    """Free heat kernel of -Laplacian/2 in two dimensions."""
    z = np.asarray(z, dtype=float)
    return np.exp(-np.sum(z * z, axis=-1) / (2.0 * t)) / (2.0 * np.pi * t)


def default_steps(t: float) -> int:
    return max(64, int(np.ceil(t / 0.01)))


@dataclass
class BridgePath:
    x: np.ndarray
    y: np.ndarray
    t: float
    steps: int
    samples: np.ndarray  # (paths, steps + 1, 2), samples[:, 0] = y, samples[:, -1] = x

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t, self.steps + 1)


def _bridges(rng, x, y, t, steps, n):
    s = np.linspace(0.0, t, steps + 1)
    dB = rng.standard_normal((n, steps, 2)) * np.sqrt(t / steps)
    B = np.concatenate([np.zeros((n, 1, 2)), np.cumsum(dB, axis=1)], axis=1)
    frac = (s / t)[None, :, None]
    X = B - frac * B[:, -1:, :] + y + frac * (x - y)
    X[:, 0] = y
    X[:, -1] = x
    return X


def sample_bridge(x, y, t: float, steps: int, seed: int, n_paths: int = 1, worker: int = 0) -> BridgePath:
    """Bridge from y at time 0 to x at time t: B_s - (s/t) B_t + y + (s/t)(x - y)."""
    if steps < 8:
        raise ValueError("steps must be >= 8")
    if not t > 0:
        raise ValueError("t must be positive")
    x, y = np.asarray(x, float), np.asarray(y, float)
    rng = worker_rng(seed, worker)
    return BridgePath(x, y, float(t), int(steps), _bridges(rng, x, y, t, steps, n_paths))


@dataclass
class FKEstimate:
    value: float
    stderr: float
    n_paths: int
    target: str
    steps: int = 0
    params: Optional[dict] = None

    def row(self, seed: int) -> dict:
        p = self.params or {}
        return {**p, "estimate": self.value, "stderr": self.stderr, "n_paths": self.n_paths,
                "steps": self.steps, "seed": seed}


def _path_weights(U: Callable, x, y, t, steps, n, seed, job, worker, chunk=20000):
    """exp(-trapezoid integral of U) over n bridge paths, one worker shard."""
    rng = worker_rng(seed, worker, job)
    out = np.empty(n)
    h = t / steps
    done = 0
    while done < n:
        m = min(chunk, n - done)
        X = _bridges(rng, x, y, t, steps, m)
        V = U(X)
        integral = h * (V[:, 1:-1].sum(axis=1) + 0.5 * (V[:, 0] + V[:, -1]))
        out[done:done + m] = np.exp(-integral)
        done += m
    return out


def _shard(args):
    U, x, y, t, steps, n, seed, job, worker = args
    return _path_weights(U, x, y, t, steps, n, seed, job, worker)


def path_weights(U: Callable, x, y, t: float, n_paths: int, steps: Optional[int] = None, seed: int = 0,
                 job: int = 0, workers: int = 1) -> np.ndarray:
    steps = steps or default_steps(t)
    x, y = np.asarray(x, float), np.asarray(y, float)
    args = [(U, x, y, t, steps, n, seed, job, w) for w, n in enumerate(shard_sizes(n_paths, workers)) if n]
    return np.concatenate(pmap(_shard, args, workers))


def fk_heat_kernel(x, y, t: float, potential: Optional[Callable], kappa: float, n_paths: int = 100000,
                   steps: Optional[int] = None, seed: int = 0, job: int = 0, workers: int = 1) -> FKEstimate:
    """psi^t(x - y) e^{-kappa t} E[exp(-int_0^t U(omega(s)) ds)] over bridges from y to x.

    potential maps an array of points (..., 2) to U values, e.g. PotentialSpec.value; None means U = 0.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    steps = steps or default_steps(t)
    x, y = np.asarray(x, float), np.asarray(y, float)
    pref = float(psi(x - y, t) * np.exp(-kappa * t))
    params = {"x": x.tolist(), "y": y.tolist(), "t": float(t)}
    if potential is None:
        return FKEstimate(pref, 0.0, n_paths, "heat_kernel", steps, params)
    w = path_weights(potential, x, y, t, n_paths, steps, seed, job, workers)
    return FKEstimate(pref * float(w.mean()), pref * float(w.std(ddof=1) / np.sqrt(w.size)), n_paths,
                      "heat_kernel", steps, params)


def rho_tail_bound(nu: float, kappa: float, n_terms: int) -> float:
    """nu sum_{n > n_terms} psi^{nu n}(0) e^{-nu n kappa}, bounded by a geometric series."""
    q = np.exp(-nu * kappa)
    return float(q ** (n_terms + 1) / (2.0 * np.pi * (n_terms + 1) * (1.0 - q)))


def fk_rho_nu(x, nu: float, potential: Callable, kappa: float, n_terms: Optional[int] = None, n_paths: int = 100000,
              steps: Optional[int] = None, seed: int = 0, workers: int = 1, tail_tol: float = 1e-5) -> FKEstimate:
    """rho_nu(x) = nu sum_{n >= 1} e^{-nu n h}(x, x) with loop kernels from Feynman-Kac."""
    if n_terms is None:
        n_terms = 1
        while rho_tail_bound(nu, kappa, n_terms) > tail_tol:
            n_terms += 1
    total, var = 0.0, 0.0
    for n in range(1, n_terms + 1):
        est = fk_heat_kernel(x, x, nu * n, potential, kappa, n_paths, steps, seed, job=n, workers=workers)
        total += nu * est.value
        var += (nu * est.stderr) ** 2
    params = {"x": np.asarray(x, float).tolist(), "nu": float(nu), "n_terms": int(n_terms),
              "tail_bound": rho_tail_bound(nu, kappa, n_terms)}
    return FKEstimate(total, float(np.sqrt(var)), n_paths, "rho_nu", steps or 0, params)


def bridge_moment_constant(x, y, t: float, steps: int, n_paths: int, seed: int, n_pairs: int = 50) -> float:
    """max over random (t1, t2) of E|w(t2) - w(t1)|^2 / ((t2 - t1) + |x - y|^2 (t2 - t1)^2 / t^2)."""
    path = sample_bridge(x, y, t, steps, seed, n_paths)
    rng = worker_rng(seed, 0, 1)
    s = path.times
    d2 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    best = 0.0
    for _ in range(n_pairs):
        i, j = sorted(rng.choice(steps + 1, 2, replace=False))
        dt = s[j] - s[i]
        m = float(np.mean(np.sum((path.samples[:, j] - path.samples[:, i]) ** 2, axis=1)))
        best = max(best, m / (dt + d2 * dt * dt / t ** 2))
    return best


def heat_decay_variable(spec: PotentialSpec, x: np.ndarray, xt: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Decay variable B with envelope psi^t e^{-c B}.

    The bracket is read as max(indicator, min of the three exponentials): B = t/2 when the
    short-time indicator fires, else t/2 + max(G t, R sqrt(G), t^{1/3} R^{2/3} G^{2/3})
    with G = g(gamma x) v g(gamma xt) and R = |x| + |xt|.
    """
    rx, rxt = np.hypot(*np.moveaxis(x, -1, 0)), np.hypot(*np.moveaxis(xt, -1, 0))
    G = np.maximum(spec.g_tilde(rx), spec.g_tilde(rxt))
    R = rx + rxt
    with np.errstate(divide="ignore"):
        ind = t <= 1.0 / (G * G * np.maximum(R, 1e-300) ** 2)
    B = np.maximum.reduce([G * t, R * np.sqrt(G), t ** (1 / 3) * R ** (2 / 3) * G ** (2 / 3)])
    return t / 2 + np.where(ind, 0.0, B)


def envelope_check_lemma62(spec: PotentialSpec, x: np.ndarray, xt: np.ndarray, t: np.ndarray,
                           values: np.ndarray, floor_rel: float = 1e-12) -> BoundFit:
    """Fit the heat-kernel envelope to measured bridge integrals (heat kernel times e^{kappa t})."""
    x, xt, t = np.atleast_2d(x), np.atleast_2d(xt), np.asarray(t, float)
    A = psi(x - xt, t)
    fit = fit_envelope(np.asarray(values, float), A, heat_decay_variable(spec, x, xt, t), "lemma62_heat", floor_rel)
    if not fit.fitted_c > 0:
        raise ValueError(f"nonpositive fitted c = {fit.fitted_c:.4g}")
    return fit
