"""RNG streams, sharding, parallel map and jackknife error estimates."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

SEED_MASK = (1 << 64) - 1


def worker_rng(seed: int, worker: int, *extra: int) -> np.random.Generator:
    """Counter-based stream for (seed, worker, extra...): Philox keyed by a SeedSequence."""
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=(int(worker),) + tuple(int(e) for e in extra))
    return np.random.Generator(np.random.Philox(ss))


def shard_sizes(total: int, workers: int) -> list[int]:
    workers = max(1, int(workers))
    base, rem = divmod(int(total), workers)
    return [base + (1 if i < rem else 0) for i in range(workers)]


def resolve_workers(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get("LAB_WORKERS", "1")))


def pmap(fn: Callable, args: Sequence, workers: int = 1) -> list:
    """Map in order; results are returned in argument order regardless of completion order."""
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, args))


def mean_stderr(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x)
    n = x.shape[0]
    if n < 2:
        return float(np.mean(x)), float("nan")
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(n))


def block_sums(x: np.ndarray, blocks: int) -> np.ndarray:
    """Sums over `blocks` contiguous blocks along axis 0 (sizes differ by at most one)."""
    x = np.asarray(x)
    edges = np.linspace(0, x.shape[0], blocks + 1).round().astype(int)
    return np.stack([x[edges[i]:edges[i + 1]].sum(axis=0) for i in range(blocks)]), np.diff(edges)


def jackknife(fn: Callable[[np.ndarray], np.ndarray], data: np.ndarray, blocks: int = 50):
    """Delete-one-block jackknife of fn(mean of data rows).

    data has shape (n, m); fn maps an m-vector of means to an estimate (scalar or array).
    Returns (estimate on all data, jackknife stderr).
    """
    data = np.asarray(data)
    n = data.shape[0]
    blocks = min(blocks, n)
    sums, sizes = block_sums(data, blocks)
    total = sums.sum(axis=0)
    full = np.asarray(fn(total / n))
    reps = np.stack([np.asarray(fn((total - sums[b]) / (n - sizes[b]))) for b in range(blocks)])
    mean_rep = reps.mean(axis=0)
    var = (blocks - 1) / blocks * np.sum(np.abs(reps - mean_rep) ** 2, axis=0)
    return full, np.sqrt(var)


def ratio_jackknife(num: np.ndarray, den: np.ndarray, blocks: int = 50):
    """Jackknife estimate and stderr of mean(num)/mean(den)."""
    num = np.asarray(num)
    data = np.column_stack([num.reshape(num.shape[0], -1), np.asarray(den).reshape(-1, 1)])
    k = data.shape[1] - 1
    est, err = jackknife(lambda m: m[:k] / m[k], data, blocks)
    if num.ndim == 1:
        return est[0], float(err[0])
    return est, err


def z_score(a: float, sa: float, b: float, sb: float) -> float:
    s = np.hypot(sa, sb)
    return float(abs(a - b) / s) if s > 0 else (0.0 if a == b else float("inf"))
