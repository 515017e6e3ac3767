"""Shared plumbing: seeded RNG streams, batch-means errors, input checks."""

from __future__ import annotations

import numpy as np

DEFAULT_BATCHES = 32
MIN_BATCHES = 20


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a Philox generator keyed by ``(seed, *keys)``.

    Every draw in the package goes through this so that a seed plus a tuple
    of stream indices pins the numbers, independent of scheduling order.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def batch_means(values, batches: int = DEFAULT_BATCHES) -> tuple[float, float]:
    """Mean and batch-means standard error of a 1-D sequence of observations.

    Uses ``batches`` contiguous batches (fewer only when there are fewer
    observations than batches).
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("no observations")
    mean = float(v.mean())
    b = min(batches, v.size)
    if b < 2:
        return mean, float("nan")
    bm = np.array([chunk.mean() for chunk in np.array_split(v, b)])
    return mean, float(bm.std(ddof=1) / np.sqrt(b))


def as_symmetric(M, name: str = "matrix", n: int | None = None, tol: float = 1e-12) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if n is not None and M.shape[0] != n:
        raise ValueError(f"{name} has size {M.shape[0]}, expected {n}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise ValueError(f"{name} is not symmetric")
    return M


def check_psd(M, name: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    M = as_symmetric(M, name)
    lam = np.linalg.eigvalsh(M)
    if lam.size and lam[0] < -tol * max(1.0, abs(lam[-1])):
        raise ValueError(f"{name} is not positive semi-definite (min eigenvalue {lam[0]:.3g})")
    return M
