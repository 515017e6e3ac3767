"""Monte-Carlo estimators over independent pairs and single draws.

Pairs ``(x, y)`` always come from streams 0 and 1 of the same seed, so two
estimators called with the same seed see the same pairs (common random
numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import stats

from ._util import as_symmetric, batch_means, rng_stream
from .distributions import DistributionSpec, iter_sample_blocks
from .metrics import MetricReport

X_STREAM, Y_STREAM, AUX_STREAM = 0, 1, 2


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_samples: int
    seed: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.std_error

    def scaled(self, factor: float) -> "Estimate":
        return Estimate(self.value * factor, self.std_error * abs(factor), self.n_samples, self.seed)


@dataclass(frozen=True)
class CheegerEstimate:
    """Halfspace proxy for the KLS constant: max over probed directions of (1/2)/f(median)."""

    value: float
    direction_count: int
    per_direction: np.ndarray = field(repr=False)


def _estimate(values: np.ndarray, seed: int) -> Estimate:
    m, se = batch_means(values)
    return Estimate(m, se, int(values.size), int(seed))


def iter_pairs(spec_p: DistributionSpec, spec_q: DistributionSpec, pairs: int, seed: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield aligned blocks of independent ``x ~ spec_p`` and ``y ~ spec_q``."""
    if spec_p.dim != spec_q.dim:
        raise ValueError(f"dimension mismatch: {spec_p.dim} vs {spec_q.dim}")
    yield from zip(iter_sample_blocks(spec_p, pairs, seed, X_STREAM),
                   iter_sample_blocks(spec_q, pairs, seed, Y_STREAM))


def inner_products(spec_p, spec_q, pairs: int, seed: int) -> np.ndarray:
    return np.concatenate([np.einsum("ij,ij->i", x, y) for x, y in iter_pairs(spec_p, spec_q, pairs, seed)])


def third_moment_inner(spec_p: DistributionSpec, spec_q: DistributionSpec, pairs: int, seed: int) -> Estimate:
    """Estimate E <x, y>^3 for independent x ~ spec_p, y ~ spec_q."""
    return _estimate(inner_products(spec_p, spec_q, pairs, seed) ** 3, seed)


def bilinear(x: np.ndarray, M: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise x_k^T M y_k."""
    return np.einsum("ij,ij->i", x @ M, y)


def triple_product(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    # sort the three factors per row so the product is bitwise symmetric in its arguments
    f = np.sort(np.stack([u, v, w]), axis=0)
    return f[0] * f[1] * f[2]


def tensor_values(x, y, A, B, C) -> np.ndarray:
    """Per-pair values (x^T A y)(x^T B y)(x^T C y)."""
    return triple_product(bilinear(x, A, y), bilinear(x, B, y), bilinear(x, C, y))


def tensor_T(spec: DistributionSpec, A, B, C, pairs: int, seed: int) -> Estimate:
    """Estimate T_p(A, B, C) = E (x^T A y)(x^T B y)(x^T C y) with x, y ~ spec."""
    n = spec.dim
    A, B, C = (as_symmetric(M, name, n) for M, name in ((A, "A"), (B, "B"), (C, "C")))
    vals = np.concatenate([tensor_values(x, y, A, B, C) for x, y in iter_pairs(spec, spec, pairs, seed)])
    return _estimate(vals, seed)


def _draws(spec, samples, seed, stream=X_STREAM):
    return np.concatenate(list(iter_sample_blocks(spec, samples, seed, stream)))


def thin_shell(spec: DistributionSpec, samples: int, seed: int) -> Estimate:
    """Estimate E(||x|| - sqrt(n))^2."""
    vals = np.concatenate([(np.linalg.norm(x, axis=1) - np.sqrt(spec.dim)) ** 2
                           for x in iter_sample_blocks(spec, samples, seed, X_STREAM)])
    return _estimate(vals, seed)


def quadratic_form_variance(spec: DistributionSpec, A, samples: int, seed: int) -> Estimate:
    """Sample variance of x^T A x; the error is the batch-means error of the centred squares."""
    A = as_symmetric(A, "A", spec.dim)
    x = _draws(spec, samples, seed)
    v = np.einsum("ij,ij->i", x @ A, x)
    z = (v - v.mean()) ** 2
    est = _estimate(z, seed)
    # unbiased variance, same error scale
    m = z.size
    return Estimate(est.value * m / max(m - 1, 1), est.std_error, m, int(seed))


def random_directions(count: int, n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sphere_identity_check(spec: DistributionSpec, samples: int, directions: int, seed: int) -> MetricReport:
    """Compare avg_theta E[<x,th><y,th><x,y>^2] with (1/n) E<x,y>^3 on shared pairs.

    The error bar is the spread over directions: given the pairs, the
    direction average is an unbiased estimate of the right-hand side.
    """
    n = spec.dim
    if n == 1:
        theta = np.array([[1.0], [-1.0]])
        theta = np.resize(theta, (directions, 1))
    else:
        theta = random_directions(directions, n, rng_stream(seed, AUX_STREAM))
    per_dir = np.zeros(directions)
    third = 0.0
    count = 0
    rows = max(1, (1 << 21) // directions)
    for xb, yb in iter_pairs(spec, spec, samples, seed):
        for s in range(0, xb.shape[0], rows):
            x, y = xb[s:s + rows], yb[s:s + rows]
            ip = np.einsum("ij,ij->i", x, y)
            third += np.sum(ip**3)
            per_dir += ((x @ theta.T) * (y @ theta.T) * (ip**2)[:, None]).sum(axis=0)
            count += ip.size
    per_dir /= count
    lhs = float(per_dir.mean())
    rhs = float(third / count / n)
    se = float(per_dir.std(ddof=1) / np.sqrt(directions)) if directions > 1 else 0.0
    gap = abs(lhs - rhs)
    allowed = 3.0 * se + 1e-12 * max(1.0, abs(rhs))
    return MetricReport("sphere_identity", lhs, rhs, bool(gap <= allowed), allowed - gap, se)


def density_at_median(z: np.ndarray) -> float:
    """Gaussian-KDE estimate of the density of ``z`` at its median (Silverman bandwidth)."""
    z = np.asarray(z, dtype=float)
    sd = z.std(ddof=1)
    q75, q25 = np.percentile(z, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    h = 0.9 * spread * z.size ** (-0.2)
    med = np.median(z)
    return float(stats.norm.pdf((z - med) / h).mean() / h)


def halfspace_cheeger(spec: DistributionSpec, direction_count: int, samples: int, seed: int,
                      include_axes: bool = False) -> CheegerEstimate:
    """Scan halfspaces through the median along random directions.

    With ``include_axes`` the coordinate axes are probed in addition to the
    ``direction_count`` random directions.
    """
    if direction_count < 1:
        raise ValueError("direction_count must be >= 1")
    n = spec.dim
    theta = random_directions(direction_count, n, rng_stream(seed, AUX_STREAM))
    if include_axes:
        theta = np.vstack([np.eye(n), theta])
    x = _draws(spec, samples, seed)
    proj = x @ theta.T
    per = np.array([0.5 / density_at_median(proj[:, k]) for k in range(theta.shape[0])])
    return CheegerEstimate(float(per.max()), int(theta.shape[0]), per)


def poincare_check(spec: DistributionSpec, A, samples: int, cheeger_estimate, C: float, seed: int) -> MetricReport:
    """Check Var(x^T A x) <= C * psi^2 * E||2 A x||^2 on one shared sample."""
    A = as_symmetric(A, "A", spec.dim)
    psi = cheeger_estimate.value if isinstance(cheeger_estimate, CheegerEstimate) else float(cheeger_estimate)
    x = _draws(spec, samples, seed)
    ax = x @ A
    v = np.einsum("ij,ij->i", ax, x)
    lhs = float(v.var(ddof=1)) if v.size > 1 else 0.0
    grad = 4.0 * float(np.einsum("ij,ij->i", ax, ax).mean())
    rhs = C * psi**2 * grad
    return MetricReport("poincare", lhs, rhs, bool(lhs <= rhs + 1e-12 * max(1.0, rhs)), rhs - lhs)
