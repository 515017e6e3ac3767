"""Exact samplers and unnormalized log-densities for isotropic log-concave families.

Every family here is scaled so that its law has zero mean and identity
covariance; the scaling constants are analytic, never estimated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ._util import rng_stream

FAMILIES = ("gaussian", "cube", "ball", "laplace_prod", "shifted_exp_prod")
PRODUCT_FAMILIES = ("gaussian", "cube", "laplace_prod", "shifted_exp_prod")

# Rows per RNG block. Draws for block k always come from stream (seed, stream, k),
# so a sample of N rows is a prefix-stable, schedule-independent function of the seed.
BLOCK_ROWS = 1 << 16


@dataclass(frozen=True)
class DistributionSpec:
    """A named isotropic log-concave law on R^dim.

    ``scale`` is the family's isotropization constant: cube half-width,
    ball radius, Laplace scale, exponential rate (1 for gaussian).
    """

    family: str
    dim: int
    scale: float

    @property
    def spec_id(self) -> str:
        return f"{self.family}-n{self.dim}"

    @property
    def is_product(self) -> bool:
        return self.family in PRODUCT_FAMILIES


@dataclass(frozen=True)
class SampleMatrix:
    data: np.ndarray = field(repr=False)
    spec_id: str
    seed: int

    @property
    def shape(self):
        return self.data.shape


def make_distribution(family: str, n: int, params: dict | None = None) -> DistributionSpec:
    """Build the isotropic member of ``family`` in dimension ``n``.

    ``params`` is accepted for forward compatibility; no family currently
    takes parameters because every scale is forced by isotropy.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    if int(n) != n or n < 1:
        raise ValueError(f"dimension must be a positive integer, got {n!r}")
    if params:
        raise ValueError(f"family {family!r} takes no parameters, got {sorted(params)}")
    n = int(n)
    scale = {
        "gaussian": 1.0,
        "cube": np.sqrt(3.0),
        "ball": np.sqrt(n + 2.0),
        "laplace_prod": 1.0 / np.sqrt(2.0),
        "shifted_exp_prod": 1.0,
    }[family]
    return DistributionSpec(family, n, float(scale))


def _draw(spec: DistributionSpec, rows: int, rng: np.random.Generator) -> np.ndarray:
    n = spec.dim
    if spec.family == "gaussian":
        return rng.standard_normal((rows, n))
    if spec.family == "cube":
        return rng.uniform(-spec.scale, spec.scale, (rows, n))
    if spec.family == "laplace_prod":
        return rng.laplace(0.0, spec.scale, (rows, n))
    if spec.family == "shifted_exp_prod":
        return rng.standard_exponential((rows, n)) / spec.scale - 1.0
    # ball: uniform direction times radius R * U^(1/n), the inverse of the
    # radial CDF (r/R)^n (a Beta(n, 1) law)
    g = rng.standard_normal((rows, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = spec.scale * rng.random(rows) ** (1.0 / n)
    return g * r[:, None]


def iter_sample_blocks(spec: DistributionSpec, count: int, seed: int, stream: int = 0) -> Iterator[np.ndarray]:
    """Yield the rows of ``sample(spec, count, seed, stream)`` block by block."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    done = 0
    k = 0
    while done < count:
        rows = min(BLOCK_ROWS, count - done)
        yield _draw(spec, rows, rng_stream(seed, stream, k))
        done += rows
        k += 1


def sample(spec: DistributionSpec, count: int, seed: int, stream: int = 0) -> SampleMatrix:
    """Draw ``count`` i.i.d. rows; identical arguments give identical bits."""
    data = np.concatenate(list(iter_sample_blocks(spec, count, seed, stream)), axis=0)
    return SampleMatrix(data, spec.spec_id, int(seed))


def log_density(spec: DistributionSpec, point) -> np.ndarray | float:
    """Unnormalized log-density; ``-inf`` outside the support.

    Accepts a single point of length n or an (N, n) array of points.
    """
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != spec.dim:
        raise ValueError(f"point has dimension {x.shape[-1]}, spec has {spec.dim}")
    fam = spec.family
    if fam == "gaussian":
        out = -0.5 * np.einsum("ij,ij->i", x, x)
    elif fam == "cube":
        inside = np.all(np.abs(x) <= spec.scale, axis=1)
        out = np.where(inside, 0.0, -np.inf)
    elif fam == "ball":
        inside = np.einsum("ij,ij->i", x, x) <= spec.scale**2
        out = np.where(inside, 0.0, -np.inf)
    elif fam == "laplace_prod":
        out = -np.abs(x).sum(axis=1) / spec.scale
    else:
        inside = np.all(x >= -1.0, axis=1)
        with np.errstate(invalid="ignore"):
            out = np.where(inside, -spec.scale * (x + 1.0).sum(axis=1), -np.inf)
    return float(out[0]) if single else out
