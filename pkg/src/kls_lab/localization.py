"""Stochastic localization on a weighted particle cloud.

The tilted law at time t is p_t(x) ∝ exp(c^T x - t/2 |x|^2) p(x) with
dc = dW + mu_t dt. Weights are recomputed from scratch from (t, c) at every
step, so no error accumulates in them; only the Euler-Maruyama update of c
is discretized.

Backends
--------
``joint``    one cloud of M points in R^n with joint weights (any family).
``product``  for product families the tilt factorizes over coordinates, so
             each coordinate is localized on its own column of the cloud.
             Same samples and exact weights, but the effective sample size
             no longer decays exponentially in n.
``gaussian`` closed form for the standard Gaussian: mu = c/(1+t), A = I/(1+t).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ._util import batch_means, rng_stream
from .distributions import DistributionSpec, sample
from .metrics import MetricReport
from .moments import Estimate

log = logging.getLogger(__name__)

MIN_PARTICLES = 1000
DEFAULT_ESS_FLOOR = 0.02
CLOUD_STREAM, NOISE_STREAM, Y_STREAM, RUN_STREAM = 10, 11, 12, 13
BACKENDS = ("auto", "joint", "product", "gaussian")


class DegenerateCloud(RuntimeError):
    """Raised when the effective sample size falls below the configured floor."""

    def __init__(self, state, floor):
        super().__init__(f"ESS {state.ess:.1f} below floor {floor:.1f} at t={state.t:.4g}")
        self.state = state


# ---------------------------------------------------------------- backends

def _normalized(lw, axis=None):
    return lw - logsumexp(lw, axis=axis, keepdims=axis is not None)


class JointCloud:
    name = "joint"

    def __init__(self, X: np.ndarray):
        self.X = X
        self.sq = np.einsum("ij,ij->i", X, X)

    @property
    def size(self):
        return self.X.shape[0]

    def log_weights(self, t, c):
        return _normalized(self.X @ c - 0.5 * t * self.sq)

    def moments(self, t, c):
        w = np.exp(self.log_weights(t, c))
        mu = w @ self.X
        Y = self.X - mu  # two-pass: centre before forming the covariance
        cov = (Y * w[:, None]).T @ Y
        return mu, 0.5 * (cov + cov.T), float(1.0 / np.sum(w * w))

    def halfspace_mass(self, t, c, mu, cov, normal, offset):
        w = np.exp(self.log_weights(t, c))
        return float(w[self.X @ normal > offset].sum())


class ProductCloud:
    name = "product"

    def __init__(self, X: np.ndarray):
        self.X = X
        # coordinate-major copies so per-coordinate reductions run over contiguous memory
        self.Xt = np.ascontiguousarray(X.T)
        self.X2t = self.Xt * self.Xt
        self._key = None

    @property
    def size(self):
        return self.X.shape[0]

    def weights(self, t, c):
        """Per-coordinate normalized weights, shape (n, M); cached for the last (t, c)."""
        key = (t, c.tobytes())
        if key != self._key:
            lw = self.Xt * c[:, None] - (0.5 * t) * self.X2t
            lw -= lw.max(axis=1, keepdims=True)
            W = np.exp(lw)
            W /= W.sum(axis=1, keepdims=True)
            self._key, self._W = key, W
        return self._W

    def log_weights(self, t, c):
        """Per-coordinate normalized log-weights, shape (M, n)."""
        return _normalized(self.X * c - 0.5 * t * self.X * self.X, axis=0)

    def moments(self, t, c):
        W = self.weights(t, c)
        mu = np.einsum("ij,ij->i", W, self.Xt)
        var = np.einsum("ij,ij->i", W, (self.Xt - mu[:, None]) ** 2)
        ess = 1.0 / np.einsum("ij,ij->i", W, W)
        return mu, np.diag(var), float(ess.min())

    def halfspace_mass(self, t, c, mu, cov, normal, offset):
        axes = np.flatnonzero(normal)
        if axes.size != 1:
            raise ValueError("the product backend tracks coordinate halfspaces only")
        i = axes[0]
        W = self.weights(t, c)[i]
        return float(W[self.Xt[i] * normal[i] > offset].sum())


class GaussianClosedForm:
    name = "gaussian"

    def __init__(self, n: int):
        self.n = n

    size = np.inf

    def log_weights(self, t, c):
        return None

    def moments(self, t, c):
        return gaussian_oracle(self.n, t, c) + (np.inf,)

    def halfspace_mass(self, t, c, mu, cov, normal, offset):
        sd = np.sqrt(normal @ cov @ normal)
        return float(stats.norm.sf((offset - normal @ mu) / sd))


def gaussian_oracle(n: int, t: float, c) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of the tilted standard Gaussian."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    return c / (1.0 + t), np.eye(n) / (1.0 + t)


def resolve_backend(spec: DistributionSpec, backend: str) -> str:
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "auto":
        return "product" if spec.is_product else "joint"
    if backend == "product" and not spec.is_product:
        raise ValueError(f"{spec.family} is not a product measure")
    if backend == "gaussian" and spec.family != "gaussian":
        raise ValueError("the closed-form backend applies to the gaussian family only")
    return backend


# ---------------------------------------------------------------- state

@dataclass(frozen=True)
class LocalizationState:
    t: float
    c: np.ndarray
    mu: np.ndarray
    cov: np.ndarray
    ess: float
    backend: object = field(repr=False)

    @property
    def cloud(self):
        return getattr(self.backend, "X", None)

    @property
    def particles(self):
        return self.backend.size

    @property
    def log_weights(self):
        return self.backend.log_weights(self.t, self.c)


def _at(backend, t, c) -> LocalizationState:
    mu, cov, ess = backend.moments(t, c)
    return LocalizationState(float(t), c, mu, cov, ess, backend)


def init_cloud(spec: DistributionSpec, particles: int, seed: int, backend: str = "auto") -> LocalizationState:
    """State at t = 0, c = 0 with a fresh cloud of ``particles`` draws from ``spec``."""
    kind = resolve_backend(spec, backend)
    if kind == "gaussian":
        impl = GaussianClosedForm(spec.dim)
    else:
        if particles < MIN_PARTICLES:
            raise ValueError(f"need at least {MIN_PARTICLES} particles, got {particles}")
        X = sample(spec, particles, seed, CLOUD_STREAM).data
        impl = ProductCloud(X) if kind == "product" else JointCloud(X)
    return _at(impl, 0.0, np.zeros(spec.dim))


def _advance(state, t_new, dt, dW, ess_floor):
    c = state.c + dW + state.mu * dt
    new = _at(state.backend, t_new, c)
    floor = ess_floor * state.particles
    if new.ess < floor:
        raise DegenerateCloud(new, floor)
    return new


def step(state: LocalizationState, dt: float, rng: np.random.Generator | None = None, dW=None,
         ess_floor: float = DEFAULT_ESS_FLOOR) -> LocalizationState:
    """One Euler-Maruyama step c <- c + dW + mu dt; moments are recomputed in closed form.

    Pass either ``rng`` (increments drawn as sqrt(dt) * N(0, I)) or explicit
    increments ``dW``. Raises ``DegenerateCloud`` when the ESS drops below
    ``ess_floor * M``.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return state
    if dW is None:
        if rng is None:
            raise ValueError("need rng or dW")
        dW = np.sqrt(dt) * rng.standard_normal(state.c.size)
    return _advance(state, state.t + dt, dt, np.asarray(dW, dtype=float), ess_floor)


def brownian_increments(steps: int, n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    return np.sqrt(dt) * rng.standard_normal((steps, n))


def coarsen(increments: np.ndarray, factor: int = 2) -> np.ndarray:
    """Sum consecutive groups of increments: the same path on a grid ``factor`` times coarser."""
    steps, n = increments.shape
    if steps % factor:
        raise ValueError("number of increments must be divisible by factor")
    return increments.reshape(steps // factor, factor, n).sum(axis=1)


# ---------------------------------------------------------------- traces

@dataclass(frozen=True)
class Halfspace:
    """The set {x : normal . x > offset}."""

    normal: np.ndarray
    offset: float = 0.0
    name: str = "h"

    @classmethod
    def coordinate(cls, i: int, n: int, offset: float = 0.0, name: str | None = None):
        e = np.zeros(n)
        e[i] = 1.0
        return cls(e, offset, name or f"x{i + 1}")


def phi(cov: np.ndarray, q: int) -> float:
    """Tr((A - I)^q)."""
    ev = np.linalg.eigvalsh(cov - np.eye(cov.shape[0]))
    return float(np.sum(ev**q))


def phi_drift(cov: np.ndarray, q: int) -> float:
    """-q Tr((A - I)^(q-1) A^2): the drift of Tr((A - I)^q) when third moments vanish."""
    lam, V = np.linalg.eigh(cov)
    return float(-q * np.sum((lam - 1.0) ** (q - 1) * lam**2))


@dataclass
class LocalizationTrace:
    """Per-step record of one localization run."""

    spec_id: str
    seed: int
    q: int
    backend: str
    columns: dict
    set_names: list
    degenerate: bool = False
    halt_time: float = float("nan")
    covs: np.ndarray | None = field(default=None, repr=False)
    mus: np.ndarray | None = field(default=None, repr=False)

    BASE_COLUMNS = ("t", "mu_norm", "a_op", "tr_a2", "phi_q", "ess")

    @property
    def header(self) -> list[str]:
        return list(self.BASE_COLUMNS) + [f"g_{s}" for s in self.set_names]

    def __getitem__(self, key):
        return self.columns[key]

    def __len__(self):
        return len(self.columns["t"])

    def rows(self):
        cols = [self.columns[h] for h in self.header]
        return [list(r) for r in zip(*cols)]


def run_trace(spec: DistributionSpec, T: float, dt: float, q: int = 2, tracked_halfspaces=(),
              particles: int = 100_000, seed: int = 0, *, backend: str = "auto",
              ess_floor: float = DEFAULT_ESS_FLOOR, increments: np.ndarray | None = None,
              keep_cov: bool = False) -> LocalizationTrace:
    """Run one localization path to time T, recording a row per step.

    ``increments`` overrides the Brownian increments (shape (T/dt, n)); use
    it with :func:`coarsen` to compare step sizes on the same path. A run
    whose ESS drops below the floor stops early and is marked degenerate.
    """
    if q < 2 or q % 2:
        raise ValueError(f"q must be an even integer >= 2, got {q}")
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    steps = int(round(T / dt))
    state = init_cloud(spec, particles, seed, backend)
    n = spec.dim
    if increments is None:
        increments = brownian_increments(steps, n, dt, rng_stream(seed, NOISE_STREAM))
    elif increments.shape != (steps, n):
        raise ValueError(f"increments must have shape {(steps, n)}, got {increments.shape}")
    sets = list(tracked_halfspaces)
    names = [h.name for h in sets]
    if len(set(names)) != len(names):
        names = [f"{h.name}{k}" for k, h in enumerate(sets)]
    cols = {k: [] for k in LocalizationTrace.BASE_COLUMNS}
    cols.update({f"g_{s}": [] for s in names})
    covs, mus = [], []

    def record(s):
        lam = np.linalg.eigvalsh(s.cov)
        cols["t"].append(s.t)
        cols["mu_norm"].append(float(np.linalg.norm(s.mu)))
        cols["a_op"].append(float(np.abs(lam).max()))
        cols["tr_a2"].append(float(np.sum(lam**2)))
        cols["phi_q"].append(float(np.sum((lam - 1.0) ** q)))
        cols["ess"].append(s.ess)
        for h, name in zip(sets, names):
            cols[f"g_{name}"].append(s.backend.halfspace_mass(s.t, s.c, s.mu, s.cov, h.normal, h.offset))
        mus.append(s.mu)
        if keep_cov:
            covs.append(s.cov)

    record(state)
    degenerate, halt = False, float("nan")
    for k in range(steps):
        try:
            state = _advance(state, (k + 1) * dt, dt, increments[k], ess_floor)
        except DegenerateCloud as exc:
            degenerate, halt = True, exc.state.t
            log.info("run %s halted: %s", seed, exc)
            break
        record(state)
    return LocalizationTrace(spec.spec_id, int(seed), q, state.backend.name,
                             {k: np.asarray(v, dtype=float) for k, v in cols.items()}, names,
                             degenerate, halt, np.asarray(covs) if keep_cov else None, np.asarray(mus))


def run_seed(seed: int, run: int) -> int:
    return int(rng_stream(seed, RUN_STREAM, run).integers(2**63))


# ---------------------------------------------------------------- checks

def phi_drift_check(trace: LocalizationTrace, t_start: float, t_stop: float, q: int | None = None) -> tuple[float, float]:
    """Finite difference of Phi over [t_start, t_stop] vs the time-averaged analytic drift.

    Returns ``(difference_quotient, mean_drift)``; the drift is
    -q Tr((A - I)^(q-1) A^2) evaluated on the recorded covariances
    (requires a trace run with ``keep_cov=True``). ``q`` defaults to the
    trace's own exponent; any other even q is evaluated from the stored
    covariances.
    """
    if trace.covs is None:
        raise ValueError("trace was recorded without covariances")
    q = trace.q if q is None else q
    t = trace["t"]
    i, j = np.searchsorted(t, [t_start - 1e-12, t_stop - 1e-12])
    if j >= len(t) or i >= j:
        raise ValueError("window not covered by the trace")
    if q == trace.q:
        ph_i, ph_j = trace["phi_q"][[i, j]]
    else:
        ph_i, ph_j = (phi(a, q) for a in trace.covs[[i, j]])
    drift = np.array([phi_drift(a, q) for a in trace.covs[i:j + 1]])
    span = t[j] - t[i]
    return float((ph_j - ph_i) / span), float(np.trapezoid(drift, t[i:j + 1]) / span)


@dataclass(frozen=True)
class PotentialAudit:
    U: float
    premises: bool
    conclusion: bool

    @property
    def consistent(self) -> bool:
        return (not self.premises) or self.conclusion


def audit_potential(trace: LocalizationTrace, U: float) -> PotentialAudit:
    """Check the potential-bounding implication on a recorded path.

    The recorded increments of Phi are split into the analytic drift
    (third moments neglected) and a remainder treated as the martingale
    part. Premises: Phi_0 <= U/2, max drift * T <= U/8, remainder
    quadratic variation <= (U/8)^2. Conclusion: max Phi <= U.
    """
    if trace.covs is None:
        raise ValueError("trace was recorded without covariances")
    t, ph = trace["t"], trace["phi_q"]
    drift = np.array([phi_drift(a, trace.q) for a in trace.covs])
    dt = np.diff(t)
    mart = np.diff(ph) - drift[:-1] * dt
    horizon = t[-1] - t[0]
    premises = ph[0] <= U / 2 and max(drift.max(), 0.0) * horizon <= U / 8 and np.sum(mart**2) <= (U / 8) ** 2
    return PotentialAudit(float(U), bool(premises), bool(ph.max() <= U))


@dataclass(frozen=True)
class MartingaleResult:
    report: MetricReport
    band: MetricReport
    g0: np.ndarray = field(repr=False)
    gT: np.ndarray = field(repr=False)
    band_frequency: float = float("nan")
    exceed_frequency: float = float("nan")
    degenerate_runs: int = 0


def martingale_check(spec: DistributionSpec, halfspace: Halfspace, T: float, runs: int = 100,
                     particles: int = 10_000, seed: int = 0, *, dt: float = 1e-3, backend: str = "auto",
                     ess_floor: float = DEFAULT_ESS_FLOOR) -> MartingaleResult:
    """Set measures g_t = p_t(E) are martingales; compare mean g_T with mean g_0 over runs.

    Also reports the frequency of {1/4 <= g_T <= 3/4} against the bound
    0.9 - P(int_0^T ||A_s||_op ds >= 1/64) - 3 SE.
    """
    if runs < 30:
        raise ValueError(f"need at least 30 runs, got {runs}")
    g0, gT, integral = np.empty(runs), np.empty(runs), np.empty(runs)
    degenerate = 0
    for r in range(runs):
        rs = run_seed(seed, r)
        if T == 0:
            state = init_cloud(spec, particles, rs, backend)
            g = state.backend.halfspace_mass(0.0, state.c, state.mu, state.cov, halfspace.normal, halfspace.offset)
            g0[r] = gT[r] = g
            integral[r] = 0.0
            continue
        tr = run_trace(spec, T, dt, 2, [halfspace], particles, rs, backend=backend, ess_floor=ess_floor)
        g = tr[f"g_{tr.set_names[0]}"]
        degenerate += tr.degenerate
        g0[r], gT[r] = g[0], g[-1]
        integral[r] = np.trapezoid(tr["a_op"], tr["t"])
    return summarize_martingale(g0, gT, integral, degenerate)


def summarize_martingale(g0, gT, a_op_integral, degenerate_runs: int = 0) -> MartingaleResult:
    """Martingale and volume-band reports from per-run g_0, g_T and int_0^T ||A_s||_op ds."""
    g0, gT, integral = (np.asarray(v, dtype=float) for v in (g0, gT, a_op_integral))
    runs = g0.size
    mean, se = batch_means(gT - g0)
    se = 0.0 if not np.isfinite(se) else se
    gap = abs(mean)
    report = MetricReport("martingale", gap, 3 * se, bool(gap <= 3 * se + 1e-15), 3 * se - gap, se)
    freq = float(np.mean((gT >= 0.25) & (gT <= 0.75)))
    freq_se = float(np.sqrt(freq * (1 - freq) / runs))
    exceed = float(np.mean(integral >= 1.0 / 64))
    bound = 0.9 - exceed - 3 * freq_se
    band = MetricReport("volume_band", bound, freq, bool(bound <= freq), freq - bound, freq_se)
    return MartingaleResult(report, band, g0, gT, freq, exceed, int(degenerate_runs))


def operator_norm_probe(spec: DistributionSpec, T: float, runs: int = 100, particles: int = 10_000,
                        seed: int = 0, *, dt: float = 1e-3, backend: str = "auto", level: float = 2.0) -> float:
    """Fraction of runs with max_{t <= T} ||A_t||_op >= level."""
    hits = 0
    for r in range(runs):
        tr = run_trace(spec, T, min(dt, T), 2, (), particles, run_seed(seed, r), backend=backend)
        hits += tr["a_op"].max() >= level
    return hits / runs


@dataclass(frozen=True)
class CouplingResult:
    """Squared distance sample E[(<x,y> - L)^2] split at T.

    ``squared`` = truncated part + extrapolated tail; ``tail`` is the mean
    extrapolated tail alone.
    """

    squared: Estimate
    truncated: Estimate
    tail: float

    @property
    def rms(self) -> float:
        return float(np.sqrt(max(self.squared.value, 0.0)))


def coupled_clt_distance(spec_p: DistributionSpec, spec_q: DistributionSpec, T: float, dt: float,
                         runs: int, particles: int = 10_000, seed: int = 0, *, backend: str = "auto",
                         y=None, ess_floor: float = 0.0) -> CouplingResult:
    """Couple <x, y> with L = int sqrt(Tr A_t^2) dW^1 along one localization path per run.

    <x, y> = int sqrt(y^T A_t^2 y) dW^1 with dW^1 = y^T A_t dW / |A_t y|, so
    both integrals share the scalar Brownian increments. Beyond T the
    integrand difference is extrapolated with 1/t decay, which adds
    d_T^2 * T to the squared distance of each run.

    ``backend="auto"`` uses the closed form for a Gaussian ``spec_p``.
    """
    if spec_p.dim != spec_q.dim:
        raise ValueError(f"dimension mismatch: {spec_p.dim} vs {spec_q.dim}")
    if backend == "auto" and spec_p.family == "gaussian":
        backend = "gaussian"
    n = spec_p.dim
    steps = int(round(T / dt))
    trunc, total = np.empty(runs), np.empty(runs)
    for r in range(runs):
        rs = run_seed(seed, r)
        yv = sample(spec_q, 1, rs, Y_STREAM).data[0] if y is None else np.asarray(y, dtype=float)
        state = init_cloud(spec_p, particles, rs, backend)
        dW = brownian_increments(steps, n, dt, rng_stream(rs, NOISE_STREAM))
        acc = 0.0
        d = 0.0
        for k in range(steps + 1):
            A = state.cov
            ay = A @ yv
            a_y = np.sqrt(ay @ ay)
            a_tr = np.sqrt(np.sum(A * A))
            d = a_y - a_tr
            if k == steps:
                break
            dw1 = (ay @ dW[k]) / a_y if a_y > 0 else dW[k][0]
            acc += d * dw1
            try:
                state = _advance(state, (k + 1) * dt, dt, dW[k], ess_floor)
            except DegenerateCloud:
                log.info("coupling run %d degenerate at t=%.3g", r, (k + 1) * dt)
                break
        trunc[r] = acc**2
        total[r] = acc**2 + d**2 * T
    m_tr, se_tr = batch_means(trunc)
    m, se = batch_means(total)
    return CouplingResult(Estimate(m, se, runs, seed), Estimate(m_tr, se_tr, runs, seed), float(np.mean(total - trunc)))


def brownian_reflection_check(t: float, a: float, paths: int, steps: int, seed: int) -> MetricReport:
    """Compare P(max_{s<=t} W_s >= a) with 2 P(W_t >= a) on the same discretized paths.

    The maximum is taken over the grid including s = 0; ``std_error`` is
    the batch-means error of the paired difference.
    """
    if a < 0:
        raise ValueError(f"a must be >= 0, got {a}")
    sd = np.sqrt(t / steps)
    chunk = max(1, (1 << 22) // steps)
    hit_max, hit_end = [], []
    for k, start in enumerate(range(0, paths, chunk)):
        rows = min(chunk, paths - start)
        W = np.cumsum(sd * rng_stream(seed, k).standard_normal((rows, steps)), axis=1)
        hit_max.append(np.maximum(W.max(axis=1), 0.0) >= a)
        hit_end.append(W[:, -1] >= a)
    hm = np.concatenate(hit_max).astype(float)
    he = np.concatenate(hit_end).astype(float)
    diff = hm - 2 * he
    mean, se = batch_means(diff)
    lhs, rhs = float(hm.mean()), float(2 * he.mean())
    se = 0.0 if not np.isfinite(se) else se
    gap = abs(mean)
    return MetricReport("reflection", lhs, rhs, bool(gap <= 3 * se + 1e-15), 3 * se - gap, se)
