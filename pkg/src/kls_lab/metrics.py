"""One-dimensional Wasserstein and total-variation machinery.

In one dimension the monotone (quantile) coupling is optimal for every convex
cost, so all W_p computations here reduce to sorted-sample comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Empirical1D:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("empirical sample is empty")
        if np.any(np.diff(v) < 0):
            v = np.sort(v)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_samples(cls, x) -> "Empirical1D":
        return cls(np.sort(np.asarray(x, dtype=float).ravel()))

    @property
    def count(self) -> int:
        return self.values.size

    def __len__(self):
        return self.count


@dataclass(frozen=True)
class MetricReport:
    """Outcome of a one-sided check ``lhs <= rhs``.

    ``slack`` is ``rhs - lhs`` unless a check documents otherwise;
    ``std_error`` is carried for Monte-Carlo checks and is not serialized.
    """

    name: str
    lhs: float
    rhs: float
    satisfied: bool
    slack: float
    std_error: float = float("nan")

    CSV_FIELDS = ("name", "lhs", "rhs", "satisfied", "slack")

    def to_row(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "satisfied": bool(self.satisfied), "slack": self.slack}


def _as_empirical(a) -> Empirical1D:
    return a if isinstance(a, Empirical1D) else Empirical1D.from_samples(a)


def _plotting_positions(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def _quantiles_at(a: Empirical1D, u: np.ndarray) -> np.ndarray:
    if a.count == u.size:
        return a.values
    return np.interp(u, _plotting_positions(a.count), a.values)


def coupled_differences(a, b) -> np.ndarray:
    """Differences ``a_(i) - b_(i)`` under the monotone coupling."""
    a, b = _as_empirical(a), _as_empirical(b)
    u = _plotting_positions(max(a.count, b.count))
    return _quantiles_at(a, u) - _quantiles_at(b, u)


def w_p_empirical(a, b, p: float = 2.0) -> float:
    """W_p between two empirical laws via the quantile coupling.

    Unequal sizes are handled by linear quantile interpolation onto the
    plotting positions (i - 0.5)/N of the larger sample.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    d = np.abs(coupled_differences(a, b))
    return float(np.mean(d**p) ** (1.0 / p))


def w_p_vs_normal(a, variance: float = 1.0, p: float = 2.0) -> float:
    """W_p between an empirical law and N(0, variance)."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = _as_empirical(a)
    q = np.sqrt(variance) * stats.norm.ppf(_plotting_positions(a.count))
    return float(np.mean(np.abs(a.values - q) ** p) ** (1.0 / p))


def tv_estimate(a, b) -> float:
    """Histogram estimate of d_TV on a shared Freedman-Diaconis grid."""
    a, b = _as_empirical(a), _as_empirical(b)
    pooled = np.concatenate([a.values, b.values])
    lo, hi = pooled.min(), pooled.max()
    q75, q25 = np.percentile(pooled, [75, 25])
    width = 2.0 * (q75 - q25) * pooled.size ** (-1.0 / 3.0)
    if hi <= lo:
        return 0.0
    if width <= 0:
        width = hi - lo
    bins = max(1, int(np.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, bins + 1)
    ha = np.histogram(a.values, edges)[0] / a.count
    hb = np.histogram(b.values, edges)[0] / b.count
    return float(0.5 * np.abs(ha - hb).sum())


def check_tv_w1(a, b, C: float = 2.5, tol: float = 1e-12) -> MetricReport:
    """One-sided check d_TV <= C * sqrt(W_1) for isotropic log-concave scalar laws."""
    lhs = tv_estimate(a, b)
    rhs = C * np.sqrt(w_p_empirical(a, b, 1.0))
    return MetricReport("tv_w1", lhs, float(rhs), bool(lhs <= rhs + tol), float(rhs - lhs))


def ws_wt_bound(ws: float, s: float, t: float, n: int, c: float = 10.0) -> float:
    """Right-hand side of the W_t-by-W_s comparison, given W_s itself."""
    wss = ws**s
    k = c**t * t ** (2 * t)
    # x * log^{t-s}(k/x) -> 0 as x -> 0
    head = c * wss * max(np.log(k / wss), 0.0) ** (t - s) if wss > 0 else 0.0
    return float(head + k * np.exp(-c * np.sqrt(n)))


def check_ws_wt(a, b, s: float, t: float, n: int, c: float = 10.0, tol: float = 1e-12) -> MetricReport:
    """Check W_t^t (under the W_s-optimal coupling) against the W_s-based bound.

    Inputs are expected on the <x, y>/sqrt(n) scale; ``n`` enters only the
    exponential remainder term.
    """
    if not 1 <= s < t:
        raise ValueError(f"need 1 <= s < t, got s={s}, t={t}")
    d = np.abs(coupled_differences(a, b))
    lhs = float(np.mean(d**t))
    ws = float(np.mean(d**s) ** (1.0 / s))
    rhs = ws_wt_bound(ws, s, t, n, c)
    return MetricReport(f"ws_wt_s{s:g}_t{t:g}", lhs, rhs, bool(lhs <= rhs + tol), rhs - lhs)
