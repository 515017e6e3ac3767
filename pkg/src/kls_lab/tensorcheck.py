"""Matrix trace inequalities and shared-pair checks of 3-tensor inequalities.

Deterministic checks accept single matrices or stacks of shape (..., n, n)
and return a bool (or bool array). Stochastic checks evaluate both sides on
the same (x, y) pairs and count a violation only when the excess is more
than three standard errors of the per-pair difference.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._util import as_symmetric, batch_means, check_psd, rng_stream
from .distributions import DistributionSpec, iter_sample_blocks
from .moments import X_STREAM, iter_pairs, tensor_values

ENSEMBLE_KINDS = ("psd_wishart", "symmetric_goe", "diagonal", "low_rank", "projection")
DET_TOL = 1e-9
CLAMP = 1e-12


# ---------------------------------------------------------------- matrix functions

def _eig(M):
    lam, V = np.linalg.eigh(M)
    return lam, V


def _rebuild(f_lam, V):
    return (V * f_lam[..., None, :]) @ np.swapaxes(V, -1, -2)


def sym_abs(M) -> np.ndarray:
    """|M| = sqrt(M^2): eigenvalues replaced by their absolute values."""
    lam, V = _eig(np.asarray(M, dtype=float))
    return _rebuild(np.abs(lam), V)


def _clamped(lam):
    top = np.abs(lam).max(axis=-1, keepdims=True)
    return np.where(lam < CLAMP * top, 0.0, lam)


def psd_power(M, a: float) -> np.ndarray:
    """M^a for PSD M, eigenvalues below 1e-12 * lambda_max clamped to zero (0^0 = 1)."""
    lam, V = _eig(np.asarray(M, dtype=float))
    return _rebuild(_clamped(lam) ** a, V)


def abs_power(M, a: float) -> np.ndarray:
    """|M|^a for symmetric M."""
    lam, V = _eig(np.asarray(M, dtype=float))
    return _rebuild(np.abs(lam) ** a, V)


def schatten_trace(M, s: float) -> np.ndarray:
    """Tr |M|^s."""
    return (np.abs(np.linalg.eigvalsh(M)) ** s).sum(axis=-1)


def _tr(M):
    return np.trace(M, axis1=-2, axis2=-1)


def _fro(M):
    return np.sqrt((np.asarray(M) ** 2).sum(axis=(-2, -1)))


def _op(M):
    return np.abs(np.linalg.eigvalsh(M)).max(axis=-1)


def _result(ok):
    return bool(ok) if np.ndim(ok) == 0 else ok


# ---------------------------------------------------------------- ensembles

@dataclass(frozen=True)
class MatrixEnsemble:
    """Random symmetric matrices of a given kind; ``rank`` applies to low_rank/projection."""

    kind: str
    dim: int
    seed: int
    rank: int | None = None

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.rank is None and self.kind in ("low_rank", "projection"):
            object.__setattr__(self, "rank", max(1, self.dim // 2))

    @property
    def label(self) -> str:
        return f"{self.kind}({self.rank})" if self.rank is not None else self.kind

    @property
    def is_psd(self) -> bool:
        return self.kind in ("psd_wishart", "projection")

    def draw(self, count: int, stream: int = 0, psd: bool = False) -> np.ndarray:
        """``count`` matrices as an array (count, n, n); ``psd`` maps M to |M|."""
        rng = rng_stream(self.seed, stream)
        n = self.dim
        if self.kind == "psd_wishart":
            G = rng.standard_normal((count, n, n))
            M = G @ np.swapaxes(G, 1, 2) / n
        elif self.kind == "symmetric_goe":
            G = rng.standard_normal((count, n, n))
            M = (G + np.swapaxes(G, 1, 2)) / np.sqrt(2 * n)
        elif self.kind == "diagonal":
            M = np.zeros((count, n, n))
            idx = np.arange(n)
            M[:, idx, idx] = rng.standard_normal((count, n))
        elif self.kind == "low_rank":
            U = rng.standard_normal((count, n, self.rank))
            lam = rng.standard_normal((count, self.rank))
            M = (U * lam[:, None, :]) @ np.swapaxes(U, 1, 2) / n
        else:
            Q = np.linalg.qr(rng.standard_normal((count, n, self.rank)))[0]
            M = Q @ np.swapaxes(Q, 1, 2)
        M = 0.5 * (M + np.swapaxes(M, 1, 2))
        if psd and not self.is_psd:
            M = sym_abs(M)
            M = 0.5 * (M + np.swapaxes(M, 1, 2))
        return M

    def validate(self, M, psd: bool = False) -> bool:
        """True when every matrix in ``M`` matches the ensemble's structural invariants."""
        M = np.asarray(M, dtype=float).reshape(-1, self.dim, self.dim)
        scale = np.maximum(1.0, np.abs(M).max(axis=(1, 2)))
        if np.any(np.abs(M - np.swapaxes(M, 1, 2)).max(axis=(1, 2)) > 1e-12 * scale):
            return False
        lam = np.linalg.eigvalsh(M)
        top = np.abs(lam).max(axis=1)
        if (self.is_psd or psd) and np.any(lam[:, 0] < -1e-10 * np.maximum(top, 1.0)):
            return False
        if self.kind in ("low_rank", "projection"):
            ranks = (np.abs(lam) > 1e-9 * np.maximum(top, 1e-300)[:, None]).sum(axis=1)
            if np.any(ranks != self.rank):
                return False
        if self.kind == "projection" and not psd:
            if np.abs(M @ M - M).max() > 1e-10:
                return False
        if self.kind == "diagonal":
            off = M - np.einsum("kii->ki", M)[:, :, None] * np.eye(self.dim)
            if np.abs(off).max() > 0 and not psd:
                return False
        return True


# ---------------------------------------------------------------- deterministic checks

def holder_sides(A, B, s: float, t: float):
    if not (s >= 1 and t >= 1 and abs(1.0 / s + 1.0 / t - 1.0) <= 1e-12):
        raise ValueError(f"exponents must satisfy 1/s + 1/t = 1 with s, t >= 1; got s={s}, t={t}")
    lhs = _tr(A @ B)
    rhs = schatten_trace(A, s) ** (1.0 / s) * schatten_trace(B, t) ** (1.0 / t)
    return lhs, rhs, _fro(A) * _fro(B)


def check_matrix_holder(A, B, s: float, t: float):
    """Tr(AB) <= (Tr|A|^s)^(1/s) (Tr|B|^t)^(1/t)."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    lhs, rhs, scale = holder_sides(A, B, s, t)
    return _result(lhs <= rhs + DET_TOL * scale)


def lieb_thirring_sides(A, B, r: float):
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    hb = psd_power(B, 0.5)
    inner = hb @ A @ hb
    lhs = (_clamped(np.linalg.eigvalsh(inner)) ** r).sum(axis=-1)
    rhs = _tr(psd_power(B, r / 2) @ psd_power(A, r) @ psd_power(B, r / 2))
    return lhs, rhs, (_op(A) * _op(B)) ** r * A.shape[-1]


def _require_psd(M, name):
    lam = np.linalg.eigvalsh(M)
    top = np.abs(lam).max(axis=-1)
    if np.any(lam[..., 0] < -1e-10 * np.maximum(top, 1.0)):
        raise ValueError(f"{name} is not positive semi-definite")


def check_lieb_thirring(A, B, r: float):
    """Tr((B^1/2 A B^1/2)^r) <= Tr(B^(r/2) A^r B^(r/2)) for PSD A, B."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    _require_psd(A, "A")
    _require_psd(B, "B")
    lhs, rhs, scale = lieb_thirring_sides(A, B, r)
    return _result(lhs <= rhs + DET_TOL * scale)


def lieb_sides(A, B, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    lhs = _tr(psd_power(A, alpha) @ B @ psd_power(A, 1.0 - alpha) @ B)
    rhs = _tr(A @ B @ B)
    return lhs, rhs, _op(A) * _fro(B) ** 2


def check_lieb(A, B, alpha: float):
    """Tr(A^a B A^(1-a) B) <= Tr(A B^2) for PSD A, symmetric B, a in [0, 1]."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    _require_psd(A, "A")
    lhs, rhs, scale = lieb_sides(A, B, alpha)
    return _result(lhs <= rhs + DET_TOL * scale)


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class IneqTrialReport:
    """Aggregate of inequality trials.

    ``violations`` counts strict failures (deterministic) or CI-separated
    failures (stochastic); ``ci_flagged`` counts point failures that are
    within three standard errors. ``hard`` is False for checks whose
    constants are plug-ins, where exceedances are informative only.
    """

    lemma_id: str
    trials: int
    violations: int
    worst_slack: float
    ci_flagged: int
    hard: bool = True
    max_deviation: float = float("nan")

    CSV_FIELDS = ("lemma_id", "trials", "violations", "worst_slack", "ci_flagged")

    def to_row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}

    def merge(self, other: "IneqTrialReport") -> "IneqTrialReport":
        if other.lemma_id != self.lemma_id:
            raise ValueError("cannot merge reports for different lemmas")
        dev = np.nanmax([self.max_deviation, other.max_deviation]) if not (
            np.isnan(self.max_deviation) and np.isnan(other.max_deviation)) else float("nan")
        return replace(self, trials=self.trials + other.trials,
                       violations=self.violations + other.violations,
                       worst_slack=min(self.worst_slack, other.worst_slack),
                       ci_flagged=self.ci_flagged + other.ci_flagged,
                       hard=self.hard and other.hard, max_deviation=float(dev))

    __add__ = merge


def deterministic_report(lemma_id: str, lhs, rhs, scale) -> IneqTrialReport:
    lhs, rhs, scale = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (lhs, rhs, scale))
    slack = rhs - lhs
    bad = int(np.sum(slack < -DET_TOL * scale))
    return IneqTrialReport(lemma_id, lhs.size, bad, float(slack.min()), 0)


def stochastic_report(lemma_id: str, diff: np.ndarray, hard: bool = True) -> IneqTrialReport:
    """One trial from per-pair values of ``lhs - rhs`` (already linearized if needed)."""
    excess, se = batch_means(diff)
    violated = excess > 0 and excess > 3.0 * se
    flagged = excess > 0 and not violated
    return IneqTrialReport(lemma_id, 1, int(violated), float(-excess), int(flagged), hard)


# ---------------------------------------------------------------- tensor checks

def pair_arrays(spec: DistributionSpec, pairs, seed: int):
    """Materialize (x, y) pairs, or pass through an explicit (x, y) tuple."""
    if isinstance(pairs, tuple):
        x, y = (np.asarray(a, dtype=float) for a in pairs)
        if x.shape != y.shape or x.shape[1] != spec.dim:
            raise ValueError("pair arrays must both have shape (N, n)")
        return x, y
    blocks = list(iter_pairs(spec, spec, int(pairs), seed))
    return np.concatenate([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])


def check_tequ_identity(spec: DistributionSpec, A, B, samples, seed: int, tol: float = 1e-10) -> IneqTrialReport:
    """Compare the all-pairs V-statistic of T(A, B, I) with sum_i Tr(A D_i B D_i).

    D_i is the empirical E x x^T x_i of the same sample, so the two agree
    up to round-off; the report's ``max_deviation`` is the relative gap
    (relative to the V-statistic of absolute values).
    """
    A = as_symmetric(A, "A", spec.dim)
    B = as_symmetric(B, "B", spec.dim)
    if isinstance(samples, np.ndarray):
        X = np.asarray(samples, dtype=float)
    else:
        X = np.concatenate(list(iter_sample_blocks(spec, int(samples), seed, X_STREAM)))
    N = X.shape[0]
    GA, GB, G = X @ A @ X.T, X @ B @ X.T, X @ X.T
    prod = GA * GB * G
    v_stat = prod.mean()
    scale = np.abs(prod).mean()
    D = np.einsum("ki,kj,kl->ijl", X, X, X) / N  # D[i] = mean x x^T x_i
    form1 = np.einsum("ab,ibc,cd,ida->", A, D, B, D)
    form2 = np.einsum("ij,iab,bc,jca->", A, D, B, D)
    dev = max(abs(form1 - v_stat), abs(form2 - v_stat)) / max(scale, 1e-300)
    return IneqTrialReport("tequ", 1, int(dev > tol), float(tol - dev), 0, True, float(dev))


def check_trabs(spec: DistributionSpec, B1, B2, B3, pairs, seed: int) -> IneqTrialReport:
    """T(B1, B2, B3) <= T(|B1|, |B2|, |B3|) on shared pairs."""
    Bs = [as_symmetric(M, f"B{i + 1}", spec.dim) for i, M in enumerate((B1, B2, B3))]
    x, y = pair_arrays(spec, pairs, seed)
    diff = tensor_values(x, y, *Bs) - tensor_values(x, y, *(sym_abs(M) for M in Bs))
    return stochastic_report("trabs", diff)


def check_tensor_positive(spec: DistributionSpec, A1, A2, A3, pairs, seed: int) -> IneqTrialReport:
    """T(A1, A2, A3) >= 0 for PSD arguments."""
    As = [check_psd(M, f"A{i + 1}") for i, M in enumerate((A1, A2, A3))]
    x, y = pair_arrays(spec, pairs, seed)
    return stochastic_report("trabs_psd", -tensor_values(x, y, *As))


def _log_scale(n: int) -> float:
    return max(1.0, float(np.log(n)))


def check_tinq(spec: DistributionSpec, item: int, A, B=None, pairs=10**5, seed: int = 0, *,
               psi: float | None = None, s: float = 2.0, alpha: float = 1.0, beta: float = 0.0,
               C: float = 1.0) -> IneqTrialReport:
    """Shared-pair check of one of the five tensor inequalities.

    Items 1 and 5 are hard checks. Items 2-4 carry unknown universal
    constants: ``psi`` (a halfspace Cheeger estimate), ``C`` and
    ``(alpha, beta)`` are substituted and exceedances are reported with
    ``hard=False``.
    """
    if item not in (1, 2, 3, 4, 5):
        raise ValueError(f"item must be one of 1..5, got {item!r}")
    n = spec.dim
    I = np.eye(n)
    A = as_symmetric(A, "A", n)
    if item >= 3:
        if B is None:
            raise ValueError(f"item {item} needs a second matrix B")
        B = as_symmetric(B, "B", n)
    if item in (2, 3) and psi is None:
        raise ValueError(f"item {item} needs a Cheeger estimate psi")
    x, y = pair_arrays(spec, pairs, seed)
    ip = np.einsum("ij,ij->i", x, y)
    xa = np.einsum("ij,ij->i", x @ A, y)
    lemma = f"tinq{item}"
    if item == 1:
        return stochastic_report(lemma, xa * ip**2 - _op(A) * ip**3)
    if item == 2:
        return stochastic_report(lemma, xa * ip**2 - C * psi**2 * schatten_trace(A, 1), hard=False)
    xb = np.einsum("ij,ij->i", x @ B, y)
    lhs = xa * xb * ip
    if item == 3:
        return stochastic_report(lemma, lhs - C * psi**2 * _op(B) * schatten_trace(A, 1), hard=False)
    if item == 4:
        b_term = _op(B) if beta == 0 else schatten_trace(B, 1.0 / (2 * beta)) ** (2 * beta)
        rhs = C * alpha**2 * _log_scale(n) * b_term * schatten_trace(A, 1)
        return stochastic_report(lemma, lhs - rhs, hard=False)
    t = s / (s - 1.0) if s > 1 else np.inf
    if not np.isfinite(t):
        raise ValueError("item 5 needs s > 1")
    a_vals = tensor_values(x, y, abs_power(A, s), I, I)
    b_vals = tensor_values(x, y, abs_power(B, t), I, I)
    ta, tb = a_vals.mean(), b_vals.mean()
    if ta <= 0 or tb <= 0:
        # degenerate plug-in; compare against zero with the raw lhs error
        return stochastic_report(lemma, lhs)
    rhs = ta ** (1 / s) * tb ** (1 / t)
    # delta-method linearization of the rhs around its estimate
    influence = rhs * ((a_vals - ta) / (s * ta) + (b_vals - tb) / (t * tb))
    return stochastic_report(lemma, lhs - rhs - influence)


def check_liebtr_tensor(spec: DistributionSpec, A, B, C, alpha: float, pairs, seed: int) -> IneqTrialReport:
    """T(B^1/2 A^a B^1/2, B^1/2 A^(1-a) B^1/2, C) <= T(B^1/2 A B^1/2, B, C) on shared pairs."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    A, B, C = (check_psd(M, name) for M, name in ((A, "A"), (B, "B"), (C, "C")))
    hb = psd_power(B, 0.5)
    x, y = pair_arrays(spec, pairs, seed)
    lhs = tensor_values(x, y, hb @ psd_power(A, alpha) @ hb, hb @ psd_power(A, 1 - alpha) @ hb, C)
    rhs = tensor_values(x, y, hb @ A @ hb, B, C)
    return stochastic_report("liebtr", lhs - rhs)


# ---------------------------------------------------------------- suites

def deterministic_suite(dims=(2, 4, 8, 16), trials: int = 1000, seed: int = 0,
                        kinds=ENSEMBLE_KINDS) -> list[IneqTrialReport]:
    """Matrix Hoelder, Lieb-Thirring (r = 2, 3) and Tr(A^a B A^(1-a) B) <= Tr(A B^2) (a = 1/4, 1/2, 3/4)."""
    reports = []
    s_values = np.array([1.25, 1.5, 2.0, 3.0, 5.0])
    for n in dims:
        for k, kind in enumerate(kinds):
            ens = MatrixEnsemble(kind, n, seed + 1009 * n + k)
            tag = f"@{ens.label},n={n}"
            A, B = ens.draw(trials, 0), ens.draw(trials, 1)
            Ap, Bp = ens.draw(trials, 0, psd=True), ens.draw(trials, 1, psd=True)
            s = np.resize(s_values, trials)
            t = s / (s - 1)
            lhs = _tr(A @ B)
            rhs = schatten_trace(A, s[:, None]) ** (1 / s) * schatten_trace(B, t[:, None]) ** (1 / t)
            reports.append(deterministic_report("matrix_holder" + tag, lhs, rhs, _fro(A) * _fro(B)))
            for r in (2, 3):
                reports.append(deterministic_report(f"lieb_thirring_r{r}" + tag, *lieb_thirring_sides(Ap, Bp, r)))
            for a in (0.25, 0.5, 0.75):
                reports.append(deterministic_report(f"lieb_trace_a{a:g}" + tag, *lieb_sides(Ap, B, a)))
    return reports


def _merge_all(reports):
    out = reports[0]
    for r in reports[1:]:
        out = out.merge(r)
    return out


def stochastic_suite(spec: DistributionSpec, trials: int = 200, pairs: int = 200_000, seed: int = 0, *,
                     psi: float | None = None, alpha: float = 1.0, beta: float = 0.0,
                     C: float = 1.0) -> list[IneqTrialReport]:
    """Shared-pair trials of trabs, PSD positivity, tinq 1-5 and liebtr on one spec."""
    n = spec.dim
    x, y = pair_arrays(spec, pairs, seed)
    sym = MatrixEnsemble("symmetric_goe", n, seed + 1)
    psd = MatrixEnsemble("psd_wishart", n, seed + 2)
    S = [sym.draw(trials, k) for k in range(3)]
    P = [psd.draw(trials, k) for k in range(3)]
    out = {}

    def add(rep):
        out[rep.lemma_id] = out[rep.lemma_id].merge(rep) if rep.lemma_id in out else rep

    items = [1, 5] + ([2, 3, 4] if psi is not None else [])
    for k in range(trials):
        add(check_trabs(spec, S[0][k], S[1][k], S[2][k], (x, y), seed))
        add(check_tensor_positive(spec, P[0][k], P[1][k], P[2][k], (x, y), seed))
        for item in items:
            add(check_tinq(spec, item, S[0][k], S[1][k], (x, y), seed, psi=psi, alpha=alpha, beta=beta, C=C))
        add(check_liebtr_tensor(spec, P[0][k], P[1][k], P[2][k], 0.5, (x, y), seed))
    return list(out.values())
