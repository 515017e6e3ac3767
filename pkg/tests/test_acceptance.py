"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line in the summary."""

import filecmp
import itertools

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from kls_lab import cli
from kls_lab._util import rng_stream
from kls_lab.distributions import FAMILIES, make_distribution, sample
from kls_lab.localization import (NOISE_STREAM, Halfspace, brownian_increments, brownian_reflection_check, coarsen,
                                  coupled_clt_distance, martingale_check, phi_drift_check, run_trace)
from kls_lab.metrics import check_tv_w1, w_p_empirical, w_p_vs_normal
from kls_lab.moments import (halfspace_cheeger, inner_products, poincare_check, sphere_identity_check,
                             third_moment_inner)
from kls_lab.tensorcheck import MatrixEnsemble, check_tequ_identity, deterministic_suite, stochastic_suite

SEED = 0


@pytest.fixture(scope="module")
def gaussian_trace():
    spec = make_distribution("gaussian", 8)
    return run_trace(spec, 2.0, 1e-3, 2, [Halfspace.coordinate(0, 8)], 100_000, SEED, keep_cov=True)


def test_c01_isotropy(criterion):
    worst_mean = worst_cov = 0.0
    for family, n in itertools.product(FAMILIES, (2, 8, 32)):
        x = sample(make_distribution(family, n), 200_000, SEED).data
        worst_mean = max(worst_mean, np.abs(x.mean(axis=0)).max())
        worst_cov = max(worst_cov, np.abs(np.linalg.eigvalsh(np.cov(x.T) - np.eye(n))).max())
    ok = worst_mean < 0.02 and worst_cov < 0.06
    criterion(1, ok, f"max |mean|_inf={worst_mean:.4f} (<0.02), max |cov-I|_op={worst_cov:.4f} (<0.06)")
    assert ok


def test_c02_gaussian_localization_oracle(criterion, gaussian_trace):
    tr = gaussian_trace
    t = tr["t"]
    dev = max(np.abs(np.linalg.eigvalsh(a - np.eye(8) / (1 + s))).max() for a, s in zip(tr.covs, t))
    late = t >= 0.25
    phi_err = np.max(np.abs(tr["phi_q"][late] / (8 * (t[late] / (1 + t[late])) ** 2) - 1))
    # dt halving on one Brownian path: the coarse increments are sums of fine ones
    spec = make_distribution("gaussian", 8)
    fine = brownian_increments(2000, 8, 5e-4, rng_stream(SEED, NOISE_STREAM, 1))
    phi_fine = run_trace(spec, 1.0, 5e-4, 2, (), 100_000, SEED, increments=fine)["phi_q"][-1]
    phi_coarse = run_trace(spec, 1.0, 1e-3, 2, (), 100_000, SEED, increments=coarsen(fine))["phi_q"][-1]
    halving = abs(phi_coarse - phi_fine) / abs(phi_fine)
    ok = not tr.degenerate and dev < 0.05 and phi_err < 0.10 and halving < 0.02
    criterion(2, ok, f"max |A_t-I/(1+t)|_op={dev:.4f} (<0.05), Phi rel err (t>=0.25)={phi_err:.4f} (<0.10), "
                     f"dt-halving change={halving:.2e} (<0.02), min ESS={tr['ess'].min():.0f}")
    assert ok


def test_c03_phi_drift(criterion, gaussian_trace):
    errs = {}
    for q in (2, 4):
        fd, drift = phi_drift_check(gaussian_trace, 0.25, 2.0, q=q)
        errs[q] = abs(fd - drift) / abs(drift)
    closed = run_trace(make_distribution("gaussian", 8), 2.0, 1e-3, 2, (), 1000, SEED, backend="gaussian",
                       keep_cov=True)
    for q in (2, 4):
        fd, drift = phi_drift_check(closed, 0.25, 2.0, q=q)
        errs[f"closed q={q}"] = abs(fd - drift) / abs(drift)
    ok = max(errs.values()) < 0.05
    criterion(3, ok, "relative error " + ", ".join(f"q={k}: {v:.4f}" if isinstance(k, int) else f"{k}: {v:.2e}"
                                                   for k, v in errs.items()) + " (<0.05)")
    assert ok


def test_c04_martingale(criterion):
    res = martingale_check(make_distribution("gaussian", 8), Halfspace.coordinate(0, 8), 0.5, runs=100,
                           seed=SEED, backend="gaussian")
    gap = abs(res.gT.mean() - 0.5)
    mean_ok = res.report.satisfied and gap < 3 * res.report.std_error
    band_ok = res.band_frequency >= 0.85
    criterion(4, mean_ok and band_ok,
              f"|mean g_T - 1/2|={gap:.4f} vs 3SE={3 * res.report.std_error:.4f}; "
              f"P(1/4<=g_T<=3/4)={res.band_frequency:.2f} (>=0.85; closed-form value 0.66)")
    assert mean_ok and band_ok


def test_c05_third_moments(criterion):
    parts, ok = [], True
    for family, n in itertools.product(("cube", "gaussian", "shifted_exp_prod"), (4, 16, 64)):
        spec = make_distribution(family, n)
        est = third_moment_inner(spec, spec, 1_000_000, SEED)
        target = 4.0 if family == "shifted_exp_prod" else 0.0
        scaled = est.scaled(1 / n) if family == "shifted_exp_prod" else est
        good = scaled.within(target)
        ok &= good
        parts.append(f"{family}-{n}:{(scaled.value - target) / scaled.std_error:+.2f}SE")
    criterion(5, ok, " ".join(parts))
    assert ok


def test_c06_tensor_identity(criterion):
    worst = 0.0
    for family, n, seed in itertools.product(("gaussian", "shifted_exp_prod", "ball"), (3, 8), (0, 1, 2)):
        ens = MatrixEnsemble("symmetric_goe", n, seed)
        A, B = ens.draw(2)
        worst = max(worst, check_tequ_identity(make_distribution(family, n), A, B, 500, seed).max_deviation)
    sphere = [sphere_identity_check(make_distribution(f, n), 200_000, 128, SEED)
              for f, n in (("shifted_exp_prod", 4), ("cube", 8), ("laplace_prod", 3))]
    ok = worst < 1e-10 and all(r.satisfied for r in sphere)
    criterion(6, ok, f"tequ worst rel dev={worst:.2e} (<1e-10); sphere |lhs-rhs|/SE="
                     + ", ".join(f"{abs(r.lhs - r.rhs) / r.std_error:.2f}" for r in sphere) + " (<3)")
    assert ok


def test_c07_deterministic_suite(criterion):
    reports = deterministic_suite((2, 4, 8, 16), 1000, SEED)
    trials = sum(r.trials for r in reports)
    bad = sum(r.violations for r in reports)
    criterion(7, bad == 0, f"{bad} violations in {trials} trials")
    assert bad == 0


def test_c08_stochastic_suite(criterion):
    reports = stochastic_suite(make_distribution("shifted_exp_prod", 4), 200, 200_000, SEED)
    wanted = {"trabs", "trabs_psd", "tinq1", "tinq5", "liebtr"}
    got = {r.lemma_id: r for r in reports}
    ok = wanted <= got.keys() and all(got[k].violations == 0 and got[k].trials == 200 for k in wanted)
    criterion(8, ok, ", ".join(f"{k}: {got[k].violations}/{got[k].trials}" for k in sorted(wanted)))
    assert ok


def test_c09_cheeger(criterion):
    g = halfspace_cheeger(make_distribution("gaussian", 8), 64, 200_000, SEED).value
    c = halfspace_cheeger(make_distribution("cube", 1), 4, 200_000, SEED).value
    g_err = abs(g / (np.sqrt(2 * np.pi) / 2) - 1)
    c_err = abs(c / np.sqrt(3) - 1)
    poincare = []
    for family in ("gaussian", "cube", "laplace_prod", "shifted_exp_prod", "ball"):
        spec = make_distribution(family, 6)
        psi = halfspace_cheeger(spec, 32, 200_000, SEED, include_axes=True)
        for k, A in enumerate(MatrixEnsemble("symmetric_goe", 6, SEED).draw(3)):
            poincare.append(poincare_check(spec, A, 200_000, psi, 4.0, SEED + k).satisfied)
    ok = g_err < 0.05 and c_err < 0.05 and all(poincare)
    criterion(9, ok, f"gaussian rel err={g_err:.4f}, cube n=1 rel err={c_err:.4f} (<0.05); "
                     f"Poincare C=4 {sum(poincare)}/{len(poincare)} satisfied")
    assert ok


def test_c10_generalized_clt_trend(criterion):
    values = {}
    for family in ("cube", "gaussian"):
        spec = [make_distribution(family, n) for n in (8, 32, 128)]
        values[family] = [w_p_vs_normal(inner_products(s, s, 1_000_000, SEED), s.dim, 2) ** 2 / s.dim for s in spec]
    ok = all(v[0] > v[1] > v[2] for v in values.values())
    criterion(10, ok, "; ".join(f"{f}: " + ", ".join(f"{x:.2e}" for x in v) for f, v in values.items()))
    assert ok


def test_c11_coupling(criterion):
    n = 64
    g = make_distribution("gaussian", n)
    res = coupled_clt_distance(g, g, 10.0, 0.01, 100, seed=SEED)
    target = 2 * n - 2 * np.sqrt(2 * n) * np.exp(gammaln((n + 1) / 2) - gammaln(n / 2))
    ok = res.squared.within(target)
    criterion(11, ok, f"squared={res.squared.value:.4f} +- {res.squared.std_error:.4f} (tail {res.tail:.4f}) "
                      f"vs thin-shell {target:.4f}")
    assert ok


def test_c12_metric_oracles(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for n, p in itertools.product(range(1, 7), (1.0, 2.0, 3.0)):
        for _ in range(5):
            a, b = rng.standard_normal(n), rng.standard_normal(n)
            brute = min(np.mean(np.abs(a - b[list(s)]) ** p) for s in itertools.permutations(range(n))) ** (1 / p)
            worst = max(worst, abs(w_p_empirical(a, b, p) - brute))
    exact = 2 * stats.norm.sf(1.0)
    rep = brownian_reflection_check(1.0, 1.0, 100_000, 10_000, SEED)
    p_lhs = rep.lhs
    se_lhs = np.sqrt(p_lhs * (1 - p_lhs) / 100_000)
    se_rhs = 2 * np.sqrt(exact / 2 * (1 - exact / 2) / 100_000)
    refl_ok = rep.satisfied and abs(rep.lhs - exact) < 3 * se_lhs and abs(rep.rhs - exact) < 3 * se_rhs
    tv = [check_tv_w1(rng.standard_normal(200_000), rng.standard_normal(200_000) + m, 2.5) for m in (0.25, 0.5, 1.0)]
    ok = worst < 1e-12 and refl_ok and all(r.satisfied for r in tv)
    criterion(12, ok, f"brute-force gap={worst:.1e}; P(sup>=1)={rep.lhs:.4f}, 2P(W>=1)={rep.rhs:.4f} vs "
                      f"{exact:.4f}; TV/W1 slack " + ", ".join(f"{r.slack:.3f}" for r in tv))
    assert ok


def test_c13_determinism(criterion, tmp_path):
    small = ["--set", "pairs=20000", "--set", "samples=20000", "--set", "trials=20", "--set", "stochastic_trials=5",
             "--set", "stochastic_pairs=5000", "--set", "runs=3", "--set", "particles=2000", "--set", "T=0.05",
             "--set", "directions=8"]
    mismatched = []
    for command in cli.COMMANDS:
        dirs = [tmp_path / f"{command}-{k}" for k in range(2)]
        codes = [cli.main([command, "--out", str(d), "--seed", "123456789012345"] + small) for d in dirs]
        files = sorted(p.name for p in dirs[0].glob("*.csv"))
        if not files or codes[0] != codes[1]:
            mismatched.append(command)
        for name in files:
            if not filecmp.cmp(dirs[0] / name, dirs[1] / name, shallow=False):
                mismatched.append(f"{command}/{name}")
    ok = not mismatched
    criterion(13, ok, "all subcommands byte-identical" if ok else f"differences: {mismatched}")
    assert ok
