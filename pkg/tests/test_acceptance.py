"""End-to-end acceptance criteria A1 to A9, one pass/fail line each."""
import math
import time

import numpy as np
import pytest
from conftest import synthetic_prices, write_price_csv
from scipy import integrate, stats

from dprisk.copula import CopulaModel, fit_copula, nearest_correlation, simulate_joint
from dprisk.diagnostics import equal_tailed_interval, hpd_interval
from dprisk.dp_mixture import DpConfig, RpmEstimate, run_blocked_gibbs
from dprisk.market import MixtureGbmParams, martingale_pass_fraction, martingale_residuals, simulate_mixture_gbm
from dprisk.pipeline import RunConfig, run_pipeline
from dprisk.portfolio import PORTFOLIO_COLUMN, Portfolio, mean_variance_weights, portfolio_returns, portfolio_risk
from dprisk.risk import (EmpiricalLoss, MixtureLoss, NormalLoss, ScipyLoss, choquet_integral, classify_distortion,
                         cvar_distortion, esf, identity_distortion, var, var_distortion, wang_distortion, wang_measure)

SIGMA3 = np.array([[1.0, 0.6, 0.3], [0.6, 1.0, 0.1], [0.3, 0.1, 1.0]])


def test_a1_martingale(acceptance):
    t0 = time.perf_counter()
    params = MixtureGbmParams(0.05, [0.5, 0.3, 0.2], [0.1, 0.2, 0.4])
    paths = simulate_mixture_gbm(params, 252, 100_000, 1 / 252, seed=1)
    frac = martingale_pass_fraction(martingale_residuals(paths, params), n_se=3.0)
    elapsed = time.perf_counter() - t0
    acceptance("A1 martingale", frac >= 0.99 and elapsed < 30, f"steps within 3 SE {frac:.4f}, {elapsed:.1f}s")


def test_a2_gibbs_recovery(acceptance):
    rng = np.random.default_rng(0)
    x = np.where(rng.random(500) < 0.5, -2.0, 2.0) + 0.5 * rng.standard_normal(500)
    t0 = time.perf_counter()
    rpm = run_blocked_gibbs(x, DpConfig(seed=11, max_iter=4000, burn_in=1000, alpha_tol=0)).rpm
    elapsed = time.perf_counter() - t0
    n_big = int(np.sum(rpm.weights > 0.1))
    grid = np.linspace(-6, 6, 4001)
    truth = 0.5 * stats.norm.pdf(grid, -2, 0.5) + 0.5 * stats.norm.pdf(grid, 2, 0.5)
    l2_rpm = math.sqrt(integrate.trapezoid((rpm.pdf(grid) - truth) ** 2, grid))
    l2_mle = math.sqrt(integrate.trapezoid((stats.norm.pdf(grid, x.mean(), x.std()) - truth) ** 2, grid))
    ok = n_big == 2 and l2_rpm < l2_mle and elapsed < 120
    acceptance("A2 Gibbs recovery", ok,
               f"components>0.1: {n_big}, L2 {l2_rpm:.4f} vs normal {l2_mle:.4f}, {elapsed:.1f}s")


def test_a3_quantiles(acceptance, test_mixtures):
    single = RpmEstimate.normal(0.0004, 0.013)
    gammas = np.array([0.001, 0.01, 0.05, 0.5])
    q_err = float(np.max(np.abs(single.quantile(gammas) - stats.norm.ppf(gammas, 0.0004, 0.013))))
    p = np.concatenate([np.geomspace(1e-6, 0.5, 40), 1 - np.geomspace(1e-6, 0.5, 40)])
    rt_err = max(float(np.max(np.abs(rpm.cdf(rpm.quantile(p)) - p))) for rpm in test_mixtures)
    acceptance("A3 quantiles", q_err < 1e-8 and rt_err < 1e-10,
               f"closed-form error {q_err:.2e}, round trip {rt_err:.2e}")


def test_a4_risk_measures(acceptance, test_mixtures):
    n01 = NormalLoss(0, 1)
    errs = [abs(var(n01, 0.01) + 2.3263) < 1e-4 and abs(var(n01, 0.01) - stats.norm.ppf(0.01)) < 1e-6,
            abs(esf(n01, 0.01) + 2.6652) < 1e-4]
    for mu, sd in ((0.0, 1.0), (0.01, 0.02), (-1.0, 3.0)):
        for r in (0.0, 0.5, 1.0):
            errs.append(abs(wang_measure(NormalLoss(mu, sd), r) - (mu + r * sd)) < 1e-5)
    dists = [MixtureLoss(m) for m in test_mixtures]
    dists += [NormalLoss(0, 1), ScipyLoss(stats.uniform()), EmpiricalLoss(np.random.default_rng(0).normal(size=500))]
    mean_err = max(abs(choquet_integral(d, identity_distortion()) - d.mean()) for d in dists)
    acceptance("A4 risk measures", all(errs) and mean_err < 1e-6,
               f"VaR {var(n01, 0.01):.6f}, ESF {esf(n01, 0.01):.6f}, identity Choquet error {mean_err:.1e}")


def test_a5_classification(acceptance):
    v = classify_distortion(var_distortion(0.05))
    c = classify_distortion(cvar_distortion(0.05))
    w = [classify_distortion(wang_distortion(r)) for r in (0.1, 0.5, 1.0)]
    ok = (v.complete is False and c.concave is True and c.complete is False
          and all(x.complete is True and x.exhaustive is True for x in w))
    acceptance("A5 distortion classes", ok, f"VaR {tuple(v)}, CVaR {tuple(c)}, Wang {tuple(w[1])}")


def test_a6_copula_round_trip(acceptance):
    marginals = (RpmEstimate(np.array([0.8, 0.2]), np.array([0.0005, -0.002]), 1 / np.array([0.01, 0.03]) ** 2),
                 RpmEstimate.normal(0.0, 0.02),
                 RpmEstimate(np.array([0.5, 0.3, 0.2]), np.array([0.001, 0.0, -0.003]),
                             1 / np.array([0.008, 0.015, 0.04]) ** 2))
    t0 = time.perf_counter()
    model = CopulaModel(SIGMA3, 10.0, marginals, ("A", "B", "C"))
    joint = simulate_joint(model, 100_000, seed=2024)
    refit, _ = fit_copula(joint.values, marginals)
    sigma_err = float(np.max(np.abs(refit.correlation - SIGMA3)))
    pvals = [stats.kstest(joint.values[:, j], m.cdf).pvalue for j, m in enumerate(marginals)]
    elapsed = time.perf_counter() - t0
    ok = sigma_err < 0.05 and min(pvals) > 0.01 and elapsed < 60
    acceptance("A6 copula round trip", ok,
               f"max |dSigma| {sigma_err:.4f}, min KS p {min(pvals):.3f}, {elapsed:.1f}s")


def test_a7_portfolio(acceptance):
    cov = np.array([[0.04, 0.01], [0.01, 0.09]])
    w1 = mean_variance_weights(np.zeros(2), cov).weights[0]
    cf_err = abs(w1 - (0.09 - 0.01) / (0.04 + 0.09 - 0.02))

    marginals = (RpmEstimate(np.array([0.8, 0.2]), np.array([0.0005, -0.002]), 1 / np.array([0.01, 0.03]) ** 2),
                 RpmEstimate(np.array([0.6, 0.4]), np.array([0.001, -0.001]), 1 / np.array([0.012, 0.02]) ** 2))
    corr, _ = nearest_correlation(np.ones((2, 2)))
    como = CopulaModel(corr, 10.0, marginals, ("A", "B"))
    w = Portfolio(("A", "B"), [0.4, 0.6])
    joint = simulate_joint(como, 100_000, seed=17)
    port_var = portfolio_risk(w, como, gammas=(0.01,), joint=joint).get("model", PORTFOLIO_COLUMN, "var", 0.01)
    additive = sum(wi * var(MixtureLoss(m), 0.01) for wi, m in zip(w.weights, marginals))
    batches = np.array_split(portfolio_returns(w, joint), 20)
    se = np.std([var(EmpiricalLoss(b), 0.01) for b in batches], ddof=1) / math.sqrt(20)

    indep = CopulaModel(np.eye(2), 10.0, marginals, ("A", "B"))
    eq = Portfolio.equal(("A", "B"))
    rep = portfolio_risk(eq, indep, gammas=(0.01,), n_sims=100_000, seed=4)
    gain = rep.get("model", PORTFOLIO_COLUMN, "esf", 0.01) - sum(
        wi * rep.get("model", a, "esf", 0.01) for wi, a in zip(eq.weights, ("A", "B")))
    ok = cf_err < 1e-10 and abs(port_var - additive) < 3 * se and gain > 0
    acceptance("A7 portfolio", ok, f"closed-form error {cf_err:.1e}, comonotone gap {abs(port_var - additive):.2e} "
                                   f"(3 SE {3 * se:.2e}), ESF gain {gain:.2e}")


def test_a8_hpd(acceptance):
    x = np.random.default_rng(20).standard_normal(100_000)
    lo, hi = hpd_interval(x, 0.1)
    elo, ehi = equal_tailed_interval(x, 0.1)
    q05, q95 = stats.norm.ppf([0.05, 0.95])
    ok = abs(lo - q05) < 0.02 and abs(hi - q95) < 0.02 and hi - lo <= ehi - elo
    acceptance("A8 HPD", ok, f"HPD ({lo:.4f}, {hi:.4f}) width {hi - lo:.4f}, equal-tailed width {ehi - elo:.4f}")


@pytest.mark.slow
def test_a9_pipeline_determinism(acceptance, tmp_path):
    csv = write_price_csv(tmp_path / "prices.csv", synthetic_prices(), ["INTC", "IBM", "NDX"])
    t0 = time.perf_counter()
    runs = [run_pipeline(RunConfig(inputs=[str(csv)], output_dir=str(tmp_path / name), seed=7))
            for name in ("a", "b")]
    elapsed = time.perf_counter() - t0
    names = sorted(p.name for p in (tmp_path / "a").glob("*.json"))
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    codes = [r.exit_code for r in runs]
    ok = same and "risk_report.json" in names and codes == [0, 0] and elapsed < 300
    acceptance("A9 pipeline determinism", ok, f"{len(names)} JSON files identical: {same}, exit {codes}, "
                                              f"{elapsed:.1f}s for two runs")
