import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dprisk.copula import (ConcordanceMatrix, CopulaModel, JointSample, fit_copula, gaussian_copula_logdensity,
                           kendall_tau, nearest_correlation, pca_projection, simulate_copula_uniforms,
                           simulate_joint, tau_to_correlation)
from dprisk.dp_mixture import RpmEstimate
from dprisk.errors import DimensionError, DomainError, NumericalError

SIGMA3 = np.array([[1.0, 0.6, 0.3], [0.6, 1.0, 0.1], [0.3, 0.1, 1.0]])


def brute_tau_b(x, y):
    """O(n^2) tau-b straight from the pair definition."""
    conc = disc = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif dx == dy:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / math.sqrt((conc + disc + tx) * (conc + disc + ty))


def marginals3():
    return (RpmEstimate(np.array([0.8, 0.2]), np.array([0.0005, -0.002]), 1 / np.array([0.01, 0.03]) ** 2),
            RpmEstimate.normal(0.0, 0.02),
            RpmEstimate(np.array([0.5, 0.3, 0.2]), np.array([0.001, 0.0, -0.003]),
                        1 / np.array([0.008, 0.015, 0.04]) ** 2))


@pytest.fixture(scope="module")
def model3():
    return CopulaModel(SIGMA3, 10.0, marginals3(), ("A", "B", "C"))


@pytest.fixture(scope="module")
def joint3(model3):
    return simulate_joint(model3, 100_000, seed=2024)


# --- Kendall's tau -----------------------------------------------------------


def test_tau_examples():
    x = np.arange(10.0)
    assert kendall_tau(x, x) == pytest.approx(1.0, abs=1e-15)
    assert kendall_tau(x, -x) == pytest.approx(-1.0, abs=1e-15)
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=40))
def test_tau_matches_brute_force(pairs):
    x, y = np.array(pairs, dtype=float).T
    if np.all(x == x[0]) or np.all(y == y[0]):
        return
    assert kendall_tau(x, y) == pytest.approx(brute_tau_b(x, y), abs=1e-12)


def test_tau_invariant_under_monotone_maps():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 500))
    y += x
    t = kendall_tau(x, y)
    assert kendall_tau(np.exp(x), y**3) == pytest.approx(t, abs=1e-15)
    assert kendall_tau(x**3, np.exp(2 * y)) == pytest.approx(t, abs=1e-15)


def test_tau_errors():
    with pytest.raises(DimensionError):
        kendall_tau([1, 2, 3], [1, 2])
    with pytest.raises(DomainError):
        kendall_tau([1, 1, 1], [1, 2, 3])


def test_tau_to_correlation():
    assert tau_to_correlation(0.0) == 0.0
    assert tau_to_correlation(1.0) == 1.0
    assert tau_to_correlation(0.5) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    with pytest.raises(DomainError):
        tau_to_correlation(1.5)


def test_bivariate_t_recovers_rho():
    rho = 0.45
    gen = stats.multivariate_t(shape=[[1, rho], [rho, 1]], df=5, seed=np.random.default_rng(8))
    s = gen.rvs(100_000)
    assert tau_to_correlation(kendall_tau(s[:, 0], s[:, 1])) == pytest.approx(rho, abs=0.03)


# --- concordance and fitting ---------------------------------------------------


def test_concordance_matrix_shape_rules():
    c = ConcordanceMatrix.from_returns(np.random.default_rng(0).standard_normal((50, 3)), ["a", "b", "c"])
    assert np.array_equal(c.tau, c.tau.T) and np.all(np.diag(c.tau) == 1)
    with pytest.raises(DomainError):
        ConcordanceMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]), ("a", "b"))


def test_constant_column_named():
    r = np.random.default_rng(0).standard_normal((30, 3))
    r[:, 1] = 0.5
    with pytest.raises(DomainError, match="'y'"):
        ConcordanceMatrix.from_returns(r, ["x", "y", "z"])


def test_independent_columns():
    r = np.random.default_rng(1).standard_normal((100_000, 2))
    model, _ = fit_copula(r, (RpmEstimate.normal(), RpmEstimate.normal()))
    assert abs(model.correlation[0, 1]) < 0.02


def test_comonotone_columns():
    x = np.random.default_rng(2).standard_normal(500)
    with pytest.warns(RuntimeWarning, match="nearest PD"):
        model, _ = fit_copula(np.column_stack([x, np.exp(x)]), (RpmEstimate.normal(), RpmEstimate.normal()))
    # the exact unit entry is singular; the repaired matrix keeps it to 1e-8
    assert model.repaired
    assert model.correlation[0, 1] == pytest.approx(1.0, abs=1e-7)
    assert np.linalg.eigvalsh(model.correlation).min() > 1e-10


def test_round_trip_recovers_sigma(model3, joint3):
    refit, _ = fit_copula(joint3.values, model3.marginals)
    assert np.max(np.abs(refit.correlation - SIGMA3)) < 0.05


def test_nearest_correlation():
    bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    fixed, repaired = nearest_correlation(bad)
    assert repaired
    assert np.linalg.eigvalsh(fixed).min() > 1e-10
    np.testing.assert_allclose(np.diag(fixed), 1.0, atol=1e-15)
    np.testing.assert_allclose(fixed, fixed.T, atol=0)
    same, repaired = nearest_correlation(SIGMA3)
    assert not repaired and np.array_equal(same, SIGMA3)


def test_model_invariants():
    m = marginals3()[:2]
    with pytest.raises(DomainError):
        CopulaModel(np.array([[1.0, 0.5], [0.5, 1.0]]), 2.0, m)
    with pytest.raises(DomainError):
        CopulaModel(np.array([[1.0, 1.0], [1.0, 1.0]]), 10.0, m)
    with pytest.raises(DimensionError):
        CopulaModel(SIGMA3, 10.0, m)
    assert CopulaModel(np.eye(2), math.inf, m).df == math.inf


def test_model_dict_round_trip(model3):
    back = CopulaModel.from_dict(model3.to_dict())
    np.testing.assert_array_equal(back.correlation, model3.correlation)
    assert back.df == model3.df and back.asset_ids == model3.asset_ids


# --- simulation ----------------------------------------------------------------


def test_identity_sigma_keeps_independence():
    n = 20_000
    model = CopulaModel(np.eye(2), 10.0, marginals3()[:2])
    s = simulate_joint(model, n, seed=3).values
    # Var(tau_hat) = 2(2n + 5) / (9 n (n - 1)) under independence
    se = math.sqrt(2 * (2 * n + 5) / (9 * n * (n - 1)))
    assert abs(kendall_tau(s[:, 0], s[:, 1])) < 3 * se


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_marginal_fidelity(model3, seed):
    n = 10_000
    s = simulate_joint(model3, n, seed=seed).values
    for j, rpm in enumerate(model3.marginals):
        res = stats.kstest(s[:, j], rpm.cdf)
        assert res.statistic < 1.36 / math.sqrt(n)
        assert res.pvalue > 0.01


def test_fitted_tau_consistency():
    # tau is marginal-free, so copula uniforms are enough
    target = 2 / np.pi * np.arcsin(SIGMA3[np.triu_indices(3, 1)])
    errs = {}
    for n in (10_000, 40_000):
        e = []
        for seed in range(12):
            u = simulate_copula_uniforms(SIGMA3, 10.0, n, seed=1000 + seed)
            tau = ConcordanceMatrix.from_returns(u).tau[np.triu_indices(3, 1)]
            e.append(np.sqrt(np.mean((tau - target) ** 2)))
        errs[n] = np.sqrt(np.mean(np.square(e)))
    assert 0.3 < errs[40_000] / errs[10_000] < 0.75


def test_simulation_seeded(model3):
    a, b = simulate_joint(model3, 3000, seed=5), simulate_joint(model3, 3000, seed=5)
    np.testing.assert_array_equal(a.values, b.values)
    small = simulate_joint(model3, 1000, seed=5)
    np.testing.assert_array_equal(small.values, a.values[:1000])


def test_joint_sample_csv(tmp_path, model3):
    s = simulate_joint(model3, 10, seed=0)
    s.to_csv(tmp_path / "j.csv")
    lines = (tmp_path / "j.csv").read_text().splitlines()
    assert lines[0] == "A,B,C"
    back = np.loadtxt(tmp_path / "j.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back, s.values)


def test_joint_sample_rejects_nan():
    with pytest.raises(NumericalError):
        JointSample(np.array([[np.nan, 1.0]]), 0)


# --- Gaussian copula density -----------------------------------------------------


def test_gaussian_copula_independence():
    u = np.random.default_rng(0).uniform(size=(100, 3))
    np.testing.assert_allclose(gaussian_copula_logdensity(u, np.eye(3)), 0.0, atol=1e-12)


def test_gaussian_copula_centre():
    c = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert gaussian_copula_logdensity([0.5, 0.5], c) == pytest.approx(-0.5 * math.log(0.75), abs=1e-14)


def test_gaussian_copula_matches_density_ratio():
    # joint normal density over the product of its marginals
    c = SIGMA3
    u = np.array([0.1, 0.7, 0.35])
    q = stats.norm.ppf(u)
    expected = stats.multivariate_normal(cov=c).logpdf(q) - stats.norm.logpdf(q).sum()
    assert gaussian_copula_logdensity(u, c) == pytest.approx(expected, abs=1e-12)


def test_gaussian_copula_exchangeable_symmetry():
    c = np.full((3, 3), 0.4) + 0.6 * np.eye(3)
    u = np.array([0.2, 0.9, 0.55])
    base = gaussian_copula_logdensity(u, c)
    for perm in itertools.permutations(range(3)):
        assert gaussian_copula_logdensity(u[list(perm)], c) == pytest.approx(base, abs=1e-13)


@pytest.mark.parametrize("u", [[0.0, 0.5], [1.0, 0.5], [np.nan, 0.5]])
def test_gaussian_copula_boundary(u):
    with pytest.raises(DomainError):
        gaussian_copula_logdensity(u, np.eye(2))


# --- PCA ---------------------------------------------------------------------------


def test_pca_identical_inputs():
    x = np.random.default_rng(0).standard_normal((200, 4)) @ np.triu(np.ones((4, 4)))
    p = pca_projection(x, x.copy())
    np.testing.assert_array_equal(p.observed, p.simulated)
    np.testing.assert_array_equal(p.explained_observed, p.explained_simulated)


def test_pca_isotropic():
    x = np.random.default_rng(1).standard_normal((100_000, 4))
    p = pca_projection(x, x[:10])
    np.testing.assert_allclose(p.explained_observed, 0.25, atol=0.01)


def test_pca_two_factor():
    rng = np.random.default_rng(2)
    f = rng.standard_normal((5000, 2))
    x = f @ rng.standard_normal((2, 6)) + 0.05 * rng.standard_normal((5000, 6))
    p = pca_projection(x, x)
    assert p.explained_observed.sum() > 0.9


def test_pca_reduced_rank_flag():
    x = np.random.default_rng(3).standard_normal((100, 1))
    with pytest.warns(RuntimeWarning):
        p = pca_projection(np.hstack([x, 2 * x]), np.hstack([x, 2 * x]))
    assert p.reduced_rank and p.rank == 1
    assert p.observed.shape[1] == 1


def test_pca_csv(tmp_path):
    x = np.random.default_rng(4).standard_normal((20, 3))
    pca_projection(x, x[:5]).to_csv(tmp_path / "pca.csv")
    lines = (tmp_path / "pca.csv").read_text().splitlines()
    assert lines[0] == "source,pc1,pc2" and len(lines) == 26
