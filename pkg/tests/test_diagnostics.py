import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dprisk.diagnostics import (DensityGrid, equal_tailed_interval, hpd_interval, kde, mean_square_deviation,
                                normal_density_grid, rpm_density_grid, silverman_bandwidth)
from dprisk.dp_mixture import DpConfig, run_blocked_gibbs
from dprisk.errors import DomainError, InsufficientDataError


def brute_hpd(samples, alpha):
    """Scan every window of k consecutive order statistics."""
    s = np.sort(samples)
    k = math.ceil((1 - alpha) * s.size - 1e-9)
    best = min(range(s.size - k + 1), key=lambda i: (s[i + k - 1] - s[i], i))
    return s[best], s[best + k - 1]


# --- KDE ---------------------------------------------------------------------


def test_kde_standard_normal():
    x = np.random.default_rng(0).standard_normal(100_000)
    g = kde(x)
    assert g.x.size == 512 and g.source == "KDE"
    assert np.max(np.abs(g.density - stats.norm.pdf(g.x))) < 0.02


def test_kde_two_points_symmetric():
    g = kde(np.array([-1.0, 1.0]), bandwidth=0.1)
    np.testing.assert_allclose(g.x, -g.x[::-1], atol=1e-12)
    np.testing.assert_allclose(g.density, g.density[::-1], atol=1e-12)
    assert g.density[np.argmin(np.abs(g.x - 1.0))] > 10 * g.density[np.argmin(np.abs(g.x))]


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 400), st.integers(0, 10_000), st.sampled_from(["normal", "t", "bimodal"]))
def test_kde_normalized(n, seed, kind):
    rng = np.random.default_rng(seed)
    x = {"normal": rng.standard_normal, "t": lambda k: rng.standard_t(3, k),
         "bimodal": lambda k: rng.choice([-3.0, 3.0], k) + rng.standard_normal(k)}[kind](n)
    g = kde(x)
    assert np.all(g.density >= 0)
    assert abs(g.integral() - 1.0) < 1e-3


def test_kde_zero_variance_floor():
    with pytest.warns(RuntimeWarning):
        g = kde(np.full(10, 2.5))
    assert np.all(np.isfinite(g.density))


def test_kde_small_sample():
    with pytest.raises(InsufficientDataError):
        kde(np.array([1.0]))


def test_silverman_matches_formula():
    x = np.random.default_rng(1).standard_normal(1000)
    iqr = np.percentile(x, 75) - np.percentile(x, 25)
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(x.std(ddof=1), iqr / 1.34) * 1000 ** -0.2)


def test_density_grid_csv(tmp_path):
    g = normal_density_grid(0.0, np.linspace(-1, 1, 5), sd=1.0)
    g.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "x,density,source"
    assert lines[1].endswith(",BS") and len(lines) == 6
    back = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1, usecols=(0, 1))
    np.testing.assert_array_equal(back[:, 1], g.density)


def test_density_grid_invariants():
    with pytest.raises(DomainError):
        DensityGrid(np.array([0.0, 1.0]), np.array([0.5, -0.1]), "KDE")


# --- MSD -----------------------------------------------------------------------


def test_msd_identical_and_offset():
    x = np.linspace(-3, 3, 101)
    a = DensityGrid(x, stats.norm.pdf(x), "RPM")
    assert mean_square_deviation(a, a) == 0.0
    b = DensityGrid(x, stats.norm.pdf(x) + 0.05, "KDE")
    assert mean_square_deviation(a, b) == pytest.approx(0.05**2, rel=1e-12)


def test_msd_symmetric_on_different_grids():
    x1, x2 = np.linspace(-3, 3, 101), np.linspace(-2.5, 4, 77)
    a = DensityGrid(x1, stats.norm.pdf(x1), "RPM")
    b = DensityGrid(x2, stats.norm.pdf(x2, 0.3, 1.2), "KDE")
    assert mean_square_deviation(a, b) == pytest.approx(mean_square_deviation(b, a), rel=1e-14)
    assert mean_square_deviation(a, b) > 0


def test_msd_disjoint():
    a = DensityGrid(np.array([0.0, 1.0]), np.array([1.0, 1.0]), "RPM")
    b = DensityGrid(np.array([2.0, 3.0]), np.array([1.0, 1.0]), "KDE")
    with pytest.raises(DomainError):
        mean_square_deviation(a, b)


def test_mdp_beats_bs_on_heavy_tails():
    # scale mixture: calm days plus a volatile regime
    rng = np.random.default_rng(5)
    x = np.where(rng.random(600) < 0.8, 0.01, 0.04) * rng.standard_normal(600)
    rpm = run_blocked_gibbs(x, DpConfig(seed=5, max_iter=3000, burn_in=1000, alpha_tol=0)).rpm
    bench = kde(x)
    msd_dp = mean_square_deviation(rpm_density_grid(rpm, bench.x), bench)
    msd_bs = mean_square_deviation(normal_density_grid(x, bench.x), bench)
    assert msd_dp < msd_bs


# --- HPD -----------------------------------------------------------------------


def test_hpd_normal_matches_central_interval():
    x = np.random.default_rng(20).standard_normal(100_000)
    lo, hi = hpd_interval(x, 0.1)
    assert lo == pytest.approx(stats.norm.ppf(0.05), abs=0.02)
    assert hi == pytest.approx(stats.norm.ppf(0.95), abs=0.02)


def test_hpd_point_mass():
    assert hpd_interval(np.full(50, 0.3)) == (0.3, 0.3)


def test_hpd_exponential_left_anchored():
    x = np.random.default_rng(1).exponential(size=5000)
    lo, hi = hpd_interval(x, 0.1)
    assert lo == x.min()
    assert (lo, hi) == brute_hpd(x, 0.1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=20, max_size=200), st.floats(0.01, 0.5))
def test_hpd_minimal(samples, alpha):
    x = np.asarray(samples)
    lo, hi = hpd_interval(x, alpha)
    blo, bhi = brute_hpd(x, alpha)
    assert hi - lo == bhi - blo
    elo, ehi = equal_tailed_interval(x, alpha)
    assert hi - lo <= ehi - elo + 1e-9
    assert np.mean((x >= lo) & (x <= hi)) >= 1 - alpha - 1e-12


def test_hpd_errors():
    with pytest.raises(InsufficientDataError):
        hpd_interval(np.arange(19.0))
    with pytest.raises(DomainError):
        hpd_interval(np.arange(30.0), alpha=1.0)
