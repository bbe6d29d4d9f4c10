import datetime as dt

import numpy as np
import pytest

from dprisk.dp_mixture import RpmEstimate


def write_price_csv(path, prices, names, start=dt.date(2021, 1, 4)):
    prices = np.atleast_2d(np.asarray(prices, dtype=float))
    if prices.shape[0] == 1 and len(names) == 1:
        prices = prices.T
    with open(path, "w") as fh:
        fh.write(",".join(["date", *names]) + "\n")
        for i, row in enumerate(prices):
            day = start + dt.timedelta(days=i)
            fh.write(",".join([day.isoformat(), *(f"{v:.6f}" for v in row)]) + "\n")
    return path


def synthetic_prices(n=250, seed=0):
    """Three correlated assets with occasional volatility bursts."""
    rng = np.random.default_rng(seed)
    corr = np.array([[1.0, 0.6, 0.3], [0.6, 1.0, 0.1], [0.3, 0.1, 1.0]])
    z = rng.standard_normal((n - 1, 3)) @ np.linalg.cholesky(corr).T
    burst = np.where(rng.random((n - 1, 1)) < 0.1, 3.0, 1.0)
    r = 0.01 * z * burst
    return 100.0 * np.exp(np.vstack([np.zeros(3), np.cumsum(r, axis=0)]))


@pytest.fixture
def three_asset_csv(tmp_path):
    return write_price_csv(tmp_path / "prices.csv", synthetic_prices(), ["INTC", "IBM", "NDX"])


@pytest.fixture
def heavy_mixture():
    return RpmEstimate(np.array([0.85, 0.15]), np.array([0.0, -0.01]), 1.0 / np.array([0.01, 0.04]) ** 2)


@pytest.fixture
def test_mixtures():
    """Mixtures reused across quantile and risk tests."""
    return [
        RpmEstimate(np.array([1.0]), np.array([0.3]), np.array([4.0])),
        RpmEstimate(np.array([0.5, 0.5]), np.array([-2.0, 2.0]), np.array([4.0, 4.0])),
        RpmEstimate(np.array([0.85, 0.15]), np.array([0.0, -0.01]), 1.0 / np.array([0.01, 0.04]) ** 2),
        RpmEstimate(np.array([0.6, 0.3, 0.1]), np.array([0.001, -0.002, 0.004]),
                    1.0 / np.array([0.008, 0.015, 0.05]) ** 2),
        RpmEstimate(np.array([0.99, 0.01]), np.array([0.0, 0.0]), np.array([1.0, 1e-4])),
    ]


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion, then assert."""

    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
