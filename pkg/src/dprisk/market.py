"""Price and log-return series, mixture-GBM path simulation and the
martingale check on the drift-compensated log-return.

The log-return is simulated as a weighted sum of independent Brownian
motions,

    r_t = mu t + sum_i w_i s_i B^i_t - 1/2 sum_i w_i s_i^2 t,

so every increment over a step ``dt`` is Gaussian and the scheme is exact at
any step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .errors import DimensionError, DomainError, InputError, InsufficientDataError


@dataclass(frozen=True)
class PriceSeries:
    """Strictly positive prices observed at strictly increasing times (days)."""

    asset_id: str
    timestamps: np.ndarray
    prices: np.ndarray
    n_dropped: int = 0

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if t.ndim != 1 or p.ndim != 1 or t.shape != p.shape:
            raise DimensionError(
                f"{self.asset_id}: timestamps and prices must be 1-D of equal length, "
                f"got {t.shape} and {p.shape}")
        if p.size < 2:
            raise InsufficientDataError(f"{self.asset_id}: need at least 2 prices, got {p.size}")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            bad = np.flatnonzero(~(np.isfinite(p) & (p > 0)))
            raise InputError(f"{self.asset_id}: non-positive or non-finite prices at {bad[:10].tolist()}")
        if np.any(np.diff(t) <= 0):
            raise InputError(f"{self.asset_id}: timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "prices", p)

    def __len__(self):
        return self.prices.size


@dataclass(frozen=True)
class LogReturnSeries:
    asset_id: str
    returns: np.ndarray
    period: str = "day"

    def __post_init__(self):
        object.__setattr__(self, "returns", np.asarray(self.returns, dtype=float))

    def __len__(self):
        return self.returns.size


@dataclass(frozen=True)
class MixtureGbmParams:
    """Drift ``mu`` plus component weights and volatilities."""

    mu: float
    weights: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        s = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if w.ndim != 1 or w.shape != s.shape or w.size < 1:
            raise DimensionError(f"weights {w.shape} and sigmas {s.shape} must match and be non-empty")
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must lie in [0, 1] and sum to 1, got {w.tolist()}")
        # zero volatility is allowed: it gives the deterministic drift line
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise DomainError(f"sigmas must be finite and non-negative, got {s.tolist()}")
        if not np.isfinite(self.mu):
            raise DomainError("mu must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sigmas", s)

    @property
    def n_components(self):
        return self.weights.size

    @property
    def compensated_drift(self):
        """mu - 1/2 sum_i w_i s_i^2, the per-unit-time mean of r_t."""
        return self.mu - 0.5 * float(np.sum(self.weights * self.sigmas**2))

    @property
    def variance_rate(self):
        """sum_i w_i^2 s_i^2, the per-unit-time variance of r_t."""
        return float(np.sum(self.weights**2 * self.sigmas**2))


@dataclass(frozen=True)
class SimulatedPaths:
    horizon: int
    n_paths: int
    values: np.ndarray = field(repr=False)
    seed: int
    dt: float
    params: MixtureGbmParams

    @property
    def times(self):
        return self.dt * np.arange(self.horizon + 1)


def compute_log_returns(prices: PriceSeries, period="day") -> LogReturnSeries:
    p = prices.prices
    return LogReturnSeries(prices.asset_id, np.log(p[1:] / p[:-1]), period)


def prices_from_returns(returns, start=1.0):
    """Inverse of :func:`compute_log_returns` up to the starting level."""
    r = np.asarray(returns, dtype=float)
    return start * np.exp(np.concatenate([[0.0], np.cumsum(r)]))


def simulate_mixture_gbm(params: MixtureGbmParams, horizon, n_paths, dt, seed=None) -> SimulatedPaths:
    """Simulate ``n_paths`` log-return paths of ``horizon`` steps of size ``dt``.

    Paths are generated in blocks with independent substreams of one root
    seed, so path ``i`` is the same for a given seed regardless of
    ``n_paths``.
    """
    if int(horizon) != horizon or horizon < 1:
        raise DomainError(f"horizon must be a positive integer, got {horizon}")
    if int(n_paths) != n_paths or n_paths < 1:
        raise DomainError(f"n_paths must be a positive integer, got {n_paths}")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    horizon, n_paths = int(horizon), int(n_paths)
    seed = _rng.root_seed(seed)

    scale = params.weights * params.sigmas * np.sqrt(dt)
    drift = params.compensated_drift * dt
    values = np.zeros((n_paths, horizon + 1))
    for start, stop, gen in _rng.blocks(seed, n_paths):
        db = gen.standard_normal((stop - start, horizon, params.n_components))
        np.cumsum(db @ scale, axis=1, out=values[start:stop, 1:])
    values += drift * np.arange(horizon + 1)
    return SimulatedPaths(horizon, n_paths, values, seed, float(dt), params)


def martingale_residuals(paths: SimulatedPaths, params: MixtureGbmParams):
    """Per-step cross-path mean of the compensated increment and its standard error.

    Returns an array with columns ``(t, mean, std_error)``, one row per step.
    Under the model every mean is zero in expectation.
    """
    v = np.asarray(paths.values)
    if v.shape != (paths.n_paths, paths.horizon + 1):
        raise DimensionError(f"values shape {v.shape} does not match "
                             f"({paths.n_paths}, {paths.horizon + 1})")
    if params.n_components != paths.params.n_components:
        raise DimensionError(f"paths were simulated with {paths.params.n_components} components, "
                             f"params have {params.n_components}")
    compensated = v - params.compensated_drift * paths.dt * np.arange(paths.horizon + 1)
    inc = np.diff(compensated, axis=1)
    mean = inc.mean(axis=0)
    if paths.n_paths > 1:
        se = inc.std(axis=0, ddof=1) / np.sqrt(paths.n_paths)
    else:
        se = np.full_like(mean, np.nan)
    t = paths.dt * np.arange(1, paths.horizon + 1)
    return np.column_stack([t, mean, se])


def martingale_pass_fraction(residuals, n_se=3.0):
    """Fraction of steps whose mean residual lies within ``n_se`` standard errors of 0."""
    res = np.asarray(residuals)
    mean, se = res[:, 1], res[:, 2]
    ok = np.abs(mean) <= n_se * np.where(se > 0, se, 0.0)
    return float(np.mean(ok))
