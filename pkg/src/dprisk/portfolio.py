"""Portfolio weights, portfolio returns and mean-variance selection."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .copula import CopulaModel, JointSample, simulate_joint
from .errors import DimensionError, DomainError, InputError, NumericalError
from .risk import EmpiricalLoss, MixtureLoss, RiskReport, risk_summary

PORTFOLIO_COLUMN = "Portfolio"


@dataclass(frozen=True)
class Portfolio:
    asset_ids: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.ndim != 1 or w.size != len(self.asset_ids):
            raise DimensionError(f"{w.size} weights for {len(self.asset_ids)} assets")
        if not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))

    @classmethod
    def normalized(cls, asset_ids, weights):
        """Rescale ``weights`` to sum to one."""
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not np.isfinite(total) or total == 0:
            raise DomainError(f"cannot normalize weights summing to {total}")
        w = w / total
        # put the rounding residue on the largest weight
        w[np.argmax(np.abs(w))] += 1.0 - w.sum()
        return cls(tuple(asset_ids), w)

    @classmethod
    def equal(cls, asset_ids):
        return cls.normalized(asset_ids, np.ones(len(asset_ids)))

    @property
    def p(self):
        return self.weights.size

    def to_dict(self):
        return {"asset_ids": list(self.asset_ids), "weights": self.weights.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["asset_ids"]), np.asarray(d["weights"], dtype=float))


def portfolio_returns(portfolio: Portfolio, returns):
    """Row-wise ``w' R_t`` for a joint sample or an observed n x p matrix."""
    r = returns.values if isinstance(returns, JointSample) else np.asarray(returns, dtype=float)
    if r.ndim == 1 and portfolio.p == 1:
        r = r[:, None]
    if r.ndim != 2 or r.shape[1] != portfolio.p:
        raise DimensionError(f"returns of shape {r.shape} for a {portfolio.p}-asset portfolio")
    return r @ portfolio.weights


def repair_covariance(cov, rel_floor=1e-10):
    """Symmetrize and clip eigenvalues at ``rel_floor`` times the largest.

    Returns ``(matrix, repaired)``.
    """
    c = np.asarray(cov, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"covariance must be square, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise DomainError("covariance must be finite")
    c = 0.5 * (c + c.T)
    w, v = np.linalg.eigh(c)
    floor = rel_floor * max(w[-1], 1e-300)
    if w[0] > floor:
        return c, False
    if w[-1] <= 0:
        raise DomainError("covariance has no positive eigenvalue")
    return (v * np.maximum(w, floor)) @ v.T, True


def project_simplex(y):
    """Euclidean projection onto ``{w >= 0, sum w = 1}``."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(y - css[rho] / (rho + 1), 0.0)


def _kkt_solve(cov, constraints, rhs, linear):
    """Minimize ``w' S w - linear' w`` subject to ``constraints w = rhs``."""
    p, k = cov.shape[0], constraints.shape[0]
    kkt = np.zeros((p + k, p + k))
    kkt[:p, :p] = 2.0 * cov
    kkt[:p, p:] = constraints.T
    kkt[p:, :p] = constraints
    sol = np.linalg.solve(kkt, np.concatenate([linear, rhs]))
    return sol[:p]


def _long_only(cov, linear, max_iter=200_000, tol=1e-15):
    """Accelerated projected gradient for ``w' S w - linear' w`` on the simplex."""
    p = cov.shape[0]
    step = 1.0 / (2.0 * np.linalg.eigvalsh(cov)[-1])
    w = np.full(p, 1.0 / p)
    y, t = w.copy(), 1.0
    for _ in range(max_iter):
        w_new = project_simplex(y - step * (2.0 * cov @ y - linear))
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + (t - 1.0) / t_new * (w_new - w)
        if np.max(np.abs(w_new - w)) < tol:
            return w_new
        w, t = w_new, t_new
    raise NumericalError(f"long-only mean-variance did not converge in {max_iter} iterations")


def mean_variance_weights(mean, cov, risk_aversion=None, target_return=None, long_only=False, asset_ids=None):
    """Mean-variance weights summing to one.

    With ``risk_aversion`` (lambda) the objective is
    ``w' S w - (1/lambda) mu' w``; with ``target_return`` the variance is
    minimized subject to ``mu' w = target``; with neither the
    minimum-variance portfolio is returned.  ``long_only`` adds ``w >= 0``
    and is solved by projected gradient; it cannot be combined with a
    target return.
    """
    mu = np.asarray(mean, dtype=float)
    c = np.asarray(cov, dtype=float)
    p = mu.size
    if mu.ndim != 1 or c.shape != (p, p):
        raise DimensionError(f"mean of length {mu.size} with covariance {c.shape}")
    if risk_aversion is not None and target_return is not None:
        raise InputError("give either risk_aversion or target_return, not both")
    if risk_aversion is not None and not risk_aversion > 0:
        raise DomainError(f"risk_aversion must be positive, got {risk_aversion}")
    c, repaired = repair_covariance(c)
    if repaired:
        warnings.warn("covariance is not positive definite; using nearest PD repair", RuntimeWarning, stacklevel=2)
    ids = tuple(asset_ids) if asset_ids is not None else tuple(f"asset_{i + 1}" for i in range(p))
    linear = mu / risk_aversion if risk_aversion is not None else np.zeros(p)
    ones = np.ones((1, p))
    if long_only:
        if target_return is not None:
            raise InputError("long-only weights with a target return are not supported")
        w = _long_only(c, linear)
    elif target_return is not None:
        if np.ptp(mu) == 0:
            raise DomainError("target return needs assets with different means")
        w = _kkt_solve(c, np.vstack([ones, mu]), np.array([1.0, float(target_return)]), np.zeros(p))
    else:
        w = _kkt_solve(c, ones, np.array([1.0]), linear)
    return Portfolio.normalized(ids, w)


def _summary(dist, gammas, r, quad):
    return risk_summary(dist, gammas, r, quad)


def portfolio_risk(portfolio: Portfolio, model: CopulaModel, gammas=(0.01, 0.05), r=0.5, n_sims=100_000,
                   seed=None, observed=None, quad=4096, joint=None):
    """Risk report for each asset and the portfolio.

    The model rows use the marginal mixtures for single assets and a joint
    copula simulation for the portfolio; the empirical rows, present when
    ``observed`` is given, use the observed returns directly.
    """
    if portfolio.p != model.p:
        raise DimensionError(f"{portfolio.p}-asset portfolio with a {model.p}-asset copula")
    if joint is None:
        joint = simulate_joint(model, n_sims, seed)
    ids = list(model.asset_ids)
    columns = ids + [PORTFOLIO_COLUMN]
    values = {"model": {}}
    for a, m in zip(ids, model.marginals):
        values["model"][a] = _summary(MixtureLoss(m), gammas, r, quad)
    values["model"][PORTFOLIO_COLUMN] = _summary(EmpiricalLoss(portfolio_returns(portfolio, joint)), gammas, r, quad)
    if observed is not None:
        obs = np.asarray(observed, dtype=float)
        if obs.ndim != 2 or obs.shape[1] != model.p:
            raise DimensionError(f"observed returns of shape {obs.shape} for {model.p} assets")
        values["empirical"] = {a: _summary(EmpiricalLoss(obs[:, j]), gammas, r, quad) for j, a in enumerate(ids)}
        values["empirical"][PORTFOLIO_COLUMN] = _summary(EmpiricalLoss(portfolio_returns(portfolio, obs)),
                                                         gammas, r, quad)
    meta = {"n_sims": int(joint.values.shape[0]), "seed": int(joint.seed), "weights": portfolio.to_dict(),
            "df": None if np.isinf(model.df) else model.df}
    return RiskReport(columns, [float(g) for g in gammas], float(r), values, meta=meta)
