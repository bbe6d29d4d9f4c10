"""Kendall's tau concordance, elliptical t-copula over DP-mixture marginals,
joint simulation and a Gaussian-copula density for reference.

The copula correlation is estimated by inverting the elliptical relation
``rho = sin(pi tau / 2)`` pairwise and projecting the result onto the
positive-definite correlation matrices when needed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from . import _rng
from .dp_mixture import QuantileTable, RpmEstimate
from .errors import DimensionError, DomainError, InputError, InsufficientDataError, NumericalError

DEFAULT_DF = 10.0
EIGEN_FLOOR = 1e-8
PD_TOL = 1e-10
# uniforms are kept this far from {0, 1} before inversion
U_CLIP = 1e-15


def kendall_tau(x, y):
    """Kendall's tau-b (tie-corrected), computed in O(n log n)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise DimensionError(f"kendall_tau needs two 1-D samples of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise InsufficientDataError("kendall_tau needs at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DomainError("kendall_tau is undefined for a constant sample")
    return float(stats.kendalltau(x, y, variant="b").statistic)


def tau_to_correlation(tau):
    """Elliptical-copula correlation ``sin(pi tau / 2)``."""
    t = np.asarray(tau, dtype=float)
    if np.any(np.abs(t) > 1):
        raise DomainError(f"tau must lie in [-1, 1], got {tau!r}")
    out = np.sin(0.5 * np.pi * t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ConcordanceMatrix:
    tau: np.ndarray
    asset_ids: tuple

    def __post_init__(self):
        t = np.array(self.tau, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] != len(self.asset_ids):
            raise DimensionError(f"tau matrix {t.shape} does not match {len(self.asset_ids)} assets")
        if not np.allclose(t, t.T, atol=1e-12) or not np.allclose(np.diag(t), 1.0):
            raise DomainError("tau matrix must be symmetric with unit diagonal")
        if np.any(np.abs(t) > 1 + 1e-12):
            raise DomainError("tau entries must lie in [-1, 1]")
        t.setflags(write=False)
        object.__setattr__(self, "tau", t)
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))

    @classmethod
    def from_returns(cls, returns, asset_ids=None):
        r = np.asarray(returns, dtype=float)
        if r.ndim != 2:
            raise DimensionError(f"returns must be an n x p matrix, got shape {r.shape}")
        p = r.shape[1]
        ids = tuple(asset_ids) if asset_ids is not None else tuple(f"asset_{i + 1}" for i in range(p))
        tau = np.eye(p)
        for i in range(p):
            for j in range(i + 1, p):
                try:
                    tau[i, j] = tau[j, i] = kendall_tau(r[:, i], r[:, j])
                except DomainError as exc:
                    raise DomainError(f"Kendall's tau undefined for columns {ids[i]!r} and {ids[j]!r}: {exc}") from exc
        return cls(tau, ids)

    def correlation(self):
        return tau_to_correlation(self.tau)

    def to_dict(self):
        return {"asset_ids": list(self.asset_ids), "tau": self.tau.tolist()}


def nearest_correlation(matrix, floor=EIGEN_FLOOR):
    """Clip eigenvalues at ``floor`` and rescale back to a unit diagonal.

    Returns ``(matrix, repaired)``; a matrix that is already positive definite
    with eigenvalues above ``floor`` comes back unchanged.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if w.min() > floor:
        return a, False
    b = (v * np.maximum(w, floor)) @ v.T
    d = np.sqrt(np.diag(b))
    b = b / np.outer(d, d)
    np.fill_diagonal(b, 1.0)
    return 0.5 * (b + b.T), True


@dataclass(frozen=True)
class CopulaModel:
    """t-copula (finite ``df``) or Gaussian copula (``df = inf``) with
    DP-mixture marginals."""

    correlation: np.ndarray
    df: float
    marginals: tuple
    asset_ids: tuple = ()
    repaired: bool = False
    _tables: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.array(self.correlation, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionError(f"correlation must be square, got {c.shape}")
        p = c.shape[0]
        if len(self.marginals) != p:
            raise DimensionError(f"{len(self.marginals)} marginals for a {p}x{p} correlation")
        if not np.allclose(c, c.T, atol=1e-12) or not np.allclose(np.diag(c), 1.0, atol=1e-12):
            raise DomainError("correlation must be symmetric with unit diagonal")
        if np.linalg.eigvalsh(c).min() <= PD_TOL:
            raise DomainError("correlation must be positive definite")
        if not (self.df > 2):
            raise DomainError(f"df must exceed 2 (or be inf), got {self.df}")
        for m in self.marginals:
            if not isinstance(m, RpmEstimate):
                raise InputError(f"marginals must be RpmEstimate, got {type(m).__name__}")
        ids = tuple(self.asset_ids) or tuple(f"asset_{i + 1}" for i in range(p))
        if len(ids) != p:
            raise DimensionError(f"{len(ids)} asset ids for {p} assets")
        c.setflags(write=False)
        object.__setattr__(self, "correlation", c)
        object.__setattr__(self, "df", float(self.df))
        object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "asset_ids", ids)

    @property
    def p(self):
        return self.correlation.shape[0]

    def quantile_table(self, j):
        """Cached bracketing table for marginal ``j``."""
        if j not in self._tables:
            self._tables[j] = QuantileTable(self.marginals[j])
        return self._tables[j]

    def to_dict(self):
        return {"asset_ids": list(self.asset_ids), "df": None if np.isinf(self.df) else self.df,
                "correlation": self.correlation.tolist(), "repaired": self.repaired,
                "marginals": [m.to_dict() for m in self.marginals]}

    @classmethod
    def from_dict(cls, d):
        df = np.inf if d.get("df") is None else d["df"]
        return cls(np.asarray(d["correlation"]), df, tuple(RpmEstimate.from_dict(m) for m in d["marginals"]),
                   tuple(d["asset_ids"]), d.get("repaired", False))


def fit_copula(returns, marginals, df=DEFAULT_DF, asset_ids=None):
    """Pairwise Kendall's tau, inverted to a correlation and repaired to PD."""
    r = np.asarray(returns, dtype=float)
    if r.ndim != 2:
        raise DimensionError(f"returns must be an n x p matrix, got shape {r.shape}")
    n, p = r.shape
    if n < 10:
        raise InsufficientDataError(f"need at least 10 rows to fit a copula, got {n}")
    if p < 2:
        raise DimensionError(f"a copula needs at least 2 columns, got {p}")
    conc = ConcordanceMatrix.from_returns(r, asset_ids)
    corr, repaired = nearest_correlation(conc.correlation())
    if repaired:
        warnings.warn("tau-implied correlation was not positive definite; projected to nearest PD matrix",
                      RuntimeWarning, stacklevel=2)
    return CopulaModel(corr, df, tuple(marginals), conc.asset_ids, repaired), conc


@dataclass(frozen=True)
class JointSample:
    values: np.ndarray = field(repr=False)
    seed: int
    asset_ids: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError(f"joint sample must be n x p, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericalError("joint sample contains non-finite values")
        if self.asset_ids and len(self.asset_ids) != v.shape[1]:
            raise DimensionError(f"{len(self.asset_ids)} asset ids for {v.shape[1]} columns")
        object.__setattr__(self, "values", v)

    @property
    def p(self):
        return self.values.shape[1]

    def to_csv(self, path):
        header = ",".join(self.asset_ids or [f"asset_{i + 1}" for i in range(self.p)])
        np.savetxt(path, self.values, delimiter=",", header=header, comments="", fmt="%.17g")


def simulate_copula_uniforms(correlation, df, n, seed):
    """Copula uniforms from t (finite ``df``) or Gaussian (``df = inf``) draws."""
    c = np.asarray(correlation, dtype=float)
    chol = np.linalg.cholesky(c)
    p = c.shape[0]
    u = np.empty((n, p))
    for start, stop, gen in _rng.blocks(seed, n):
        # whole-block draws keep row i identical for any total n
        m = stop - start
        z = gen.standard_normal((_rng.BLOCK_SIZE, p))[:m] @ chol.T
        if np.isinf(df):
            u[start:stop] = special.ndtr(z)
        else:
            w = np.sqrt(gen.chisquare(df, _rng.BLOCK_SIZE)[:m] / df)
            u[start:stop] = stats.t.cdf(z / w[:, None], df)
    return np.clip(u, U_CLIP, 1.0 - U_CLIP)


def simulate_joint(model: CopulaModel, n, seed=None) -> JointSample:
    """Joint log-returns: copula uniforms mapped through each marginal's
    predictive quantile."""
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    seed = _rng.root_seed(seed)
    u = simulate_copula_uniforms(model.correlation, model.df, int(n), seed)
    x = np.empty_like(u)
    for j in range(model.p):
        try:
            x[:, j] = model.quantile_table(j)(u[:, j])
        except (DomainError, NumericalError, FloatingPointError) as exc:
            raise NumericalError(f"quantile inversion failed for column {model.asset_ids[j]!r}: {exc}") from exc
    return JointSample(x, seed, model.asset_ids)


def gaussian_copula_logdensity(u, correlation):
    """``log |S|^{-1/2} + q'(I - S^{-1})q / 2`` with ``q = Phi^{-1}(u)``.

    ``u`` may be a single point of length p or an (m, p) array.
    """
    c = np.asarray(correlation, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != c.shape[0]:
        raise DimensionError(f"u has {u.shape[-1]} coordinates, correlation is {c.shape}")
    if np.any(~(u > 0)) or np.any(~(u < 1)):
        raise DomainError("copula arguments must lie strictly inside (0, 1)")
    chol = np.linalg.cholesky(c)
    q = special.ndtri(u)
    # q' S^{-1} q through the Cholesky factor
    sol = np.linalg.solve(chol, np.moveaxis(np.atleast_2d(q), -1, 0))
    quad = np.sum(sol**2, axis=0) - np.sum(np.atleast_2d(q) ** 2, axis=-1)
    out = -np.sum(np.log(np.diag(chol))) - 0.5 * quad
    return float(out[0]) if u.ndim == 1 else out


@dataclass(frozen=True)
class PcaProjection:
    """Observed and simulated data projected onto the observed principal axes."""

    observed: np.ndarray
    simulated: np.ndarray
    axes: np.ndarray
    explained_observed: np.ndarray
    explained_simulated: np.ndarray
    rank: int
    reduced_rank: bool

    def to_csv(self, path):
        rows = np.vstack([np.column_stack([np.zeros(len(self.observed)), self.observed]),
                          np.column_stack([np.ones(len(self.simulated)), self.simulated])])
        with open(path, "w") as fh:
            fh.write("source,pc1,pc2\n")
            for src, a, b in rows:
                fh.write(f"{'observed' if src == 0 else 'simulated'},{a:.17g},{b:.17g}\n")


def pca_projection(observed, simulated, n_components=2, rank_tol=1e-10):
    """Project both datasets onto the top principal axes of the observed
    correlation matrix.

    Both datasets are standardized with the observed column means and
    standard deviations, so the two point clouds share one coordinate frame.
    Explained-variance ratios are the variances along the observed axes
    divided by the total standardized variance of each dataset.
    """
    x = np.asarray(observed, dtype=float)
    y = np.asarray(simulated, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"observed {x.shape} and simulated {y.shape} must be matrices with equal columns")
    p = x.shape[1]
    if p < 2:
        raise DimensionError("PCA projection needs at least 2 columns")
    mean, sd = x.mean(axis=0), x.std(axis=0, ddof=1)
    zero_sd = sd <= 0
    sd = np.where(zero_sd, 1.0, sd)
    zx, zy = (x - mean) / sd, (y - mean) / sd
    w, v = np.linalg.eigh(np.cov(zx, rowvar=False))
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    # fix the sign so the largest loading of each axis is positive
    v = v * np.where(v[np.argmax(np.abs(v), axis=0), np.arange(p)] < 0, -1.0, 1.0)
    rank = int(np.sum(w > rank_tol * max(w[0], 1e-300)))
    k = min(n_components, rank)
    reduced = rank < min(n_components, p) or bool(zero_sd.any())
    if reduced:
        warnings.warn(f"observed data have rank {rank}; returning {k} components", RuntimeWarning, stacklevel=2)
    axes = v[:, :k]
    px, py = zx @ axes, zy @ axes
    total_x = np.trace(np.cov(zx, rowvar=False))
    total_y = np.trace(np.cov(zy, rowvar=False))
    ex = px.var(axis=0, ddof=1) / total_x if total_x > 0 else np.zeros(k)
    ey = py.var(axis=0, ddof=1) / total_y if total_y > 0 else np.zeros(k)
    return PcaProjection(px, py, axes, ex, ey, rank, reduced)


def matrix_json(matrix, asset_ids, key):
    return json.dumps({"asset_ids": list(asset_ids), key: np.asarray(matrix).tolist()}, indent=2, sort_keys=True)
