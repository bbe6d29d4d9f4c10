"""Distortion risk measures evaluated as Choquet integrals.

For a distortion ``g`` and a variable ``X`` with survival function ``S``,

    rho_g(X) = int_0^inf g(S(x)) dx - int_-inf^0 (1 - g(S(x))) dx.

Reported VaR and ESF follow the return convention: both are lower-tail
quantities of the return distribution, negative for a risky asset, as in a
table of 1% VaR/ESF on daily log-returns.  Internally the loss ``L = -X`` is
distorted and the result negated.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import special, stats

from .dp_mixture import RpmEstimate
from .errors import DomainError, IntegrationError

DEFAULT_NODES = 4096
SUPPORT_TAIL = 1e-9
CONVENTION = ("VaR and ESF are lower-tail quantities of the return distribution "
              "(negative = loss), computed by distorting the survival function of the "
              "loss -X and negating; Wang(r) is the risk-loaded return -rho_{g_r}(-X). "
              "Text tables show percent.")


# --------------------------------------------------------------------------
# Loss distributions


class LossDistribution(ABC):
    """Anything exposing ``cdf``, ``quantile`` and a support hint."""

    @abstractmethod
    def cdf(self, x):
        ...

    @abstractmethod
    def quantile(self, p):
        ...

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def support(self, tail=SUPPORT_TAIL):
        return float(self.quantile(tail)), float(self.quantile(1.0 - tail))


class MixtureLoss(LossDistribution):
    """Finite normal mixture backed by an :class:`RpmEstimate`."""

    def __init__(self, rpm: RpmEstimate):
        self.rpm = rpm

    def cdf(self, x):
        return self.rpm.cdf(x)

    def sf(self, x):
        return self.rpm.sf(x)

    def quantile(self, p):
        return self.rpm.quantile(p)

    def mean(self):
        return self.rpm.mean()

    def std(self):
        return self.rpm.std()

    def lower_partial_mean(self, q):
        """``E[X 1{X <= q}] = sum_h pi_h (mu_h Phi(z_h) - s_h phi(z_h))``."""
        sd = self.rpm.sds
        z = (q - self.rpm.means) / sd
        return float(np.sum(self.rpm.weights * (self.rpm.means * special.ndtr(z)
                                                - sd * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))))


class ScipyLoss(LossDistribution):
    """Adapter for a frozen ``scipy.stats`` continuous distribution."""

    def __init__(self, frozen):
        self.frozen = frozen

    def cdf(self, x):
        return self.frozen.cdf(x)

    def sf(self, x):
        return self.frozen.sf(x)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(~(p > 0)) or np.any(~(p < 1)):
            raise DomainError(f"quantile level must lie in (0, 1), got {p!r}")
        q = self.frozen.ppf(p)
        return float(q) if q.ndim == 0 else q

    def support(self, tail=SUPPORT_TAIL):
        lo, hi = self.frozen.support()
        qlo, qhi = LossDistribution.support(self, tail)
        return (float(lo) if np.isfinite(lo) else qlo), (float(hi) if np.isfinite(hi) else qhi)

    def mean(self):
        return float(self.frozen.mean())

    def std(self):
        return float(self.frozen.std())


class NormalLoss(ScipyLoss):
    def __init__(self, mean, sd):
        if not sd > 0:
            raise DomainError(f"standard deviation must be positive, got {sd}")
        super().__init__(stats.norm(loc=mean, scale=sd))
        self.loc, self.scale = float(mean), float(sd)


class EmpiricalLoss(LossDistribution):
    """Discrete distribution putting mass 1/n on each sample point.

    ``quantile(p)`` is the generalized inverse ``inf{x : F(x) >= p}``, i.e.
    the order statistic ``x_(ceil(n p))``.
    """

    def __init__(self, sample):
        x = np.sort(np.asarray(sample, dtype=float).ravel())
        if x.size == 0 or not np.all(np.isfinite(x)):
            raise DomainError("empirical sample must be non-empty and finite")
        self.x = x

    @property
    def n(self):
        return self.x.size

    def cdf(self, x):
        out = np.searchsorted(self.x, np.asarray(x, dtype=float), side="right") / self.n
        return float(out) if np.ndim(out) == 0 else out

    def sf(self, x):
        out = 1.0 - np.asarray(self.cdf(x))
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(~(p > 0)) or np.any(~(p < 1)):
            raise DomainError(f"quantile level must lie in (0, 1), got {p!r}")
        # guard against p*n landing a hair above an integer
        k = np.ceil(np.round(p * self.n, 9)).astype(int) - 1
        out = self.x[np.clip(k, 0, self.n - 1)]
        return float(out) if out.ndim == 0 else out

    def support(self, tail=SUPPORT_TAIL):
        return float(self.x[0]), float(self.x[-1])

    def atoms(self):
        return self.x, np.full(self.n, 1.0 / self.n)

    def mean(self):
        return float(self.x.mean())


class NegatedLoss(LossDistribution):
    """Distribution of ``-X``."""

    def __init__(self, base):
        self.base = base

    def cdf(self, x):
        return self.base.sf(-np.asarray(x, dtype=float))

    def sf(self, x):
        return self.base.cdf(-np.asarray(x, dtype=float))

    def quantile(self, p):
        return -np.asarray(self.base.quantile(1.0 - np.asarray(p, dtype=float)))

    def support(self, tail=SUPPORT_TAIL):
        lo, hi = self.base.support(tail)
        return -hi, -lo



def negate(dist) -> LossDistribution:
    """Distribution of ``-X``; discrete inputs stay discrete."""
    dist = as_loss(dist)
    if isinstance(dist, EmpiricalLoss):
        return EmpiricalLoss(-dist.x)
    if isinstance(dist, NegatedLoss):
        return dist.base
    return NegatedLoss(dist)


def as_loss(dist) -> LossDistribution:
    if isinstance(dist, LossDistribution):
        return dist
    if isinstance(dist, RpmEstimate):
        return MixtureLoss(dist)
    if hasattr(dist, "ppf") and hasattr(dist, "cdf"):
        return ScipyLoss(dist)
    raise TypeError(f"cannot use {type(dist).__name__} as a loss distribution")


def bs_loss_distribution(mu, sigma, T):
    """GBM log-return over ``[0, T]``: ``N((mu - sigma^2/2) T, sigma^2 T)``."""
    if not sigma > 0 or not T > 0:
        raise DomainError(f"sigma and T must be positive, got sigma={sigma}, T={T}")
    return NormalLoss((mu - 0.5 * sigma**2) * T, sigma * math.sqrt(T))


# --------------------------------------------------------------------------
# Distortions


@dataclass(frozen=True)
class DistortionFunction:
    """Non-decreasing ``g: [0, 1] -> [0, 1]`` with ``g(0) = 0`` and ``g(1) = 1``."""

    kind: str
    params: dict
    func: Callable = field(repr=False, compare=False)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = self.func(np.clip(u, 0.0, 1.0))
        return float(out) if np.ndim(out) == 0 else out

    def dual(self):
        """``g~(u) = 1 - g(1 - u)``."""
        return DistortionFunction(f"dual({self.kind})", dict(self.params),
                                  lambda u: 1.0 - self.func(1.0 - u))

    def validate(self, grid=1025, tol=1e-12):
        u = np.linspace(0.0, 1.0, grid)
        g = self(u)
        if abs(g[0]) > tol or abs(g[-1] - 1.0) > tol:
            raise DomainError(f"{self.kind}: need g(0)=0 and g(1)=1, got {g[0]!r}, {g[-1]!r}")
        if np.any(np.diff(g) < -tol):
            raise DomainError(f"{self.kind}: distortion must be non-decreasing")
        return self


def identity_distortion():
    return DistortionFunction("identity", {}, lambda u: u)


def var_distortion(gamma):
    """Step at tail probability ``gamma``: the Choquet integral of ``X`` is
    its ``1 - gamma`` quantile."""
    _check_level(gamma)
    return DistortionFunction("VaR", {"gamma": gamma}, lambda u: (u >= gamma).astype(float))


def cvar_distortion(gamma):
    """``min(u / gamma, 1)``: the Choquet integral of ``X`` is the mean of its
    upper ``gamma`` tail."""
    _check_level(gamma)
    return DistortionFunction("CVaR", {"gamma": gamma}, lambda u: np.minimum(u / gamma, 1.0))


def wang_distortion(r):
    """``Phi(Phi^-1(u) + r)`` with market price of risk ``r``."""
    r = float(r)
    return DistortionFunction("Wang", {"r": r}, lambda u: special.ndtr(special.ndtri(u) + r))


def custom_distortion(func, name="custom"):
    return DistortionFunction(name, {}, func).validate()


class DistortionClass(NamedTuple):
    strictly_increasing: bool
    concave: bool
    complete: bool
    exhaustive: bool


def classify_distortion(g: DistortionFunction, grid=1025, tol_increase=0.0, tol_concave=1e-12):
    """Numerical classification on a uniform grid of ``[0, 1]``.

    A distortion measure is complete exactly when ``g`` is strictly
    increasing, and exhaustive exactly when ``g`` is also concave.
    """
    u = np.linspace(0.0, 1.0, grid)
    v = g(u)
    inc = bool(np.all(np.diff(v) > tol_increase))
    concave = bool(np.all(np.diff(v, 2) <= tol_concave))
    return DistortionClass(inc, concave, inc, inc and concave)


def _check_level(gamma):
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {gamma!r}")


# --------------------------------------------------------------------------
# Choquet integral


def _adaptive_trapezoid(f, a, b, n, tol, max_evals=1 << 22):
    """Adaptive trapezoid rule.

    Starts from ``n`` uniform panels; every panel whose Richardson error
    estimate ``|T_fine - T_coarse| / 3`` exceeds its share of ``tol`` is
    bisected.  Panels narrower than ``(b - a) * 2**-46`` are accepted as
    they stand, which lets jump discontinuities resolve.
    """
    x = np.linspace(a, b, n + 1)
    y = f(x)
    x0, x1, y0, y1 = x[:-1], x[1:], y[:-1], y[1:]
    total, evals, levels = 0.0, x.size, 0
    min_width = (b - a) * 2.0**-46
    while x0.size:
        xm = 0.5 * (x0 + x1)
        ym = f(xm)
        evals += xm.size
        h = x1 - x0
        coarse = 0.5 * h * (y0 + y1)
        fine = 0.25 * h * (y0 + 2.0 * ym + y1)
        err = np.abs(fine - coarse) / 3.0
        done = (err <= tol * h / (b - a)) | (h <= min_width)
        total += float(np.sum(fine[done]))
        keep = ~done
        if not keep.any():
            break
        if evals > max_evals:
            raise IntegrationError("adaptive trapezoid exhausted its node budget",
                                   {"evals": evals, "open_panels": int(keep.sum()),
                                    "interval": (a, b), "level": levels})
        x0, xm_, x1 = x0[keep], xm[keep], x1[keep]
        y0, ym_, y1 = y0[keep], ym[keep], y1[keep]
        x0, x1 = np.concatenate([x0, xm_]), np.concatenate([xm_, x1])
        y0, y1 = np.concatenate([y0, ym_]), np.concatenate([ym_, y1])
        levels += 1
    return total


def _integration_range(dist, g, tail_tol=1e-13, max_expand=12):
    """Support hint widened until the distorted tails are negligible."""
    try:
        lo, hi = dist.support()
    except (AttributeError, NotImplementedError) as exc:
        raise IntegrationError("distribution gives no support hint", {"cause": repr(exc)}) from exc
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise IntegrationError("support hint is not a finite interval", {"support": (lo, hi)})
    width = max(hi - lo, 1e-12 * max(1.0, abs(lo), abs(hi)))
    # tolerances are absolute for unit-scale distributions, relative beyond
    tail_tol *= max(1.0, width)
    for _ in range(max_expand):
        upper = g(dist.sf(hi))
        lower = 1.0 - g(dist.sf(lo))
        if upper * width <= tail_tol and lower * width <= tail_tol:
            return lo, hi
        if upper * width > tail_tol:
            hi += width
        if lower * width > tail_tol:
            lo -= width
        width = hi - lo
    raise IntegrationError("distorted tails too heavy for the quadrature range",
                           {"support": (lo, hi), "upper_tail": float(g(dist.sf(hi))),
                            "lower_tail": float(1.0 - g(dist.sf(lo)))})


def choquet_integral(dist, g: DistortionFunction, quad=DEFAULT_NODES, tol=1e-10):
    """Choquet integral of ``X ~ dist`` with respect to ``g`` applied to ``P(X > x)``.

    Discrete distributions (exposing ``atoms()``) are integrated exactly;
    continuous ones by adaptive trapezoid over the support hint, using
    ``rho = lo + int_lo^hi g(S(x)) dx``.  The identity distortion returns
    ``E[X]``.
    """
    if quad < 64:
        raise DomainError(f"need at least 64 quadrature nodes, got {quad}")
    dist = as_loss(dist)
    if hasattr(dist, "atoms"):
        x, w = dist.atoms()
        # S_i = P(X > x_(i)); each atom contributes x_(i) (g(S_{i-1}) - g(S_i))
        surv = np.clip(1.0 - np.cumsum(w), 0.0, 1.0)
        surv[-1] = 0.0
        prev = np.concatenate([[1.0], surv[:-1]])
        return float(np.sum(x * (g(prev) - g(surv))))
    lo, hi = _integration_range(dist, g)
    if hi == lo:
        return float(lo)
    scale = max(1.0, float(np.subtract(*dist.support()[::-1])))
    return float(lo + _adaptive_trapezoid(lambda t: g(dist.sf(t)), lo, hi, int(quad), tol * scale))


# --------------------------------------------------------------------------
# Named measures


def var(dist, gamma):
    """Lower ``gamma`` quantile of the return distribution."""
    _check_level(gamma)
    return float(as_loss(dist).quantile(gamma))


def _tail_mean_exact(x, w, gamma):
    """``(1/gamma) int_0^gamma q(u) du`` for a discrete distribution."""
    cum = np.cumsum(w)
    take = np.clip(gamma - np.concatenate([[0.0], cum[:-1]]), 0.0, w)
    return float(np.sum(x * take) / gamma)


# composite Gauss-Legendre panels in s for u = gamma * exp(-s)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)
_PANELS = (0.0, 1.0, 3.0, 7.0, 15.0, 25.0, 45.0)


def _tail_mean_quadrature(dist, gamma):
    """``(1/gamma) int_0^gamma q(u) du = int_0^inf q(gamma e^-s) e^-s ds``.

    The substitution removes the endpoint singularity of the quantile at 0.
    """
    nodes, weights = [], []
    for a, b in zip(_PANELS[:-1], _PANELS[1:]):
        nodes.append(0.5 * (b - a) * _GL_X + 0.5 * (b + a))
        weights.append(0.5 * (b - a) * _GL_W)
    s, w = np.concatenate(nodes), np.concatenate(weights)
    u = gamma * np.exp(-s)
    ok = u > 0
    q = np.asarray(dist.quantile(u[ok]))
    return float(np.sum(q * np.exp(-s[ok]) * w[ok]))


def esf_tail_average(dist, gamma):
    _check_level(gamma)
    dist = as_loss(dist)
    if hasattr(dist, "atoms"):
        return _tail_mean_exact(*dist.atoms(), gamma)
    if hasattr(dist, "lower_partial_mean"):
        # continuous, so the quantile tail average is the truncated mean
        return dist.lower_partial_mean(dist.quantile(gamma)) / gamma
    return _tail_mean_quadrature(dist, gamma)


def esf_choquet(dist, gamma, quad=DEFAULT_NODES):
    """ESF as the negated Choquet integral of the loss ``-X`` under the CVaR distortion."""
    _check_level(gamma)
    return -choquet_integral(negate(dist), cvar_distortion(gamma), quad)


def esf(dist, gamma, quad=DEFAULT_NODES, check=True, rtol=1e-4):
    """Expected shortfall: mean return at or below the ``gamma`` quantile.

    The reported value is the quantile tail average; with ``check`` the
    Choquet route is evaluated as well and a disagreement beyond ``rtol``
    (relative to ``max(1, |value|)``) raises :class:`IntegrationError`.
    """
    a = esf_tail_average(dist, gamma)
    if check:
        b = esf_choquet(dist, gamma, quad)
        scale = max(1.0, abs(a))
        if abs(a - b) > rtol * scale:
            raise IntegrationError("ESF routes disagree", {"tail_average": a, "choquet": b, "gamma": gamma})
    return a


def wang_measure(dist, r, quad=DEFAULT_NODES):
    """Choquet integral of ``X`` under the Wang distortion ``g_r``.

    For ``X ~ N(mu, s^2)`` this is ``mu + r s``; ``r = 0`` gives ``E[X]``.
    """
    return choquet_integral(dist, wang_distortion(r), quad)


def wang_return(dist, r, quad=DEFAULT_NODES):
    """Risk-loaded return ``-rho_{g_r}(-X)``, which equals ``wang_measure(dist, -r)``."""
    return -choquet_integral(negate(dist), wang_distortion(r), quad)


def risk_summary(dist, gammas, r, quad=DEFAULT_NODES):
    dist = as_loss(dist)
    return {
        "var": {_level_key(g): var(dist, g) for g in gammas},
        "esf": {_level_key(g): esf(dist, g, quad) for g in gammas},
        "wang": wang_return(dist, r, quad),
    }


def _level_key(gamma):
    return repr(float(gamma))


# --------------------------------------------------------------------------
# Report


@dataclass
class RiskReport:
    """VaR/ESF/Wang values per column (assets and portfolio) and source.

    ``values[source][column]`` is a :func:`risk_summary` dict; sources are
    ``"empirical"`` and ``"model"``.
    """

    columns: list
    gammas: list
    wang_r: float
    values: dict
    model_label: str = "Copula Estimated"
    convention: str = CONVENTION
    meta: dict = field(default_factory=dict)

    def get(self, source, column, measure, gamma=None):
        entry = self.values[source][column][measure]
        return entry if gamma is None else entry[_level_key(gamma)]

    def to_dict(self):
        return {
            "columns": list(self.columns),
            "gammas": [float(g) for g in self.gammas],
            "wang_r": float(self.wang_r),
            "model_label": self.model_label,
            "convention": self.convention,
            "values": self.values,
            "meta": self.meta,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(d["columns"], d["gammas"], d["wang_r"], d["values"],
                   d.get("model_label", "Copula Estimated"), d.get("convention", CONVENTION),
                   d.get("meta", {}))

    def rows(self):
        labels = {"empirical": "Empirical", "model": self.model_label}
        out = []
        for measure, name in (("var", "VaR"), ("esf", "ESF")):
            for g in self.gammas:
                for source in ("empirical", "model"):
                    if source in self.values:
                        pct = f"{100 * g:g}%"
                        out.append((f"{labels[source]} {name} ({pct})", source, measure, g))
        for source in ("empirical", "model"):
            if source in self.values:
                out.append((f"{labels[source]} Wang (r={self.wang_r:g})", source, "wang", None))
        return out

    def to_text(self, percent=True):
        scale = 100.0 if percent else 1.0
        rows = self.rows()
        width = max(len(r[0]) for r in rows) if rows else 10
        colw = max(10, *(len(c) + 2 for c in self.columns))
        lines = ["# " + self.convention,
                 " " * width + "".join(f"{c:>{colw}}" for c in self.columns)]
        for label, source, measure, g in rows:
            cells = []
            for c in self.columns:
                entry = self.values[source].get(c)
                if entry is None:
                    cells.append(f"{'-':>{colw}}")
                    continue
                v = entry[measure] if g is None else entry[measure][_level_key(g)]
                cells.append(f"{scale * v:>{colw}.2f}")
            lines.append(f"{label:<{width}}" + "".join(cells))
        return "\n".join(lines) + "\n"
