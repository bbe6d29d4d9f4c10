"""Truncated stick-breaking Dirichlet-process mixture of normals.

The base measure is Normal-Inv-chi^2(mu0, sigma0^2/kappa0; nu0, sigma0^2) and
the concentration alpha carries a Gamma(a_alpha, b_alpha) hyperprior
(shape-rate).  One sweep of the blocked Gibbs sampler does, in order:

1. allocation of every observation to one of ``H`` clusters,
2. the conjugate alpha update,
3. cluster occupancy counts,
4. stick fractions ``V_h ~ Beta(1 + n_h, alpha + sum_{k>h} n_k)``,
5. cluster means and precisions.

Clusters holding a single observation ("irregular" clusters) are updated
from a prior whose only carried quantity is the previous sweep's kappa; fully
occupied clusters use the previous sweep's posterior hyperparameters as the
prior when ``carry_over`` is on.

Cluster indices are 0-based in arrays; exported files label them 1..H.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .errors import DomainError, InputError, InsufficientDataError

MIN_OBSERVATIONS = 10
VAR_CEIL = 1e300
SCALE_FLOOR = 1e-12
STICK_CLAMP = 1.0 - 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DpConfig:
    """Hyperparameters and run controls for :func:`run_blocked_gibbs`.

    ``mu0`` and ``sigma0_sq`` default to the sample mean and variance of the
    data; ``H`` defaults to :meth:`truncation_level`.  Setting ``alpha_tol``
    to 0 disables the early stop so exactly ``max_iter`` sweeps run.
    """

    a_alpha: float = 2.0
    b_alpha: float = 4.0
    mu0: float | None = None
    kappa0: float = 1.0
    nu0: float = 4.0
    sigma0_sq: float | None = None
    epsilon: float = 0.01
    H: int | None = None
    max_iter: int = 20000
    burn_in: int = 1000
    thin: int = 1
    alpha_window: int = 200
    alpha_tol: float = 1e-3
    carry_over: bool = True
    label_swaps: bool = True
    init: str = "prior"
    aggregate: str = "index_mean"
    pool_sweeps: int = 100
    seed: int | None = None

    def __post_init__(self):
        for name in ("a_alpha", "b_alpha", "kappa0", "nu0"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma0_sq is not None and not self.sigma0_sq > 0:
            raise InputError(f"sigma0_sq must be positive, got {self.sigma0_sq}")
        if not 0 < self.epsilon < 1:
            raise InputError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.H is not None and (int(self.H) != self.H or self.H < 2):
            raise InputError(f"truncation level H must be an integer >= 2, got {self.H}")
        if self.max_iter < 1 or self.thin < 1 or self.alpha_window < 1:
            raise InputError("max_iter, thin and alpha_window must be positive")
        if not 0 <= self.burn_in < self.max_iter:
            raise InputError(f"burn_in ({self.burn_in}) must be in [0, max_iter={self.max_iter})")
        if self.alpha_tol < 0:
            raise InputError("alpha_tol must be non-negative")
        if self.init not in ("prior", "equal"):
            raise InputError(f"init must be 'prior' or 'equal', got {self.init!r}")
        if self.aggregate not in ("index_mean", "predictive"):
            raise InputError(f"aggregate must be 'index_mean' or 'predictive', got {self.aggregate!r}")
        if self.pool_sweeps < 1:
            raise InputError("pool_sweeps must be positive")

    def truncation_level(self):
        """Smallest H >= 20 whose expected stick mass beyond H is below epsilon.

        Under ``V ~ Beta(1, alpha)`` the mass left after H sticks has
        expectation ``(alpha / (1 + alpha))**H``; alpha is set to its prior mean.
        """
        if self.H is not None:
            return int(self.H)
        ea = self.a_alpha / self.b_alpha
        return max(20, math.ceil(math.log(self.epsilon) / math.log(ea / (1.0 + ea))))

    def resolved(self, data):
        """Copy with data-driven defaults filled in."""
        x = np.asarray(data, dtype=float)
        mu0 = float(np.mean(x)) if self.mu0 is None else float(self.mu0)
        s2 = self.sigma0_sq
        if s2 is None:
            s2 = float(np.var(x, ddof=1)) if x.size > 1 else 1.0
            s2 = max(s2, SCALE_FLOOR)
        return replace(self, mu0=mu0, sigma0_sq=s2, H=self.truncation_level())

    def base_hyper(self):
        if self.mu0 is None or self.sigma0_sq is None:
            raise InputError("base measure needs mu0 and sigma0_sq; call resolved(data) first")
        return NigHyper.broadcast(self.mu0, self.kappa0, self.nu0, self.sigma0_sq, self.truncation_level())


@dataclass
class NigHyper:
    """Per-cluster Normal-Inv-chi^2 hyperparameters (mu, kappa, nu, sigma^2)."""

    mu: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    s2: np.ndarray

    @classmethod
    def broadcast(cls, mu, kappa, nu, s2, size):
        return cls(*(np.full(size, float(v)) for v in (mu, kappa, nu, s2)))

    def copy(self):
        return NigHyper(self.mu.copy(), self.kappa.copy(), self.nu.copy(), self.s2.copy())


def nig_posterior(prior: NigHyper, n, xbar, ss):
    """Conjugate Normal-Inv-chi^2 update with ``n`` points of mean ``xbar``
    and centred sum of squares ``ss`` (all arrays, one entry per cluster)."""
    kappa = prior.kappa + n
    mu = (prior.kappa * prior.mu + n * xbar) / kappa
    nu = prior.nu + n
    shrink = np.where(n > 0, prior.kappa * n / kappa * (xbar - prior.mu) ** 2, 0.0)
    s2 = (prior.nu * prior.s2 + ss + shrink) / nu
    return NigHyper(mu, kappa, nu, np.maximum(s2, SCALE_FLOOR))


def sample_nig(hyper: NigHyper, rng):
    """Draw ``(mu, phi)`` per cluster from Normal-Inv-chi^2 hyperparameters."""
    # a near-zero chi-square draw under a vague prior would give phi = 0
    with np.errstate(divide="ignore", over="ignore"):
        var = hyper.nu * hyper.s2 / rng.chisquare(hyper.nu)
    var = np.clip(var, SCALE_FLOOR * SCALE_FLOOR, VAR_CEIL)
    mu = hyper.mu + np.sqrt(var / hyper.kappa) * rng.standard_normal(hyper.mu.size)
    return mu, 1.0 / var


@dataclass
class GibbsState:
    iteration: int
    V: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    z: np.ndarray
    alpha: float
    n_h: np.ndarray
    hyper: NigHyper

    @property
    def H(self):
        return self.V.size

    def copy(self):
        return GibbsState(self.iteration, self.V.copy(), self.pi.copy(), self.mu.copy(),
                          self.phi.copy(), self.z.copy(), self.alpha, self.n_h.copy(),
                          self.hyper.copy())


def stick_to_weights(V):
    """``pi_h = V_h prod_{l<h} (1 - V_l)``; with ``V_H = 1`` the weights sum to 1."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 1 or V.size == 0:
        raise DomainError("stick fractions must be a non-empty 1-D array")
    if np.any(~np.isfinite(V)) or np.any(V < 0) or np.any(V > 1):
        raise DomainError(f"stick fractions must lie in [0, 1], got {V.tolist()}")
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - V[:-1])])
    pi = V * remaining
    if V[-1] == 1.0:
        # absorb rounding so the simplex constraint is exact
        pi[-1] = max(0.0, 1.0 - pi[:-1].sum())
    return pi


def occupancy(z, H):
    return np.bincount(z, minlength=H)


def allocation_log_probs(pi, mu, phi, data):
    """Normalised log allocation probabilities, shape (n, H)."""
    x = np.asarray(data, dtype=float)[:, None]
    with np.errstate(divide="ignore"):
        logw = np.log(pi)
    loglik = 0.5 * (np.log(phi) - _LOG_2PI - phi * (x - mu) ** 2)
    lp = logw + loglik
    return lp - special.logsumexp(lp, axis=1, keepdims=True)


def allocate_clusters(state: GibbsState, data, rng):
    """Draw one cluster label per observation from its allocation probabilities."""
    p = np.exp(allocation_log_probs(state.pi, state.mu, state.phi, data))
    cum = np.cumsum(p, axis=1)
    u = rng.random(cum.shape[0])[:, None] * cum[:, -1:]
    z = np.sum(cum < u, axis=1)
    return np.minimum(z, state.H - 1)


def last_occupied(n_h):
    """1-based index of the last occupied cluster (0 if none)."""
    occ = np.flatnonzero(np.asarray(n_h) > 0)
    return int(occ[-1]) + 1 if occ.size else 0


def alpha_posterior(V, n_h, config: DpConfig):
    """Shape and rate of the Gamma full conditional of alpha."""
    h0 = max(last_occupied(n_h), 1)
    v = np.minimum(np.asarray(V, dtype=float)[: h0 - 1], STICK_CLAMP)
    shape = config.a_alpha + h0 - 1
    rate = config.b_alpha - float(np.sum(np.log1p(-v)))
    return shape, rate


def update_alpha(state: GibbsState, config: DpConfig, rng):
    shape, rate = alpha_posterior(state.V, state.n_h, config)
    return float(rng.gamma(shape, 1.0 / rate))


def update_sticks(state: GibbsState, rng):
    n_h = np.asarray(state.n_h, dtype=float)
    tail = np.concatenate([np.cumsum(n_h[::-1])[::-1][1:], [0.0]])
    V = rng.beta(1.0 + n_h[:-1], state.alpha + tail[:-1])
    return np.concatenate([V, [1.0]])


def update_cluster_params(state: GibbsState, data, config: DpConfig, rng):
    """Resample ``(mu_h, phi_h)`` for every cluster.

    Returns ``(mu, phi, hyper)`` where ``hyper`` holds the posterior
    hyperparameters each cluster was drawn from; they become the carried
    prior at the next sweep.
    """
    x = np.asarray(data, dtype=float)
    H = state.H
    n = np.bincount(state.z, minlength=H).astype(float)
    sums = np.bincount(state.z, weights=x, minlength=H)
    xbar = np.divide(sums, n, out=np.zeros(H), where=n > 0)
    ss = np.bincount(state.z, weights=(x - xbar[state.z]) ** 2, minlength=H)

    base = config.base_hyper()
    prev = state.hyper
    first = state.iteration <= 1

    # irregular clusters keep only the previous kappa
    single_kappa = base.kappa if first else prev.kappa
    single = NigHyper(base.mu, single_kappa, base.nu, base.s2)
    multi = prev if (config.carry_over and not first) else base

    empty, one = n == 0, n == 1
    prior = NigHyper(*(np.where(empty, b, np.where(one, s, m))
                       for b, s, m in zip(
                           (base.mu, base.kappa, base.nu, base.s2),
                           (single.mu, single.kappa, single.nu, single.s2),
                           (multi.mu, multi.kappa, multi.nu, multi.s2))))
    post = nig_posterior(prior, n, xbar, ss)
    mu, phi = sample_nig(post, rng)
    return mu, phi, post


def initial_state(data, config: DpConfig, rng):
    """Sticks from their prior at the prior-mean alpha (``init="prior"``) or
    all equal to ``1/H`` (``init="equal"``); cluster parameters from the base.

    With equal sticks the truncation cluster starts with about ``e^-1`` of
    the mass, and a cluster populated there cannot move to a lower index.
    """
    H = config.truncation_level()
    alpha0 = config.a_alpha / config.b_alpha
    if config.init == "prior":
        V = rng.beta(1.0, alpha0, H)
    else:
        V = np.full(H, 1.0 / H)
    V[-1] = 1.0
    base = config.base_hyper()
    mu, phi = sample_nig(base, rng)
    n = np.asarray(data).size
    return GibbsState(0, V, stick_to_weights(V), mu, phi, np.zeros(n, dtype=np.intp),
                      alpha0, np.zeros(H, dtype=np.int64), base)


def swap_adjacent_labels(state: GibbsState, rng):
    """Metropolis moves exchanging clusters ``j`` and ``j+1`` together with
    their stick fractions, for ``j+1 < H-1`` (the truncation stick is fixed).

    The acceptance ratio is ``(1 - V_{j+1})^{n_j} / (1 - V_j)^{n_{j+1}}``;
    allocations, cluster parameters and carried hyperparameters move with
    the labels.  Mutates ``state`` and returns the number of accepted swaps.
    """
    H = state.H
    if H < 3:
        return 0
    perm = np.arange(H)
    V, n = state.V, state.n_h
    log_u = np.log(rng.random(H - 2))
    accepted = 0
    for j in range(H - 2):
        a, b = perm[j], perm[j + 1]
        v_a, v_b = min(V[j], STICK_CLAMP), min(V[j + 1], STICK_CLAMP)
        log_ratio = n[a] * math.log1p(-v_b) - n[b] * math.log1p(-v_a)
        if log_u[j] < log_ratio:
            perm[j], perm[j + 1] = b, a
            V[j], V[j + 1] = V[j + 1], V[j]
            accepted += 1
    if accepted:
        # perm[new] = old label; relabel every per-cluster quantity
        inverse = np.empty(H, dtype=np.intp)
        inverse[perm] = np.arange(H)
        state.z = inverse[state.z]
        state.n_h = n[perm]
        state.mu, state.phi = state.mu[perm], state.phi[perm]
        h = state.hyper
        state.hyper = NigHyper(h.mu[perm], h.kappa[perm], h.nu[perm], h.s2[perm])
    return accepted


def gibbs_sweep(state: GibbsState, data, config: DpConfig, rng):
    s = state.copy()
    s.iteration += 1
    s.pi = stick_to_weights(s.V)
    s.z = allocate_clusters(s, data, rng)
    s.n_h = occupancy(s.z, s.H)
    if config.label_swaps:
        swap_adjacent_labels(s, rng)
    s.pi = stick_to_weights(s.V)
    s.alpha = update_alpha(s, config, rng)
    s.V = update_sticks(s, rng)
    s.pi = stick_to_weights(s.V)
    s.mu, s.phi, s.hyper = update_cluster_params(s, data, config, rng)
    return s


@dataclass
class Traces:
    """Recorded sweeps.  ``alpha_all`` holds alpha for every sweep, the
    matrices only for recorded (thinned) ones."""

    iterations: np.ndarray
    alpha: np.ndarray
    n: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    alpha_all: np.ndarray
    burn_in: int
    n_obs: int

    @property
    def H(self):
        return self.n.shape[1]

    def post_burn_in(self):
        return self.iterations > self.burn_in

    def to_csv(self, path):
        H = self.H
        header = (["iteration", "alpha"] + [f"n_{h}" for h in range(1, H + 1)]
                  + [f"pi_{h}" for h in range(1, H + 1)] + [f"mu_{h}" for h in range(1, H + 1)]
                  + [f"phi_{h}" for h in range(1, H + 1)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.iterations.size):
                w.writerow([int(self.iterations[i]), repr(float(self.alpha[i]))]
                           + [int(v) for v in self.n[i]]
                           + [repr(float(v)) for v in self.pi[i]]
                           + [repr(float(v)) for v in self.mu[i]]
                           + [repr(float(v)) for v in self.phi[i]])


@dataclass(frozen=True)
class RpmEstimate:
    """Finite normal mixture summarising the posterior predictive."""

    weights: np.ndarray
    means: np.ndarray
    precisions: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        p = np.atleast_1d(np.asarray(self.precisions, dtype=float))
        if not (w.shape == m.shape == p.shape) or w.ndim != 1 or w.size == 0:
            raise DomainError("weights, means and precisions must be equal-length 1-D arrays")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise DomainError(f"weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if np.any(~np.isfinite(m)) or np.any(~(p > 0)) or np.any(~np.isfinite(p)):
            raise DomainError("means must be finite and precisions positive")
        for name, arr in (("weights", w), ("means", m), ("precisions", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def normal(cls, mean=0.0, sd=1.0):
        return cls([1.0], [mean], [1.0 / sd**2])

    @property
    def n_components(self):
        return self.weights.size

    @property
    def sds(self):
        return 1.0 / np.sqrt(self.precisions)

    def mean(self):
        return float(np.dot(self.weights, self.means))

    def var(self):
        m = self.mean()
        return float(np.dot(self.weights, 1.0 / self.precisions + self.means**2) - m * m)

    def std(self):
        return math.sqrt(self.var())

    def logpdf(self, x):
        return predictive_logdensity(self, x)

    def pdf(self, x):
        return predictive_density(self, x)

    def cdf(self, x):
        return predictive_cdf(self, x)

    def sf(self, x):
        return predictive_sf(self, x)

    def quantile(self, gamma):
        return predictive_quantile(self, gamma)

    def support(self, tail=1e-9):
        return float(self.quantile(tail)), float(self.quantile(1.0 - tail))

    def sample(self, size, rng):
        comp = rng.choice(self.n_components, size=size, p=self.weights)
        return self.means[comp] + self.sds[comp] * rng.standard_normal(size)

    def shifted(self, c):
        return RpmEstimate(self.weights, self.means + c, self.precisions, dict(self.meta))

    def scaled(self, lam):
        return RpmEstimate(self.weights, self.means * lam, self.precisions / lam**2, dict(self.meta))

    def to_dict(self):
        return {"weights": [float(v) for v in self.weights],
                "means": [float(v) for v in self.means],
                "precisions": [float(v) for v in self.precisions],
                "meta": _jsonable(self.meta)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["means"], d["precisions"], dict(d.get("meta", {})))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# evaluation points x components handled per block, bounding memory for
# pooled mixtures with thousands of components
_EVAL_BLOCK = 1 << 21


def _mixture_logsum(rpm, x, term):
    """``log sum_h pi_h exp(term(z_h))`` with ``z_h = (x - mu_h) sqrt(phi_h)``."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    out = np.empty(flat.size)
    with np.errstate(divide="ignore"):
        logw = np.log(rpm.weights)
    root = np.sqrt(rpm.precisions)
    step = max(1, _EVAL_BLOCK // rpm.weights.size)
    for i in range(0, flat.size, step):
        z = (flat[i:i + step, None] - rpm.means) * root
        out[i:i + step] = special.logsumexp(logw + term(z), axis=-1)
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def predictive_logdensity(rpm: RpmEstimate, x):
    half_log_prec = 0.5 * (np.log(rpm.precisions) - _LOG_2PI)
    return _mixture_logsum(rpm, x, lambda z: half_log_prec - 0.5 * z * z)


def predictive_density(rpm: RpmEstimate, x):
    """``sum_h pi_h N(x | mu_h, 1/phi_h)``."""
    out = np.exp(predictive_logdensity(rpm, x))
    return float(out) if np.ndim(out) == 0 else out


def predictive_cdf(rpm: RpmEstimate, x):
    out = np.minimum(np.exp(_mixture_logsum(rpm, x, special.log_ndtr)), 1.0)
    return float(out) if np.ndim(out) == 0 else out


def predictive_sf(rpm: RpmEstimate, x):
    out = np.minimum(np.exp(_mixture_logsum(rpm, x, lambda z: special.log_ndtr(-z))), 1.0)
    return float(out) if np.ndim(out) == 0 else out


def _component_bracket(rpm, g):
    """Smallest and largest component quantiles at each level."""
    active = rpm.weights > 0
    mu, sd = rpm.means[active], rpm.sds[active]
    lo, hi = np.empty_like(g), np.empty_like(g)
    step = max(1, _EVAL_BLOCK // mu.size)
    for i in range(0, g.size, step):
        comp_q = mu + sd * special.ndtri(g[i:i + step, None])
        lo[i:i + step] = comp_q.min(axis=1)
        hi[i:i + step] = comp_q.max(axis=1)
    return lo, hi


def predictive_quantile(rpm: RpmEstimate, gamma, newton_steps=4, bracket=None):
    """Solve ``sum_h pi_h Phi((q - mu_h) sqrt(phi_h)) = gamma`` for ``q``.

    The root is bracketed by the smallest and largest component quantiles
    (or by ``bracket=(lo, hi)``), narrowed by bisection to about 1e-6 of the
    mixture scale and polished with Newton steps kept inside the bracket.
    """
    g = np.asarray(gamma, dtype=float)
    scalar = g.ndim == 0
    g = np.atleast_1d(g)
    if np.any(~(g > 0)) or np.any(~(g < 1)):
        raise DomainError(f"quantile level must lie in (0, 1), got {gamma!r}")
    if bracket is None:
        lo, hi = _component_bracket(rpm, g)
    else:
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), g.shape).copy() for v in bracket)
    # widen by a hair so rounding cannot put the root outside
    pad = 1e-12 * (1.0 + np.abs(lo) + np.abs(hi))
    lo, hi = lo - pad, hi + pad
    target = 1e-6 * float(np.min(rpm.sds[rpm.weights > 0]))
    n_bisect = int(np.clip(np.ceil(np.log2(np.max(hi - lo) / target + 1.0)), 0, 80))
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        below = predictive_cdf(rpm, mid) < g
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    q = 0.5 * (lo + hi)
    for _ in range(newton_steps):
        f = predictive_density(rpm, q)
        step = np.divide(predictive_cdf(rpm, q) - g, f, out=np.zeros_like(q), where=f > 0)
        q = np.clip(q - step, lo, hi)
    return float(q[0]) if scalar else q


class QuantileTable:
    """Precomputed quantiles on a logit-spaced level grid for inverting many
    levels at once.

    Each level starts from linear interpolation between its two neighbouring
    table entries and takes Newton steps inside that bracket; any level whose
    CDF residual still exceeds ``tol`` is finished by bracketed bisection.
    """

    def __init__(self, rpm: RpmEstimate, size=1025, tail=1e-12, newton_steps=4, tol=1e-12):
        self.rpm = rpm
        self.newton_steps, self.tol = newton_steps, tol
        self.levels = special.expit(np.linspace(special.logit(tail), special.logit(1.0 - tail), size))
        self.values = predictive_quantile(rpm, self.levels)

    def __call__(self, gamma):
        g = np.asarray(gamma, dtype=float)
        scalar = g.ndim == 0
        g = np.atleast_1d(g)
        out = np.empty_like(g)
        idx = np.searchsorted(self.levels, g)
        inside = (idx > 0) & (idx < self.levels.size)
        if inside.any():
            gi, k = g[inside], idx[inside]
            lo, hi = self.values[k - 1], self.values[k]
            l0, l1 = self.levels[k - 1], self.levels[k]
            q = lo + (hi - lo) * (gi - l0) / (l1 - l0)
            for _ in range(self.newton_steps):
                f = predictive_density(self.rpm, q)
                step = np.divide(predictive_cdf(self.rpm, q) - gi, f, out=np.zeros_like(q), where=f > 0)
                q = np.clip(q - step, lo, hi)
            bad = np.abs(predictive_cdf(self.rpm, q) - gi) > self.tol
            if bad.any():
                q[bad] = predictive_quantile(self.rpm, gi[bad], bracket=(lo[bad], hi[bad]))
            out[inside] = q
        if (~inside).any():
            out[~inside] = predictive_quantile(self.rpm, g[~inside])
        return float(out[0]) if scalar else out


def prior_predictive(config: DpConfig):
    """Predictive of one observation with no data: a location-scale t with
    ``nu0`` degrees of freedom, the kernel integrated against the base."""
    scale = math.sqrt(config.sigma0_sq * (1.0 + 1.0 / config.kappa0))
    return stats.t(df=config.nu0, loc=config.mu0, scale=scale)


def sample_prior_predictive(config: DpConfig, size, rng):
    """Monte Carlo draws of ``x ~ N(mu, 1/phi)``, ``(mu, phi) ~ P0``."""
    base = NigHyper.broadcast(config.mu0, config.kappa0, config.nu0, config.sigma0_sq, size)
    mu, phi = sample_nig(base, rng)
    return mu + rng.standard_normal(size) / np.sqrt(phi)


@dataclass(frozen=True)
class OccupancySummary:
    mean_occupancy: np.ndarray
    irregular_counts: np.ndarray
    empty_counts: np.ndarray
    running_mean: np.ndarray = field(repr=False)
    n_sweeps: int

    @property
    def n_irregular(self):
        return int(self.irregular_counts.sum())

    @property
    def n_empty(self):
        return int(self.empty_counts.sum())


def posterior_membership_curve(traces) -> OccupancySummary:
    """Time-averaged cluster occupancy ``(1/M) sum_m n_h^(m)`` and its running
    curve over sweeps, with counts of irregular (n_h = 1) and empty events."""
    n = np.asarray(traces.n if hasattr(traces, "n") else traces, dtype=float)
    if n.ndim != 2 or n.shape[0] < 1:
        raise InsufficientDataError("need at least one recorded sweep")
    running = np.cumsum(n, axis=0) / np.arange(1, n.shape[0] + 1)[:, None]
    return OccupancySummary(running[-1], (n == 1).sum(axis=0), (n == 0).sum(axis=0),
                            running, n.shape[0])


def last_cluster_occupancy_rate(traces, post_burn_in=True):
    """Fraction of recorded sweeps in which cluster H holds any observation.

    Burn-in sweeps are excluded by default: the initial allocation says
    little about whether H is large enough for the posterior.
    """
    n = np.asarray(traces.n)
    if post_burn_in:
        keep = traces.post_burn_in()
        if keep.any():
            n = n[keep]
    return float(np.mean(n[:, -1] > 0))


def posterior_moments(traces, post_burn_in=True):
    """Per-sweep mean and standard deviation of the mixture implied by
    ``(pi, mu, phi)``; the draws behind HPD intervals for return and volatility."""
    keep = traces.post_burn_in() if post_burn_in else np.ones(traces.iterations.size, bool)
    pi, mu, phi = traces.pi[keep], traces.mu[keep], traces.phi[keep]
    mean = np.sum(pi * mu, axis=1)
    var = np.sum(pi * (1.0 / phi + mu**2), axis=1) - mean**2
    return mean, np.sqrt(np.maximum(var, 0.0))


def build_rpm(traces: Traces, config: DpConfig, meta=None):
    """Summarise recorded post-burn-in sweeps as one normal mixture.

    ``aggregate="index_mean"`` averages ``(pi, mu, phi)`` by cluster index,
    drops components with mean weight below epsilon/H and renormalises.
    ``aggregate="predictive"`` instead pools the components of up to
    ``pool_sweeps`` evenly spaced sweeps, each sweep weighted equally, which
    is the posterior predictive itself and is unaffected by label switching.
    """
    keep = traces.post_burn_in()
    if not keep.any():
        keep = np.ones(traces.iterations.size, bool)
    if config.aggregate == "predictive":
        rows = np.flatnonzero(keep)
        rows = rows[np.unique(np.linspace(0, rows.size - 1, min(rows.size, config.pool_sweeps)).astype(int))]
        pi = traces.pi[rows].ravel() / rows.size
        mu, phi = traces.mu[rows].ravel(), traces.phi[rows].ravel()
        # the per-sweep pruning rule of the index-mean summary
        kept = traces.pi[rows].ravel() >= config.epsilon / traces.H
        return RpmEstimate(pi[kept] / pi[kept].sum(), mu[kept], phi[kept], dict(meta or {}))
    pi = traces.pi[keep].mean(axis=0)
    mu = traces.mu[keep].mean(axis=0)
    phi = traces.phi[keep].mean(axis=0)
    H = traces.H
    kept = pi >= config.epsilon / H
    if not kept.any():
        kept = pi == pi.max()
    w = pi[kept] / pi[kept].sum()
    return RpmEstimate(w, mu[kept], phi[kept], dict(meta or {}))


class GibbsResult(NamedTuple):
    rpm: RpmEstimate
    occupancy: OccupancySummary
    traces: Traces


def _check_data(data):
    x = np.asarray(getattr(data, "returns", data), dtype=float)
    if x.ndim != 1:
        raise InputError(f"data must be one-dimensional, got shape {x.shape}")
    if x.size < MIN_OBSERVATIONS:
        raise InsufficientDataError(f"need at least {MIN_OBSERVATIONS} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("data contains non-finite values")
    return x


def run_blocked_gibbs(data, config: DpConfig | None = None) -> GibbsResult:
    """Fit the truncated DP mixture to a return series.

    Runs until ``max_iter`` sweeps or until the running post-burn-in mean of
    alpha, checked every ``alpha_window`` sweeps, changes by less than
    ``alpha_tol`` relative to the previous check.  A run that hits
    ``max_iter`` first is returned with ``meta["converged"] = False``.
    """
    x = _check_data(data)
    cfg = (config or DpConfig()).resolved(x)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    state = initial_state(x, cfg, rng)
    H, M = cfg.H, cfg.max_iter

    n_rec = M // cfg.thin
    iters = np.zeros(n_rec, dtype=np.int64)
    alpha_rec = np.zeros(n_rec)
    n_tr = np.zeros((n_rec, H), dtype=np.int64)
    pi_tr, mu_tr, phi_tr = (np.zeros((n_rec, H)) for _ in range(3))
    alpha_all = np.zeros(M)

    k = 0
    converged = False
    alpha_sum, prev_mean = 0.0, None
    m = 0
    for m in range(1, M + 1):
        state = gibbs_sweep(state, x, cfg, rng)
        alpha_all[m - 1] = state.alpha
        if m % cfg.thin == 0:
            iters[k], alpha_rec[k], n_tr[k] = m, state.alpha, state.n_h
            pi_tr[k], mu_tr[k], phi_tr[k] = state.pi, state.mu, state.phi
            k += 1
        if m > cfg.burn_in:
            alpha_sum += state.alpha
            done = m - cfg.burn_in
            if done % cfg.alpha_window == 0:
                running = alpha_sum / done
                if (prev_mean is not None and cfg.alpha_tol > 0
                        and abs(running - prev_mean) < cfg.alpha_tol * abs(prev_mean)):
                    converged = True
                    break
                prev_mean = running

    traces = Traces(iters[:k], alpha_rec[:k], n_tr[:k], pi_tr[:k], mu_tr[:k], phi_tr[:k],
                    alpha_all[:m], cfg.burn_in, x.size)
    occ = posterior_membership_curve(traces)
    meta = {
        "iterations": m,
        "burn_in": cfg.burn_in,
        "converged": converged,
        "H": H,
        "n_obs": int(x.size),
        "seed": cfg.seed,
        "last_cluster_occupancy": last_cluster_occupancy_rate(traces),
        "alpha_mean": float(alpha_all[cfg.burn_in:m].mean()) if m > cfg.burn_in else float(alpha_all[:m].mean()),
        "stop_rule": "alpha_running_mean" if cfg.alpha_tol > 0 else "fixed_length",
        "config": {k_: v for k_, v in asdict(cfg).items()},
    }
    return GibbsResult(build_rpm(traces, cfg, meta), occ, traces)


def moment_matched_normal(rpm: RpmEstimate):
    """Single normal with the mixture's mean and variance."""
    return RpmEstimate.normal(rpm.mean(), rpm.std())
