"""Density benchmarks and posterior summaries: Gaussian KDE, mean-square
deviation between density grids and HPD intervals."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .dp_mixture import RpmEstimate
from .errors import DomainError, InputError, InsufficientDataError

GRID_SIZE = 512
# grid half-width beyond the data in bandwidths; 4 keeps the Gaussian tails
# lost off the grid well below the 1e-3 normalization tolerance
KDE_CUT = 4.0
BANDWIDTH_FLOOR = 1e-9
SOURCES = ("KDE", "RPM", "BS", "TRUTH")


@dataclass(frozen=True)
class DensityGrid:
    x: np.ndarray
    density: np.ndarray
    source: str

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if x.ndim != 1 or x.shape != d.shape or x.size < 2:
            raise InputError(f"grid and density must be 1-D of equal length >= 2, got {x.shape}, {d.shape}")
        if np.any(np.diff(x) <= 0):
            raise InputError("grid points must be strictly increasing")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise DomainError("densities must be finite and non-negative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "density", d)

    def integral(self):
        return float(integrate.trapezoid(self.density, self.x))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,density,source\n")
            for a, b in zip(self.x, self.density):
                fh.write(f"{a:.17g},{b:.17g},{self.source}\n")


def silverman_bandwidth(data):
    """``0.9 min(sd, IQR/1.34) n^(-1/5)``."""
    x = np.asarray(data, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde(data, bandwidth=None, grid_size=GRID_SIZE, cut=KDE_CUT):
    """Gaussian kernel density estimate on a grid spanning the data range
    plus ``cut`` bandwidths on each side."""
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDataError(f"kde needs at least 2 observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("kde data must be finite")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > BANDWIDTH_FLOOR:
        if bandwidth is not None and h <= 0:
            raise DomainError(f"bandwidth must be positive, got {bandwidth}")
        warnings.warn(f"bandwidth {h:g} below floor; using {BANDWIDTH_FLOOR:g}", RuntimeWarning, stacklevel=2)
        h = BANDWIDTH_FLOOR
    grid = np.linspace(x.min() - cut * h, x.max() + cut * h, grid_size)
    dens = np.zeros(grid_size)
    # chunk over observations to bound memory at large n
    for start in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * math.sqrt(2.0 * math.pi)
    return DensityGrid(grid, dens, "KDE")


def rpm_density_grid(rpm: RpmEstimate, x):
    return DensityGrid(np.asarray(x, dtype=float), rpm.pdf(x), "RPM")


def normal_density_grid(data_or_mean, x, sd=None, source="BS"):
    """Single-normal density on ``x``; with ``sd`` omitted the normal is the
    maximum-likelihood fit to the data."""
    if sd is None:
        d = np.asarray(data_or_mean, dtype=float)
        mean, sd = d.mean(), d.std(ddof=0)
    else:
        mean = float(data_or_mean)
    return DensityGrid(np.asarray(x, dtype=float), stats.norm.pdf(x, mean, sd), source)


def mean_square_deviation(candidate: DensityGrid, benchmark: DensityGrid):
    """Mean squared pointwise difference of two density grids.

    Identical grids are compared pointwise; otherwise both densities are
    linearly interpolated onto the union of their points inside the overlap
    of the two ranges, which keeps the measure symmetric.
    """
    a, b = candidate, benchmark
    if a.x.shape == b.x.shape and np.array_equal(a.x, b.x):
        return float(np.mean((a.density - b.density) ** 2))
    lo, hi = max(a.x[0], b.x[0]), min(a.x[-1], b.x[-1])
    if not lo < hi:
        raise DomainError(f"density grids do not overlap: [{a.x[0]}, {a.x[-1]}] vs [{b.x[0]}, {b.x[-1]}]")
    x = np.union1d(a.x, b.x)
    x = x[(x >= lo) & (x <= hi)]
    return float(np.mean((np.interp(x, a.x, a.density) - np.interp(x, b.x, b.density)) ** 2))


def hpd_interval(samples, alpha=0.1):
    """Shortest interval holding ``ceil((1 - alpha) n)`` of the sorted samples."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    n = s.size
    if n < 20:
        raise InsufficientDataError(f"HPD interval needs at least 20 samples, got {n}")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    k = math.ceil((1.0 - alpha) * n - 1e-9)
    widths = s[k - 1:] - s[:n - k + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k - 1])


def equal_tailed_interval(samples, alpha=0.1):
    """Central window of the same ``ceil((1 - alpha) n)`` order statistics
    the HPD rule uses, with the excluded samples split evenly between the
    tails (the extra one, if any, goes to the upper tail)."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    n = s.size
    if n < 20:
        raise InsufficientDataError(f"interval needs at least 20 samples, got {n}")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    k = math.ceil((1.0 - alpha) * n - 1e-9)
    j = (n - k) // 2
    return float(s[j]), float(s[j + k - 1])
