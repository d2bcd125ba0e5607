"""Stationary marked point processes: Poisson centres, radius marks, thinning."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Union

import numpy as np
from scipy import integrate, special
from scipy.spatial import cKDTree

from .errors import ConfigError, DivergentMomentError

# stage indices used to derive independent substreams from one seed
POINTS_STREAM = 0
MARKS_STREAM = 1


# ---------------------------------------------------------------- mark laws


@dataclass(frozen=True)
class ConstantLaw:
    rho0: float

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ConfigError(f"constant mark must be positive, got {self.rho0}")

    def ppf(self, u):
        return np.full(np.shape(u), float(self.rho0))

    def cdf(self, x):
        return np.where(np.asarray(x) >= self.rho0, 1.0, 0.0)

    def moment(self, p: float) -> float:
        return float(self.rho0) ** p

    def moment_min(self, p: float, cap: float) -> float:
        return min(float(self.rho0), cap) ** p

    def tail_exponent(self) -> float:
        return np.inf


@dataclass(frozen=True)
class ParetoLaw:
    """Density (beta-1) rho_min^(beta-1) rho^(-beta) on [rho_min, inf).

    Moments <rho^p> exist for p < beta - 1.
    """

    rho_min: float
    beta: float

    def __post_init__(self):
        if not self.rho_min > 0:
            raise ConfigError(f"pareto rho_min must be positive, got {self.rho_min}")
        if not self.beta > 1:
            raise ConfigError(f"pareto beta must exceed 1, got {self.beta}")

    @property
    def _k(self) -> float:
        return self.beta - 1.0

    def ppf(self, u):
        return self.rho_min * (1.0 - np.asarray(u, dtype=float)) ** (-1.0 / self._k)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 1.0 - (self.rho_min / x) ** self._k
        return np.where(x >= self.rho_min, out, 0.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self._k * self.rho_min**self._k * x ** (-self.beta)
        return np.where(x >= self.rho_min, out, 0.0)

    def moment(self, p: float) -> float:
        if p >= self._k:
            raise DivergentMomentError(
                f"pareto(beta={self.beta}) has no moment of order {p} (needs p < {self._k})"
            )
        return self.rho_min**p * self._k / (self._k - p)

    def moment_min(self, p: float, cap: float) -> float:
        # E[min(rho, cap)^p]
        if cap <= self.rho_min:
            return cap**p
        k, a = self._k, self.rho_min
        tail = (a / cap) ** k * cap**p
        if np.isclose(p, k):
            body = k * a**k * np.log(cap / a)
        else:
            body = k * a**k * (cap ** (p - k) - a ** (p - k)) / (p - k)
        return float(body + tail)

    def tail_exponent(self) -> float:
        return self._k


@dataclass(frozen=True)
class LognormalLaw:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"lognormal sigma must be positive, got {self.sigma}")

    def ppf(self, u):
        return np.exp(self.mu + self.sigma * special.ndtri(np.asarray(u, dtype=float)))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return special.ndtr((np.log(x) - self.mu) / self.sigma)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log(x) - self.mu) / self.sigma
            out = np.exp(-0.5 * z * z) / (x * self.sigma * np.sqrt(2 * np.pi))
        return np.where(x > 0, out, 0.0)

    def moment(self, p: float) -> float:
        return float(np.exp(p * self.mu + 0.5 * p * p * self.sigma**2))

    def moment_min(self, p: float, cap: float) -> float:
        # lognormal partial moment plus the mass above the cap
        s, m = self.sigma, self.mu
        c = (np.log(cap) - m) / s
        body = np.exp(p * m + 0.5 * (p * s) ** 2) * special.ndtr(c - p * s)
        return float(body + cap**p * special.ndtr(-c))

    def tail_exponent(self) -> float:
        return np.inf


@dataclass(frozen=True)
class TruncatedLaw:
    """Inner law conditioned on rho <= rho_max."""

    rho_max: float
    inner: "MarkLaw"

    def __post_init__(self):
        if not self.rho_max > 0:
            raise ConfigError("truncation level must be positive")
        if isinstance(self.inner, ConstantLaw):
            if self.inner.rho0 > self.rho_max:
                raise ConfigError("truncation removes all mass of the constant law")
        elif not self._mass > 0:
            raise ConfigError("truncation removes all mass of the inner law")

    @property
    def _mass(self) -> float:
        return float(self.inner.cdf(self.rho_max))

    def ppf(self, u):
        if isinstance(self.inner, ConstantLaw):
            return self.inner.ppf(u)
        return self.inner.ppf(np.asarray(u, dtype=float) * self._mass)

    def cdf(self, x):
        return np.minimum(self.inner.cdf(x) / self._mass, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.rho_max, self.inner.pdf(x) / self._mass, 0.0)

    def _lower(self) -> float:
        return float(self.inner.ppf(1e-12))

    def moment(self, p: float) -> float:
        if isinstance(self.inner, ConstantLaw):
            return self.inner.moment(p)
        lo = self._lower()
        val, _ = integrate.quad(
            lambda r: r**p * float(self.pdf(r)), lo, self.rho_max, limit=200, epsabs=0, epsrel=1e-11
        )
        return float(val)

    def moment_min(self, p: float, cap: float) -> float:
        if cap >= self.rho_max:
            return self.moment(p)
        if isinstance(self.inner, ConstantLaw):
            return self.inner.moment_min(p, cap)
        lo = self._lower()
        if cap <= lo:
            return cap**p
        body, _ = integrate.quad(
            lambda r: r**p * float(self.pdf(r)), lo, cap, limit=200, epsabs=0, epsrel=1e-11
        )
        return float(body + cap**p * (1.0 - float(self.cdf(cap))))

    def tail_exponent(self) -> float:
        return np.inf


MarkLaw = Union[ConstantLaw, ParetoLaw, LognormalLaw, TruncatedLaw]


@dataclass(frozen=True)
class MarkLawMoments:
    law: MarkLaw
    n: int
    q: float

    @property
    def mean_n_minus_q(self) -> float:
        return self.mean_generic(self.n - self.q)

    def mean_generic(self, p: float) -> float:
        return mark_moment(self.law, p)


def mark_moment(law: MarkLaw, p: float) -> float:
    """<rho^p> for the law; raises DivergentMomentError when it does not exist."""
    return float(law.moment(p))


def mark_moments(law: MarkLaw, n: int, q: float) -> MarkLawMoments:
    return MarkLawMoments(law, n, q)


# -------------------------------------------------------------- correlation


@dataclass(frozen=True)
class Independent:
    pass


@dataclass(frozen=True)
class GaussianCopula:
    """Latent Gaussian with covariance (1 + r^2)^(-gamma/2), pushed through the mark ppf.

    The latent field is synthesised from `features` random Fourier modes; it is
    exactly standard normal at every point, so mark marginals are exact.
    """

    gamma: float
    features: int = 512

    def covariance(self, r):
        return (1.0 + np.asarray(r, dtype=float) ** 2) ** (-0.5 * self.gamma)


Correlation = Union[Independent, GaussianCopula]


# ---------------------------------------------------------------- configs


@dataclass(frozen=True)
class Window:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ConfigError("window corners must be equal-length coordinate lists")
        if not np.all(hi > lo):
            raise ConfigError(f"degenerate window {self.lo} .. {self.hi}")

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    @classmethod
    def cube(cls, half_width: float, n: int) -> "Window":
        return cls((-half_width,) * n, (half_width,) * n)


@dataclass(frozen=True)
class ProcessConfig:
    intensity: float
    window: Window
    mark_law: MarkLaw = field(default_factory=lambda: ConstantLaw(1.0))
    correlation: Correlation = field(default_factory=Independent)
    seed: int = 0
    q: float | None = None

    def __post_init__(self):
        # intensity 0 is allowed as the empty process
        if not (np.isfinite(self.intensity) and self.intensity >= 0):
            raise ConfigError(f"intensity must be non-negative, got {self.intensity}")
        if self.q is not None and isinstance(self.mark_law, ParetoLaw):
            need = self.n - self.q + 1
            if not self.mark_law.beta > need:
                raise ConfigError(
                    f"pareto beta={self.mark_law.beta} must exceed n-q+1={need} "
                    "for a finite average capacity"
                )
        if isinstance(self.correlation, GaussianCopula) and not self.correlation.gamma > self.n:
            raise ConfigError(
                f"copula decay gamma={self.correlation.gamma} must exceed n={self.n}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def n(self) -> int:
        return self.window.n


@dataclass(frozen=True, eq=False)
class ProcessRealization:
    points: np.ndarray
    marks: np.ndarray
    config: ProcessConfig
    seed: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.config.n)
        marks = np.asarray(self.marks, dtype=float).reshape(-1)
        pts.flags.writeable = False
        marks.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "marks", marks)
        if marks.size and marks.size != len(pts):
            raise ValueError("points and marks differ in length")
        if marks.size and not np.all(marks > 0):
            raise ValueError("marks must be strictly positive")

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def nn_distance(self) -> np.ndarray:
        """Distance from each point to its nearest neighbour in the realization."""
        return nearest_neighbour_distance(self.points)

    @property
    def has_marks(self) -> bool:
        return self.marks.size == len(self.points)

    def subset(self, keep) -> "ProcessRealization":
        keep = np.asarray(keep)
        marks = self.marks[keep] if self.has_marks and len(self) else self.marks[:0]
        return replace(self, points=self.points[keep], marks=marks)

    def to_csv(self) -> str:
        return realization_csv(self)


# ----------------------------------------------------------------- sampling


def _stream(seed: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream,))
    return np.random.default_rng(ss)


def _open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    # k / 2^53 shifted by half a step lies strictly inside (0, 1)
    return rng.random(size) + 2.0**-54


def sample_points(config: ProcessConfig) -> ProcessRealization:
    """Homogeneous Poisson points in the window; marks left empty."""
    rng = _stream(config.seed, POINTS_STREAM)
    w = config.window
    count = rng.poisson(config.intensity * w.volume)
    lo, hi = np.asarray(w.lo), np.asarray(w.hi)
    pts = lo + (hi - lo) * rng.random((count, w.n))
    return ProcessRealization(pts, np.empty(0), config, config.seed)


def _latent_gaussian(points: np.ndarray, cop: GaussianCopula, rng) -> np.ndarray:
    # (1+r^2)^(-g/2) is a Gamma(g/2, 1) mixture of exp(-t r^2); its spectral
    # measure is N(0, 2t I) conditional on t.
    n = points.shape[1]
    f = cop.features
    t = rng.gamma(0.5 * cop.gamma, 1.0, size=f)
    omega = rng.standard_normal((f, n)) * np.sqrt(2.0 * t)[:, None]
    a = rng.standard_normal(f)
    b = rng.standard_normal(f)
    out = np.empty(len(points))
    chunk = max(1, 2**22 // f)
    for s in range(0, len(points), chunk):
        phase = points[s : s + chunk] @ omega.T
        out[s : s + chunk] = (np.cos(phase) @ a + np.sin(phase) @ b) / np.sqrt(f)
    return out


def sample_marks(realization: ProcessRealization) -> ProcessRealization:
    """Attach radius marks drawn from the configured law and correlation."""
    cfg = realization.config
    rng = _stream(cfg.seed, MARKS_STREAM)
    n_pts = len(realization)
    if isinstance(cfg.correlation, GaussianCopula):
        z = _latent_gaussian(realization.points, cfg.correlation, rng)
        u = np.clip(special.ndtr(z), 2.0**-54, 1.0 - 2.0**-53)
    else:
        u = _open_uniform(rng, n_pts)
    marks = np.asarray(cfg.mark_law.ppf(u), dtype=float)
    return replace(realization, marks=marks)


def sample_realization(config: ProcessConfig) -> ProcessRealization:
    return sample_marks(sample_points(config))


def nearest_neighbour_distance(points: np.ndarray) -> np.ndarray:
    """Distance from each point to its nearest other point (inf if alone)."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return np.full(len(points), np.inf)
    tree = cKDTree(points, balanced_tree=False)
    order = tree.indices
    d, _ = tree.query(points[order], k=2)
    out = np.empty(len(points))
    out[order] = d[:, 1]
    return out


def locality_order(points: np.ndarray) -> np.ndarray:
    """Permutation grouping nearby points; tree queries in this order run about twice as fast."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return np.arange(len(points))
    return cKDTree(points, balanced_tree=False).indices


def thin(realization: ProcessRealization, delta: float) -> ProcessRealization:
    """Keep the points whose nearest neighbour lies at distance >= delta."""
    if delta < 0:
        raise ValueError("thinning distance must be non-negative")
    if delta == 0 or len(realization) == 0:
        return realization
    return realization.subset(thinned_indices(realization, delta))


def thinned_indices(realization: ProcessRealization, delta: float) -> np.ndarray:
    if delta <= 0:
        return np.arange(len(realization))
    return np.flatnonzero(realization.nn_distance >= delta)


# ---------------------------------------------------------------------- io

REALIZATION_SCHEMA = "perfhom.realization/1"


def realization_csv(realization: ProcessRealization) -> str:
    n = realization.config.n
    buf = io.StringIO()
    buf.write(f"# schema={REALIZATION_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k + 1}" for k in range(n)] + ["rho"])
    marks = realization.marks if realization.has_marks else np.full(len(realization), np.nan)
    for p, r in zip(realization.points, marks):
        w.writerow([repr(float(v)) for v in p] + [repr(float(r))])
    return buf.getvalue()
