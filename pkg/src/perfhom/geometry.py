"""Scaled perforated domains, neighbour queries and annulus averages."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gamma as gamma_fn

from .errors import ConfigError
from .process import ProcessRealization, Window


def check_exponents(n: int, q: float) -> None:
    if not (isinstance(n, (int, np.integer)) and n >= 2):
        raise ConfigError(f"dimension must be an integer >= 2, got {n}")
    if not 1 < q < n:
        raise ConfigError(f"growth exponent q={q} must lie in (1, {n})")


def critical_scale(eps: float, n: int, q: float) -> tuple[float, float]:
    """Hole scale alpha = eps^(n/(n-q)) and blow-up ratio K = eps/alpha."""
    check_exponents(n, q)
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    alpha = eps ** (n / (n - q))
    return alpha, eps ** (-q / (n - q))


def unit_ball_volume(n: int) -> float:
    return float(np.pi ** (n / 2) / gamma_fn(n / 2 + 1))


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    return float(2 * np.pi ** (n / 2) / gamma_fn(n / 2))


# ---------------------------------------------------------------- domains


@dataclass(frozen=True)
class BoxDomain:
    half_widths: tuple[float, ...]

    def __post_init__(self):
        if len(self.half_widths) < 2 or min(self.half_widths) <= 0:
            raise ConfigError("box needs >= 2 positive half widths")

    @property
    def n(self) -> int:
        return len(self.half_widths)

    @property
    def volume(self) -> float:
        return float(np.prod(2 * np.asarray(self.half_widths)))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.half_widths, dtype=float)

    def contains(self, x) -> np.ndarray:
        return np.all(np.abs(np.asarray(x, dtype=float)) <= self.extent, axis=-1)

    def dist_to_boundary(self, x) -> np.ndarray:
        """Distance from interior points to the complement."""
        return np.min(self.extent - np.abs(np.asarray(x, dtype=float)), axis=-1)


@dataclass(frozen=True)
class BallDomain:
    radius: float
    n: int = 3

    def __post_init__(self):
        if not self.radius > 0 or self.n < 2:
            raise ConfigError("ball needs positive radius and n >= 2")

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.n) * self.radius**self.n

    @property
    def extent(self) -> np.ndarray:
        return np.full(self.n, float(self.radius))

    def contains(self, x) -> np.ndarray:
        return np.linalg.norm(np.asarray(x, dtype=float), axis=-1) <= self.radius

    def dist_to_boundary(self, x) -> np.ndarray:
        return self.radius - np.linalg.norm(np.asarray(x, dtype=float), axis=-1)


DomainDescriptor = Union[BoxDomain, BallDomain]


def blown_up_window(domain: DomainDescriptor, eps: float) -> Window:
    """Smallest box containing eps^-1 D."""
    h = domain.extent / eps
    return Window(tuple(-h), tuple(h))


# ------------------------------------------------------------ perforations


@dataclass(frozen=True, eq=False)
class PerforatedDomain:
    """Holes B(eps x_i, alpha rho_i) for the points x_i in eps^-1 D.

    `centres` are physical coordinates; `source` indexes the realization.
    """

    eps: float
    n: int
    q: float
    alpha: float
    domain: DomainDescriptor
    centres: np.ndarray
    radii: np.ndarray
    marks: np.ndarray
    source: np.ndarray

    def __len__(self) -> int:
        return len(self.source)

    @property
    def K(self) -> float:
        return self.eps / self.alpha

    @property
    def blown_up(self) -> np.ndarray:
        return self.centres / self.eps

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.centres.reshape(-1, self.n))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema=perfhom.holes/1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"c{k + 1}" for k in range(self.n)] + ["radius", "source"])
        for c, r, s in zip(self.centres, self.radii, self.source):
            w.writerow([repr(float(v)) for v in c] + [repr(float(r)), int(s)])
        return buf.getvalue()


def build_perforated_domain(
    realization: ProcessRealization, eps: float, domain: DomainDescriptor, q: float
) -> PerforatedDomain:
    n = realization.config.n
    if domain.n != n:
        raise ConfigError(f"domain dimension {domain.n} differs from process dimension {n}")
    alpha, _ = critical_scale(eps, n, q)
    w = realization.config.window
    need = domain.extent / eps
    slack = 1e-12 * need
    if np.any(np.asarray(w.lo) > -need + slack) or np.any(np.asarray(w.hi) < need - slack):
        raise ConfigError(f"window does not contain eps^-1 D for eps={eps}")
    if len(realization) and not realization.has_marks:
        raise ConfigError("realization has no marks")
    pts = realization.points
    inside = np.flatnonzero(domain.contains(eps * pts)) if len(pts) else np.zeros(0, int)
    marks = realization.marks[inside] if len(pts) else np.zeros(0)
    return PerforatedDomain(
        eps=eps,
        n=n,
        q=q,
        alpha=alpha,
        domain=domain,
        centres=eps * pts[inside].reshape(-1, n),
        radii=alpha * marks,
        marks=marks,
        source=inside,
    )


def query_neighbors(perf: PerforatedDomain, centre, radius: float) -> np.ndarray:
    """Sorted indices of holes whose centres lie within `radius` of `centre`."""
    if radius < 0:
        raise ValueError("query radius must be non-negative")
    if len(perf) == 0:
        return np.zeros(0, dtype=int)
    idx = perf.tree.query_ball_point(np.asarray(centre, dtype=float), radius)
    return np.sort(np.asarray(idx, dtype=int))


# ---------------------------------------------------------------- annuli


@dataclass(frozen=True)
class Annulus:
    centre: tuple[float, ...]
    r_in: float
    r_out: float
    level: int = 0

    def __post_init__(self):
        if not 0 <= self.r_in < self.r_out:
            raise ConfigError(f"annulus needs 0 <= r_in < r_out, got {self.r_in}, {self.r_out}")

    @classmethod
    def dyadic(cls, centre, theta: float, eps: float, M: float, level: int = 0) -> "Annulus":
        """Shell between radii 2^-(l+1) theta eps / M and 2^-l theta eps / M."""
        if level < 0:
            raise ConfigError("annulus level must be >= 0")
        outer = 2.0**-level * theta * eps / M
        return cls(tuple(np.asarray(centre, dtype=float)), 0.5 * outer, outer, level)


def shell_nodes(n: int, r_in: float, r_out: float, resolution=(64, 64)) -> np.ndarray:
    """Equal-weight midpoint nodes of a spherical shell, relative to its centre.

    Radii are midpoints in r^n (equal-volume sub-shells); directions are midpoints
    of an equal-area grid (cos polar angle x azimuth in 3-D).
    """
    n_rad, n_ang = resolution
    s = r_in**n + (np.arange(n_rad) + 0.5) / n_rad * (r_out**n - r_in**n)
    rad = s ** (1.0 / n)
    if n == 2:
        phi = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    elif n == 3:
        mu = -1 + 2 * (np.arange(n_ang) + 0.5) / n_ang
        phi = 2 * np.pi * (np.arange(2 * n_ang) + 0.5) / (2 * n_ang)
        mu, phi = np.meshgrid(mu, phi, indexing="ij")
        sin = np.sqrt(1 - mu**2)
        dirs = np.stack([sin * np.cos(phi), sin * np.sin(phi), mu], axis=-1).reshape(-1, 3)
    else:
        raise ConfigError(f"shell quadrature implemented for n in (2, 3), got {n}")
    return (rad[:, None, None] * dirs[None, :, :]).reshape(-1, n)


def annulus_average(u: Callable, annulus: Annulus, resolution=(64, 64)):
    """Volume average of u over the annulus by midpoint quadrature."""
    c = np.asarray(annulus.centre, dtype=float)
    pts = c + shell_nodes(len(c), annulus.r_in, annulus.r_out, resolution)
    vals = np.asarray(u(pts))
    return vals.mean(axis=0)


def annulus_averages(
    u: Callable, centres: np.ndarray, r_in, r_out, resolution=(8, 8), chunk: int = 4096
) -> np.ndarray:
    """Batched annulus averages of a scalar field for many centres.

    `r_in` and `r_out` may be scalars or per-centre arrays.
    """
    centres = np.asarray(centres, dtype=float)
    m, n = centres.shape
    r_in = np.broadcast_to(np.asarray(r_in, dtype=float), (m,))
    r_out = np.broadcast_to(np.asarray(r_out, dtype=float), (m,))
    unit = shell_nodes(n, 0.0, 1.0, resolution)
    n_rad = resolution[0]
    # rescale unit-shell nodes: node radius s^(1/n) with s in (r_in^n, r_out^n)
    frac = (np.arange(n_rad) + 0.5) / n_rad
    dirs = unit.reshape(n_rad, -1, n) / frac[:, None, None] ** (1.0 / n)
    out = np.empty(m)
    for s in range(0, m, chunk):
        sl = slice(s, s + chunk)
        a, b = r_in[sl] ** n, r_out[sl] ** n
        rad = (a[:, None] + frac[None, :] * (b - a)[:, None]) ** (1.0 / n)
        pts = centres[sl, None, None, :] + rad[:, :, None, None] * dirs[None]
        vals = np.asarray(u(pts.reshape(-1, n))).reshape(len(a), -1)
        out[sl] = vals.mean(axis=1)
    return out
