"""Nonlinear q-capacities of balls and annuli, truncated cell problems and averaged densities.

Integrands are isotropic, psi(|xi|) = a |xi|^q + b |xi| with a > 0, b >= 0. The
rescaled density alpha^q psi(t / alpha) stays in the family with the linear
coefficient b alpha^(q-1), so it tends to a t^q as the hole scale vanishes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import interpolate
from scipy.optimize import brentq

from .errors import ConfigError, ConvergenceError
from .geometry import check_exponents, sphere_area, unit_ball_volume
from .process import ConstantLaw, MarkLaw, mark_moment


def cap_constant(n: int, q: float) -> float:
    """C_{n,q} = ((n-q)/(q-1))^(q-1) |S^(n-1)|."""
    check_exponents(n, q)
    return ((n - q) / (q - 1)) ** (q - 1) * sphere_area(n)


def _exponent(n: int, q: float) -> float:
    return (q - n) / (q - 1)


def cap_q_ball(n: int, q: float, rho):
    """q-capacity of the ball of radius rho relative to the whole space."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ConfigError("ball radius must be positive")
    out = cap_constant(n, q) * rho ** (n - q)
    return float(out) if out.ndim == 0 else out


def cap_q_annulus(n: int, q: float, rho, R):
    """q-capacity of B_rho relative to B_R (R = inf gives the ball capacity)."""
    rho = np.asarray(rho, dtype=float)
    R = np.asarray(R, dtype=float)
    if np.any(rho <= 0) or np.any(rho >= R):
        raise ConfigError("annulus needs 0 < rho < R")
    e = _exponent(n, q)
    out = cap_constant(n, q) * (rho**e - R**e) ** (1 - q)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------- integrands


@dataclass(frozen=True)
class RadialDensity:
    """g(t) = a t^q + b t on t >= 0."""

    q: float
    a: float = 1.0
    b: float = 0.0

    def __call__(self, t):
        t = np.abs(t)
        return self.a * t**self.q + self.b * t

    def d1(self, t):
        t = np.abs(t)
        return self.a * self.q * t ** (self.q - 1) + self.b

    def d2(self, t):
        return self.a * self.q * (self.q - 1) * np.abs(t) ** (self.q - 2)

    @property
    def homogeneous(self) -> bool:
        return self.b == 0


@dataclass(frozen=True)
class Integrand:
    """psi(t) = power_coef t^q + linear_coef t."""

    power_coef: float = 1.0
    linear_coef: float = 0.0

    def __post_init__(self):
        if not self.power_coef > 0 or self.linear_coef < 0:
            raise ConfigError("integrand needs power_coef > 0 and linear_coef >= 0")

    @property
    def is_model(self) -> bool:
        return self.power_coef == 1.0 and self.linear_coef == 0.0

    def psi(self, t, q: float):
        t = np.abs(t)
        return self.power_coef * t**q + self.linear_coef * t

    @property
    def c1(self) -> float:
        return self.power_coef

    @property
    def c2(self) -> float:
        return self.power_coef + self.linear_coef


@dataclass(frozen=True)
class CapacityModel:
    n: int
    q: float
    integrand: Integrand = Integrand()

    def __post_init__(self):
        check_exponents(self.n, self.q)
        ts = np.logspace(-6, 6, 121)
        f = self.integrand.psi(ts, self.q)
        tq = ts**self.q
        if not (np.all(self.c1 * (tq - 1) <= f) and np.all(f <= self.c2 * (tq + 1))):
            raise ConfigError("integrand violates its growth sandwich")

    @property
    def c1(self) -> float:
        return self.integrand.c1

    @property
    def c2(self) -> float:
        return self.integrand.c2

    @property
    def C_nq(self) -> float:
        return cap_constant(self.n, self.q)

    @property
    def c_nq(self) -> float:
        # the annulus constant coincides with C_{n,q}
        return cap_constant(self.n, self.q)

    @property
    def lipschitz_L(self) -> float:
        # |g(s)-g(t)| <= L (s^(q-1) + t^(q-1)) |s-t| for g = a t^q
        return self.integrand.power_coef * self.q

    def density(self, alpha: float) -> RadialDensity:
        """Rescaled density g_j for hole scale alpha."""
        return RadialDensity(
            self.q, self.integrand.power_coef, self.integrand.linear_coef * alpha ** (self.q - 1)
        )

    def limit_density(self) -> RadialDensity:
        return RadialDensity(self.q, self.integrand.power_coef, 0.0)


def g_scaled(model: CapacityModel, eps_j: float, t):
    """alpha^q psi(t / alpha) at alpha = eps_j^(n/(n-q))."""
    alpha = eps_j ** (model.n / (model.n - model.q))
    return model.density(alpha)(t)


def alpha_from_K(K: float, n: int, q: float) -> float:
    return K ** (-n / q)


# -------------------------------------------------------------- radial solver


@dataclass(frozen=True)
class RadialProfile:
    radii: np.ndarray
    values: np.ndarray
    energy: float
    iterations: int
    residual: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.interp(r, self.radii, self.values, left=0.0, right=self.values[-1])


def _element_data(n, rho, R, nodes):
    r = np.geomspace(rho, R, nodes)
    r[0], r[-1] = rho, R
    h = np.diff(r)
    w = sphere_area(n) * (r[1:] ** n - r[:-1] ** n) / n
    return r, h, w


def _model_profile(r, n, q, rho, R, zmag):
    e = _exponent(n, q)
    return zmag * (rho**e - r**e) / (rho**e - R**e)


def _flux_slopes(g: RadialDensity, d: float, ratio: np.ndarray) -> np.ndarray:
    # g'(s) = mu h / w where that exceeds g'(0+) = b, else s = 0; mu = d + b / max(h / w)
    x = d * ratio - g.b * (1 - ratio / ratio.max())
    out = np.zeros_like(ratio)
    pos = x > 0
    out[pos] = np.exp(np.log(x[pos] / (g.a * g.q)) / (g.q - 1))
    return out


def solve_radial(
    g: RadialDensity,
    n: int,
    rho: float,
    R: float,
    zmag: float,
    nodes: int = 2000,
    tol: float = 1e-14,
    maxiter: int = 500,
) -> RadialProfile:
    """Minimise |S^(n-1)| int_rho^R g(|z'|) r^(n-1) dr over piecewise-linear profiles.

    The discrete energy sum_k w_k g(s_k) is separable in the element slopes,
    and an optimal profile is monotone, so the minimiser carries a constant
    flux w_k g'(s_k) / h_k = mu fixed by sum_k h_k s_k = zmag. mu is explicit
    for homogeneous g and found by bracketed root finding otherwise.
    """
    if nodes < 100:
        raise ConfigError("need at least 100 radial nodes")
    if not 0 < rho < R:
        raise ConfigError("radial problem needs 0 < rho < R")
    zmag = abs(float(zmag))
    r, h, w = _element_data(n, rho, R, nodes)
    if zmag == 0:
        return RadialProfile(r, np.zeros_like(r), 0.0, 0, 0.0)
    ratio = h / w
    its = 0
    if g.homogeneous:
        unit = _flux_slopes(g, 1.0, ratio)
        d = (zmag / float(h @ unit)) ** (g.q - 1)
    else:
        k = int(np.argmax(ratio))
        hi = 2 * g.a * g.q * (zmag / h[k]) ** (g.q - 1) / ratio[k]

        def excess(t):
            return float(h @ _flux_slopes(g, t, ratio)) - zmag

        d, info = brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                         maxiter=maxiter, full_output=True)
        if not info.converged:
            raise ConvergenceError("flux root finding did not converge", achieved=abs(excess(d)) / zmag)
        its = info.iterations
    s = _flux_slopes(g, d, ratio)
    # absorb the root-finding residual so the boundary value is met exactly
    total = float(h @ s)
    residual = abs(total - zmag) / zmag
    if residual > max(tol, 1e-10):
        raise ConvergenceError("flux constraint not met", achieved=residual)
    s *= zmag / total
    zeta = np.minimum(np.concatenate([[0.0], np.cumsum(h * s)]), zmag)
    zeta[-1] = zmag
    E = float(np.sum(w * g(s)))
    return RadialProfile(r, zeta, E, its, residual)


def _check_truncation(theta, K, rho):
    if not (theta > 0 and K > 0 and rho > 0):
        raise ConfigError("theta, K and rho must be positive")
    if theta * K < 2 * rho * (1 - 1e-12):
        raise ConfigError(f"need theta*K >= 2 rho, got theta*K={theta * K}, rho={rho}")


def truncated_profile(
    model: CapacityModel, theta: float, K: float, rho: float, zmag: float, nodes: int = 2000
) -> RadialProfile:
    _check_truncation(theta, K, rho)
    g = model.density(alpha_from_K(K, model.n, model.q))
    return solve_radial(g, model.n, rho, theta * K, zmag, nodes)


def phi_truncated(
    model: CapacityModel, theta: float, K: float, rho: float, zmag, nodes: int = 2000
) -> float:
    """Truncated cell energy on B_{theta K} with the rescaled density, by the radial solver."""
    return truncated_profile(model, theta, K, rho, float(np.linalg.norm(zmag)), nodes).energy


def phi_truncated_closed(model: CapacityModel, theta: float, K: float, rho, zmag):
    """Closed form of the truncated energy for homogeneous integrands (vectorised)."""
    if model.integrand.linear_coef != 0:
        raise ConfigError("closed form needs a homogeneous integrand")
    rho = np.asarray(rho, dtype=float)
    R = theta * K
    if np.any(R < 2 * rho * (1 - 1e-12)):
        raise ConfigError("need theta*K >= 2 rho")
    e = _exponent(model.n, model.q)
    a = model.integrand.power_coef
    return a * model.c_nq * np.abs(zmag) ** model.q * (rho**e - R**e) ** (1 - model.q)


def truncated_bounds(model: CapacityModel, theta: float, K: float, rho: float, zmag: float):
    """Lower and upper bounds on the truncated energy in terms of the model annulus."""
    e = _exponent(model.n, model.q)
    base = abs(zmag) ** model.q * (rho**e - (theta * K) ** e) ** (1 - model.q)
    beta = unit_ball_volume(model.n)
    lo = model.c1 * model.c_nq * base - model.c1 * beta * theta**model.n
    hi = model.c2 * model.c_nq * base + model.c2 * beta * theta**model.n
    return lo, hi


def lipschitz_constant(model: CapacityModel, M: float, nodes: int = 2000) -> float:
    """C_M with |phi(z) - phi(w)| <= C_M (theta^(n(q-1)/q) + alpha^(q-1) + |z|^(q-1) + |w|^(q-1)) |z - w|.

    Valid for rho <= M and theta K >= 2 rho. The discrete energy is convex in
    |z| with E(0) = 0, so its slope at z is at most E(2z)/z; testing E(2z) with
    the homogeneous optimum and Hoelder on the linear part gives
    2^q a D_M |z|^(q-1) + 2 b D_M^(1/q) beta_n^((q-1)/q) theta^(n(q-1)/q),
    where D_M is the discrete capacity of B_M in B_2M (the largest case).
    """
    n, q = model.n, model.q
    a, b = model.integrand.power_coef, model.integrand.linear_coef
    D = solve_radial(RadialDensity(q), n, M, 2 * M, 1.0, nodes).energy
    beta = unit_ball_volume(n)
    return max(2**q * a * D, 2 * b * D ** (1 / q) * beta ** ((q - 1) / q))


RICHARDSON_RADII = (1e2, 1e3, 1e4)


def phi_infinite(
    model: CapacityModel, rho: float, zmag, method: str = "auto", nodes: int = 2000
) -> float:
    """Whole-space cell energy for the limit density.

    `auto` uses the closed form (the limit density is always a multiple of t^q
    here); `solver` extrapolates truncated solves at R/rho = 1e2, 1e3, 1e4.
    """
    if not rho > 0:
        raise ConfigError("rho must be positive")
    zmag = float(np.linalg.norm(zmag))
    g = model.limit_density()
    if method == "auto":
        return g.a * model.C_nq * zmag**model.q * rho ** (model.n - model.q)
    if method != "solver":
        raise ConfigError(f"unknown method {method!r}")
    if zmag == 0:
        return 0.0
    e = _exponent(model.n, model.q)
    Rs = np.asarray(RICHARDSON_RADII) * rho
    vals = np.array([solve_radial(g, model.n, rho, R, zmag, nodes).energy for R in Rs])
    x = (Rs / rho) ** e
    V = np.vander(x, 3, increasing=True)
    return float(np.linalg.solve(V, vals)[0])


def continuity_bound(model: CapacityModel, rho1: float, rho2: float, phi_rho1: float) -> float:
    """Upper bound for the cell energy at rho2 >= rho1 from its value at rho1."""
    q, L, c1 = model.q, model.lipschitz_L, model.c1
    corr = 1 + L / (c1 * rho2**q) * (rho1 ** (q - 1) + rho2 ** (q - 1)) * (rho2 - rho1)
    return phi_rho1 * (rho2 / rho1) ** model.n * corr


def average_capacity_density(
    model: CapacityModel, law: MarkLaw, zmag, method: str = "auto", panels: int = 64
) -> float:
    """phi(z) = int phi_rho(z) h(rho) drho.

    `auto` uses phi_rho proportional to rho^(n-q) and the closed-form moment;
    `quadrature` runs composite Gauss-Legendre in log rho over the law's
    support with tails of mass < 1e-8 dropped.
    """
    zmag = float(np.linalg.norm(zmag))
    p = model.n - model.q
    moment = mark_moment(law, p)  # raises for divergent laws
    if method == "auto":
        return phi_infinite(model, 1.0, zmag) * moment
    if method != "quadrature":
        raise ConfigError(f"unknown method {method!r}")
    if isinstance(law, ConstantLaw):
        return phi_infinite(model, law.rho0, zmag)
    lo = float(law.ppf(1e-8))
    hi = float(law.ppf(1 - 1e-8))
    if hasattr(law, "rho_max"):
        hi = min(hi, law.rho_max)
    if hasattr(law, "rho_min"):
        lo = law.rho_min
    xg, wg = np.polynomial.legendre.leggauss(16)
    edges = np.linspace(np.log(lo), np.log(hi), panels + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        t = 0.5 * (b - a) * xg + 0.5 * (a + b)
        rho = np.exp(t)
        vals = np.array([phi_infinite(model, r, zmag) for r in rho]) * law.pdf(rho) * rho
        total += 0.5 * (b - a) * float(wg @ vals)
    return total


class PhiTable:
    """Interpolated truncated energies over (rho, |z|) for non-homogeneous integrands."""

    def __init__(self, model, theta, K, rho_max, z_max, n_rho=24, n_z=24, nodes=400, rho_min=None):
        self.model, self.theta, self.K = model, theta, K
        lo = rho_min if rho_min is not None else 1e-3 * rho_max
        rhos = np.geomspace(lo, rho_max, n_rho)
        zs = np.linspace(0.0, max(z_max, 1e-12), n_z)
        vals = np.array(
            [[phi_truncated(model, theta, K, r, z, nodes) for z in zs] for r in rhos]
        )
        self._interp = interpolate.RegularGridInterpolator(
            (np.log(rhos), zs), vals, bounds_error=False, fill_value=None
        )
        self.rho_range = (lo, rho_max)

    def __call__(self, rho, zmag):
        rho = np.clip(np.asarray(rho, dtype=float), *self.rho_range)
        pts = np.stack(np.broadcast_arrays(np.log(rho), np.abs(zmag)), axis=-1)
        return self._interp(pts)
