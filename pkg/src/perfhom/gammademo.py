"""Recovery-type fields on perforated domains, their energies, and the homogenized minimizer."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.fft import dstn, idstn
from scipy.sparse.linalg import LinearOperator, cg
from scipy.spatial import cKDTree

from .capacity import CapacityModel, average_capacity_density, cap_q_annulus, truncated_profile
from .classify import HoleClassification
from .errors import ConfigError, ConvergenceError
from .geometry import BoxDomain, PerforatedDomain, annulus_averages, shell_nodes, unit_ball_volume
from .process import MarkLaw
from .slln import (
    Bump,
    StudyConfig,
    aggregate,
    capacity_riemann_sum,
    classify_replica,
    realization,
    run_replicas,
)

# blending shell width as a fraction of the patch radius
SHELL = 0.25


@dataclass(frozen=True, eq=False)
class RecoveryField:
    """u away from the very good holes; near hole i the optimal annular profile
    from 0 on the hole to ubar_i at radius theta*eps, then a linear blend back
    to u across a shell of width theta*eps/4."""

    bump: Bump
    eps: float
    alpha: float
    theta: float
    q: float
    n: int
    index: np.ndarray
    centres: np.ndarray
    rho: np.ndarray
    ubar: np.ndarray
    cell_energy: np.ndarray
    profiles: tuple | None = None
    tolerance: float = 0.0

    @property
    def radius(self) -> float:
        return self.theta * self.eps

    @property
    def outer(self) -> float:
        return (1 + SHELL) * self.radius

    @property
    def K(self) -> float:
        return self.eps / self.alpha

    def _profile(self, k, y):
        """Patch values at blown-up radii y in [rho, theta K] for patch indices k."""
        if self.profiles is not None:
            out = np.empty(len(y))
            for kk in np.unique(k):
                sel = k == kk
                out[sel] = self.profiles[kk](y[sel]) * np.sign(self.ubar[kk])
            return out
        e = (self.q - self.n) / (self.q - 1)
        rho, R = self.rho[k], self.theta * self.K
        y = np.maximum(y, rho)
        return self.ubar[k] * (rho**e - y**e) / (rho**e - R**e)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.n)
        vals = np.asarray(self.bump(flat), dtype=float).copy()
        if len(self.index):
            tree = cKDTree(self.centres)
            dist, k = tree.query(flat, k=1, distance_upper_bound=self.outer)
            inner = np.flatnonzero(dist <= self.radius)
            vals[inner] = self._profile(k[inner], dist[inner] / self.alpha)
            shell = np.flatnonzero((dist > self.radius) & np.isfinite(dist))
            eta = (dist[shell] - self.radius) / (self.outer - self.radius)
            ub = self.ubar[k[shell]]
            vals[shell] = ub + eta * (vals[shell] - ub)
        return vals.reshape(x.shape[:-1])


def build_recovery(
    perf: PerforatedDomain,
    cls: HoleClassification,
    bump: Bump,
    theta: float,
    M: float,
    model: CapacityModel,
    resolution=(8, 8),
) -> RecoveryField:
    if cls.VG is None:
        raise ConfigError("classification has no very good set")
    idx = np.asarray(cls.VG, dtype=int)
    eps = perf.eps
    c = perf.centres[idx]
    if len(idx) > 1:
        sep, _ = cKDTree(c).query(c, k=2)
        if np.any(sep[:, 1] < 2 * (1 + SHELL) * theta * eps):
            raise AssertionError("recovery patches overlap")
    # averages over the annulus (2 theta eps/3, 4 theta eps/3) around each centre
    ubar = np.zeros(len(idx))
    if len(idx):
        ubar = annulus_averages(bump, c, 2 * theta * eps / 3, 4 * theta * eps / 3, resolution)
    rho = perf.marks[idx]
    profiles, tol = None, 0.0
    if model.integrand.linear_coef == 0:
        e = (model.q - model.n) / (model.q - 1)
        R = theta * perf.K
        energy = (
            model.integrand.power_coef * model.c_nq * np.abs(ubar) ** model.q * (rho**e - R**e) ** (1 - model.q)
        )
    else:
        profs = [truncated_profile(model, theta, perf.K, r, abs(z), 400) for r, z in zip(rho, ubar)]
        profiles = tuple(profs)
        energy = np.array([p.energy for p in profs])
        tol = max((p.residual for p in profs), default=0.0)
    return RecoveryField(
        bump, eps, perf.alpha, theta, model.q, model.n, idx, c, rho, ubar, energy, profiles, tol
    )


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float
    capacitary: float
    blending: float
    bad_region: float
    corrections: float
    total: float
    target: float
    gap: float
    solver_tolerance: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _psi(model: CapacityModel, t):
    return model.integrand.psi(t, model.q)


def homogenized_energy(bump: Bump, model: CapacityModel, law: MarkLaw, intensity: float) -> float:
    """F_0(u) = int f(grad u) + <N(Q)> int phi(u)."""
    phi1 = average_capacity_density(model, law, 1.0)
    grad = bump.integrate(lambda t: _psi(model, t), use_slope=True)
    return grad + intensity * phi1 * bump.integrate(lambda v: np.abs(v) ** model.q)


def blending_energies(rec: RecoveryField, model: CapacityModel, resolution=(8, 8), chunk: int = 256) -> np.ndarray:
    """Energy of the linear blend in each shell theta eps < |x - x_i| < (1 + SHELL) theta eps."""
    n = model.n
    bump = rec.bump
    shell_vol = unit_ball_volume(n) * (rec.outer**n - rec.radius**n)
    width = rec.outer - rec.radius
    nodes = shell_nodes(n, rec.radius, rec.outer, resolution)
    r = np.linalg.norm(nodes, axis=-1)
    eta = ((r - rec.radius) / width)[:, None]
    out = np.zeros(len(rec.index))
    for lo in range(0, len(rec.index), chunk):
        c = rec.centres[lo : lo + chunk]
        x = (c[:, None, :] + nodes[None]).reshape(-1, n)
        ub = np.repeat(rec.ubar[lo : lo + chunk], len(nodes))
        radial = ((bump(x) - ub) / width)[:, None] * np.tile(nodes / r[:, None], (len(c), 1))
        grad = np.tile(eta, (len(c), 1)) * bump.gradient(x) + radial
        dens = _psi(model, np.linalg.norm(grad, axis=-1)).reshape(len(c), len(nodes))
        out[lo : lo + chunk] = shell_vol * dens.mean(axis=1)
    return out


def evaluate_energy(
    rec: RecoveryField,
    perf: PerforatedDomain,
    cls: HoleClassification,
    model: CapacityModel,
    target: float,
    resolution=(8, 8),
) -> EnergyBreakdown:
    """Bulk + capacitary + corrections for the recovery field."""
    n, q, eps = model.n, model.q, perf.eps
    bump = rec.bump
    full = bump.integrate(lambda t: _psi(model, t), use_slope=True)
    capacitary = eps**n * float(np.sum(rec.cell_energy))
    blending = 0.0
    removed = 0.0
    if len(rec.index):
        vol = unit_ball_volume(n) * rec.outer**n
        removed = vol * float(
            np.sum(
                annulus_averages(
                    lambda x: _psi(model, np.linalg.norm(bump.gradient(x), axis=-1)),
                    rec.centres, 0.0, rec.outer, resolution,
                )
            )
        )
        blending = float(np.sum(blending_energies(rec, model, resolution)))
    bulk = full - removed
    # holes outside the very good set get the corrector bound cap(B_r, B_2r) sup|u|^q
    others = np.setdiff1d(np.arange(len(perf)), rec.index)
    cover = np.union1d(cls.bad, cls.MG if cls.MG is not None else np.zeros(0, int))
    if not np.array_equal(others, np.setdiff1d(cover, rec.index)) or np.intersect1d(cover, rec.index).size:
        raise AssertionError("correction ledger does not cover the non very good holes")
    bad_region = 0.0
    if len(others):
        r = perf.radii[others]
        sup = bump.sup_near(perf.centres[others], 2 * r)
        live = sup > 0
        if live.any():
            caps = cap_q_annulus(n, q, r[live], 2 * r[live])
            bad_region = model.c2 * float(np.sum(caps * sup[live] ** q))
    corrections = blending + bad_region
    total = bulk + capacitary + corrections
    gap = abs(total - target) / abs(target) if target else abs(total)
    return EnergyBreakdown(bulk, capacitary, blending, bad_region, corrections, total, target, gap, rec.tolerance)


def gamma_gap_study(cfg: StudyConfig):
    """Relative gap between recovery energies and F_0(u) along the eps grid."""
    if cfg.bump is None:
        raise ConfigError("gamma study needs a bump test field")
    target = homogenized_energy(cfg.bump, cfg.capacity, cfg.mark_law, cfg.intensity)

    def one(r):
        real = realization(cfg, r)
        out = {}
        for eps in cfg.eps_grid:
            perf, cls = classify_replica(cfg, real, eps, cfg.theta)
            rec = build_recovery(perf, cls, cfg.bump, cfg.theta, cfg.M, cfg.capacity, cfg.quad_resolution)
            eb = evaluate_energy(rec, perf, cls, cfg.capacity, target, cfg.quad_resolution)
            out[eps] = {"value": eb.total, "replica": r, "VG_fraction": eps**cfg.n * len(cls.VG), **eb.as_dict()}
        return out

    results = run_replicas(cfg, one)
    keys = ("bulk", "capacitary", "blending", "bad_region", "corrections", "total", "target", "gap", "VG_fraction")
    rep = aggregate("gamma", cfg, results, target, keys)
    for eps in cfg.eps_grid:
        for res in results:
            rec = res[eps]
            rep.breakdown.append({"eps": float(eps), **{k: rec[k] for k in ("replica",) + keys}})
    return rep


def capacitary_consistency(cfg: StudyConfig, perf, cls, rec: RecoveryField) -> float:
    """The capacity Riemann sum over the very good holes at the recovery averages."""
    return capacity_riemann_sum(cfg, perf, rec.index, rec.ubar, cfg.theta)


# ------------------------------------------------------- homogenized problem


@dataclass(frozen=True)
class GridSpec:
    """Nodes of a tensor grid over a box, N intervals per side."""

    domain: BoxDomain
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError("grid needs at least 2 intervals per side")

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def h(self) -> np.ndarray:
        return 2 * self.domain.extent / self.N

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axes(self):
        return [np.linspace(-w, w, self.N + 1) for w in self.domain.extent]

    def interior_coords(self) -> np.ndarray:
        ax = [a[1:-1] for a in self.axes()]
        mesh = np.meshgrid(*ax, indexing="ij")
        return np.stack(mesh, axis=-1)


@dataclass(frozen=True)
class HomogenizedSolution:
    grid: GridSpec
    u: np.ndarray  # interior nodal values, shape (N-1,)*n
    energy: float
    iterations: int
    residual: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema=perfhom.grid/1\n")
        w = csv.writer(buf, lineterminator="\n")
        n = self.grid.n
        w.writerow([f"x{k + 1}" for k in range(n)] + ["u"])
        X = self.grid.interior_coords().reshape(-1, n)
        for x, v in zip(X, self.u.reshape(-1)):
            w.writerow([repr(float(c)) for c in x] + [repr(float(v))])
        return buf.getvalue()


class _Discrete:
    """h^n [sum_cells |D u|^q + sum_nodes (lam_cap |u|^q - psi u)] with zero boundary values.

    |D u| and |u| are smoothed as sqrt(. ^2 + d^2) with widths dD and du; with
    zero widths this is the exact discrete energy.
    """

    def __init__(self, grid: GridSpec, q: float, lam_cap: float, forcing: np.ndarray):
        self.grid, self.q, self.lc, self.f = grid, q, lam_cap, forcing
        self.h = grid.h
        self.vol = grid.cell_volume
        self.shape = (grid.N - 1,) * grid.n
        self.smooth(0.0, 0.0)

    def smooth(self, dD: float, du: float):
        self.dD2, self.du2 = dD**2, du**2

    def _pad(self, v):
        return np.pad(v.reshape(self.shape), 1)

    def _D(self, U):
        # forward differences on cells {0..N-1}^n
        n = self.grid.n
        out = []
        for a in range(n):
            hi = [slice(0, -1)] * n
            lo = [slice(0, -1)] * n
            hi[a] = slice(1, None)
            out.append((U[tuple(hi)] - U[tuple(lo)]) / self.h[a])
        return out

    def _DT(self, fields):
        # adjoint of _D, restricted to interior nodes
        n = self.grid.n
        N = self.grid.N
        acc = np.zeros((N + 1,) * n)
        for a, F in enumerate(fields):
            hi = [slice(0, -1)] * n
            lo = [slice(0, -1)] * n
            hi[a] = slice(1, None)
            acc[tuple(hi)] += F / self.h[a]
            acc[tuple(lo)] -= F / self.h[a]
        return acc[(slice(1, -1),) * n].reshape(-1)

    def _tD(self, D):
        return np.sqrt(sum(d * d for d in D) + self.dD2)

    def _tu(self, v):
        return np.sqrt(v * v + self.du2)

    def energy(self, v):
        t = self._tD(self._D(self._pad(v)))
        return self.vol * (
            float(np.sum(t**self.q)) + float(np.sum(self.lc * self._tu(v) ** self.q - self.f * v))
        )

    def gradient(self, v):
        q = self.q
        D = self._D(self._pad(v))
        t = self._tD(D)
        coef = q * _pow(t, q - 2)
        g = self._DT([coef * d for d in D])
        g += self.lc * q * _pow(self._tu(v), q - 2) * v - self.f
        return self.vol * g

    def hessian(self, v) -> LinearOperator:
        q = self.q
        D = self._D(self._pad(v))
        t = self._tD(D)
        c0 = q * _pow(t, q - 2)
        c1 = q * (q - 2) * _pow(t, q - 4)
        tu = self._tu(v)
        diag = self.lc * q * _pow(tu, q - 2) * ((q - 1) * v * v + self.du2) / np.where(tu > 0, tu * tu, 1.0)
        m = v.size

        def mv(w):
            W = self._D(self._pad(w))
            dot = sum(d * e for d, e in zip(D, W))
            fields = [c0 * e + c1 * dot * d for d, e in zip(D, W)]
            return self.vol * (self._DT(fields) + diag * w)

        return LinearOperator((m, m), matvec=mv, dtype=float)


def _pow(t, p):
    # t^p with 0^p read as 0 for the p = 0 shortcut of q = 2 and as 0 where t = 0 otherwise
    if p == 0:
        return np.ones_like(t)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] ** p
    return out


# smoothing widths relative to the q = 2 solution scale, coarse to fine
SMOOTHING = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)


def _newton_descent(prob: _Discrete, v, tol, maxiter, scale):
    E = prob.energy(v)
    g = prob.gradient(v)
    res = float(np.max(np.abs(g))) / scale
    for it in range(1, maxiter + 1):
        if res <= tol:
            return v, it - 1, res
        step, _ = cg(prob.hessian(v), -g, rtol=1e-14, atol=0.0, maxiter=20 * v.size)
        slope = float(g @ step)
        lam = 1.0
        while True:
            trial = v + lam * step
            E_new = prob.energy(trial)
            if E_new <= E + 1e-4 * lam * slope or lam < 1e-10:
                break
            lam *= 0.5
        drop = E - E_new
        if drop < 0:
            return v, it, res
        v, E = trial, E_new
        g = prob.gradient(v)
        res = float(np.max(np.abs(g))) / scale
        if drop <= 1e-14 * abs(E):
            return v, it, res
    raise ConvergenceError(f"homogenized descent stalled at residual {res:.3g}", achieved=res)


def homogenized_minimize(
    grid: GridSpec,
    model: CapacityModel,
    law: MarkLaw,
    intensity: float,
    forcing,
    tol: float = 1e-13,
    maxiter: int = 200,
) -> HomogenizedSolution:
    """Minimise the discrete homogenized energy by Newton descent with CG inner solves.

    q = 2 is a quadratic problem solved from zero by plain Newton. Otherwise
    the non-smooth |.|^q terms are smoothed and the width is continued down
    to 1e-8 of the solution scale; the reported energy is unsmoothed.
    """
    if not model.integrand.is_model:
        raise ConfigError("the homogenized solver takes the model integrand")
    if grid.n != model.n:
        raise ConfigError("grid and model dimensions differ")
    lam_cap = intensity * average_capacity_density(model, law, 1.0)
    f = np.asarray(forcing(grid.interior_coords()), dtype=float).reshape(-1)
    prob = _Discrete(grid, model.q, lam_cap, f)
    shape = prob.shape
    if not np.any(f):
        return HomogenizedSolution(grid, np.zeros(shape), 0.0, 0, 0.0)
    scale = float(np.max(np.abs(prob.gradient(np.zeros_like(f)))))
    if model.q == 2:
        v, its, res = _newton_descent(prob, np.zeros_like(f), tol, maxiter, scale)
    else:
        v = linear_oracle(grid, lam_cap, forcing).reshape(-1)
        u_ref = float(np.max(np.abs(v)))
        L = 2 * float(np.max(grid.domain.extent))
        its = 0
        for frac in SMOOTHING:
            prob.smooth(frac * u_ref / L, frac * u_ref)
            v, it, res = _newton_descent(prob, v, tol, maxiter, scale)
            its += it
        prob.smooth(0.0, 0.0)
        if prob.energy(v) > 0:
            # the zero field has energy 0; smoothing residue left v above it
            v = np.zeros_like(v)
    return HomogenizedSolution(grid, v.reshape(shape), prob.energy(v), its, res)


def linear_oracle(grid: GridSpec, lam_cap: float, forcing) -> np.ndarray:
    """Direct solve of the q = 2 stationarity system (-Lap_h + lam_cap) u = psi / 2.

    The zero-boundary 5/7-point Laplacian is diagonalised exactly by the type-I
    sine transform.
    """
    f = np.asarray(forcing(grid.interior_coords()), dtype=float)
    m = grid.N - 1
    k = np.arange(1, m + 1)
    eig = lam_cap * np.ones((m,) * grid.n)
    for a in range(grid.n):
        lam_a = (2 - 2 * np.cos(np.pi * k / grid.N)) / grid.h[a] ** 2
        shape = [1] * grid.n
        shape[a] = m
        eig = eig + lam_a.reshape(shape)
    return idstn(dstn(0.5 * f, type=1) / eig, type=1)


def euler_lagrange_residual(sol: HomogenizedSolution, lam_cap: float, forcing) -> float:
    """Max-norm residual of (-Lap_h + lam_cap) u - psi / 2 for a q = 2 solution."""
    grid = sol.grid
    f = np.asarray(forcing(grid.interior_coords()), dtype=float)
    U = np.pad(sol.u, 1)
    lap = np.zeros_like(sol.u)
    inner = (slice(1, -1),) * grid.n
    for a in range(grid.n):
        up = list(inner)
        dn = list(inner)
        up[a] = slice(2, None)
        dn[a] = slice(0, -2)
        lap += (U[tuple(up)] - 2 * sol.u + U[tuple(dn)]) / grid.h[a] ** 2
    return float(np.max(np.abs(-lap + lam_cap * sol.u - 0.5 * f)))
