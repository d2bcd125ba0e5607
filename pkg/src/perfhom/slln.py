"""Monte Carlo convergence studies over a decreasing eps grid.

Every replica draws one realization over the blown-up window of the smallest
eps and reuses it for all eps, so hole sets are nested along the grid.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

from .capacity import CapacityModel, average_capacity_density, phi_infinite, phi_truncated, phi_truncated_closed
from .classify import bad_capacity_sum, classify_all, critical_radius, default_alpha_exponent
from .errors import ConfigError
from .geometry import (
    DomainDescriptor,
    PerforatedDomain,
    annulus_averages,
    blown_up_window,
    build_perforated_domain,
    sphere_area,
)
from .process import (
    ConstantLaw,
    Correlation,
    Independent,
    MarkLaw,
    ProcessConfig,
    ProcessRealization,
    mark_moment,
    sample_realization,
    thinned_indices,
)

PROCESS_STAGE = 0
STUDY_SCHEMA = "perfhom.study/1"


# ------------------------------------------------------------------ bump


@dataclass(frozen=True)
class Bump:
    """u(x) = A exp(1 - 1/(1 - |x-c|^2/w^2)) inside B_w(c), zero outside."""

    centre: tuple[float, ...]
    width: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigError("bump width must be positive")

    @property
    def n(self) -> int:
        return len(self.centre)

    def radial(self, r):
        s = np.minimum(np.asarray(r, dtype=float) / self.width, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            val = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - s * s))
        return np.where(s < 1.0, val, 0.0)

    def radial_slope(self, r):
        """|du/dr|."""
        r = np.asarray(r, dtype=float)
        s = np.minimum(r / self.width, 1.0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            d = np.abs(self.radial(r)) * 2 * s / (self.width * (1 - s * s) ** 2)
        return np.where(s < 1.0, d, 0.0)

    def _r(self, x):
        return np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(self.centre), axis=-1)

    def __call__(self, x):
        return self.radial(self._r(x))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        d = x - np.asarray(self.centre)
        r = np.linalg.norm(d, axis=-1)
        s = np.minimum(r / self.width, 1.0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            coef = -self.radial(r) * 2 / (self.width**2 * (1 - s * s) ** 2)
        coef = np.where(s < 1.0, coef, 0.0)
        return coef[..., None] * d

    def integrate(self, F: Callable, use_slope: bool = False) -> float:
        """Integral over R^n of F(u) (or F(|grad u|)) for F(0) = 0, by adaptive quadrature."""
        f = self.radial_slope if use_slope else self.radial
        n = self.n
        val, _ = integrate.quad(
            lambda r: float(F(f(r))) * r ** (n - 1), 0.0, self.width, limit=400, epsabs=0, epsrel=1e-12
        )
        return sphere_area(n) * val

    def sup_near(self, centres, radius):
        """Upper bound for |u| on balls B(c, radius)."""
        r = np.maximum(self._r(centres) - radius, 0.0)
        return np.abs(self.radial(r))

    def inside(self, domain: DomainDescriptor) -> bool:
        return bool(domain.dist_to_boundary(np.asarray(self.centre)) > self.width)


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class StudyConfig:
    intensity: float
    domain: DomainDescriptor
    eps_grid: tuple[float, ...]
    capacity: CapacityModel
    mark_law: MarkLaw = ConstantLaw(1.0)
    correlation: Correlation = Independent()
    replicas: int = 10
    seed: int = 0
    M: float = 10
    theta: float = 0.1
    alpha_exponent: float | None = None
    r_eps: float | None = None
    bump: Bump | None = None
    p: float = 1.0
    quad_resolution: tuple[int, int] = (4, 8)
    threads: int = 1

    def __post_init__(self):
        grid = np.asarray(self.eps_grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
            raise ConfigError("eps grid must be positive and strictly decreasing")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.domain.n != self.capacity.n:
            raise ConfigError("domain and capacity model disagree on the dimension")
        if self.bump is not None:
            if self.bump.n != self.n:
                raise ConfigError("bump dimension differs from the domain")
            if not self.bump.inside(self.domain):
                raise ConfigError("bump support must lie strictly inside D")
        if self.alpha_exponent is not None:
            lim = self.q / (self.n - self.q)
            if not 0 < self.alpha_exponent < lim:
                raise ConfigError(f"alpha_exponent must lie in (0, {lim})")
        if self.r_eps is not None and not self.r_eps > 0:
            raise ConfigError("r_eps override must be positive")
        # validates intensity, tail condition and copula decay
        self.process_config(0)

    @property
    def n(self) -> int:
        return self.capacity.n

    @property
    def q(self) -> float:
        return self.capacity.q

    @property
    def window(self):
        return blown_up_window(self.domain, min(self.eps_grid))

    def process_config(self, replica: int) -> ProcessConfig:
        return ProcessConfig(
            self.intensity,
            self.window,
            self.mark_law,
            self.correlation,
            seed=replica_seed(self.seed, replica),
            q=self.q,
        )


def replica_seed(seed: int, replica: int, stage: int = PROCESS_STAGE) -> int:
    """64-bit seed of one replica, derived from the run seed and the stage index."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stage, int(replica)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


@lru_cache(maxsize=12)
def _realization(pc: ProcessConfig) -> ProcessRealization:
    return sample_realization(pc)


def realization(cfg: StudyConfig, replica: int) -> ProcessRealization:
    return _realization(cfg.process_config(replica))


# ------------------------------------------------------------------ report


@dataclass
class StudyRow:
    eps: float
    replicas: int
    mean: float
    std: float
    target: float
    rel_err: float
    values: list[float] = field(default_factory=list)
    extra: dict[str, float] = field(default_factory=dict)


@dataclass
class StudyReport:
    kind: str
    rows: list[StudyRow]
    seed: int
    eps_grid: tuple[float, ...]
    meta: dict = field(default_factory=dict)
    breakdown: list[dict] = field(default_factory=list)

    def row(self, eps: float) -> StudyRow:
        for r in self.rows:
            if r.eps == eps:
                return r
        raise KeyError(eps)

    @property
    def stem(self) -> str:
        grid = "-".join(format(e, "g") for e in self.eps_grid)
        return f"{self.kind}_seed{self.seed}_eps{grid}"

    def to_csv(self) -> str:
        keys = sorted({k for r in self.rows for k in r.extra})
        buf = io.StringIO()
        buf.write(f"# schema={STUDY_SCHEMA} kind={self.kind}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "replicas", "mean", "std", "target", "rel_err"] + keys)
        for r in self.rows:
            w.writerow(
                [_fmt(r.eps), r.replicas, _fmt(r.mean), _fmt(r.std), _fmt(r.target), _fmt(r.rel_err)]
                + [_fmt(r.extra.get(k, np.nan)) for k in keys]
            )
        return buf.getvalue()

    def breakdown_csv(self) -> str:
        keys = list(self.breakdown[0]) if self.breakdown else []
        buf = io.StringIO()
        buf.write(f"# schema={STUDY_SCHEMA}.breakdown kind={self.kind}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for b in self.breakdown:
            w.writerow([_fmt(b[k]) if isinstance(b[k], float) else b[k] for k in keys])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "schema": STUDY_SCHEMA,
            "kind": self.kind,
            "seed": self.seed,
            "eps_grid": list(self.eps_grid),
            "meta": self.meta,
            "rows": [asdict(r) for r in self.rows],
        }
        return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)

    @property
    def worst_rel_err(self) -> float:
        errs = [r.rel_err for r in self.rows if np.isfinite(r.rel_err)]
        return max(errs) if errs else float("nan")


def _fmt(x) -> str:
    return repr(float(x))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if is_dataclass(o):
        return {"type": type(o).__name__, **asdict(o)}
    return str(o)


def rel_err(mean: float, target: float) -> float:
    if target == 0:
        return abs(mean) if mean != 0 else 0.0
    return abs(mean - target) / abs(target)


def error_trend(report: StudyReport, allowed_inversions: int = 1) -> tuple[bool, int]:
    """Whether the relative error is non-increasing along the grid up to a few inversions."""
    errs = [r.rel_err for r in report.rows]
    inv = sum(1 for a, b in zip(errs, errs[1:]) if b > a)
    return inv <= allowed_inversions, inv


def config_summary(cfg: StudyConfig) -> dict:
    # threads only affect speed, so they stay out of study outputs
    out = {k: v for k, v in asdict(cfg).items() if k != "threads"}
    out["domain"] = {"type": type(cfg.domain).__name__, **asdict(cfg.domain)}
    out["mark_law"] = {"type": type(cfg.mark_law).__name__, **asdict(cfg.mark_law)}
    out["correlation"] = {"type": type(cfg.correlation).__name__, **asdict(cfg.correlation)}
    return json.loads(json.dumps(out, default=_json_default))


# ------------------------------------------------------------------ driver


def run_replicas(cfg: StudyConfig, per_replica: Callable[[int], dict]) -> list[dict]:
    """Evaluate per_replica(r) for every replica; results ordered by replica."""
    if cfg.threads > 1 and cfg.replicas > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(per_replica, range(cfg.replicas)))
    return [per_replica(r) for r in range(cfg.replicas)]


def aggregate(
    kind: str,
    cfg: StudyConfig,
    results: list[dict],
    target: Callable[[float], float] | float,
    extras: tuple[str, ...] = (),
) -> StudyReport:
    """results[r][eps] is either a value or a dict with 'value' and extra keys."""
    rows = []
    for eps in cfg.eps_grid:
        recs = [res[eps] for res in results]
        vals = np.array([rec["value"] if isinstance(rec, dict) else rec for rec in recs], dtype=float)
        tgt = float(target(eps) if callable(target) else target)
        mean = float(vals.mean())
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        extra = {k: float(np.mean([rec[k] for rec in recs])) for k in extras}
        rows.append(StudyRow(eps, len(vals), mean, std, tgt, rel_err(mean, tgt), vals.tolist(), extra))
    return StudyReport(kind, rows, cfg.seed, tuple(cfg.eps_grid), config_summary(cfg))


def _perforated(cfg: StudyConfig, real: ProcessRealization, eps: float) -> PerforatedDomain:
    return build_perforated_domain(real, eps, cfg.domain, cfg.q)


def _r_eps(cfg: StudyConfig, real: ProcessRealization, eps: float) -> float:
    if cfg.r_eps is not None:
        return cfg.r_eps
    return critical_radius(real, eps, cfg.n, cfg.q, cfg.alpha_exponent, cfg.domain)


def classify_replica(cfg: StudyConfig, real: ProcessRealization, eps: float, theta: float | None = None):
    perf = _perforated(cfg, real, eps)
    alpha_exp = cfg.alpha_exponent if cfg.alpha_exponent is not None else default_alpha_exponent(cfg.n, cfg.q)
    cls = classify_all(perf, real, cfg.M, theta, alpha_exp, r_eps=_r_eps(cfg, real, eps))
    return perf, cls


# ------------------------------------------------------------------ studies


def counting_study(cfg: StudyConfig) -> StudyReport:
    """eps^n N_eps(D) against intensity * vol(D)."""

    def one(r):
        real = realization(cfg, r)
        return {eps: eps**cfg.n * float(len(_perforated(cfg, real, eps))) for eps in cfg.eps_grid}

    return aggregate("counting", cfg, run_replicas(cfg, one), cfg.intensity * cfg.domain.volume)


def mark_sum_study(cfg: StudyConfig, p: float | None = None) -> StudyReport:
    """eps^n sum rho_i^p against intensity * <rho^p> * vol(D)."""
    p = cfg.p if p is None else p
    moment = mark_moment(cfg.mark_law, p)

    def one(r):
        real = realization(cfg, r)
        out = {}
        for eps in cfg.eps_grid:
            perf = _perforated(cfg, real, eps)
            out[eps] = eps**cfg.n * float(np.sum(perf.marks**p))
        return out

    rep = aggregate("marksum", cfg, run_replicas(cfg, one), cfg.intensity * moment * cfg.domain.volume)
    rep.meta["p"] = p
    return rep


def negligible_subset_study(cfg: StudyConfig) -> StudyReport:
    """eps^n sum over bad holes of rho^(n-q); target 0. Also records eps^n #bad."""

    def one(r):
        real = realization(cfg, r)
        out = {}
        for eps in cfg.eps_grid:
            perf, cls = classify_replica(cfg, real, eps)
            out[eps] = {
                "value": bad_capacity_sum(cls, perf),
                "bad_fraction": eps**cfg.n * len(cls.bad),
                "good_fraction": eps**cfg.n * len(cls.good),
                "r_eps": cls.r_eps,
            }
        return out

    return aggregate(
        "negligible", cfg, run_replicas(cfg, one), 0.0, ("bad_fraction", "good_fraction", "r_eps")
    )


def _require_bump(cfg: StudyConfig) -> Bump:
    if cfg.bump is None:
        raise ConfigError("this study needs a bump test field")
    return cfg.bump


def _phi_unit(cfg: StudyConfig) -> float:
    # the limit density is a multiple of t^q, so phi_rho(z) = phi_1(1) |z|^q rho^(n-q)
    return phi_infinite(cfg.capacity, 1.0, 1.0)


def integral_slln_study(cfg: StudyConfig) -> StudyReport:
    """eps^n sum over the 2/M-thinning of ball averages of kappa(u, rho ^ M)."""
    bump = _require_bump(cfg)
    n, q, M, theta = cfg.n, cfg.q, cfg.M, cfg.theta
    phi1 = _phi_unit(cfg)
    mom = cfg.mark_law.moment_min(n - q, M)
    u_q = bump.integrate(lambda v: np.abs(v) ** q)

    def one(r):
        real = realization(cfg, r)
        keep = np.zeros(len(real), dtype=bool)
        keep[thinned_indices(real, 2.0 / M)] = True
        out = {}
        for eps in cfg.eps_grid:
            perf = _perforated(cfg, real, eps)
            idx = np.flatnonzero(keep[perf.source])
            rb = theta * eps / M
            c = perf.centres[idx]
            near = bump._r(c) < bump.width + rb
            avg = np.zeros(len(idx))
            if near.any():
                avg[near] = annulus_averages(
                    lambda x: np.abs(bump(x)) ** q, c[near], 0.0, rb, cfg.quad_resolution
                )
            y = np.minimum(perf.marks[idx], M)
            val = eps**n * float(np.sum(phi1 * y ** (n - q) * avg))
            thinned_intensity = len(idx) * eps**n / cfg.domain.volume
            out[eps] = {"value": val, "thinned_intensity": thinned_intensity}
        return out

    results = run_replicas(cfg, one)
    lam = {eps: float(np.mean([res[eps]["thinned_intensity"] for res in results])) for eps in cfg.eps_grid}
    rep = aggregate(
        "integral", cfg, results, lambda eps: lam[eps] * phi1 * mom * u_q, ("thinned_intensity",)
    )
    return rep


def hole_averages(cfg: StudyConfig, perf: PerforatedDomain, idx: np.ndarray, theta: float) -> np.ndarray:
    """Averages of u over the level-0 annuli (theta eps/(2M), theta eps/M) around the holes."""
    bump = _require_bump(cfg)
    c = perf.centres[idx]
    r_out = theta * perf.eps / cfg.M
    out = np.zeros(len(idx))
    near = bump._r(c) < bump.width + r_out
    if near.any():
        out[near] = annulus_averages(bump, c[near], 0.5 * r_out, r_out, cfg.quad_resolution)
    return out


def capacity_riemann_sum(
    cfg: StudyConfig, perf: PerforatedDomain, idx: np.ndarray, ubar: np.ndarray, theta: float
) -> float:
    """eps^n sum_i phi^j_{theta, rho_i}(ubar_i) over the given holes."""
    if len(idx) == 0:
        return 0.0
    model = cfg.capacity
    rho = perf.marks[idx]
    if np.any(rho >= theta * perf.K):
        raise ConfigError("a selected hole is not smaller than the truncation radius theta*K")
    if model.integrand.linear_coef == 0:
        vals = phi_truncated_closed(model, theta, perf.K, rho, ubar)
    else:
        vals = np.array([phi_truncated(model, theta, perf.K, r, z, 400) for r, z in zip(rho, ubar)])
    return perf.eps**perf.n * float(np.sum(vals))


def capacity_target(cfg: StudyConfig) -> float:
    """<N(Q)> * int_D phi(u) dx."""
    bump = _require_bump(cfg)
    phi1 = average_capacity_density(cfg.capacity, cfg.mark_law, 1.0)
    return cfg.intensity * phi1 * bump.integrate(lambda v: np.abs(v) ** cfg.q)


def capacity_sum_study(cfg: StudyConfig) -> StudyReport:
    """eps^n sum over G_M of the truncated cell energies at the annulus averages of u."""
    _require_bump(cfg)
    if abs(1 / cfg.theta - round(1 / cfg.theta)) > 1e-9:
        raise ConfigError("capacity sums use theta with integer 1/theta")

    def one(r):
        real = realization(cfg, r)
        out = {}
        for eps in cfg.eps_grid:
            perf, cls = classify_replica(cfg, real, eps)
            ubar = hole_averages(cfg, perf, cls.G_M, cfg.theta)
            out[eps] = {
                "value": capacity_riemann_sum(cfg, perf, cls.G_M, ubar, cfg.theta),
                "GM_fraction": eps**cfg.n * len(cls.G_M),
                "good_fraction": eps**cfg.n * len(cls.good),
            }
        return out

    return aggregate(
        "capsum", cfg, run_replicas(cfg, one), capacity_target(cfg), ("GM_fraction", "good_fraction")
    )
