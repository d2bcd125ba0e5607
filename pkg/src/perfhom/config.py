"""Declarative run configuration: JSON or TOML with fixed sections.

Sections: process, domain, scaling, classify, capacity, study. Unknown keys
are errors.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .capacity import CapacityModel, Integrand
from .errors import ConfigError
from .geometry import BallDomain, BoxDomain
from .process import ConstantLaw, GaussianCopula, Independent, LognormalLaw, ParetoLaw, TruncatedLaw
from .slln import Bump, StudyConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA = {
    "process": {"intensity", "mark_law", "correlation"},
    "domain": {"kind", "half_widths", "radius", "n"},
    "scaling": {"q", "eps_grid", "eps", "alpha_exponent"},
    "classify": {"M", "theta", "r_eps"},
    "capacity": {"power_coef", "linear_coef"},
    "study": {"replicas", "seed", "p", "bump", "quad_resolution", "grid_N"},
}
MARK_KEYS = {
    "constant": {"rho0"},
    "pareto": {"rho_min", "beta"},
    "lognormal": {"mu", "sigma"},
}
CORRELATION_KEYS = {"independent": set(), "copula": {"gamma", "features"}}
BUMP_KEYS = {"centre", "width", "amplitude"}

DEFAULT_EPS_GRID = (0.1, 0.05, 0.025)


def _field(path: str, value, kind):
    ok = {
        "number": isinstance(value, (int, float)) and not isinstance(value, bool),
        "int": isinstance(value, int) and not isinstance(value, bool),
        "str": isinstance(value, str),
        "table": isinstance(value, dict),
        "list": isinstance(value, list),
    }[kind]
    if not ok:
        raise ConfigError(f"config field {path}: expected {kind}, got {value!r}")
    return value


def _numbers(path: str, value) -> tuple[float, ...]:
    _field(path, value, "list")
    return tuple(float(_field(f"{path}[{i}]", v, "number")) for i, v in enumerate(value))


def _check_keys(path: str, table: dict, allowed: set):
    for k in table:
        if k not in allowed:
            raise ConfigError(f"config: unknown key '{path}.{k}' (allowed: {', '.join(sorted(allowed))})")


def parse_text(text: str, fmt: str) -> dict:
    """Parse JSON or TOML text; syntax errors carry line numbers."""
    if fmt == "json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config line {e.lineno} column {e.colno}: {e.msg}") from None
    elif fmt == "toml":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config: {e}") from None
    else:
        raise ConfigError(f"config format must be json or toml, got {fmt!r}")
    if not isinstance(doc, dict):
        raise ConfigError("config must be a table of sections")
    return doc


def read_config(path: str | Path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    fmt = "toml" if p.suffix.lower() == ".toml" else "json"
    return parse_text(text, fmt)


def _mark_law(entry: dict):
    _field("process.mark_law", entry, "table")
    kind = _field("process.mark_law.kind", entry.get("kind", "constant"), "str")
    if kind not in MARK_KEYS:
        raise ConfigError(f"config field process.mark_law.kind: unknown law {kind!r}")
    _check_keys("process.mark_law", entry, MARK_KEYS[kind] | {"kind", "rho_max"})
    args = {k: float(_field(f"process.mark_law.{k}", entry[k], "number")) for k in MARK_KEYS[kind] if k in entry}
    missing = MARK_KEYS[kind] - set(args)
    if missing:
        raise ConfigError(f"config field process.mark_law: missing {', '.join(sorted(missing))}")
    law = {"constant": ConstantLaw, "pareto": ParetoLaw, "lognormal": LognormalLaw}[kind](**args)
    if "rho_max" in entry:
        law = TruncatedLaw(float(_field("process.mark_law.rho_max", entry["rho_max"], "number")), law)
    return law


def _correlation(entry: dict):
    _field("process.correlation", entry, "table")
    kind = _field("process.correlation.kind", entry.get("kind", "independent"), "str")
    if kind not in CORRELATION_KEYS:
        raise ConfigError(f"config field process.correlation.kind: unknown kind {kind!r}")
    _check_keys("process.correlation", entry, CORRELATION_KEYS[kind] | {"kind"})
    if kind == "independent":
        return Independent()
    if "gamma" not in entry:
        raise ConfigError("config field process.correlation: missing gamma")
    gamma = float(_field("process.correlation.gamma", entry["gamma"], "number"))
    features = int(_field("process.correlation.features", entry.get("features", 512), "int"))
    return GaussianCopula(gamma, features)


def _domain(entry: dict):
    kind = _field("domain.kind", entry.get("kind", "box"), "str")
    if kind == "box":
        _check_keys("domain", entry, {"kind", "half_widths"})
        hw = _numbers("domain.half_widths", entry.get("half_widths", [0.5, 0.5, 0.5]))
        return BoxDomain(hw)
    if kind == "ball":
        _check_keys("domain", entry, {"kind", "radius", "n"})
        radius = float(_field("domain.radius", entry.get("radius", 0.5), "number"))
        n = int(_field("domain.n", entry.get("n", 3), "int"))
        return BallDomain(radius, n)
    raise ConfigError(f"config field domain.kind: unknown domain {kind!r}")


@dataclass(frozen=True)
class RunConfig:
    study: StudyConfig
    eps: float
    grid_N: int
    raw: dict


def build_config(doc: dict, seed: int | None = None, eps_grid=None, replicas: int | None = None,
                 threads: int = 1) -> RunConfig:
    """Resolve a parsed document (plus command-line overrides) into typed configs."""
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ConfigError(f"config: unknown section '{section}' (allowed: {', '.join(sorted(SCHEMA))})")
        _field(section, body, "table")
        _check_keys(section, body, SCHEMA[section])
    proc = doc.get("process", {})
    scal = doc.get("scaling", {})
    clas = doc.get("classify", {})
    cap = doc.get("capacity", {})
    stud = doc.get("study", {})

    domain = _domain(doc.get("domain", {}))
    n = domain.n
    q = float(_field("scaling.q", scal.get("q", 2.0), "number"))
    integrand = Integrand(
        float(_field("capacity.power_coef", cap.get("power_coef", 1.0), "number")),
        float(_field("capacity.linear_coef", cap.get("linear_coef", 0.0), "number")),
    )
    model = CapacityModel(n, q, integrand)
    if eps_grid is None:
        eps_grid = _numbers("scaling.eps_grid", scal["eps_grid"]) if "eps_grid" in scal else DEFAULT_EPS_GRID
    eps_grid = tuple(float(e) for e in eps_grid)
    eps = float(_field("scaling.eps", scal["eps"], "number")) if "eps" in scal else min(eps_grid)
    alpha_exp = scal.get("alpha_exponent")
    r_eps = clas.get("r_eps")
    bump = None
    if "bump" in stud:
        b = _field("study.bump", stud["bump"], "table")
        _check_keys("study.bump", b, BUMP_KEYS)
        centre = _numbers("study.bump.centre", b.get("centre", [0.0] * n))
        bump = Bump(
            centre,
            float(_field("study.bump.width", b.get("width", 0.4), "number")),
            float(_field("study.bump.amplitude", b.get("amplitude", 1.0), "number")),
        )
    if seed is None:
        seed = int(_field("study.seed", stud.get("seed", 0), "int"))
    if replicas is None:
        replicas = int(_field("study.replicas", stud.get("replicas", 10), "int"))
    qr = stud.get("quad_resolution", [4, 8])
    _field("study.quad_resolution", qr, "list")
    if len(qr) != 2:
        raise ConfigError("config field study.quad_resolution: expected two integers")
    cfg = StudyConfig(
        intensity=float(_field("process.intensity", proc.get("intensity", 10.0), "number")),
        domain=domain,
        eps_grid=eps_grid,
        capacity=model,
        mark_law=_mark_law(proc.get("mark_law", {"kind": "constant", "rho0": 1.0})),
        correlation=_correlation(proc.get("correlation", {"kind": "independent"})),
        replicas=replicas,
        seed=seed,
        M=float(_field("classify.M", clas.get("M", 10), "number")),
        theta=float(_field("classify.theta", clas.get("theta", 0.1), "number")),
        alpha_exponent=None if alpha_exp is None else float(_field("scaling.alpha_exponent", alpha_exp, "number")),
        r_eps=None if r_eps is None else float(_field("classify.r_eps", r_eps, "number")),
        bump=bump,
        p=float(_field("study.p", stud.get("p", 1.0), "number")),
        quad_resolution=tuple(int(_field("study.quad_resolution[]", v, "int")) for v in qr),
        threads=threads,
    )
    if not eps > 0:
        raise ConfigError("config field scaling.eps must be positive")
    grid_N = int(_field("study.grid_N", stud.get("grid_N", 32), "int"))
    return RunConfig(cfg, eps, grid_N, doc)


def with_overrides(run: RunConfig, **kw) -> RunConfig:
    return replace(run, study=replace(run.study, **kw))
