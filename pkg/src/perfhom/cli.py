"""Command-line entry point: generate, study, capacity-table, homogenized."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import CapacityModel, Integrand, cap_q_annulus, phi_infinite, solve_radial
from .config import build_config, read_config
from .errors import ConfigError, ConvergenceError, DivergentMomentError
from .gammademo import GridSpec, gamma_gap_study, homogenized_minimize
from .geometry import BoxDomain, blown_up_window, build_perforated_domain
from .process import ProcessConfig, sample_realization
from .slln import (
    capacity_sum_study,
    config_summary,
    counting_study,
    integral_slln_study,
    mark_sum_study,
    negligible_subset_study,
    replica_seed,
)

STUDIES = {
    "counting": counting_study,
    "marksum": mark_sum_study,
    "negligible": negligible_subset_study,
    "integral": integral_slln_study,
    "capsum": capacity_sum_study,
    "gamma": gamma_gap_study,
}

EPILOG = """\
seeds: every replica r draws from SeedSequence(entropy=seed, spawn_key=(0, r));
inside a realization the points and marks use child streams 0 and 1, so any
replica or stage can be re-run alone. generate uses replica 0.

gamma study: recovery patches have radius theta*eps around each very good hole,
averages are taken over the annulus (2 theta eps/3, 4 theta eps/3), and a
linear blending shell of width theta*eps/4 joins the patch value to u.

exit codes: 0 success, 1 usage or config error, 2 numerical non-convergence.
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _eps_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _radius_list(text: str) -> tuple[float, ...]:
    return tuple(np.inf if t.strip().lower() in ("inf", "infinity") else float(t) for t in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="perfhom",
        description="Random perforations at critical scaling: sampling, capacities, convergence studies.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"perfhom {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON or TOML config file")
        sp.add_argument("--seed", type=int, default=None, help="run seed (overrides study.seed)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
        sp.add_argument("--eps-grid", type=_eps_list, default=None, help="comma-separated decreasing eps values")
        sp.add_argument("--replicas", type=int, default=None, help="number of replicas")

    g = sub.add_parser("generate", help="sample one realization and its holes", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(g)
    g.add_argument("--eps", type=float, default=None, help="scale (default scaling.eps or the smallest grid value)")

    s = sub.add_parser("study", help="run a convergence study", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("kind", choices=sorted(STUDIES))
    common(s)

    c = sub.add_parser("capacity-table", help="tabulate solver and closed-form cell energies")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--q", type=float, required=True)
    c.add_argument("--rho", type=_eps_list, required=True, help="hole radii")
    c.add_argument("--R", type=_radius_list, required=True, help="outer radii, 'inf' allowed")
    c.add_argument("--z", type=_eps_list, required=True, help="boundary values |z|")
    c.add_argument("--power-coef", type=float, default=1.0)
    c.add_argument("--linear-coef", type=float, default=0.0)
    c.add_argument("--nodes", type=int, default=2000)
    c.add_argument("--out", required=True, help="output directory")

    h = sub.add_parser("homogenized", help="minimise the homogenized energy on a grid")
    common(h)
    h.add_argument("--N", type=int, default=None, help="intervals per side (default study.grid_N)")
    return p


# ------------------------------------------------------------------ outputs


class _Run:
    def __init__(self, args, command: str):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = getattr(args, "config", None)
        self.timings: dict[str, float] = {}
        self.outputs: list[str] = []
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.timings[name] = now - self._t
        self._t = now

    def write(self, name: str, text: str):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.outputs.append(name)

    def manifest(self, parameters: dict, seed):
        for name in self.outputs:
            if not (self.out / name).exists():
                raise RuntimeError(f"declared output {name} is missing")
        doc = {
            "command": self.command,
            "config": self.config,
            "parameters": parameters,
            "seed": seed,
            "out": str(self.out),
            "version": __version__,
            "timings": self.timings,
            "outputs": self.outputs,
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=str)


def _load(args):
    doc = read_config(args.config)
    return build_config(doc, seed=args.seed, eps_grid=args.eps_grid, replicas=args.replicas, threads=args.threads)


def cmd_generate(args) -> int:
    run = _Run(args, "generate")
    rc = _load(args)
    cfg = rc.study
    eps = args.eps if args.eps is not None else rc.eps
    if not eps > 0:
        raise ConfigError("--eps must be positive")
    pc = ProcessConfig(cfg.intensity, blown_up_window(cfg.domain, eps), cfg.mark_law, cfg.correlation,
                       seed=replica_seed(cfg.seed, 0), q=cfg.q)
    real = sample_realization(pc)
    run.stage("sample")
    run.write("realization.csv", real.to_csv())
    perf = build_perforated_domain(real, eps, cfg.domain, cfg.q)
    run.write("holes.csv", perf.to_csv())
    run.stage("write")
    params = config_summary(cfg)
    params["eps"] = eps
    params["points"] = len(real)
    params["holes"] = len(perf)
    run.manifest(params, cfg.seed)
    print(f"generate: {len(real)} points, {len(perf)} holes at eps={eps:g} -> {run.out}")
    return 0


def cmd_study(args) -> int:
    run = _Run(args, f"study {args.kind}")
    rc = _load(args)
    cfg = rc.study
    rep = STUDIES[args.kind](cfg)
    run.stage("study")
    run.write(f"{rep.stem}.csv", rep.to_csv())
    run.write(f"{rep.stem}.json", rep.to_json())
    if rep.breakdown:
        run.write(f"{rep.stem}_breakdown.csv", rep.breakdown_csv())
    run.stage("write")
    run.manifest({**config_summary(cfg), "threads": cfg.threads}, cfg.seed)
    for r in rep.rows:
        print(f"{args.kind}: eps={r.eps:g} mean={r.mean:.6g} target={r.target:.6g} rel_err={r.rel_err:.3g}")
    print(f"{args.kind}: worst relative error {rep.worst_rel_err:.3g}")
    return 0


def capacity_table(n: int, q: float, rhos, Rs, zs, integrand: Integrand = Integrand(), nodes: int = 2000) -> str:
    """CSV rows (n, q, rho, R, z, solver, closed_form, rel_err)."""
    model = CapacityModel(n, q, integrand)
    buf = io.StringIO()
    buf.write("# schema=perfhom.capacity_table/1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "q", "rho", "R", "z", "solver", "closed_form", "rel_err"])
    g = model.limit_density()
    for rho in rhos:
        for R in Rs:
            for z in zs:
                if np.isinf(R):
                    solver = phi_infinite(model, rho, z, method="solver", nodes=nodes)
                    closed = phi_infinite(model, rho, z, method="auto")
                else:
                    if not R > rho:
                        raise ConfigError(f"outer radius {R} must exceed rho {rho}")
                    solver = solve_radial(g, n, rho, R, z, nodes).energy
                    closed = (
                        integrand.power_coef * float(cap_q_annulus(n, q, rho, R)) * abs(z) ** q
                        if integrand.linear_coef == 0
                        else float("nan")
                    )
                err = abs(solver - closed) / abs(closed) if closed else (0.0 if solver == 0 else float("nan"))
                w.writerow([n, repr(float(q)), repr(float(rho)), repr(float(R)), repr(float(z)),
                            repr(float(solver)), repr(float(closed)), repr(float(err))])
    return buf.getvalue()


def cmd_capacity_table(args) -> int:
    run = _Run(args, "capacity-table")
    text = capacity_table(args.n, args.q, args.rho, args.R, args.z,
                          Integrand(args.power_coef, args.linear_coef), args.nodes)
    run.stage("table")
    run.write("capacity_table.csv", text)
    run.manifest({"n": args.n, "q": args.q, "rho": list(args.rho), "R": [repr(r) for r in args.R],
                  "z": list(args.z), "power_coef": args.power_coef, "linear_coef": args.linear_coef,
                  "nodes": args.nodes}, None)
    print(f"capacity-table: {len(args.rho) * len(args.R) * len(args.z)} rows -> {run.out}")
    return 0


def cmd_homogenized(args) -> int:
    run = _Run(args, "homogenized")
    rc = _load(args)
    cfg = rc.study
    if cfg.bump is None:
        raise ConfigError("homogenized needs study.bump as the forcing term")
    if not isinstance(cfg.domain, BoxDomain):
        raise ConfigError("homogenized grids need a box domain")
    grid = GridSpec(cfg.domain, args.N if args.N is not None else rc.grid_N)
    sol = homogenized_minimize(grid, cfg.capacity, cfg.mark_law, cfg.intensity, cfg.bump)
    run.stage("solve")
    run.write("homogenized_grid.csv", sol.to_csv())
    params = config_summary(cfg)
    params.update(N=grid.N, energy=sol.energy, iterations=sol.iterations, residual=sol.residual)
    run.manifest(params, cfg.seed)
    print(f"homogenized: N={grid.N} energy={sol.energy:.10g} residual={sol.residual:.3g}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "study": cmd_study,
    "capacity-table": cmd_capacity_table,
    "homogenized": cmd_homogenized,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DivergentMomentError) as e:
        print(f"perfhom: error: {e}", file=sys.stderr)
        return 1
    except ConvergenceError as e:
        print(f"perfhom: did not converge: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
