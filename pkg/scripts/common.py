"""Shared setup for the experiment runners."""

import argparse

from perfhom.capacity import CapacityModel
from perfhom.geometry import BoxDomain
from perfhom.process import ConstantLaw, ParetoLaw
from perfhom.slln import Bump, StudyConfig

UNIT = BoxDomain((0.5, 0.5, 0.5))
BUMP = Bump((0.0, 0.0, 0.0), 0.4, 1.0)


def parser(doc: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--intensity", type=float, default=10.0)
    p.add_argument("--eps-grid", type=lambda s: tuple(float(x) for x in s.split(",")), default=(0.1, 0.05, 0.025))
    p.add_argument("--replicas", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r-eps", type=float, default=None, help="fixed critical radius instead of the default rule")
    p.add_argument("--pareto", type=float, default=None, help="Pareto tail index; constant marks if omitted")
    p.add_argument("--threads", type=int, default=1)
    return p


def study_config(args, **kw) -> StudyConfig:
    law = ParetoLaw(1.0, args.pareto) if args.pareto else ConstantLaw(1.0)
    return StudyConfig(
        args.intensity,
        UNIT,
        args.eps_grid,
        CapacityModel(3, 2.0),
        law,
        replicas=args.replicas,
        seed=args.seed,
        r_eps=args.r_eps,
        threads=args.threads,
        **kw,
    )


def table(rep, extra=()) -> str:
    head = ["eps", "mean", "std", "target", "rel_err", *extra]
    lines = ["  ".join(f"{h:>12}" for h in head)]
    for r in rep.rows:
        vals = [r.eps, r.mean, r.std, r.target, r.rel_err, *(r.extra[k] for k in extra)]
        lines.append("  ".join(f"{v:12.5g}" for v in vals))
    return "\n".join(lines)
