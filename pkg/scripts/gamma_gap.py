"""Recovery energy against F_0(u) along the eps grid, with the per-term ledger."""

from common import BUMP, parser, study_config, table

from perfhom.gammademo import gamma_gap_study


def main():
    p = parser(__doc__)
    p.add_argument("--M", type=float, default=10.0)
    p.add_argument("--theta", type=float, default=1 / 30)
    args = p.parse_args()
    cfg = study_config(args, M=args.M, theta=args.theta, bump=BUMP, quad_resolution=(6, 8))
    rep = gamma_gap_study(cfg)
    print(table(rep, ("bulk", "capacitary", "blending", "bad_region", "VG_fraction")))


if __name__ == "__main__":
    main()
