"""Capacity Riemann sums over G_M against the homogenized target.

With a fixed M the G_M selection keeps only holes whose nearest neighbour is
at least 2/M away in blown-up units, so the sum tends to that thinning
fraction of the target; the last column prints exp(-lambda |B_1| (2/M)^n).
"""

import numpy as np
from common import BUMP, parser, study_config, table

from perfhom.geometry import unit_ball_volume
from perfhom.slln import capacity_sum_study


def main():
    p = parser(__doc__)
    p.add_argument("--M", type=float, default=10.0)
    p.add_argument("--theta", type=float, default=0.1)
    args = p.parse_args()
    cfg = study_config(args, M=args.M, theta=args.theta, bump=BUMP)
    rep = capacity_sum_study(cfg)
    print(table(rep, ("GM_fraction", "good_fraction")))
    keep = np.exp(-args.intensity * unit_ball_volume(3) * (2 / args.M) ** 3)
    print(f"Poisson thinning fraction {keep:.4f}; predicted limit {keep * rep.rows[0].target:.4f}")


if __name__ == "__main__":
    main()
