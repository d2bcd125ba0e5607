"""Counting, mark-sum and bad-set studies along the eps grid."""

from common import parser, study_config, table

from perfhom.slln import counting_study, error_trend, mark_sum_study, negligible_subset_study


def main():
    p = parser(__doc__)
    p.set_defaults(pareto=4.0)
    args = p.parse_args()
    cfg = study_config(args)
    for name, study, extra in (
        ("counting", counting_study, ()),
        ("mark sum", mark_sum_study, ()),
        ("bad set", negligible_subset_study, ("bad_fraction", "good_fraction", "r_eps")),
    ):
        rep = study(cfg)
        ok, inv = error_trend(rep)
        print(f"{name}: {inv} error inversions")
        print(table(rep, extra))
        print()


if __name__ == "__main__":
    main()
