"""Rejection rate of the sharp-null permutation test on zero-effect scenes.

    python scripts/permutation_size.py --datasets 500 --reps 1000 --seed 1
"""

import argparse

from amr.design import AssignmentDesign, draw_assignment
from amr.permutation import Statistic, permutation_test
from amr.simulation import SyntheticScene


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--datasets", type=int, default=500)
    p.add_argument("--reps", type=int, default=1000, help="permutation draws per dataset")
    p.add_argument("--stat", default="at:2", help="at:D or mean:A:B")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    args = p.parse_args(argv)

    template = SyntheticScene.null(args.n)
    op = template.ring_operator
    stat = Statistic.parse(args.stat, template.distance_grid.distances)
    observed = AssignmentDesign.bernoulli(template.p, seed=args.seed)
    rejections = 0
    for s in range(args.datasets):
        table = op.apply(SyntheticScene.null(args.n, seed=args.seed + s).baseline)
        z = draw_assignment(observed, args.n, s)
        design = AssignmentDesign.bernoulli(template.p, seed=args.seed + 1 + s)
        rejections += permutation_test(table, z, design, stat, P=args.reps).p_value <= args.alpha
    rate = rejections / args.datasets
    se = (args.alpha * (1 - args.alpha) / args.datasets) ** 0.5
    print(f"rejection rate {rate:.4f} at alpha {args.alpha} ({args.datasets} datasets, "
          f"binomial SE {se:.4f})")


if __name__ == "__main__":
    main()
