#!/usr/bin/env python3
"""Taylor-remainder ladders for the first and second variational expansions."""

import argparse

import numpy as np

from stocond.benchmarks import make_bilinear_scalar, make_polynomial_scalar
from stocond.forward import (VariationData, remainder_study_first,
                             remainder_study_second)
from stocond.model import TimeGrid, generate_brownian


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out-prefix", default="remainder")
    args = ap.parse_args()

    grid = TimeGrid(args.steps, 1.0)
    ts = grid.times

    bil = make_bilinear_scalar()
    paths = generate_brownian(grid, args.paths, 1, args.seed)
    var = VariationData(nu1=np.array([0.2]), u1=np.sin(np.pi * ts)[:, None],
                        nu2=np.zeros(1), u2=np.zeros((args.steps + 1, 1)))
    rep1 = remainder_study_first(bil, grid, paths, np.array([1.0]),
                                 0.5 * np.ones((args.steps + 1, 1)), var)
    rep1.to_csv(f"{args.out_prefix}_first_bilinear.csv")
    print(f"bilinear first-order slope:  {rep1.fitted_slope:.3f}")

    cub = make_polynomial_scalar(3, coeff=0.3)
    paths_det = generate_brownian(grid, 4, 1, args.seed + 1)
    var2 = VariationData(nu1=np.array([0.5]), u1=np.zeros((args.steps + 1, 1)),
                         nu2=np.zeros(1), u2=np.zeros((args.steps + 1, 1)))
    rep2 = remainder_study_second(cub, grid, paths_det, np.array([1.0]),
                                  np.zeros((args.steps + 1, 1)), var2)
    rep2.to_csv(f"{args.out_prefix}_second_cubic.csv")
    print(f"cubic second-order slope:    {rep2.fitted_slope:.3f}")
    print(f"wrote {args.out_prefix}_first_bilinear.csv and "
          f"{args.out_prefix}_second_cubic.csv")


if __name__ == "__main__":
    main()
