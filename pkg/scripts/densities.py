"""Tabulate the pMOM, piMOM, peMOM and normal densities on a grid.

    python3 scripts/densities.py --sigma2 1 --out densities.csv
"""

import argparse

from fusionbma.priors import density_grid_csv, parse_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma2", type=float, default=1.0)
    ap.add_argument("--grid", default="-4:4:0.01")
    ap.add_argument("--out", default="densities.csv")
    args = ap.parse_args()
    with open(args.out, "w") as fh:
        fh.write(density_grid_csv(parse_grid(args.grid), args.sigma2))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
