"""Bayes-factor decay rates for one redundant free coefficient and one split
fused pair, under the fusion-pMOM slab and the normal slab.

    python3 scripts/rates.py --replications 50
"""

import argparse
import json

from fusionbma.inference import RateConfig, bf_rate_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-grid", default="50,100,200,400,800")
    ap.add_argument("--replications", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional JSON output path")
    args = ap.parse_args()

    cfg = RateConfig(n_grid=tuple(int(v) for v in args.n_grid.split(",")),
                     replications=args.replications, seed=args.seed)
    res = bf_rate_experiment(cfg)
    print(f"{'n':>6} {'logBF pMOM':>12} {'logBF normal':>13} {'logBF split':>12} {'|theta|':>9}")
    for row in res.table_rows():
        print(f"{row['n']:>6} {row['mean_log_bf']:12.3f} {row['mean_log_bf_normal']:13.3f} "
              f"{row.get('mean_log_bf_fusion', float('nan')):12.3f} {row['mean_abs_theta']:9.4f}")
    print()
    for name, slope in res.slopes.items():
        print(f"slope {name:<22} {slope:8.3f}")
    print(f"bootstrap fraction (pMOM slope below normal slope): {res.bootstrap_fraction:.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"slopes": res.slopes, "bootstrap_fraction": res.bootstrap_fraction,
                       "rows": res.table_rows()}, fh, indent=2)


if __name__ == "__main__":
    main()
