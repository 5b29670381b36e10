"""Desk-scale Case 1 run: fusion-pMOM slab against the normal-slab ablation.

    python3 scripts/case1_desk.py --out results/case1 --replications 20
"""

import argparse
import logging

from fusionbma.harness import ExperimentConfig, format_table, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/case1")
    ap.add_argument("--n", default="100", help="comma-separated sample sizes")
    ap.add_argument("--replications", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=4000)
    ap.add_argument("--burn-in", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--scaling", choices=("column", "common"), default="common")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = ExperimentConfig.from_case(
        "1",
        n=tuple(int(v) for v in args.n.split(",")),
        replications=args.replications,
        iterations=args.iterations,
        burn_in=args.burn_in,
        seed=args.seed,
        workers=args.workers,
        scaling=args.scaling,
        methods=("fusion-pmom", "normal"),
    )
    res = run_experiment(cfg, args.out)
    print(format_table(res["aggregate"]))


if __name__ == "__main__":
    main()
