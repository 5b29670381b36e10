"""Compare Gibbs-chain model frequencies with the enumerated posterior on
small synthetic problems.

    python3 scripts/sampler_check.py --iterations 50000
"""

import argparse

import numpy as np

from fusionbma import MCConfig, ModelHyper, exact_posterior, run_chain, standardize, summarize
from fusionbma.inference import total_variation
from fusionbma.model_space import format_delta
from fusionbma.sampler import SamplerConfig

DATASETS = {
    "null": [0.0, 0.0, 0.0],
    "selection": [1.0, 0.0, 0.8],
    "fusion": [0.9, 0.9, 0.9],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=50_000)
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for name, theta in DATASETS.items():
        rng = np.random.default_rng([args.seed, len(name)])
        X = rng.standard_normal((args.n, 3))
        y = X @ theta + rng.standard_normal(args.n)
        data = standardize(y, X)
        mc = MCConfig(512, seed=args.seed)
        ep = exact_posterior(data, ModelHyper(), mc)
        chain = run_chain(data, SamplerConfig(iterations=args.iterations, burn_in=2000, seed=args.seed, mc=mc))
        s = summarize(chain)
        print(f"{name}: TV = {total_variation(s.model_probs, ep.model_probs):.4f}")
        top = sorted(ep.model_probs.items(), key=lambda kv: -kv[1])[:4]
        for d, pr in top:
            print(f"  {format_delta(d):>10}  exact {pr:.4f}  chain {s.model_probs.get(d, 0.0):.4f}")


if __name__ == "__main__":
    main()
