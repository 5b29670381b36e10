"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys

import numpy as np

from .harness import (
    CASES,
    ExperimentConfig,
    build_config,
    format_table,
    load_csv,
    parse_config_text,
    run_experiment,
)
from .inference import RateConfig, bf_rate_experiment, exact_posterior, posterior_table_csv, summarize
from .marginal import MCConfig, ModelHyper, standardize
from .model_space import (
    enumerate_models,
    format_delta,
    log_prior_prob,
    model_structure,
    parse_delta,
    uniform_chain_prior,
)
from .priors import density_grid_csv, parse_grid
from .sampler import SamplerConfig, chain_summary_json, run_chain

log = logging.getLogger("fusionbma")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _emit(text: str, out: str | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = out
    if os.path.isdir(out) or out.endswith(os.sep):
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, name)
    with open(path, "w") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _file_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    with open(path) as fh:
        return parse_config_text(fh.read())


def _model_hyper(args, cfg: dict) -> ModelHyper:
    return ModelHyper(
        alpha=float(cfg.get("alpha", args.alpha)),
        psi=float(cfg.get("psi", args.psi)),
        tau=float(cfg.get("tau", args.tau)),
    )


def cmd_enumerate(args) -> int:
    prior = uniform_chain_prior(args.p)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_index", "delta", "p_delta", "lambda_size", "log_prior"])
    for i, d in enumerate(enumerate_models(args.p, cap=args.cap)):
        s = model_structure(d)
        w.writerow([i, format_delta(d), s.p_delta, s.lambda_size, f"{log_prior_prob(d, prior):.17e}"])
    _emit(buf.getvalue(), args.out, "models.csv")
    return 0


def cmd_densities(args) -> int:
    _emit(density_grid_csv(parse_grid(args.grid), args.sigma2), args.out, "densities.csv")
    return 0


def _load_data(args):
    if args.data is None:
        raise UsageError("--data is required")
    y, X, columns = load_csv(args.data, args.response)
    return y, X, columns


def _split(y, X, args):
    if args.train_frac is None:
        return (y, X), None
    if not 0 < args.train_frac < 1:
        raise UsageError("--train-frac must lie in (0, 1)")
    rng = np.random.default_rng(args.split_seed)
    idx = rng.permutation(len(y))
    k = int(round(args.train_frac * len(y)))
    tr, te = idx[:k], idx[k:]
    return (y[tr], X[tr]), (y[te], X[te])


def cmd_fit(args) -> int:
    cfg = _file_config(args.config)
    y, X, columns = _load_data(args)
    (ytr, Xtr), test = _split(y, X, args)
    data = standardize(ytr, Xtr, columns, scaling=args.scaling)
    sc = SamplerConfig(
        iterations=int(cfg.get("iterations", args.iterations)),
        burn_in=int(cfg.get("burn_in", args.burn_in)),
        thin=int(cfg.get("thin", args.thin)),
        seed=args.seed,
        hyper=_model_hyper(args, cfg),
        mc=MCConfig(int(cfg.get("mc_samples", args.mc_samples)), seed=args.seed),
        slab=cfg.get("slab", args.slab),
    )
    chain = run_chain(data, sc)
    summary = summarize(chain)
    doc = json.loads(chain_summary_json(chain, summary))
    doc["columns"] = columns
    if test is not None:
        yte, Xte = test
        pred = data.y_mean + (Xte - data.x_mean) @ summary.theta_mean
        doc["test_mse"] = float(np.mean((yte - pred) ** 2))
        doc["n_train"], doc["n_test"] = len(ytr), len(yte)
    if args.out is not None and args.dump_chain:
        os.makedirs(args.out, exist_ok=True)
        chain.dump_csv(os.path.join(args.out, "chain.csv"))
    _emit(json.dumps(doc, indent=2) + "\n", args.out, "summary.json")
    return 0


def cmd_exact(args) -> int:
    cfg = _file_config(args.config)
    y, X, columns = _load_data(args)
    data = standardize(y, X, columns, scaling=args.scaling)
    mc = MCConfig(int(cfg.get("mc_samples", args.mc_samples)), seed=args.seed)
    ep = exact_posterior(data, _model_hyper(args, cfg), mc, slab=cfg.get("slab", args.slab), cap=args.cap)
    _emit(posterior_table_csv(ep), args.out, "exact_posterior.csv")
    return 0


def cmd_simulate(args) -> int:
    entries = _file_config(args.config)
    for key in ("case", "replications", "iterations", "burn_in", "n", "methods", "workers", "scaling"):
        val = getattr(args, key)
        if val is not None:
            entries[key] = str(val)
    if args.seed is not None:
        entries["seed"] = str(args.seed)
    if args.dump_chains:
        entries["dump_chains"] = "true"
    config = build_config(entries)
    out = args.out or config.out
    result = run_experiment(config, out)
    print(format_table(result["aggregate"]))
    if result["failures"]:
        print(f"{len(result['failures'])} replication(s) aborted", file=sys.stderr)
    return 0


def cmd_rates(args) -> int:
    entries = _file_config(args.config)
    kw = {}
    if "n_grid" in entries or args.n_grid:
        kw["n_grid"] = tuple(int(v) for v in (args.n_grid or entries["n_grid"]).split(","))
    if "replications" in entries or args.replications:
        kw["replications"] = int(args.replications or entries["replications"])
    for key in ("true_delta", "overfit_delta", "fusion_overfit_delta", "underfit_delta"):
        if key in entries:
            kw[key] = parse_delta(entries[key]) if entries[key] != "none" else None
    if "theta_star" in entries:
        kw["theta_star"] = tuple(float(v) for v in entries["theta_star"].split(","))
    if "sigma" in entries:
        kw["sigma"] = float(entries["sigma"])
    cfg = RateConfig(seed=args.seed or 0, mc=MCConfig(args.mc_samples, seed=args.seed or 0), **kw)
    res = bf_rate_experiment(cfg)
    rows = res.table_rows()
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.17e}" if isinstance(v, float) else v) for k, v in row.items()})
    doc = {"slopes": res.slopes, "bootstrap_fraction": res.bootstrap_fraction,
           "config": {k: v for k, v in dataclasses.asdict(cfg).items() if k not in ("hyper", "mc")}}
    if args.out is None:
        sys.stdout.write(buf.getvalue())
        print(json.dumps(doc, indent=2))
    else:
        _emit(buf.getvalue(), os.path.join(args.out, ""), "rates.csv")
        _emit(json.dumps(doc, indent=2) + "\n", os.path.join(args.out, ""), "rates.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="flat key=value file; '#' starts a comment")
    common.add_argument("--out", help="output file or directory (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    model = _Parser(add_help=False)
    model.add_argument("--alpha", type=float, default=1.0)
    model.add_argument("--psi", type=float, default=1.0)
    model.add_argument("--tau", type=float, default=1.0)
    model.add_argument("--mc-samples", type=int, default=2048)
    model.add_argument("--slab", choices=("fusion-pmom", "normal"), default="fusion-pmom")

    data = _Parser(add_help=False)
    data.add_argument("--data", help="CSV file with a header row")
    data.add_argument("--response", default="y", help="name of the response column")
    data.add_argument("--scaling", choices=("column", "common"), default="column",
                      help="per-column unit scaling or one shared factor")

    parser = _Parser(prog="fusionbma", description="Variable selection and fusion with a fusion-pMOM non-local slab.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("enumerate", parents=[common], help="dump the model space")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--cap", type=int, default=16)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("densities", parents=[common], help="non-local prior density grid")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--grid", default="-4:4:0.01", help="start:stop:step")
    p.set_defaults(func=cmd_densities)

    p = sub.add_parser("fit", parents=[common, model, data], help="fit one dataset")
    p.add_argument("--iterations", type=int, default=8000)
    p.add_argument("--burn-in", type=int, default=2000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--train-frac", type=float, default=None)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--dump-chain", action="store_true")
    p.set_defaults(func=cmd_fit, mc_samples=512)

    p = sub.add_parser("exact", parents=[common, model, data], help="enumerated posterior")
    p.add_argument("--cap", type=int, default=16)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("simulate", parents=[common], help="replicated simulation study")
    p.add_argument("--case", choices=sorted(CASES), default=None)
    p.add_argument("--n", default=None, help="comma-separated sample sizes")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--methods", default=None, help="e.g. fusion-pmom,normal")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--scaling", choices=("column", "common"), default=None)
    p.add_argument("--dump-chains", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rates", parents=[common], help="Bayes-factor rate experiment")
    p.add_argument("--n-grid", default=None, help="comma-separated sample sizes")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--mc-samples", type=int, default=2048)
    p.set_defaults(func=cmd_rates)
    return parser


def _join_negative_values(argv):
    # "--grid -4:4:0.01" would otherwise be read as an option
    out = []
    for tok in argv:
        if out and out[-1] == "--grid" and tok.startswith("-"):
            out[-1] = f"--grid={tok}"
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _join_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is None and args.command not in ("simulate",):
        args.seed = 0
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except (ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        sys.stderr.write(f"fusionbma {args.command}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
