"""Simulation harness: synthetic cases, CSV ingestion, config files and the
replicated experiment runner.

Seed layout. Every stream is derived from the root seed ``s`` and the
replication index ``r`` (0-based) through numpy ``SeedSequence`` entropy
lists, so results do not depend on worker scheduling:

* data generation:  ``default_rng([s, r, 0])``
* Gibbs chain:      ``default_rng([s, r, 1])``
* marginal MC seed: ``SeedSequence([s, r, 2]).generate_state(1)[0]``

Sample sizes are folded in as ``r' = r + 1_000_000 * i`` where ``i`` indexes
the sample-size grid.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .inference import metrics, summarize
from .marginal import MCConfig, ModelHyper, standardize
from .sampler import SamplerConfig, chain_summary_json, run_chain

__all__ = [
    "CASES",
    "ExperimentConfig",
    "aggregate",
    "equicorrelation",
    "generate_case",
    "load_config",
    "load_csv",
    "replication_seeds",
    "run_experiment",
    "write_csv",
]

log = logging.getLogger(__name__)

CASES = {
    "1": dict(theta_star=(3.0,) * 5 + (5.0,) * 5 + (3.0,) * 5 + (5.0,) * 5,
              rho=0.0, sigma=0.5, n=(20, 40, 60, 80, 100)),
    "2": dict(theta_star=(0.0,) * 140 + (-1.5,) * 5 + (1.5,) * 5,
              rho=0.5, sigma=0.5, n=(50, 70)),
    "2-rho0": dict(theta_star=(0.0,) * 140 + (-1.5,) * 5 + (1.5,) * 5,
                   rho=0.0, sigma=0.5, n=(50, 70)),
    "3": dict(theta_star=(0.0,) * 495 + (3.0,) * 5,
              rho=0.0, sigma=0.5, n=(100, 200)),
}

_NUM = "{:.17e}".format


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "1"
    theta_star: tuple[float, ...] = CASES["1"]["theta_star"]
    n: tuple[int, ...] = (100,)
    rho: float = 0.0
    sigma: float = 0.5
    replications: int = 20
    seed: int = 0
    iterations: int = 8000
    burn_in: int = 2000
    thin: int = 1
    mc_samples: int = 512
    alpha: float = 1.0
    psi: float = 1.0
    tau: float = 1.0
    A: float = 1.0
    B: float = 1.0
    methods: tuple[str, ...] = ("fusion-pmom",)
    # "common" keeps equal raw coefficients equal after scaling; see standardize
    scaling: str = "common"
    workers: int = 1
    dump_chains: bool = False
    out: str = "results"

    @property
    def p(self) -> int:
        return len(self.theta_star)

    def __post_init__(self):
        p = self.p
        lower = -1.0 / (p - 1) if p > 1 else -math.inf
        if not (lower < self.rho < 1):
            raise ValueError(f"rho={self.rho} outside ({lower}, 1): equicorrelation is not SPD")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if min(self.n) < 2:
            raise ValueError("n must be >= 2")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.scaling not in ("column", "common"):
            raise ValueError(f"unknown scaling {self.scaling!r}")

    def sampler_config(self, slab: str, seed, mc_seed: int) -> SamplerConfig:
        return SamplerConfig(
            iterations=self.iterations, burn_in=self.burn_in, thin=self.thin, seed=seed,
            hyper=ModelHyper(self.alpha, self.psi, self.tau),
            mc=MCConfig(self.mc_samples, seed=mc_seed), slab=slab, A=self.A, B=self.B,
        )

    @classmethod
    def from_case(cls, case: str, **overrides) -> "ExperimentConfig":
        if case not in CASES:
            raise ValueError(f"unknown case {case!r}; expected one of {sorted(CASES)}")
        return cls(case=case, **{**CASES[case], **overrides})


def _coerce(fld: dataclasses.Field, raw: str):
    typ = str(fld.type)
    raw = raw.strip()
    if typ.startswith("tuple[float"):
        return tuple(_expand_floats(raw))
    if typ.startswith("tuple[int"):
        return tuple(int(v) for v in raw.split(","))
    if typ.startswith("tuple[str"):
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ == "bool":
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def _expand_floats(raw: str) -> list[float]:
    # "3x5,5x5" is shorthand for five 3s then five 5s
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if "x" in tok:
            v, k = tok.split("x")
            out += [float(v)] * int(k)
        elif tok:
            out.append(float(tok))
    return out


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def build_config(entries: dict[str, str]) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(entries) - set(fields)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {k: _coerce(fields[k], v) for k, v in entries.items()}
    case = values.pop("case", "1")
    if case in CASES:
        return ExperimentConfig.from_case(case, **values)
    return ExperimentConfig(case=case, **values)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return build_config(parse_config_text(fh.read()))


def equicorrelation(p: int, rho: float) -> np.ndarray:
    S = np.full((p, p), float(rho))
    np.fill_diagonal(S, 1.0)
    return S


def generate_case(config: ExperimentConfig, rng: np.random.Generator, n: int | None = None):
    """(y_raw, X_raw, theta_star, Sigma) for one replication."""
    n = config.n[0] if n is None else n
    theta = np.asarray(config.theta_star, dtype=float)
    p = theta.size
    Sigma = equicorrelation(p, config.rho)
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise ValueError(f"Sigma with rho={config.rho} is not positive definite") from None
    X = rng.standard_normal((n, p)) @ L.T
    y = X @ theta + config.sigma * rng.standard_normal(n)
    return y, X, theta, Sigma


def load_csv(path, response_column: str):
    """Read a rectangular numeric CSV with a header; returns (y, X, columns)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if response_column not in header:
        raise ValueError(f"{path}: response column {response_column!r} not found in header {header}")
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i} has {len(row)} fields; header has {len(header)}")
        vals = []
        for name, cell in zip(header, row):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell {cell!r} at row {i}, column {name!r}") from None
        data.append(vals)
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    r = header.index(response_column)
    columns = [h for h in header if h != response_column]
    X = np.delete(arr, r, axis=1)
    log.info("loaded %s: %d rows, columns %s", path, arr.shape[0], columns)
    return arr[:, r], X, columns


def write_csv(path, y, X, columns=None, response_column: str = "y") -> None:
    X = np.asarray(X, dtype=float)
    columns = columns or [f"x{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response_column, *columns])
        for yi, row in zip(y, X):
            w.writerow([repr(float(yi)), *(repr(float(v)) for v in row)])


def replication_seeds(root: int, r: int):
    """(data rng, chain seed, marginal MC seed) for replication ``r``."""
    data_rng = np.random.default_rng([root, r, 0])
    chain_seed = (root, r, 1)
    mc_seed = int(np.random.SeedSequence([root, r, 2]).generate_state(1)[0])
    return data_rng, chain_seed, mc_seed


def _one_replication(args):
    config, n_index, n, r = args
    data_rng, chain_seed, mc_seed = replication_seeds(config.seed, r + 1_000_000 * n_index)
    rows, dumps = [], {}
    try:
        y, X, theta_star, Sigma = generate_case(config, data_rng, n)
        data = standardize(y, X, scaling=config.scaling)
        for method in config.methods:
            chain = run_chain(data, config.sampler_config(method, chain_seed, mc_seed))
            summary = summarize(chain)
            rep = metrics(summary, theta_star, Sigma)
            rows.append({"method": method, "n": n, "rho": config.rho, "replication": r,
                         **rep.as_dict()})
            if config.dump_chains:
                dumps[method] = (chain, summary)
    except Exception as exc:  # a failed replication is logged and counted
        log.warning("replication %d (n=%d) aborted: %s", r, n, exc)
        return None, {}, f"n={n} replication={r}: {exc}"
    return rows, dumps, None


def aggregate(values) -> tuple[float, float]:
    """Two-pass mean and sample standard deviation."""
    v = [float(x) for x in values]
    m = sum(v) / len(v)
    if len(v) < 2:
        return m, 0.0
    return m, math.sqrt(sum((x - m) ** 2 for x in v) / (len(v) - 1))


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Replicate generate -> standardize -> chain -> summarize -> metrics.

    Writes ``results.csv`` (aggregates), ``replications.csv`` (raw rows) and
    ``summary.json`` to ``out_dir``. Raises if more than 10% of replications
    abort.
    """
    out_dir = out_dir or config.out
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(config, i, n, r) for i, n in enumerate(config.n) for r in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_one_replication, tasks))
    else:
        results = [_one_replication(t) for t in tasks]

    raw, failures = [], []
    for (cfg, i, n, r), (rows, dumps, err) in zip(tasks, results):
        if err is not None:
            failures.append(err)
            continue
        raw.extend(rows)
        for method, (chain, summary) in dumps.items():
            stem = os.path.join(out_dir, f"chain_{method}_n{n}_r{r}")
            chain.dump_csv(stem + ".csv")
            with open(stem + ".json", "w") as fh:
                fh.write(chain_summary_json(chain, summary))
    if len(failures) > 0.1 * len(tasks):
        raise RuntimeError(f"{len(failures)} of {len(tasks)} replications aborted: {failures[:3]}")

    agg = []
    for method in config.methods:
        for n in config.n:
            sel = [row for row in raw if row["method"] == method and row["n"] == n]
            if not sel:
                continue
            entry = {"method": method, "n": n, "rho": config.rho}
            for key, col in (("mse", "mse"), ("pse", "pse"), ("pb", "p_b"), ("pb_over_p", "p_b_over_p")):
                entry[key], entry[key + "_sd"] = aggregate(row[col] for row in sel)
            entry["replications"] = len(sel)
            agg.append(entry)

    cols = ["method", "n", "rho", "mse", "mse_sd", "pse", "pse_sd", "pb", "pb_sd"]
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for e in agg:
            w.writerow([e["method"], e["n"], _NUM(e["rho"]),
                        *(_NUM(e[c]) for c in cols[3:])])
    raw_cols = ["method", "n", "rho", "replication", "mse", "pse", "p_b", "p_b_over_p",
                "n_selection", "n_fusion", "p_b_denominator"]
    with open(os.path.join(out_dir, "replications.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(raw_cols)
        for row in raw:
            w.writerow([_NUM(v) if isinstance(v, float) else v for v in (row[c] for c in raw_cols)])
    doc = {"config": _config_dict(config), "aggregate": agg, "failures": failures}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    return {"aggregate": agg, "replications": raw, "failures": failures}


def _config_dict(config: ExperimentConfig) -> dict:
    d = dataclasses.asdict(config)
    d["theta_star"] = list(d["theta_star"])
    return d


def format_table(aggregate_rows) -> str:
    """Aligned text table in the MSE / sd / PSE / sd / P_B / sd layout."""
    head = f"{'n':>5} {'method':<12} {'MSE':>8} {'(sd)':>8} {'PSE':>8} {'(sd)':>8} {'P_B':>8} {'(sd)':>8}"
    lines = [head, "-" * len(head)]
    for e in aggregate_rows:
        lines.append(
            f"{e['n']:>5} {e['method']:<12} {e['mse']:8.3f} {e['mse_sd']:8.3f} "
            f"{e['pse']:8.3f} {e['pse_sd']:8.3f} {e['pb']:8.3f} {e['pb_sd']:8.3f}"
        )
    return "\n".join(lines)


__all__ += ["build_config", "format_table", "parse_config_text"]
