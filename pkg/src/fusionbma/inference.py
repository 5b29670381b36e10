"""Posterior summaries, the enumeration oracle, evaluation metrics and the
Bayes-factor rate experiment."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .marginal import (
    MCConfig,
    ModelHyper,
    RegressionData,
    log_marginal_likelihood,
    log_marginal_normal_slab,
    posterior_quantities,
    standardize,
    t_expectation,
)
from .marginal import _log_marginal_closed_part
from .model_space import (
    ENUMERATION_CAP,
    enumerate_models,
    expand_theta,
    format_delta,
    log_prior_prob,
    model_structure,
    uniform_chain_prior,
)

__all__ = [
    "ExactPosterior",
    "MetricReport",
    "PosteriorSummary",
    "RateConfig",
    "RateResult",
    "bf_rate_experiment",
    "exact_posterior",
    "metrics",
    "posterior_table_csv",
    "structure_labels",
    "summarize",
    "total_variation",
]


@dataclass
class PosteriorSummary:
    """BMA summary. ``theta_mean`` and ``theta_ci`` are on the raw covariate
    scale whenever the source carried scaling factors."""

    model_probs: dict[tuple[int, ...], float]
    theta_mean: np.ndarray
    map_model: tuple[int, ...]
    theta_ci: np.ndarray | None = None
    ci_level: float = 0.95


def summarize(chain, ci_level: float = 0.95, raw_scale: bool = True) -> PosteriorSummary:
    n = chain.n_draws
    if n == 0:
        raise ValueError("chain has no stored draws")
    draws = chain.theta_full
    if raw_scale and chain.x_scale is not None:
        draws = draws * chain.x_scale
    probs = {d: c / n for d, c in sorted(chain.model_counts.items())}
    # most visited, ties broken by the lexicographically smallest delta
    map_model = min(chain.model_counts, key=lambda d: (-chain.model_counts[d], d))
    tail = (1.0 - ci_level) / 2
    ci = np.quantile(draws, [tail, 1.0 - tail], axis=0).T
    return PosteriorSummary(probs, draws.mean(axis=0), map_model, ci, ci_level)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


@dataclass
class ExactPosterior(PosteriorSummary):
    models: list = field(default_factory=list)
    log_marginal: np.ndarray | None = None
    log_prior: np.ndarray | None = None


def exact_posterior(data: RegressionData, hyper: ModelHyper = ModelHyper(),
                    mc: MCConfig = MCConfig(), slab: str = "fusion-pmom",
                    cap: int = ENUMERATION_CAP, raw_scale: bool = True) -> ExactPosterior:
    """Posterior over every admissible model under the uniform chain prior.

    Conditional means E(theta | delta, y) reuse the t draws of the marginal
    likelihood estimate, reweighted by Q.
    """
    p = data.p
    models = enumerate_models(p, cap=cap)
    prior = uniform_chain_prior(p)
    logm = np.empty(len(models))
    logp = np.empty(len(models))
    cond = np.zeros((len(models), p))
    for i, d in enumerate(models):
        logp[i] = log_prior_prob(d, prior)
        if slab == "normal":
            pq = posterior_quantities(data, d, hyper, slab="normal")
            logm[i] = log_marginal_normal_slab(data, d, hyper)
            cond[i] = expand_theta(pq.beta_tilde, pq.structure)
            continue
        pq = posterior_quantities(data, d, hyper)
        est = t_expectation(pq, mc, tilted=True)
        logm[i] = _log_marginal_closed_part(pq, hyper) + est.log_mean
        if pq.structure.p_delta:
            cond[i] = expand_theta(est.tilted_mean, pq.structure)
    logpost = logm + logp
    post = np.exp(logpost - logsumexp(logpost))
    theta_mean = post @ cond
    if raw_scale and data.x_scale is not None:
        theta_mean = theta_mean * data.x_scale
    order = sorted(range(len(models)), key=lambda i: (-post[i], models[i]))
    return ExactPosterior(
        model_probs={d: float(pr) for d, pr in zip(models, post)},
        theta_mean=theta_mean,
        map_model=models[order[0]],
        models=models, log_marginal=logm, log_prior=logp,
    )


def posterior_table_csv(ep: ExactPosterior) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_index", "delta", "log_marginal", "log_prior", "posterior_prob"])
    for i, d in enumerate(ep.models):
        w.writerow([i, format_delta(d), f"{ep.log_marginal[i]:.17e}",
                    f"{ep.log_prior[i]:.17e}", f"{ep.model_probs[d]:.17e}"])
    return buf.getvalue()


# -- metrics ----------------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    mse: float
    pse: float
    p_b: float  # normalized by the number of attainable structural facts
    p_b_over_p: float  # (N_selection + N_fusion) / p
    n_selection: int
    n_fusion: int
    p_b_denominator: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def structure_labels(delta) -> np.ndarray:
    """Block label per coordinate (0 for excluded, blocks numbered from 1)."""
    labels = np.zeros(len(delta), dtype=int)
    for b, cols in enumerate(model_structure(delta).blocks, start=1):
        labels[list(cols)] = b
    return labels


def metrics(summary: PosteriorSummary, theta_star, Sigma=None) -> MetricReport:
    """MSE and PSE of the BMA mean; structural counts from the MAP model.

    The MAP model's point estimate is zero exactly on its excluded
    coordinates and tied exactly within blocks, which is what the selection
    and fusion counts need.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    p = theta_star.size
    est = np.asarray(summary.theta_mean, dtype=float)
    if est.shape != (p,) or len(summary.map_model) != p:
        raise ValueError(f"dimension mismatch: estimate {est.shape}, truth ({p},)")
    Sigma = np.eye(p) if Sigma is None else np.asarray(Sigma, dtype=float)
    if Sigma.shape != (p, p):
        raise ValueError(f"Sigma has shape {Sigma.shape}; expected ({p}, {p})")
    err = est - theta_star
    labels = structure_labels(summary.map_model)
    zero_hat = labels == 0
    tie_hat = labels[1:] == labels[:-1]

    true_zero = theta_star == 0
    true_tie = (theta_star[1:] != 0) & (theta_star[1:] == theta_star[:-1])
    n_sel = int(np.sum(true_zero & zero_hat))
    n_fus = int(np.sum(true_tie & tie_hat))
    denom = int(true_zero.sum() + true_tie.sum())
    return MetricReport(
        mse=float(err @ err),
        pse=float(err @ Sigma @ err),
        p_b=(n_sel + n_fus) / denom if denom else 1.0,
        p_b_over_p=(n_sel + n_fus) / p,
        n_selection=n_sel,
        n_fusion=n_fus,
        p_b_denominator=denom,
    )


# -- Bayes-factor rates -------------------------------------------------------------

@dataclass(frozen=True)
class RateConfig:
    """Nested-model Bayes-factor experiment.

    ``overfit_delta`` adds one free coefficient for a truly zero covariate;
    ``fusion_overfit_delta`` instead splits a truly fused pair, adding one
    free difference; ``underfit_delta`` drops a true signal.
    """

    n_grid: tuple[int, ...] = (50, 100, 200, 400, 800)
    replications: int = 50
    seed: int = 0
    theta_star: tuple[float, ...] = (1.5, 1.5, 0.0, 0.0)
    sigma: float = 1.0
    true_delta: tuple[int, ...] = (-1, 1, 0, 0)
    overfit_delta: tuple[int, ...] = (-1, 1, 0, -1)
    fusion_overfit_delta: tuple[int, ...] | None = (-1, -1, 0, 0)
    underfit_delta: tuple[int, ...] | None = (0, 0, 0, 0)
    hyper: ModelHyper = field(default_factory=ModelHyper)
    mc: MCConfig = field(default_factory=MCConfig)
    bootstrap: int = 1000
    scaling: str = "common"

    def __post_init__(self):
        if len(self.n_grid) < 4:
            raise ValueError("rate experiment needs at least 4 sample sizes")
        t = model_structure(self.true_delta)
        k = model_structure(self.overfit_delta)
        if k.p_delta - t.p_delta != 1:
            raise ValueError("overfit model must have exactly one more free coefficient")
        true_active = {j for j, c in enumerate(self.true_delta) if c != 0}
        over_active = {j for j, c in enumerate(self.overfit_delta) if c != 0}
        if not true_active <= over_active:
            raise ValueError("overfit model must contain every active covariate of the true model")


@dataclass
class RateResult:
    n_grid: np.ndarray
    log_bf: np.ndarray  # (replications, n) fusion-pMOM overfit vs true
    log_bf_normal: np.ndarray  # same with the normal slab
    log_bf_fusion: np.ndarray | None
    log_bf_underfit: np.ndarray | None
    abs_theta: np.ndarray  # |E(theta_extra | y, overfit)|
    abs_diff: np.ndarray | None  # |E(theta_j - theta_{j-1} | y, fusion overfit)|
    slopes: dict
    bootstrap_fraction: float

    def table_rows(self) -> list[dict]:
        rows = []
        for i, n in enumerate(self.n_grid):
            row = {
                "n": int(n),
                "mean_log_bf": float(self.log_bf[:, i].mean()),
                "mean_log_bf_normal": float(self.log_bf_normal[:, i].mean()),
                "mean_abs_theta": float(self.abs_theta[:, i].mean()),
            }
            if self.log_bf_fusion is not None:
                row["mean_log_bf_fusion"] = float(self.log_bf_fusion[:, i].mean())
                row["mean_abs_diff"] = float(self.abs_diff[:, i].mean())
            if self.log_bf_underfit is not None:
                row["mean_log_bf_underfit"] = float(self.log_bf_underfit[:, i].mean())
            rows.append(row)
        return rows


def _ols_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def _rate_replication(cfg: RateConfig, n: int, rep: int) -> dict:
    rng = np.random.default_rng([cfg.seed, rep, n])
    theta_star = np.asarray(cfg.theta_star, dtype=float)
    X = rng.standard_normal((n, theta_star.size))
    y = X @ theta_star + cfg.sigma * rng.standard_normal(n)
    data = standardize(y, X, scaling=cfg.scaling)
    mc = MCConfig(cfg.mc.n_samples, seed=int(rng.integers(2**31)), chunk=cfg.mc.chunk)
    lm = lambda d: log_marginal_likelihood(data, d, cfg.hyper, mc)  # noqa: E731
    ln = lambda d: log_marginal_normal_slab(data, d, cfg.hyper)  # noqa: E731
    base, base_n = lm(cfg.true_delta), ln(cfg.true_delta)
    out = {"bf": lm(cfg.overfit_delta) - base, "bf_normal": ln(cfg.overfit_delta) - base_n}

    extra = sorted(
        {j for j, c in enumerate(cfg.overfit_delta) if c == -1}
        - {j for j, c in enumerate(cfg.true_delta) if c == -1}
    )
    pq = posterior_quantities(data, cfg.overfit_delta, cfg.hyper)
    est = t_expectation(pq, mc, tilted=True)
    full = expand_theta(est.tilted_mean, pq.structure)
    out["abs_theta"] = float(np.abs(full[extra]).max()) if extra else math.nan

    if cfg.fusion_overfit_delta is not None:
        fd = cfg.fusion_overfit_delta
        out["bf_fusion"] = lm(fd) - base
        pqf = posterior_quantities(data, fd, cfg.hyper)
        estf = t_expectation(pqf, mc, tilted=True)
        fullf = expand_theta(estf.tilted_mean, pqf.structure)
        split = [j for j in range(1, len(fd)) if cfg.true_delta[j] == 1 and fd[j] == -1]
        out["abs_diff"] = float(max(abs(fullf[j] - fullf[j - 1]) for j in split)) if split else math.nan
    if cfg.underfit_delta is not None:
        out["bf_underfit"] = lm(cfg.underfit_delta) - base
    return out


def bf_rate_experiment(cfg: RateConfig = RateConfig()) -> RateResult:
    """Mean log Bayes factors of nested models across sample sizes.

    Slopes are least-squares fits of the replication-averaged log BF (or log
    of the averaged absolute posterior mean) against log n. The bootstrap
    resamples replications and reports the fraction of resamples in which
    the fusion-pMOM slope is below the normal-slab slope.
    """
    ns = np.asarray(cfg.n_grid, dtype=int)
    R = cfg.replications
    res = [[_rate_replication(cfg, int(n), r) for n in ns] for r in range(R)]

    def grab(key):
        if key not in res[0][0]:
            return None
        return np.array([[res[r][i][key] for i in range(len(ns))] for r in range(R)])

    bf, bfn = grab("bf"), grab("bf_normal")
    bff, bfu = grab("bf_fusion"), grab("bf_underfit")
    abs_theta, abs_diff = grab("abs_theta"), grab("abs_diff")
    logn = np.log(ns)
    slopes = {
        "log_bf": _ols_slope(logn, bf.mean(axis=0)),
        "log_bf_normal": _ols_slope(logn, bfn.mean(axis=0)),
        "abs_theta": _ols_slope(logn, np.log(abs_theta.mean(axis=0))),
    }
    if bff is not None:
        slopes["log_bf_fusion"] = _ols_slope(logn, bff.mean(axis=0))
        slopes["abs_diff"] = _ols_slope(logn, np.log(abs_diff.mean(axis=0)))
    if bfu is not None:
        slopes["log_bf_underfit"] = _ols_slope(logn, bfu.mean(axis=0))
        slopes["log_bf_underfit_vs_n"] = _ols_slope(ns, bfu.mean(axis=0))

    boot = np.random.default_rng([cfg.seed, 0xB007])
    wins = 0
    for _ in range(cfg.bootstrap):
        idx = boot.integers(0, R, size=R)
        wins += _ols_slope(logn, bf[idx].mean(axis=0)) < _ols_slope(logn, bfn[idx].mean(axis=0))
    return RateResult(ns, bf, bfn, bff, bfu, abs_theta, abs_diff, slopes,
                      wins / cfg.bootstrap if cfg.bootstrap else math.nan)
