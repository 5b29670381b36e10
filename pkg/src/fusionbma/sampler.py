"""Collapsed Gibbs sampler over (delta, theta, sigma^2, omega, kappa).

One iteration:

1. sweep j = p, ..., 1 drawing delta_j from its full conditional with theta
   and sigma^2 integrated out (marginal likelihood times the two chain-prior
   factors that involve delta_j);
2. draw theta from the fusion-pMOM posterior by latent uniforms plus a
   coordinate-wise scan of the resulting truncated normal;
3. draw sigma^2 from its inverse-gamma full conditional;
4. and 5. draw the transition probabilities omega_j (Dirichlet) and kappa_j
   (Beta) given the current delta.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtri_exp

from .marginal import MCConfig, MarginalCache, ModelHyper, RegressionData
from .model_space import (
    CODES,
    ChainPrior,
    ModelStructure,
    collapse_design,
    expand_theta,
    format_delta,
    model_structure,
    uniform_chain_prior,
)

__all__ = [
    "ChainOutput",
    "SamplerConfig",
    "SamplerState",
    "run_chain",
    "sample_fusion_pmom_posterior",
    "sample_normal_outside",
    "split_rhat",
    "update_indicators",
    "update_sigma2",
    "update_transition_params",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 8000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    hyper: ModelHyper = field(default_factory=ModelHyper)
    mc: MCConfig = field(default_factory=lambda: MCConfig(n_samples=512))
    slab: str = "fusion-pmom"
    A: float = 1.0
    B: float = 1.0
    theta_scans: int = 1
    theta_scans_on_move: int = 5
    init: str | tuple = "full"

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass(frozen=True)
class SamplerState:
    delta: tuple[int, ...]
    theta: np.ndarray
    sigma2: float
    prior: ChainPrior  # current omega / kappa draws live here

    @property
    def omega(self):
        return self.prior.omega

    @property
    def kappa(self):
        return self.prior.kappa


# -- step 1 -------------------------------------------------------------------

def _categorical_log(logw, u: float) -> int:
    top = max(logw)
    w = [math.exp(v - top) if v > -math.inf else 0.0 for v in logw]
    total = sum(w)
    acc = 0.0
    for i, wi in enumerate(w):
        acc += wi
        if u * total < acc:
            return i
    return max(i for i, wi in enumerate(w) if wi > 0)


def update_indicators(delta, prior: ChainPrior, log_marginal, rng: np.random.Generator) -> tuple[int, ...]:
    """One backward sweep j = p..1 of the collapsed indicator update.

    ``log_marginal`` maps a delta tuple to log m(y | delta). Candidates whose
    chain-prior factors vanish (a leading 1, or a (0, 1) pair with either
    neighbour) get zero weight, so the sweep never leaves the model space.
    """
    d = list(delta)
    p = len(d)
    for j in range(p - 1, -1, -1):
        logw = []
        for x in CODES:
            f = prior.initial(x) if j == 0 else prior.transition(j, d[j - 1], x)
            if j < p - 1 and f > 0:
                f *= prior.transition(j + 1, x, d[j + 1])
            if f <= 0:
                logw.append(-math.inf)
                continue
            d[j] = x
            logw.append(log_marginal(tuple(d)) + math.log(f))
        # x = -1 is always admissible
        assert logw[0] > -math.inf, "all indicator weights vanished"
        d[j] = CODES[_categorical_log(logw, rng.random())]
    return tuple(d)


# -- step 2 -------------------------------------------------------------------

def _log_mass(a: float, b: float) -> float:
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    if b <= a:
        return -math.inf
    if a > 0:
        return _log_mass(-b, -a)
    hi = float(log_ndtr(b))
    lo = float(log_ndtr(a))
    if lo == -math.inf:
        return hi
    return hi + math.log1p(-math.exp(lo - hi))


def _sample_piece(a: float, b: float, u: float) -> float:
    if a > 0:
        return -_sample_piece(-b, -a, u)
    hi = float(log_ndtr(b))
    lo = float(log_ndtr(a))
    if lo == -math.inf:
        log_f = math.log(u) + hi if u > 0 else -math.inf
    else:
        log_f = np.logaddexp(math.log1p(-u) + lo, math.log(u) + hi) if u > 0 else lo
    x = float(ndtri_exp(log_f))
    return min(max(x, a), b)


def sample_normal_outside(mean: float, sd: float, holes, rng: np.random.Generator) -> float:
    """Exact draw from N(mean, sd^2) restricted to the complement of open intervals."""
    ivs = sorted(((lo - mean) / sd, (hi - mean) / sd) for lo, hi in holes if hi > lo)
    merged: list[list[float]] = []
    for lo, hi in ivs:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    pieces = []
    left = -math.inf
    for lo, hi in merged:
        pieces.append((left, lo))
        left = hi
    pieces.append((left, math.inf))
    logm = [_log_mass(a, b) for a, b in pieces]
    i = _categorical_log(logm, rng.random())
    a, b = pieces[i]
    return mean + sd * _sample_piece(a, b, rng.random())


def sample_fusion_pmom_posterior(mu, Sigma, structure: ModelStructure, rng: np.random.Generator,
                                 theta0=None, n_scans: int = 1, precision=None) -> np.ndarray:
    """Markov move targeting N(theta; mu, Sigma) * Q(theta).

    Each scan draws latent thresholds |theta_j| * sqrt(U) and
    |theta_j - theta_{j-1}| * sqrt(U'), then updates every coordinate from its
    normal full conditional restricted away from the thresholds. Without
    ``theta0`` the chain starts from an unrestricted normal draw.
    """
    mu = np.asarray(mu, dtype=float)
    k = structure.p_delta
    if mu.shape != (k,):
        raise ValueError(f"mu has shape {mu.shape}; expected ({k},)")
    if k == 0:
        return np.zeros(0)
    if precision is None:
        Sigma = np.asarray(Sigma, dtype=float)
        try:
            c = linalg.cho_factor(Sigma, lower=True)
        except linalg.LinAlgError:
            raise ValueError("Sigma is not symmetric positive definite") from None
        precision = linalg.cho_solve(c, np.eye(k))
    P = np.asarray(precision, dtype=float)
    if theta0 is None:
        cP = linalg.cholesky(P, lower=True)
        theta = mu + linalg.solve_triangular(cP.T, rng.standard_normal(k), lower=False)
    else:
        theta = np.array(theta0, dtype=float)
    lam = structure.lambda_mask()
    cond_sd = 1.0 / np.sqrt(np.diag(P))
    for _ in range(n_scans):
        lam_thr = np.abs(theta) * np.sqrt(rng.random(k))
        eta = np.zeros(k)
        if lam.any():
            idx = np.flatnonzero(lam)
            eta[idx] = np.abs(theta[idx] - theta[idx - 1]) * np.sqrt(rng.random(idx.size))
        for j in range(k):
            r = theta - mu
            r[j] = 0.0
            m = mu[j] - float(P[j] @ r) / P[j, j]
            holes = [(-lam_thr[j], lam_thr[j])]
            if lam[j]:
                holes.append((theta[j - 1] - eta[j], theta[j - 1] + eta[j]))
            if j + 1 < k and lam[j + 1]:
                holes.append((theta[j + 1] - eta[j + 1], theta[j + 1] + eta[j + 1]))
            theta[j] = sample_normal_outside(m, cond_sd[j], holes, rng)
    return theta


# -- step 3 -------------------------------------------------------------------

def update_sigma2(theta, structure: ModelStructure, data: RegressionData,
                  hyper: ModelHyper, rng: np.random.Generator, slab: str = "fusion-pmom",
                  Xd=None) -> float:
    k = structure.p_delta
    theta = np.asarray(theta, dtype=float)
    if Xd is None:
        Xd = collapse_design(data.X, structure)
    resid = data.y - Xd @ theta if k else data.y
    rate = hyper.psi + 0.5 * (float(resid @ resid) + float(theta @ theta) / hyper.tau)
    if slab == "fusion-pmom":
        shape = hyper.alpha + 0.5 * (data.n + 3 * k) + structure.lambda_size
    else:
        shape = hyper.alpha + 0.5 * (data.n + k)
    return rate / rng.gamma(shape)


# -- steps 4 and 5 --------------------------------------------------------------

def update_transition_params(delta, prior: ChainPrior, rng: np.random.Generator):
    """Conjugate Dirichlet / Beta draws of (omega_j, kappa_j) for j = 2..p."""
    omega, kappa = [], []
    for j in range(1, len(delta)):
        prev, cur = delta[j - 1], delta[j]
        a = prior.A * np.asarray(prior.hyper_a[j - 1], dtype=float)
        c, d = (prior.B * float(v) for v in prior.hyper_cd[j - 1])
        if prev != 0:
            a = a.copy()
            a[cur + 1] += 1.0
        else:
            c += cur == -1
            d += cur == 0
        omega.append(tuple(float(v) for v in rng.dirichlet(a)))
        k1 = float(rng.beta(c, d))
        kappa.append((k1, 1.0 - k1))
    return tuple(omega), tuple(kappa)


# -- driver ---------------------------------------------------------------------

@dataclass
class ChainOutput:
    """Stored post-burn-in draws.

    ``theta_full`` is in the standardized coefficient scale with fused values
    replicated and excluded coordinates exactly zero; ``x_scale`` maps it back
    to the raw covariate scale.
    """

    deltas: np.ndarray
    theta_full: np.ndarray
    sigma2: np.ndarray
    iterations: np.ndarray
    model_counts: Counter
    x_scale: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    config: SamplerConfig | None = None

    @property
    def n_draws(self) -> int:
        return len(self.sigma2)

    def dump_csv(self, path) -> None:
        p = self.theta_full.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "delta", "sigma2", *[f"theta_{j + 1}" for j in range(p)]])
            for it, d, s, th in zip(self.iterations, self.deltas, self.sigma2, self.theta_full):
                w.writerow([int(it), format_delta(d), f"{s:.17e}", *[f"{v:.17e}" for v in th]])


def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction of a single trace."""
    x = np.asarray(x, dtype=float)
    half = len(x) // 2
    if half < 2:
        return math.nan
    chains = np.stack([x[:half], x[half:2 * half]])
    w = chains.var(axis=1, ddof=1).mean()
    b = half * chains.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else math.inf
    var_plus = (half - 1) / half * w + b / half
    return float(math.sqrt(var_plus / w))


def _initial_delta(init, p: int) -> tuple[int, ...]:
    if init == "full":
        return (-1,) * p
    if init == "null":
        return (0,) * p
    d = tuple(int(v) for v in init)
    model_structure(d)
    if len(d) != p:
        raise ValueError(f"initial delta has length {len(d)}; data has p={p}")
    return d


def run_chain(data: RegressionData, config: SamplerConfig = SamplerConfig(),
              cache: MarginalCache | None = None) -> ChainOutput:
    p = data.p
    rng = np.random.default_rng(config.seed)
    hyper = config.hyper
    if cache is None:
        cache = MarginalCache(data, hyper, config.mc, config.slab)
    elif cache.data is not data or cache.slab != config.slab:
        raise ValueError("marginal cache belongs to a different dataset or slab")
    prior = uniform_chain_prior(p, A=config.A, B=config.B)

    delta = _initial_delta(config.init, p)
    pq = cache.quantities(delta)
    theta = pq.beta_tilde.copy()
    lam = np.flatnonzero(pq.structure.lambda_mask())
    if np.any(theta == 0) or np.any(theta[lam] == theta[lam - 1]):
        # slab support excludes zeros and ties
        theta = theta + 1e-8 * np.arange(1, theta.size + 1)
    sigma2 = pq.s2
    state = SamplerState(delta, theta, sigma2, prior)

    n_keep = len(range(config.burn_in, config.iterations, config.thin))
    deltas = np.zeros((n_keep, p), dtype=np.int8)
    theta_full = np.zeros((n_keep, p))
    sig = np.zeros(n_keep)
    its = np.zeros(n_keep, dtype=np.int64)
    counts: Counter = Counter()
    slot = 0

    for it in range(config.iterations):
        try:
            new_delta = update_indicators(state.delta, state.prior, cache.log_marginal, rng)
        except FloatingPointError as exc:
            raise RuntimeError(f"iteration {it}: {exc}") from exc
        pq = cache.quantities(new_delta)
        structure = pq.structure
        if config.slab == "fusion-pmom":
            precision = pq.A / state.sigma2
            if new_delta == state.delta:
                theta = sample_fusion_pmom_posterior(
                    pq.beta_tilde, None, structure, rng, theta0=state.theta,
                    n_scans=config.theta_scans, precision=precision)
            else:
                theta = sample_fusion_pmom_posterior(
                    pq.beta_tilde, None, structure, rng,
                    n_scans=config.theta_scans_on_move, precision=precision)
        else:
            z = rng.standard_normal(structure.p_delta)
            theta = pq.beta_tilde + math.sqrt(state.sigma2) * (
                linalg.solve_triangular(pq.chol.T, z, lower=False) if z.size else z)
        sigma2 = update_sigma2(theta, structure, data, hyper, rng, config.slab)
        omega, kappa = update_transition_params(new_delta, state.prior, rng)
        state = SamplerState(new_delta, theta, sigma2, state.prior.with_transitions(omega, kappa))

        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            deltas[slot] = new_delta
            theta_full[slot] = expand_theta(theta, structure)
            sig[slot] = sigma2
            its[slot] = it
            counts[new_delta] += 1
            slot += 1

    diagnostics = {
        "rhat_sigma2": split_rhat(sig),
        "rhat_theta": [split_rhat(theta_full[:, j]) for j in range(p)],
        "theta_mean": theta_full.mean(axis=0).tolist(),
        "models_evaluated": len(cache),
        "models_visited": len(counts),
    }
    return ChainOutput(
        deltas=deltas, theta_full=theta_full, sigma2=sig, iterations=its,
        model_counts=counts, x_scale=data.x_scale, diagnostics=diagnostics, config=config,
    )


def chain_summary_json(chain: ChainOutput, summary) -> str:
    """Summary JSON: model posterior table, coefficient means and intervals."""
    rows = sorted(summary.model_probs.items(), key=lambda kv: (-kv[1], kv[0]))
    doc = {
        "n_draws": chain.n_draws,
        "map_model": format_delta(summary.map_model),
        "models": [{"delta": format_delta(d), "prob": pr} for d, pr in rows],
        "theta_mean": list(map(float, summary.theta_mean)),
        "theta_ci": None if summary.theta_ci is None else summary.theta_ci.tolist(),
        "ci_level": summary.ci_level,
        "diagnostics": chain.diagnostics,
    }
    return json.dumps(doc, indent=2)


__all__.append("chain_summary_json")
