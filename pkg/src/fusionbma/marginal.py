"""Per-model marginal likelihood m(y | delta) under the fusion-pMOM slab.

Integrating sigma^2 and theta out leaves a closed-form part times the
expectation of Q(theta) under a multivariate t. That expectation is estimated
by Monte Carlo with antithetic normal draws and a quadratic control variate,
accumulated on the log scale.

Random numbers for the t draws are keyed by (seed, p_delta) only, so every
model of a given size sees the same standard normals and chi-square variates.
The estimate is then a deterministic function of the model, two models with
the same collapsed design get identical values, and Bayes factors between
same-size models benefit from common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .model_space import ModelStructure, collapse_design, model_structure
from .priors import log_normalizing_constant, log_q

__all__ = [
    "MCConfig",
    "MarginalCache",
    "ModelHyper",
    "PosteriorQuantities",
    "RegressionData",
    "TExpectation",
    "estimate_log_EtQ",
    "log_marginal_likelihood",
    "log_marginal_normal_slab",
    "posterior_quantities",
    "standardize",
    "t_expectation",
]

SLABS = ("fusion-pmom", "normal")


@dataclass(frozen=True)
class RegressionData:
    """Centered response and centered, scaled design.

    ``x_scale`` holds the factors applied to the centered raw columns, so a
    coefficient on the standardized scale maps back as ``theta * x_scale``.
    """

    y: np.ndarray
    X: np.ndarray
    y_mean: float = 0.0
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    columns: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def to_raw_scale(self, theta_full: np.ndarray) -> np.ndarray:
        theta_full = np.asarray(theta_full, dtype=float)
        if self.x_scale is None:
            return theta_full
        return theta_full * self.x_scale


def standardize(y_raw, X_raw, columns=None, scaling: str = "column") -> RegressionData:
    """Center ``y`` and the columns of ``X``, then rescale the columns.

    ``scaling="column"`` gives every column sum of squares exactly n.
    ``scaling="common"`` applies one shared factor so that the average column
    sum of squares is n; it keeps equal raw coefficients equal, which is what
    fusion needs when the covariates share a measurement scale.
    """
    if scaling not in ("column", "common"):
        raise ValueError(f"unknown scaling {scaling!r}; expected 'column' or 'common'")
    y_raw = np.asarray(y_raw, dtype=float)
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim != 2 or y_raw.shape != (X_raw.shape[0],):
        raise ValueError(f"shape mismatch: y {y_raw.shape}, X {X_raw.shape}")
    n = X_raw.shape[0]
    if n < 2:
        raise ValueError("standardize needs n >= 2")
    y_mean = float(y_raw.mean())
    x_mean = X_raw.mean(axis=0)
    Xc = X_raw - x_mean
    ss = np.einsum("ij,ij->j", Xc, Xc)
    for j in np.flatnonzero(ss <= 1e-300 * n):
        name = columns[j] if columns is not None else f"column {j}"
        raise ValueError(f"zero-variance column: {name}")
    # multiply by sqrt(n / ss) so that each column has sum of squares n
    x_scale = np.sqrt(n / ss)
    if scaling == "common":
        x_scale = np.full_like(ss, math.sqrt(n / ss.mean()))
    return RegressionData(
        y=y_raw - y_mean,
        X=Xc * x_scale,
        y_mean=y_mean,
        x_mean=x_mean,
        x_scale=x_scale,
        columns=tuple(columns) if columns is not None else None,
    )


@dataclass(frozen=True)
class ModelHyper:
    """Inverse-gamma (alpha, psi) on sigma^2 and slab scale multiplier tau."""

    alpha: float = 1.0
    psi: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.psi > 0 and self.tau > 0):
            raise ValueError("alpha, psi and tau must be positive")


@dataclass(frozen=True)
class MCConfig:
    n_samples: int = 2048
    seed: int = 0
    chunk: int = 4096

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100")


@dataclass(frozen=True)
class PosteriorQuantities:
    structure: ModelStructure
    A: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of A
    beta_tilde: np.ndarray
    R: float
    nu: float
    s2: float
    n: int

    @property
    def log_det_A(self) -> float:
        return 2.0 * float(np.log(np.diag(self.chol)).sum())


def posterior_quantities(data: RegressionData, delta, hyper: ModelHyper = ModelHyper(),
                         slab: str = "fusion-pmom") -> PosteriorQuantities:
    structure = delta if isinstance(delta, ModelStructure) else model_structure(delta)
    if structure.p != data.p:
        raise ValueError(f"delta has length {structure.p}; data has p={data.p}")
    y = data.y
    k = structure.p_delta
    Xd = collapse_design(data.X, structure)
    A = Xd.T @ Xd + np.eye(k) / hyper.tau
    if k:
        chol = linalg.cholesky(A, lower=True)
        beta = linalg.cho_solve((chol, True), Xd.T @ y)
        resid = y - Xd @ beta
        R = float(resid @ resid + beta @ beta / hyper.tau)
    else:
        chol = np.zeros((0, 0))
        beta = np.zeros(0)
        R = float(y @ y)
    if slab == "fusion-pmom":
        nu = data.n + 2 * k + 2 * structure.lambda_size + 2 * hyper.alpha
    elif slab == "normal":
        nu = data.n + 2 * hyper.alpha
    else:
        raise ValueError(f"unknown slab {slab!r}; expected one of {SLABS}")
    return PosteriorQuantities(
        structure=structure, A=A, chol=chol, beta_tilde=beta, R=R,
        nu=float(nu), s2=(R + 2 * hyper.psi) / nu, n=data.n,
    )


@dataclass(frozen=True)
class TExpectation:
    log_mean: float
    se: float  # standard error of log_mean (delta method)
    tilted_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _t_rng(mc: MCConfig, p_delta: int) -> np.random.Generator:
    return np.random.default_rng([mc.seed, 0x7E70, p_delta])


def t_expectation(pq: PosteriorQuantities, mc: MCConfig = MCConfig(),
                  tilted: bool = False) -> TExpectation:
    """Monte Carlo estimate of log E_t[Q] and optionally E_t[theta Q] / E_t[Q].

    Draws come in antithetic pairs ``beta +/- L z / sqrt(g)`` sharing one
    chi-square variate; the standard error uses the spread of pair means.
    The squared deviation |L z|^2 / g has a known mean under the t and
    serves as a control variate. For a single coefficient Q is exactly
    quadratic and the controlled estimate has zero variance.
    """
    structure = pq.structure
    k = structure.p_delta
    if k == 0:
        return TExpectation(0.0, 0.0, np.zeros(0))
    if pq.nu <= 2:
        raise ValueError(f"degrees of freedom {pq.nu} must exceed 2")
    rng = _t_rng(mc, k)
    n_pairs = max(mc.n_samples // 2, 1)
    scale = math.sqrt(pq.s2)
    chol_inv = linalg.solve_triangular(pq.chol, np.eye(k), lower=True)
    control_mean = pq.s2 * pq.nu / (pq.nu - 2) * float(np.sum(chol_inv**2))
    big = -math.inf
    s1 = s2 = 0.0  # sums of w and w^2, w = pair mean of Q scaled by exp(-big)
    c1 = c2 = wc = 0.0  # sums of c, c^2 and w c, c = squared deviation minus its mean
    wsum = 0.0
    wtheta = np.zeros(k)
    done = 0
    while done < n_pairs:
        m = min(mc.chunk, n_pairs - done)
        z = rng.standard_normal((m, k))
        g = rng.chisquare(pq.nu, size=m) / pq.nu
        # rows of dev have covariance s2 * A^{-1} / g
        dev = linalg.solve_triangular(pq.chol.T, z.T, lower=False).T
        dev *= (scale / np.sqrt(g))[:, None]
        plus = pq.beta_tilde + dev
        minus = pq.beta_tilde - dev
        lq_p = log_q(plus, structure)
        lq_m = log_q(minus, structure)
        if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
            raise FloatingPointError("non-finite multivariate t draws")
        pair = np.logaddexp(lq_p, lq_m) - math.log(2.0)
        new_big = max(big, float(pair.max()))
        if new_big > big:
            shrink = math.exp(big - new_big) if np.isfinite(big) else 0.0
            s1 *= shrink
            s2 *= shrink * shrink
            wc *= shrink
            wsum *= shrink
            wtheta *= shrink
            big = new_big
        w = np.exp(pair - big)
        c = np.einsum("ij,ij->i", dev, dev) - control_mean
        s1 += float(w.sum())
        s2 += float(w @ w)
        c1 += float(c.sum())
        c2 += float(c @ c)
        wc += float(w @ c)
        if tilted:
            wp = np.exp(lq_p - big)
            wm = np.exp(lq_m - big)
            wsum += float(wp.sum() + wm.sum())
            wtheta += wp @ plus + wm @ minus
        done += m
    mean_w, mean_c = s1 / n_pairs, c1 / n_pairs
    var_w = max(s2 / n_pairs - mean_w * mean_w, 0.0)
    var_c = c2 / n_pairs - mean_c * mean_c
    cov = wc / n_pairs - mean_w * mean_c
    mean, var = mean_w, var_w
    # the control needs a finite fourth moment of the t
    if pq.nu > 4 and var_c > 0:
        b = cov / var_c
        controlled = mean_w - b * mean_c
        if controlled > 0:
            mean, var = controlled, max(var_w - cov * cov / var_c, 0.0)
    se = math.sqrt(var / n_pairs) / mean if mean > 0 else math.inf
    tilted_mean = wtheta / wsum if tilted and wsum > 0 else np.zeros(0)
    return TExpectation(big + math.log(mean), se, tilted_mean)


def estimate_log_EtQ(structure: ModelStructure, pq: PosteriorQuantities,
                     mc: MCConfig = MCConfig()) -> tuple[float, float]:
    if pq.structure.key() != structure.key():
        raise ValueError("posterior quantities were computed for a different model")
    est = t_expectation(pq, mc)
    return est.log_mean, est.se


def _log_marginal_closed_part(pq: PosteriorQuantities, hyper: ModelHyper) -> float:
    k = pq.structure.p_delta
    lam = pq.structure.lambda_size
    nu, n = pq.nu, pq.n
    return (
        log_normalizing_constant(pq.structure)
        - 0.5 * (n + k) * math.log(2 * math.pi)
        + hyper.alpha * math.log(hyper.psi) - gammaln(hyper.alpha)
        + 0.5 * (nu + k) * math.log(2.0)
        + 0.5 * k * math.log(math.pi)
        - 0.5 * pq.log_det_A
        - 0.5 * nu * math.log(nu * pq.s2)
        + gammaln(0.5 * nu)
        - (1.5 * k + lam) * math.log(hyper.tau)
    )


def log_marginal_normal_slab(data: RegressionData, delta, hyper: ModelHyper = ModelHyper()) -> float:
    """Closed-form log m(y | delta) when the slab is N(0, tau sigma^2 I) (local prior)."""
    pq = posterior_quantities(data, delta, hyper, slab="normal")
    k, n = pq.structure.p_delta, data.n
    shape = 0.5 * n + hyper.alpha
    return (
        -0.5 * n * math.log(2 * math.pi)
        - 0.5 * k * math.log(hyper.tau)
        - 0.5 * pq.log_det_A
        + hyper.alpha * math.log(hyper.psi) - gammaln(hyper.alpha)
        + gammaln(shape)
        - shape * math.log(0.5 * pq.R + hyper.psi)
    )


def log_marginal_likelihood(data: RegressionData, delta, hyper: ModelHyper = ModelHyper(),
                            mc: MCConfig = MCConfig(), slab: str = "fusion-pmom",
                            return_se: bool = False):
    """log m(y | delta); with ``return_se`` also the Monte Carlo standard error."""
    if slab == "normal":
        val = log_marginal_normal_slab(data, delta, hyper)
        return (val, 0.0) if return_se else val
    pq = posterior_quantities(data, delta, hyper)
    est = t_expectation(pq, mc)
    val = _log_marginal_closed_part(pq, hyper) + est.log_mean
    if not np.isfinite(val):
        raise FloatingPointError(f"non-finite log marginal likelihood for model {delta}")
    return (val, est.se) if return_se else val


class MarginalCache:
    """Memoized log marginal likelihoods for one dataset and one setting.

    Because the Monte Carlo estimate is a deterministic function of the model,
    the cache can live for a whole chain without changing the target.
    """

    def __init__(self, data: RegressionData, hyper: ModelHyper = ModelHyper(),
                 mc: MCConfig = MCConfig(), slab: str = "fusion-pmom"):
        if slab not in SLABS:
            raise ValueError(f"unknown slab {slab!r}; expected one of {SLABS}")
        self.data, self.hyper, self.mc, self.slab = data, hyper, mc, slab
        self._values: dict[tuple[int, ...], float] = {}
        self._pq: dict[tuple[int, ...], PosteriorQuantities] = {}

    def __len__(self):
        return len(self._values)

    def log_marginal(self, delta: tuple[int, ...]) -> float:
        val = self._values.get(delta)
        if val is None:
            val = log_marginal_likelihood(self.data, delta, self.hyper, self.mc, self.slab)
            self._values[delta] = val
        return val

    def quantities(self, delta: tuple[int, ...]) -> PosteriorQuantities:
        pq = self._pq.get(delta)
        if pq is None:
            pq = posterior_quantities(self.data, delta, self.hyper, self.slab)
            self._pq[delta] = pq
        return pq
