"""Non-local prior densities.

The fusion-pMOM slab multiplies a spherical normal by the squares of the free
coefficients and of every fusable adjacent difference. Its normalizing
constant factorizes over runs of blocks linked through the fusable set, each
run of length k contributing the Gaussian chain moment ``Phi_k``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .model_space import ModelStructure

__all__ = [
    "PHI_TABLE_CAP",
    "REFERENCE_DENSITIES",
    "SlabHyper",
    "chain_moment_table",
    "density_grid",
    "density_grid_csv",
    "log_fusion_pmom_density",
    "log_normalizing_constant",
    "log_q",
    "parse_grid",
    "phi_chain_moment",
    "phi_closed_form",
    "reference_density",
]

PHI_TABLE_CAP = 64
REFERENCE_DENSITIES = ("pmom", "pimom", "pemom", "normal")

# standard normal moments
_MU2, _MU4, _MU6 = 1, 3, 15


@dataclass(frozen=True)
class SlabHyper:
    tau: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and self.sigma2 > 0):
            raise ValueError("tau and sigma2 must be positive")


@lru_cache(maxsize=None)
def chain_moment_table(cap: int = PHI_TABLE_CAP) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Exact integer tables (Phi_1..Phi_cap, Psi_1..Psi_cap)."""
    phi, psi = [1], [3]
    for _ in range(cap - 1):
        f, s = phi[-1], psi[-1]
        phi.append(_MU4 * f + _MU2 * s)
        psi.append(_MU6 * f + _MU4 * s)
    return tuple(phi), tuple(psi)


def phi_chain_moment(k: int, cap: int = PHI_TABLE_CAP) -> float:
    """E[prod Z_j^2 prod (Z_j - Z_{j-1})^2] for k i.i.d. standard normals."""
    if k < 1:
        raise ValueError("chain moment index must be >= 1")
    if k > cap:
        raise ValueError(f"chain moment index {k} exceeds the table cap {cap}")
    return float(chain_moment_table(cap)[0][k - 1])


def phi_closed_form(k: int) -> float:
    r = math.sqrt(15.0)
    return ((3 + r) ** k - (3 - r) ** k) / (2 * r)


def log_normalizing_constant(structure: ModelStructure) -> float:
    return -sum(math.log(phi_chain_moment(k)) for k in structure.runs())


def log_q(theta: np.ndarray, structure: ModelStructure) -> np.ndarray:
    """log Q(theta) = sum log theta_b^2 + sum_{b in Lambda} log (theta_b - theta_{b-1})^2.

    Works on a single vector or on rows of a 2-D array. Zeros give ``-inf``.
    """
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(np.square(theta)).sum(axis=-1)
        lam = sorted(structure.lambda_set)
        if lam:
            idx = np.asarray(lam)
            diff = theta[..., idx] - theta[..., idx - 1]
            out = out + np.log(np.square(diff)).sum(axis=-1)
    return out


def log_fusion_pmom_density(theta, structure: ModelStructure, hyper: SlabHyper = SlabHyper()) -> float:
    """Log density of the fusion-pMOM slab at the block coefficients ``theta``.

    Each squared coefficient and each squared fusable difference carries one
    factor of ``tau * sigma2``, so the density is scale equivariant. Returns
    ``-inf`` on the zero set rather than raising.
    """
    theta = np.asarray(theta, dtype=float)
    k = structure.p_delta
    if theta.shape != (k,):
        raise ValueError(f"theta has shape {theta.shape}; expected ({k},)")
    if k == 0:
        return 0.0
    v = hyper.tau * hyper.sigma2
    lq = float(log_q(theta, structure))
    if not np.isfinite(lq):
        return -math.inf
    return (
        log_normalizing_constant(structure)
        + lq
        - 0.5 * k * math.log(2 * math.pi * v)
        - (k + structure.lambda_size) * math.log(v)
        - float(theta @ theta) / (2 * v)
    )


# -- reference densities ----------------------------------------------------

def _normal_kernel(t, sigma2):
    return np.exp(-np.square(t) / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2)


def _inv_sq_exp(t, sigma2):
    # exp(-sigma2 / t^2), continuous extension 0 at t = 0
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    nz = t != 0
    out[nz] = np.exp(-sigma2 / np.square(t[nz]))
    return out


def _pimom_kernel(t, sigma2):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    nz = t != 0
    out[nz] = np.exp(-sigma2 / np.square(t[nz])) / np.square(t[nz])
    return out


def _pemom_kernel(t, sigma2):
    return _inv_sq_exp(t, sigma2) * _normal_kernel(t, sigma2)


_KERNELS = {"pimom": _pimom_kernel, "pemom": _pemom_kernel}


@lru_cache(maxsize=256)
def _normalizer(name: str, sigma2: float) -> float:
    kernel = _KERNELS[name]
    f = lambda t: float(kernel(np.array([t]), sigma2)[0])  # noqa: E731
    # even kernel: integrate the positive half line, split at the mode region
    s = math.sqrt(sigma2)
    a, _ = integrate.quad(f, 0.0, s, epsabs=0, epsrel=1e-10, limit=200)
    b, _ = integrate.quad(f, s, np.inf, epsabs=0, epsrel=1e-10, limit=200)
    return 2.0 * (a + b)


def _coordinate_density(name: str, t: np.ndarray, sigma2: float) -> np.ndarray:
    if name == "normal":
        return _normal_kernel(t, sigma2)
    if name == "pmom":
        return np.square(t) / sigma2 * _normal_kernel(t, sigma2)
    if name in _KERNELS:
        return _KERNELS[name](t, sigma2) / _normalizer(name, float(sigma2))
    raise ValueError(f"unknown density {name!r}; expected one of {REFERENCE_DENSITIES}")


def reference_density(name: str, theta, sigma2: float = 1.0) -> float:
    """Normalized pMOM / piMOM / peMOM (or normal) density, product over coordinates."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    name = name.lower()
    t = np.atleast_1d(np.asarray(theta, dtype=float))
    return float(np.prod(_coordinate_density(name, t, sigma2)))


def parse_grid(spec: str) -> np.ndarray:
    """``"start:stop:step"`` -> inclusive grid."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid spec {spec!r} is not start:stop:step") from None
    if step <= 0 or stop < start:
        raise ValueError(f"grid spec {spec!r} is empty")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def density_grid(grid, sigma2: float = 1.0, names=REFERENCE_DENSITIES) -> dict[str, np.ndarray]:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    out = {"theta": grid}
    for name in names:
        out[name] = _coordinate_density(name, grid, sigma2)
    return out


def density_grid_csv(grid, sigma2: float = 1.0) -> str:
    table = density_grid(grid, sigma2)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["theta", *REFERENCE_DENSITIES]
    w.writerow(cols)
    for row in zip(*(table[c] for c in cols)):
        w.writerow([f"{v:.17e}" for v in row])
    return buf.getvalue()
