"""Selection/fusion model space: admissibility, enumeration and the chain prior.

An indicator vector ``delta`` has one ternary code per coefficient:

* ``-1``  the coefficient starts a new free block,
* ``0``   the coefficient is exactly zero,
* ``1``   the coefficient is fused with (equal to) its predecessor.

The first code can never be ``1`` and the pair ``(0, 1)`` never occurs, so the
admissible vectors are in one-to-one correspondence with the models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CODES",
    "ENUMERATION_CAP",
    "ChainPrior",
    "ModelStructure",
    "SizeError",
    "collapse_design",
    "enumerate_models",
    "expand_theta",
    "fibonacci",
    "format_delta",
    "is_admissible",
    "log_prior_prob",
    "model_structure",
    "parse_delta",
    "prior_prob",
    "uniform_chain_prior",
]

CODES = (-1, 0, 1)
ENUMERATION_CAP = 16


class SizeError(ValueError):
    """Raised when a request exceeds a configured size cap."""


def _check_codes(delta: Iterable[int]) -> tuple[int, ...]:
    out = tuple(int(d) for d in delta)
    if len(out) == 0:
        raise ValueError("indicator vector must have length >= 1")
    for j, d in enumerate(out):
        if d not in CODES:
            raise ValueError(f"malformed code {d!r} at position {j}; expected one of -1, 0, 1")
    return out


def is_admissible(delta: Sequence[int]) -> bool:
    """True iff ``delta`` encodes a model: no leading 1 and no (0, 1) pair."""
    d = _check_codes(delta)
    if d[0] == 1:
        return False
    return all(not (a == 0 and b == 1) for a, b in zip(d[:-1], d[1:]))


def parse_delta(text: str) -> tuple[int, ...]:
    """Parse the comma-separated form ``"-1,1,0"``."""
    return _check_codes(int(tok) for tok in text.split(",") if tok.strip())


def format_delta(delta: Sequence[int]) -> str:
    return ",".join(str(int(d)) for d in delta)


@lru_cache(maxsize=None)
def fibonacci(k: int) -> int:
    """Fibonacci numbers with F_1 = F_2 = 1 (and F_0 = 0)."""
    if k < 0:
        raise ValueError("Fibonacci index must be >= 0")
    a, b = 0, 1
    for _ in range(k):
        a, b = b, a + b
    return a


def enumerate_models(p: int, cap: int = ENUMERATION_CAP) -> list[tuple[int, ...]]:
    """All admissible indicator vectors of length ``p`` in lexicographic order.

    The order uses -1 < 0 < 1 position by position, so model indices are
    stable. The list has ``fibonacci(2 * p + 1)`` entries.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > cap:
        raise SizeError(
            f"enumeration of p={p} exceeds the enumeration cap of {cap} "
            f"({fibonacci(2 * p + 1)} models)"
        )
    out: list[tuple[int, ...]] = []

    def extend(prefix: list[int]) -> None:
        if len(prefix) == p:
            out.append(tuple(prefix))
            return
        prev = prefix[-1] if prefix else None
        for code in CODES:
            if prev is None and code == 1:
                continue
            if prev == 0 and code == 1:
                continue
            prefix.append(code)
            extend(prefix)
            prefix.pop()

    extend([])
    return out


@dataclass(frozen=True)
class ModelStructure:
    """Block decomposition of an admissible indicator vector.

    ``blocks[b]`` lists the original columns sharing free coefficient ``b``.
    ``lambda_set`` holds the block indices ``b >= 1`` whose first column
    immediately follows the last column of block ``b - 1``: those neighbours
    are active, unfused and could be fused.
    """

    p: int
    blocks: tuple[tuple[int, ...], ...]
    lambda_set: frozenset[int]

    @property
    def p_delta(self) -> int:
        return len(self.blocks)

    @property
    def lambda_size(self) -> int:
        return len(self.lambda_set)

    def runs(self) -> list[int]:
        """Lengths of maximal chains of blocks linked through ``lambda_set``."""
        if not self.blocks:
            return []
        lengths = [1]
        for b in range(1, self.p_delta):
            if b in self.lambda_set:
                lengths[-1] += 1
            else:
                lengths.append(1)
        return lengths

    def lambda_mask(self) -> np.ndarray:
        """Boolean vector over blocks, True where the block is in ``lambda_set``."""
        mask = np.zeros(self.p_delta, dtype=bool)
        for b in self.lambda_set:
            mask[b] = True
        return mask

    def key(self) -> tuple:
        return (self.p, self.blocks, tuple(sorted(self.lambda_set)))


def model_structure(delta: Sequence[int]) -> ModelStructure:
    d = _check_codes(delta)
    if not is_admissible(d):
        raise ValueError(f"inadmissible indicator vector ({format_delta(d)})")
    blocks: list[list[int]] = []
    lam: set[int] = set()
    for j, code in enumerate(d):
        if code == -1:
            if blocks and blocks[-1][-1] == j - 1:
                lam.add(len(blocks))
            blocks.append([j])
        elif code == 1:
            blocks[-1].append(j)
    return ModelStructure(
        p=len(d),
        blocks=tuple(tuple(b) for b in blocks),
        lambda_set=frozenset(lam),
    )


def collapse_design(X: np.ndarray, structure: ModelStructure) -> np.ndarray:
    """Sum the columns of each block so that ``X @ theta_full == Xd @ theta_d``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != structure.p:
        raise ValueError(
            f"design has shape {X.shape}; structure expects {structure.p} columns"
        )
    out = np.empty((X.shape[0], structure.p_delta))
    for b, cols in enumerate(structure.blocks):
        if not cols:
            raise ValueError(f"block {b} is empty")
        out[:, b] = X[:, list(cols)].sum(axis=1)
    return out


def expand_theta(theta: np.ndarray, structure: ModelStructure) -> np.ndarray:
    """Map block coefficients back to length-p: ties replicated, exclusions 0."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (structure.p_delta,):
        raise ValueError(f"theta has shape {theta.shape}; expected ({structure.p_delta},)")
    full = np.zeros(structure.p)
    for b, cols in enumerate(structure.blocks):
        full[list(cols)] = theta[b]
    return full


@dataclass(frozen=True)
class ChainPrior:
    """Markov-chain prior over indicator vectors.

    ``pi`` is (pi_-1, pi_0, pi_1). ``omega[j - 2]`` is the transition row used
    at position ``j`` (1-based, j >= 2) when the previous code is -1 or 1, and
    ``kappa[j - 2]`` = (kappa_-1, kappa_0) is used when the previous code is 0.
    ``hyper_a`` and ``hyper_cd`` are the Dirichlet and Beta means of the
    hierarchical version; ``A`` and ``B`` their concentrations.

    Entries may be floats or :class:`fractions.Fraction` for exact checks.
    """

    p: int
    pi: tuple
    omega: tuple
    kappa: tuple
    hyper_a: tuple = field(default=())
    hyper_cd: tuple = field(default=())
    A: float = 1.0
    B: float = 1.0

    def transition(self, j: int, prev: int, code: int):
        """K_j(prev, code) for 0-based position ``j >= 1``."""
        if prev == 0:
            if code == 1:
                return 0
            return self.kappa[j - 1][0 if code == -1 else 1]
        return self.omega[j - 1][code + 1]

    def initial(self, code: int):
        return self.pi[code + 1]

    def with_transitions(self, omega, kappa) -> "ChainPrior":
        return ChainPrior(
            p=self.p, pi=self.pi, omega=tuple(omega), kappa=tuple(kappa),
            hyper_a=self.hyper_a, hyper_cd=self.hyper_cd, A=self.A, B=self.B,
        )


def uniform_chain_prior(p: int, exact: bool = False, A: float = 1.0, B: float = 1.0) -> ChainPrior:
    """Fibonacci initial/transition probabilities giving every model prior 1/F_{2p+1}.

    With ``exact=True`` all probabilities are :class:`Fraction`.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    F = fibonacci
    num = Fraction if exact else (lambda a, b: a / b)
    pi = (num(F(2 * p), F(2 * p + 1)), num(F(2 * p - 1), F(2 * p + 1)), num(0, 1))
    omega, kappa = [], []
    for j in range(2, p + 1):
        r = p - j + 1
        omega.append((
            num(F(2 * r), F(2 * r + 2)),
            num(F(2 * r - 1), F(2 * r + 2)),
            num(F(2 * r), F(2 * r + 2)),
        ))
        kappa.append((num(F(2 * r), F(2 * r + 1)), num(F(2 * r - 1), F(2 * r + 1))))
    return ChainPrior(
        p=p, pi=pi, omega=tuple(omega), kappa=tuple(kappa),
        hyper_a=tuple(omega), hyper_cd=tuple(kappa), A=A, B=B,
    )


def prior_prob(delta: Sequence[int], prior: ChainPrior):
    """Chain probability of ``delta`` in the number type of ``prior``."""
    d = _check_codes(delta)
    if len(d) != prior.p:
        raise ValueError(f"delta has length {len(d)}; prior has p={prior.p}")
    prob = prior.initial(d[0])
    for j in range(1, len(d)):
        prob = prob * prior.transition(j, d[j - 1], d[j])
    return prob


def log_prior_prob(delta: Sequence[int], prior: ChainPrior) -> float:
    """Log chain probability; ``-inf`` for structurally forbidden vectors."""
    d = _check_codes(delta)
    if len(d) != prior.p:
        raise ValueError(f"delta has length {len(d)}; prior has p={prior.p}")
    terms = [prior.initial(d[0])]
    terms += [prior.transition(j, d[j - 1], d[j]) for j in range(1, len(d))]
    total = 0.0
    for t in terms:
        if t <= 0:
            return -math.inf
        total += math.log(t)
    return total
