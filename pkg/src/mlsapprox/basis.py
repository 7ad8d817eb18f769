"""Multi-indices and the shifted-scaled monomial basis ``(x - z)**alpha / h**|alpha|``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

MAX_DEGREE = 6


class UnsupportedDegreeError(ValueError):
    pass


def multi_indices(m: int, d: int) -> list[tuple[int, ...]]:
    """All ``alpha`` with ``|alpha| <= m`` in graded lexicographic order.

    Within one degree, larger leading exponents come first, so for ``d = 2``
    the order is ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...``.
    """
    out: list[tuple[int, ...]] = []
    for k in range(m + 1):
        out.extend(_compositions(k, d))
    return out


def _compositions(k: int, d: int):
    if d == 1:
        yield (k,)
        return
    for first in range(k, -1, -1):
        for rest in _compositions(k - first, d - 1):
            yield (first, *rest)


def factorial(alpha) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def binom(beta, gamma) -> int:
    return math.prod(math.comb(b, g) for b, g in zip(beta, gamma))


def leq(gamma, beta) -> bool:
    return all(g <= b for g, b in zip(gamma, beta))


def lower_set(betas, d: int) -> list[tuple[int, ...]]:
    """Down-closure of a collection of multi-indices, graded order."""
    need = set()
    for beta in betas:
        for gamma in multi_indices(sum(beta), d):
            if leq(gamma, beta):
                need.add(tuple(gamma))
    top = max((sum(b) for b in need), default=0)
    return [g for g in multi_indices(top, d) if g in need]


class MultiIndexSet:
    """Ordered multi-indices of total degree at most ``m`` in ``d`` variables."""

    def __init__(self, m: int, d: int):
        if m < 0 or d < 1:
            raise ValueError("need m >= 0 and d >= 1")
        if m > MAX_DEGREE:
            raise UnsupportedDegreeError(f"degree {m} unsupported (max {MAX_DEGREE})")
        self.m = m
        self.d = d
        self.indices = multi_indices(m, d)
        self.position = {a: i for i, a in enumerate(self.indices)}
        arr = np.array(self.indices, dtype=np.int64).reshape(len(self.indices), d)
        self.exponents = arr
        self.degrees = arr.sum(axis=1)
        # every non-constant monomial is its parent times one coordinate
        parent = np.zeros(len(self.indices), dtype=np.int64)
        axis = np.zeros(len(self.indices), dtype=np.int64)
        for i, a in enumerate(self.indices[1:], start=1):
            ax = next(k for k, e in enumerate(a) if e > 0)
            par = list(a)
            par[ax] -= 1
            parent[i] = self.position[tuple(par)]
            axis[i] = ax
        self.parent = parent
        self.axis = axis

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __repr__(self) -> str:
        return f"MultiIndexSet(m={self.m}, d={self.d}, Q={len(self)})"

    @cached_property
    def _shift_tables(self) -> dict:
        return {}

    def derivative_table(self, beta):
        """For ``D**beta``: source slot, falling-factorial coefficient, surviving mask."""
        beta = tuple(beta)
        cache = self._shift_tables
        if beta not in cache:
            q = len(self)
            src = np.zeros(q, dtype=np.int64)
            coef = np.zeros(q)
            for i, a in enumerate(self.indices):
                if leq(beta, a):
                    rest = tuple(x - y for x, y in zip(a, beta))
                    src[i] = self.position[rest]
                    coef[i] = factorial(a) / factorial(rest)
            cache[beta] = (src, coef)
        return cache[beta]


def eval_basis_batch(mset: MultiIndexSet, y: np.ndarray) -> np.ndarray:
    """Monomials ``y**alpha`` for points ``y`` of shape ``(..., d)`` -> ``(..., Q)``."""
    y = np.asarray(y, dtype=float)
    out = np.empty(y.shape[:-1] + (len(mset),))
    out[..., 0] = 1.0
    for i in range(1, len(mset)):
        out[..., i] = out[..., mset.parent[i]] * y[..., mset.axis[i]]
    return out


@dataclass(frozen=True)
class ScaledBasis:
    multi_indices: MultiIndexSet
    center: np.ndarray
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("basis scale h must be positive")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    def scaled(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center) / self.scale


def eval_basis(basis: ScaledBasis, x) -> np.ndarray:
    return eval_basis_batch(basis.multi_indices, basis.scaled(x))


def eval_basis_derivative(basis: ScaledBasis, x, beta) -> np.ndarray:
    """``D**beta`` (in ``x``) of every basis function at ``x``.

    Components with ``alpha`` not dominating ``beta`` are zero; the others are
    ``alpha!/(alpha-beta)! * h**-|beta| * y**(alpha-beta)``.
    """
    mset = basis.multi_indices
    beta = tuple(int(b) for b in beta)
    if len(beta) != mset.d:
        raise ValueError("multi-index dimension mismatch")
    vals = eval_basis(basis, x)
    src, coef = mset.derivative_table(beta)
    return coef * vals[..., src] * basis.scale ** (-sum(beta))
