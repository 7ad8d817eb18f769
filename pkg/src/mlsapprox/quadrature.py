"""Tensor-product Gauss-Legendre rules on boxes and on box boundaries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import DomainBox


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.weights.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class BoundaryRule(QuadratureRule):
    normals: np.ndarray


def _legendre(n: int, x: np.ndarray):
    """``P_n(x)`` and ``P_n'(x)`` by the three-term recurrence."""
    p0, p1 = np.ones_like(x), x.copy()
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
    return p1, n * (x * p1 - p0) / (x * x - 1.0)


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``n``-point rule on ``[-1, 1]``, ascending.

    Roots of ``P_n`` by Newton's method from the usual cosine guesses,
    iterated until the update is below ``1e-15``.
    """
    if n < 1:
        raise ValueError("need at least one node")
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    _, dp = _legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return x, w


def _axis_rule(lo: float, hi: float, n: int, cells: int = 1):
    x, w = gauss_legendre(n)
    edges = np.linspace(lo, hi, cells + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _tensor(axes):
    nodes = np.stack([m.ravel() for m in np.meshgrid(*[a[0] for a in axes], indexing="ij")], axis=-1)
    weights = np.ones(nodes.shape[0])
    for m in np.meshgrid(*[a[1] for a in axes], indexing="ij"):
        weights = weights * m.ravel()
    return nodes, weights


def gauss_legendre_box(box: DomainBox, n_per_axis: int, cells_per_axis: int = 1) -> QuadratureRule:
    """Tensor Gauss-Legendre rule, optionally composite over equal sub-cells."""
    if n_per_axis < 1 or cells_per_axis < 1:
        raise ValueError("n_per_axis and cells_per_axis must be >= 1")
    axes = [_axis_rule(lo, hi, n_per_axis, cells_per_axis) for lo, hi in zip(box.lower, box.upper)]
    return QuadratureRule(*_tensor(axes))


def box_boundary_rule(box: DomainBox, n_per_axis: int, cells_per_axis: int = 1) -> BoundaryRule:
    """Gauss-Legendre on every face of the box, with outward unit normals.

    Nodes are interior to each face, so corners (or edges in 3-d) never carry
    a node and no face ownership question arises.
    """
    d = box.dim
    nodes, weights, normals = [], [], []
    for axis, side in itertools.product(range(d), (0, 1)):
        fixed = box.upper[axis] if side else box.lower[axis]
        others = [k for k in range(d) if k != axis]
        if others:
            pts, wts = _tensor([_axis_rule(box.lower[k], box.upper[k], n_per_axis, cells_per_axis) for k in others])
        else:
            pts, wts = np.zeros((1, 0)), np.ones(1)
        full = np.empty((wts.size, d))
        full[:, axis] = fixed
        full[:, others] = pts
        nrm = np.zeros((wts.size, d))
        nrm[:, axis] = 1.0 if side else -1.0
        nodes.append(full)
        weights.append(wts)
        normals.append(nrm)
    return BoundaryRule(np.concatenate(nodes), np.concatenate(weights), np.concatenate(normals))
