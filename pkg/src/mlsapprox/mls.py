"""MLS shape functions with analytic derivatives.

At an evaluation point ``x`` the basis is centered at ``z = x`` and scaled by
``h``. With the center frozen, the only ``x``-dependence of

    a_j(x) = w_j(x) * sum_alpha lambda_alpha(x) p_alpha(x_j),   A(x) lambda(x) = p(x)

is through the weights and ``lambda``. Differentiating ``A lambda = p`` with
Leibniz gives, for each ``beta`` in graded order,

    A D^beta lambda = D^beta p - sum_{gamma < beta} C(beta, gamma) D^{beta-gamma} A D^gamma lambda

which is solved with the one Cholesky factor of ``A``; ``D^beta A`` is the
assembly sum with ``w_j`` replaced by ``D^beta w_j``. At ``x = z`` the right
hand side ``D^beta p`` is ``beta! h^-|beta| e_beta``.

Everything is vectorized over a batch of evaluation points; neighbor lists are
padded to the batch maximum and padded slots carry zero weight.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import (
    MultiIndexSet,
    ScaledBasis,
    binom,
    eval_basis,
    eval_basis_batch,
    eval_basis_derivative,
    leq,
    lower_set,
    multi_indices,
)
from .geometry import PointSet, check_unisolvency
from .weights import WeightFunction, WeightKind

MAX_DERIV_ORDER = 2


class MLSError(RuntimeError):
    """Numerical failure while building shape functions."""


class CoverageError(MLSError):
    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        super().__init__(f"no coverage: no center within the support radius of x={self.x.tolist()}")


class DeficientNeighborhoodError(MLSError):
    def __init__(self, x, ratio):
        self.x = np.asarray(x, dtype=float)
        self.sigma_ratio = ratio
        super().__init__(
            f"deficient neighborhood at x={self.x.tolist()}: centers not unisolvent "
            f"(sigma_min/sigma_max={ratio:.3e})"
        )


class BasisMode(str, enum.Enum):
    SHIFTED_SCALED = "shifted_scaled"
    UNSCALED_GLOBAL = "unscaled_global"


@dataclass(frozen=True)
class MLSConfig:
    """Degree, weight and support rule.

    Exactly one of ``delta`` (fixed support radius) or ``delta_factor``
    (``delta = delta_factor * h``) is used; ``delta`` wins if both are set.
    ``UNSCALED_GLOBAL`` uses plain monomials ``x**alpha`` and exists only to
    show the loss of conditioning; it is not meant for approximation.
    """

    m: int
    weight_kind: WeightKind = WeightKind.WENDLAND_C4
    delta: float | None = None
    delta_factor: float | None = None
    basis_mode: BasisMode = BasisMode.SHIFTED_SCALED

    def __post_init__(self):
        object.__setattr__(self, "weight_kind", WeightKind(self.weight_kind))
        object.__setattr__(self, "basis_mode", BasisMode(self.basis_mode))
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.delta is None and self.delta_factor is None:
            raise ValueError("either delta or delta_factor is required")

    def support_radius(self, h: float) -> float:
        delta = self.delta if self.delta is not None else self.delta_factor * h
        if not delta > 0:
            raise ValueError("support radius must be positive")
        return float(delta)

    def weight(self, h: float) -> WeightFunction:
        return WeightFunction(self.weight_kind, self.support_radius(h))


@dataclass
class LocalSystem:
    J: np.ndarray
    A: np.ndarray
    W: np.ndarray
    P: np.ndarray
    lambda_min: float
    basis: ScaledBasis


@dataclass
class ShapeBundle:
    J: np.ndarray
    values: np.ndarray
    derivatives: dict = field(default_factory=dict)

    def dense(self, n: int, beta=None) -> np.ndarray:
        """Shape values (or ``D**beta``) scattered into a length-``n`` vector."""
        out = np.zeros(n)
        out[self.J] = self.values if beta is None or sum(beta) == 0 else self.derivatives[tuple(beta)]
        return out


@dataclass
class BatchShapes:
    """Shape data for ``B`` evaluation points; arrays are ``(B, K)`` padded."""

    idx: np.ndarray
    mask: np.ndarray
    derivs: dict
    lambda_min: np.ndarray | None = None
    shifted: np.ndarray | None = None
    lambdas: dict | None = None

    def apply(self, data: np.ndarray, beta) -> np.ndarray:
        """``sum_j D^beta a_j(x) u_j`` for every evaluation point."""
        return np.einsum("bk,bk->b", self.derivs[tuple(beta)], data[self.idx])

    def lebesgue(self, beta) -> np.ndarray:
        return np.abs(self.derivs[tuple(beta)]).sum(axis=1)


def derivative_multi_indices(order: int, d: int) -> list[tuple[int, ...]]:
    return multi_indices(order, d)


def _mirror_upper(a: np.ndarray) -> np.ndarray:
    q = a.shape[-1]
    iu, ju = np.triu_indices(q, 1)
    a[..., ju, iu] = a[..., iu, ju]
    return a


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``L L^T x = b`` for stacked lower factors ``L`` (B,Q,Q), ``b`` (B,Q[,R])."""
    q = L.shape[-1]
    vec = b.ndim == 2
    y = (b[..., None] if vec else b).astype(float, copy=True)
    for i in range(q):
        if i:
            y[:, i] -= np.einsum("bk,bkr->br", L[:, i, :i], y[:, :i])
        y[:, i] /= L[:, i, i, None]
    for i in range(q - 1, -1, -1):
        if i < q - 1:
            y[:, i] -= np.einsum("bk,bkr->br", L[:, i + 1:, i], y[:, i + 1:])
        y[:, i] /= L[:, i, i, None]
    return y[..., 0] if vec else y


def _pivot_ok(L: np.ndarray, A: np.ndarray) -> np.ndarray:
    q = A.shape[-1]
    piv = np.einsum("bii->bi", L) ** 2
    scale = np.einsum("bii->bi", A).max(axis=1)
    return np.all(piv > 64 * q * np.finfo(float).eps * scale[:, None], axis=1) & np.all(np.isfinite(L), axis=(1, 2))


def _factor(A, x, points, idx, weights, mset, h):
    """Batched Cholesky with a flagged diagonal-shift retry for marginal rows.

    Rows with a tiny pivot are first checked for unisolvency in the
    shifted-scaled basis, which is well conditioned whatever basis ``A``
    was assembled in.
    """
    b, q, _ = A.shape
    shifted = np.zeros(b, dtype=bool)
    try:
        L = np.linalg.cholesky(A)
        bad = ~_pivot_ok(L, A)
    except np.linalg.LinAlgError:
        L = np.zeros_like(A)
        bad = np.ones(b, dtype=bool)
    for row in np.flatnonzero(bad):
        active = idx[row][weights[row] > 0]
        ok, ratio = (False, 0.0) if active.size == 0 else check_unisolvency(points, active, mset.m, h, x[row])
        if not ok:
            raise DeficientNeighborhoodError(x[row], ratio)
        a = A[row]
        for shift in (0.0, 1e-12 * np.trace(a) / q):
            try:
                L[row] = np.linalg.cholesky(a + shift * np.eye(q))
            except np.linalg.LinAlgError:
                continue
            if _pivot_ok(L[row][None], a[None])[0] or shift:
                shifted[row] = shift > 0
                break
        else:
            raise DeficientNeighborhoodError(x[row], ratio)
    return L, shifted


def shape_batch(
    points: PointSet,
    x: np.ndarray,
    cfg: MLSConfig,
    h: float,
    betas=None,
    deriv_order: int = 0,
    want_lambda_min: bool = False,
    want_lambdas: bool = False,
) -> BatchShapes:
    """Shape functions and derivatives ``D^beta a_j`` at a batch of points.

    ``betas`` lists the requested derivative multi-indices; by default every
    ``beta`` with ``|beta| <= deriv_order``. The returned ``derivs`` is keyed by
    the multi-index tuple, with the zero tuple holding the values.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = points.dim
    if x.shape[1] != d:
        raise ValueError(f"evaluation points must have {d} columns")
    if betas is None:
        betas = multi_indices(deriv_order, d)
    betas = [tuple(int(v) for v in b) for b in betas]
    order = max(sum(b) for b in betas)
    if order > MAX_DERIV_ORDER:
        raise ValueError(f"derivative order {order} exceeds the supported {MAX_DERIV_ORDER}")
    wf = cfg.weight(h)
    if order > wf.smoothness:
        raise ValueError(f"{wf.kind.value} weight is not C^{order}")
    if h <= 0:
        raise ValueError("scale h must be positive")
    mset = MultiIndexSet(cfg.m, d)
    q = len(mset)
    zero = (0,) * d
    need = lower_set(betas + [zero], d)

    idx, mask = points.query_ball(x, wf.support_radius)
    covered = mask.any(axis=1) if mask.shape[1] else np.zeros(x.shape[0], dtype=bool)
    if not covered.all():
        raise CoverageError(x[np.flatnonzero(~covered)[0]])

    v = x[:, None, :] - points.points[idx]
    w, grad, hess = wf.evaluate(v, order)
    w = w * mask
    dw = {zero: w}
    for beta in need:
        k = sum(beta)
        if k == 1:
            dw[beta] = grad[..., beta.index(1)] * mask
        elif k == 2:
            nz = [i for i, e in enumerate(beta) for _ in range(e)]
            dw[beta] = hess[..., nz[0], nz[1]] * mask

    scaled = cfg.basis_mode is BasisMode.SHIFTED_SCALED
    if scaled:
        P = eval_basis_batch(mset, -v / h)
    else:
        P = eval_basis_batch(mset, points.points[idx])

    dA = {}
    for beta in need:
        dA[beta] = _mirror_upper(np.matmul((dw[beta][..., None] * P).transpose(0, 2, 1), P))
    A = dA[zero]

    L, shifted = _factor(A, x, points, idx, w, mset, h)

    def rhs(beta):
        if scaled:
            out = np.zeros((x.shape[0], q))
            pos = mset.position.get(beta)
            if pos is not None:
                out[:, pos] = math.prod(math.factorial(e) for e in beta) * h ** (-sum(beta))
            return out
        return eval_basis_derivative(ScaledBasis(mset, np.zeros(d), 1.0), x, beta)

    dlam = {}
    for beta in need:
        r = rhs(beta)
        for gamma in dlam:
            if gamma != beta and leq(gamma, beta):
                diff = tuple(b - g for b, g in zip(beta, gamma))
                r = r - binom(beta, gamma) * np.einsum("bqr,br->bq", dA[diff], dlam[gamma])
        dlam[beta] = _chol_solve(L, r)

    plam = {g: np.einsum("bkq,bq->bk", P, lam) for g, lam in dlam.items()}
    derivs = {}
    for beta in betas:
        acc = np.zeros_like(w)
        for gamma in need:
            if leq(gamma, beta):
                diff = tuple(b - g for b, g in zip(beta, gamma))
                acc += binom(beta, gamma) * dw[diff] * plam[gamma]
        derivs[beta] = acc

    lam_min = np.linalg.eigvalsh(A)[:, 0] if want_lambda_min else None
    return BatchShapes(idx, mask, derivs, lam_min, shifted, dlam if want_lambdas else None)


def iter_shape_batches(points, x, cfg, h, chunk: int = 2048, **kwargs):
    """Yield ``(slice, BatchShapes)`` over ``x`` in fixed-size chunks."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, min(start + chunk, x.shape[0]))
        yield sl, shape_batch(points, x[sl], cfg, h, **kwargs)


# -- single-point surface -------------------------------------------------


def _local_basis(cfg: MLSConfig, mset: MultiIndexSet, x: np.ndarray, h: float) -> ScaledBasis:
    if cfg.basis_mode is BasisMode.SHIFTED_SCALED:
        return ScaledBasis(mset, x, h)
    return ScaledBasis(mset, np.zeros_like(x), 1.0)


def assemble_local_system(points: PointSet, x, cfg: MLSConfig, h: float) -> LocalSystem:
    """Moment matrix ``A = P W P^T`` over the neighbors of ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if h <= 0:
        raise ValueError("scale h must be positive")
    wf = cfg.weight(h)
    mset = MultiIndexSet(cfg.m, points.dim)
    idx, mask = points.query_ball(x[None], wf.support_radius)
    J = idx[0][mask[0]]
    if J.size == 0:
        raise CoverageError(x)
    basis = _local_basis(cfg, mset, x, h)
    W = wf.evaluate(x - points.points[J])[0]
    P = eval_basis_batch(mset, basis.scaled(points.points[J])).T
    A = _mirror_upper(((P * W) @ P.T)[None])[0]
    active = J[W > 0]
    ok, ratio = (False, 0.0) if active.size == 0 else check_unisolvency(
        points, active, mset.m, basis.scale, basis.center
    )
    if not ok:
        raise DeficientNeighborhoodError(x, ratio)
    lam_min = float(np.linalg.eigvalsh(A)[0])
    return LocalSystem(J, A, W, P, lam_min, basis)


def solve_lambda(system: LocalSystem, x) -> np.ndarray:
    """Solve ``A lambda = p(x)`` by Cholesky, with one flagged diagonal-shift retry."""
    x = np.asarray(x, dtype=float).reshape(-1)

    p = eval_basis(system.basis, x)
    A = system.A
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(A + 1e-12 * np.trace(A) / A.shape[0] * np.eye(A.shape[0]))
        except np.linalg.LinAlgError:
            raise DeficientNeighborhoodError(x, 0.0) from None
    return _chol_solve(L[None], p[None])[0]


def shape_functions(points: PointSet, x, cfg: MLSConfig, h: float, deriv_order: int = 0) -> ShapeBundle:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    res = shape_batch(points, x, cfg, h, deriv_order=deriv_order)
    keep = res.mask[0]
    J = res.idx[0][keep]
    zero = (0,) * points.dim
    ders = {b: arr[0][keep] for b, arr in res.derivs.items() if b != zero}
    return ShapeBundle(J, res.derivs[zero][0][keep], ders)


def derivative_engine(points: PointSet, x, cfg: MLSConfig, h: float, deriv_order: int = 1):
    """``(D^beta lambda, D^beta a_j)`` for all ``|beta| <= deriv_order`` at ``x``.

    Returns the neighbor list and two dicts keyed by multi-index.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    res = shape_batch(points, x, cfg, h, deriv_order=deriv_order, want_lambdas=True)
    keep = res.mask[0]
    dlam = {b: v[0] for b, v in res.lambdas.items()}
    da = {b: v[0][keep] for b, v in res.derivs.items()}
    return res.idx[0][keep], dlam, da


@dataclass
class StabilityReport:
    lambda_min: np.ndarray
    lebesgue: dict
    shifted: np.ndarray

    @property
    def min_lambda_min(self) -> float:
        return float(self.lambda_min.min())

    def max_lebesgue(self, beta) -> float:
        return float(self.lebesgue[tuple(beta)].max())

    @property
    def n_shifted(self) -> int:
        return int(self.shifted.sum())


def stability_report(points: PointSet, cfg: MLSConfig, h: float, sample, deriv_order: int = 0) -> StabilityReport:
    """Smallest eigenvalue of ``A(x)`` and Lebesgue sums ``sum_j |D^beta a_j(x)|``."""
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    if sample.shape[0] == 0:
        raise ValueError("sample must be non-empty")
    betas = multi_indices(deriv_order, points.dim)
    lam = np.empty(sample.shape[0])
    shifted = np.zeros(sample.shape[0], dtype=bool)
    leb = {b: np.empty(sample.shape[0]) for b in betas}
    for sl, res in iter_shape_batches(points, sample, cfg, h, betas=betas, want_lambda_min=True):
        lam[sl] = res.lambda_min
        shifted[sl] = res.shifted
        for b in betas:
            leb[b][sl] = res.lebesgue(b)
    return StabilityReport(lam, leb, shifted)


def cone_constants(theta: float, r: float, m: int) -> tuple[float, float]:
    """``(C2, h0)`` of the interior cone condition; diagnostics only."""
    if not 0 < theta < math.pi / 2:
        raise ValueError("theta must lie in (0, pi/2)")
    if not r > 0:
        raise ValueError("r must be positive")
    if m < 1:
        raise ValueError("m must be >= 1")
    s = math.sin(theta)
    c2 = 16.0 * (1.0 + s) ** 2 * m * m / (3.0 * s * s)
    return c2, r / c2
