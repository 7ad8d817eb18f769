"""Bubnov-Galerkin solver with MLS trial/test functions for a Robin problem.

Solves ``-div(K grad u) + c u = f`` in a box with ``(K grad u).n + b u = g``
on its boundary. Shape functions are tabulated once per quadrature node into
sparse ``(n_nodes, N)`` matrices; the stiffness matrix is then a short sum of
sparse triple products, so only pairs with overlapping supports are touched.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigvalsh_tridiagonal

from .geometry import DomainBox, PointSet, generate_regular_grid, probe_lattice
from .mls import MLSConfig, iter_shape_batches
from .quadrature import (
    BoundaryRule,
    QuadratureRule,
    box_boundary_rule,
    gauss_legendre_box,
)
from .weights import WeightKind

log = logging.getLogger(__name__)


class ProblemError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, residual, condition):
        super().__init__(f"{message} (relative residual {residual:.3e}, condition estimate {condition:.3e})")
        self.residual = residual
        self.condition = condition


@dataclass
class EllipticProblem:
    """Coefficients are vectorized callables over node arrays ``(n, d)``.

    ``K`` returns ``(n, d, d)``; ``b`` and ``g`` also receive the outward
    normals ``(n, d)``.
    """

    K: Callable
    c: Callable
    b: Callable
    f: Callable
    g: Callable
    domain: DomainBox

    def check(self, resolution: int = 20) -> float:
        """Verify ellipticity and sign conditions on probes; returns the ellipticity bound."""
        box = self.domain
        probes = probe_lattice(box, resolution)
        gamma = float(np.linalg.eigvalsh(self.K(probes))[:, 0].min())
        if not gamma > 0:
            raise ProblemError(f"K is not uniformly elliptic on the probe set (min eigenvalue {gamma:.3e})")
        cv = np.asarray(self.c(probes), dtype=float)
        brule = box_boundary_rule(box, resolution)
        bv = np.asarray(self.b(brule.nodes, brule.normals), dtype=float)
        if cv.min() < 0 or bv.min() < 0:
            raise ProblemError("c and b must be non-negative")
        if cv.max() <= 0 and bv.max() <= 0:
            raise ProblemError("c or b must be positive somewhere")
        return gamma


@dataclass
class ShapeTables:
    """Sparse tabulations at quadrature nodes: values and (optionally) gradients."""

    values: sp.csr_matrix
    grads: list = field(default_factory=list)


def tabulate(points: PointSet, nodes: np.ndarray, cfg: MLSConfig, h: float, deriv_order: int = 1) -> ShapeTables:
    n, d = len(points), points.dim
    betas = [(0,) * d] + ([tuple(int(i == k) for i in range(d)) for k in range(d)] if deriv_order else [])
    rows, cols = [], []
    vals = {b: [] for b in betas}
    for sl, res in iter_shape_batches(points, nodes, cfg, h, betas=betas):
        r = np.broadcast_to(np.arange(sl.start, sl.stop)[:, None], res.idx.shape)
        rows.append(r[res.mask])
        cols.append(res.idx[res.mask])
        for b in betas:
            vals[b].append(res.derivs[b][res.mask])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (nodes.shape[0], n)

    def mat(b):
        return sp.csr_matrix((np.concatenate(vals[b]), (rows, cols)), shape=shape)

    return ShapeTables(mat(betas[0]), [mat(b) for b in betas[1:]])


@dataclass
class GalerkinSystem:
    stiffness: sp.csr_matrix
    load: np.ndarray
    points: PointSet
    cfg: MLSConfig
    h: float
    quad: QuadratureRule
    bquad: BoundaryRule
    domain_tables: ShapeTables
    boundary_tables: ShapeTables
    coefficients: np.ndarray | None = None

    def symmetry_error(self) -> float:
        s = self.stiffness
        diff = abs(s - s.T)
        return float(diff.max() / abs(s).max()) if diff.nnz else 0.0


def assemble(
    problem: EllipticProblem,
    points: PointSet,
    cfg: MLSConfig,
    h: float,
    quad: QuadratureRule,
    bquad: BoundaryRule,
) -> GalerkinSystem:
    """Stiffness ``a(a_i, a_j)`` and load ``l(a_j)`` by quadrature."""
    problem.check()
    d = points.dim
    dom = tabulate(points, quad.nodes, cfg, h, deriv_order=1)
    bnd = tabulate(points, bquad.nodes, cfg, h, deriv_order=0)
    wq = quad.weights
    kap = problem.K(quad.nodes)
    S = sp.csr_matrix((len(points), len(points)))
    for i in range(d):
        for j in range(d):
            kij = wq * kap[:, i, j]
            if np.any(kij):
                S = S + dom.grads[i].T @ sp.diags(kij) @ dom.grads[j]
    S = S + dom.values.T @ sp.diags(wq * problem.c(quad.nodes)) @ dom.values
    wb = bquad.weights * problem.b(bquad.nodes, bquad.normals)
    S = S + bnd.values.T @ sp.diags(wb) @ bnd.values
    S = sp.csr_matrix(S)
    # the triple products are symmetric up to rounding; mirror the upper part
    upper = sp.triu(S, k=1)
    S = sp.csr_matrix(upper + upper.T + sp.diags(S.diagonal()))
    S.sort_indices()
    load = dom.values.T @ (wq * problem.f(quad.nodes)) + bnd.values.T @ (
        bquad.weights * problem.g(bquad.nodes, bquad.normals)
    )
    return GalerkinSystem(S, np.asarray(load), points, cfg, h, quad, bquad, dom, bnd)


@dataclass
class SolveResult:
    coefficients: np.ndarray
    residual: float
    iterations: int
    ritz_min: float | None
    ritz_max: float | None
    method: str


def pcg(A, b: np.ndarray, rtol: float = 1e-10, maxiter: int | None = None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, relative_residual, iterations, (ritz_min, ritz_max))`` where
    the Ritz values come from the Lanczos tridiagonal implied by the CG
    coefficients (for the preconditioned operator).
    """
    n = b.size
    maxiter = maxiter or 10 * n
    dinv = 1.0 / A.diagonal()
    if np.any(~np.isfinite(dinv)) or np.any(dinv <= 0):
        raise SolverError("non-positive diagonal", np.inf, np.inf)
    x = np.zeros(n)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, 0.0, 0, (None, None)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    alphas, betas = [], []
    it = 0
    while it < maxiter:
        it += 1
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite", np.linalg.norm(r) / bnorm, np.inf)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        alphas.append(alpha)
        if np.linalg.norm(r) <= rtol * bnorm:
            # the recursive residual drifts; confirm with the true one
            r = b - A @ x
            if np.linalg.norm(r) <= rtol * bnorm:
                break
        z = dinv * r
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    res = float(np.linalg.norm(b - A @ x) / bnorm)
    k = len(alphas)
    diag = np.array([1.0 / alphas[i] + (betas[i - 1] / alphas[i - 1] if i else 0.0) for i in range(k)])
    off = np.array([math.sqrt(betas[i]) / alphas[i] for i in range(k - 1)])
    ritz = eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    return x, res, it, (float(ritz.min()), float(ritz.max()))


def solve(system: GalerkinSystem, method: str = "cg", rtol: float = 1e-10, maxiter: int | None = None) -> SolveResult:
    """Solve the SPD Galerkin system; ``method`` is ``"cg"`` or ``"direct"``."""
    A, b = system.stiffness, system.load
    if method == "direct":
        x = spla.spsolve(A.tocsc(), b)
        res = float(np.linalg.norm(b - A @ x) / np.linalg.norm(b))
        out = SolveResult(x, res, 0, None, None, method)
    elif method == "cg":
        x, res, it, (lo, hi) = pcg(A, b, rtol, maxiter)
        out = SolveResult(x, res, it, lo, hi, method)
        if res > rtol:
            cond = hi / lo if lo else np.inf
            raise SolverError(f"CG did not converge in {it} iterations", res, cond)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    system.coefficients = out.coefficients
    return out


# -- manufactured problems ------------------------------------------------


@dataclass(frozen=True)
class SinCos:
    """``u = sin(pi x1) cos(pi x2)`` in two dimensions."""

    def u(self, x):
        return np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])

    def grad(self, x):
        s0, c0 = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
        s1, c1 = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
        return np.stack([np.pi * c0 * c1, -np.pi * s0 * s1], axis=-1)

    def laplacian(self, x):
        return -2.0 * np.pi**2 * self.u(x)


EXACT_SOLUTIONS = {"sincos": SinCos}


def _const(value):
    return lambda x, *normals: np.full(np.atleast_2d(x).shape[0], float(value))


def _scaled_identity(kappa):
    def K(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(float(kappa) * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy()

    return K


# Named coefficient fields; each takes one scalar parameter.
COEFFICIENTS = {
    "K": {"identity_K": lambda v=1.0: _scaled_identity(1.0), "scaled_identity_K": _scaled_identity},
    "c": {"constant_c": _const, "zero_c": lambda v=0.0: _const(0.0)},
    "b": {"constant_b": _const, "zero_b": lambda v=0.0: _const(0.0)},
}


def manufactured_problem(exact, domain: DomainBox, kappa: float = 1.0, c: float = 1.0, b: float = 1.0) -> EllipticProblem:
    """Problem with constant ``K = kappa I``, ``c``, ``b`` whose solution is ``exact``.

    ``f = -kappa lap u + c u`` and ``g = kappa du/dn + b u``.
    """

    def f(x):
        return -kappa * exact.laplacian(x) + c * exact.u(x)

    def g(x, normals):
        return kappa * np.einsum("ij,ij->i", exact.grad(x), normals) + b * exact.u(x)

    return EllipticProblem(_scaled_identity(kappa), _const(c), _const(b), f, g, domain)


def problem_from_registry(names: dict, domain: DomainBox):
    """Build ``(problem, exact)`` from names like ``{"K": "identity_K", ...}``."""
    try:
        exact = EXACT_SOLUTIONS[names.get("exact", "sincos")]()
        kap = names.get("K", "identity_K")
        K_factory = COEFFICIENTS["K"][kap]
        c_factory = COEFFICIENTS["c"][names.get("c", "constant_c")]
        b_factory = COEFFICIENTS["b"][names.get("b", "constant_b")]
    except KeyError as exc:
        raise ProblemError(f"unknown coefficient registry key {exc.args[0]!r}") from None
    kappa = 1.0 if kap == "identity_K" else float(names.get("kappa", 1.0))
    cval = 0.0 if names.get("c") == "zero_c" else float(names.get("c_value", 1.0))
    bval = 0.0 if names.get("b") == "zero_b" else float(names.get("b_value", 1.0))
    problem = manufactured_problem(exact, domain, kappa, cval, bval)
    problem.K, problem.c, problem.b = K_factory(kappa), c_factory(cval), b_factory(bval)
    return problem, exact


# -- convergence ----------------------------------------------------------


@dataclass
class GalerkinRow:
    h: float
    n_points: int
    l2_error: float
    h1_error: float
    residual: float
    symmetry: float
    ritz_min: float | None
    iterations: int
    orthogonality: float


@dataclass
class GalerkinReport:
    config: dict
    rows: list
    # (system, exact) of the finest level; not serialized
    finest: tuple | None = field(default=None, repr=False, compare=False)

    def orders(self, key: str = "h1_error") -> list:
        out = [None]
        for a, b in zip(self.rows, self.rows[1:]):
            out.append(math.log2(getattr(a, key) / getattr(b, key)))
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rows": [asdict(r) for r in self.rows],
            "orders_h1": self.orders("h1_error"),
            "orders_l2": self.orders("l2_error"),
        }


def sobolev_errors(system: GalerkinSystem, exact) -> tuple[float, float]:
    """``(L2, W_2^1)`` errors of the discrete solution on the domain rule."""
    coef = system.coefficients
    tab = system.domain_tables
    nodes, w = system.quad.nodes, system.quad.weights
    e0 = tab.values @ coef - exact.u(nodes)
    g = exact.grad(nodes)
    e1 = sum((tab.grads[i] @ coef - g[:, i]) ** 2 for i in range(nodes.shape[1]))
    l2 = math.sqrt(float(w @ (e0 * e0)))
    return l2, math.sqrt(l2 * l2 + float(w @ e1))


def orthogonality_defect(system: GalerkinSystem, indices) -> np.ndarray:
    """``|a_h(u_N, a_j) - l_h(a_j)|`` for the selected test functions."""
    r = system.stiffness @ system.coefficients - system.load
    return np.abs(r[np.asarray(indices)])


@dataclass
class GalerkinStudy:
    m: int = 2
    h_chain: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125, 0.00625])
    quad_per_cell: int = 6
    weight_kind: str = WeightKind.WENDLAND_C4.value
    delta_factor: float | None = None
    problem: dict = field(default_factory=lambda: {"exact": "sincos", "K": "identity_K", "c": "constant_c", "b": "constant_b"})
    lower: float = -0.5
    upper: float = 0.5
    solver: str = "cg"
    rtol: float = 1e-10

    def __post_init__(self):
        self.h_chain = [float(h) for h in self.h_chain]
        if not self.h_chain or any(h <= 0 for h in self.h_chain):
            raise ProblemError("h_chain must be non-empty and positive")
        for a, b in zip(self.h_chain, self.h_chain[1:]):
            if abs(a / b - 2.0) > 1e-9:
                raise ProblemError("h_chain must halve")
        if self.solver not in ("cg", "direct"):
            raise ProblemError(f"unknown solver {self.solver!r}")


def galerkin_level(study: GalerkinStudy, h: float, seed: int = 0):
    box = DomainBox.cube(study.lower, study.upper, 2)
    problem, exact = problem_from_registry(study.problem, box)
    pts = generate_regular_grid(box, h)
    factor = study.delta_factor if study.delta_factor is not None else 2.0 * study.m
    cfg = MLSConfig(study.m, WeightKind(study.weight_kind), delta=factor * h)
    cells = int(round((study.upper - study.lower) / h))
    quad = gauss_legendre_box(box, study.quad_per_cell, cells)
    bquad = box_boundary_rule(box, study.quad_per_cell, cells)
    system = assemble(problem, pts, cfg, h * math.sqrt(2) / 2, quad, bquad)
    result = solve(system, study.solver, study.rtol)
    return system, result, exact


def galerkin_convergence_study(study: GalerkinStudy) -> GalerkinReport:
    rows = []
    rng = np.random.default_rng(0)
    for h in study.h_chain:
        t0 = time.perf_counter()
        system, result, exact = galerkin_level(study, h)
        l2, h1 = sobolev_errors(system, exact)
        picks = rng.choice(len(system.points), size=min(20, len(system.points)), replace=False)
        ortho = float(orthogonality_defect(system, picks).max() / np.linalg.norm(system.load))
        rows.append(
            GalerkinRow(h, len(system.points), l2, h1, result.residual, system.symmetry_error(),
                        result.ritz_min, result.iterations, ortho)
        )
        log.info("galerkin h=%g N=%d H1=%.3e L2=%.3e (%.1fs)", h, len(system.points), h1, l2, time.perf_counter() - t0)
    return GalerkinReport(asdict(study), rows, (system, exact))
