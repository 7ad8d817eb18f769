"""Evaluation of MLS approximants, error norms and convergence studies."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import multi_indices
from .geometry import (
    DomainBox,
    PointSet,
    fill_distance,
    generate_regular_grid,
    probe_lattice,
)
from .mls import MLSConfig, iter_shape_batches, shape_batch
from .quadrature import QuadratureRule, gauss_legendre_box
from .weights import WeightKind

log = logging.getLogger(__name__)

CHUNK = 2048


class StudyConfigError(ValueError):
    pass


def sample_data(points: PointSet, u) -> np.ndarray:
    """Data vector ``u(x_j)`` aligned with the point ordering."""
    values = np.asarray(u(points.points), dtype=float).reshape(-1)
    if values.size != len(points):
        raise ValueError("data length must equal the number of points")
    if not np.all(np.isfinite(values)):
        raise ValueError("data must be finite")
    return values


def evaluate_batch(points: PointSet, data, x, cfg: MLSConfig, h: float, betas, threads: int = 1) -> dict:
    """``D^beta s_{u,X}`` at every row of ``x`` for each requested ``beta``."""
    data = np.asarray(data, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    betas = [tuple(b) for b in betas]
    out = {b: np.empty(x.shape[0]) for b in betas}
    for sl, res in _batches(points, x, cfg, h, betas, threads):
        for b in betas:
            out[b][sl] = res.apply(data, b)
    return out


def evaluate(points: PointSet, data, x, cfg: MLSConfig, h: float, beta=None) -> float:
    """``sum_j D^beta a_j(x) u(x_j)`` at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    beta = tuple(beta) if beta is not None else (0,) * points.dim
    if sum(beta) > 2:
        raise ValueError("|beta| <= 2 required")
    res = shape_batch(points, x, cfg, h, betas=[beta])
    return float(res.apply(np.asarray(data, dtype=float), beta)[0])


def _batches(points, x, cfg, h, betas, threads, **kw):
    if threads <= 1:
        yield from iter_shape_batches(points, x, cfg, h, chunk=CHUNK, betas=betas, **kw)
        return
    starts = range(0, x.shape[0], CHUNK)

    def work(start):
        sl = slice(start, min(start + CHUNK, x.shape[0]))
        return sl, shape_batch(points, x[sl], cfg, h, betas=betas, **kw)

    with ThreadPoolExecutor(threads) as pool:
        yield from pool.map(work, starts)


# -- reference functions --------------------------------------------------


class RadialPower:
    """``u(x) = ||x||**lam`` with closed-form derivatives up to order 2.

    At the origin a derivative of order ``k`` is returned as its limit when
    that exists (``lam > k``, or ``lam == 2`` for the Hessian) and as NaN
    otherwise, marking the node as singular.
    """

    def __init__(self, lam: float):
        self.lam = float(lam)

    def __call__(self, x, beta=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x.shape[1]
        beta = tuple(beta) if beta is not None else (0,) * d
        k = sum(beta)
        lam = self.lam
        r2 = np.einsum("ij,ij->i", x, x)
        r = np.sqrt(r2)
        origin = r2 == 0
        rs = np.where(origin, 1.0, r)
        if k == 0:
            out = rs**lam
        elif k == 1:
            i = beta.index(1)
            out = lam * rs ** (lam - 2) * x[:, i]
        elif k == 2:
            ij = [a for a, e in enumerate(beta) for _ in range(e)]
            i, j = ij
            out = lam * rs ** (lam - 2) * (i == j) + lam * (lam - 2) * rs ** (lam - 4) * x[:, i] * x[:, j]
        else:
            raise ValueError("derivatives above order 2 are not provided")
        if k == 0:
            at_origin = 0.0 if lam > 0 else np.nan
        elif lam > k:
            at_origin = 0.0
        elif k == 2 and lam == 2:
            at_origin = 2.0 * (beta.count(2) == 1)
        else:
            at_origin = np.nan
        return np.where(origin, at_origin, out)


class Polynomial:
    """Sum of monomials ``coef * x**alpha``; used for reproduction checks."""

    def __init__(self, terms: dict):
        self.terms = {tuple(a): float(c) for a, c in terms.items()}

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def __call__(self, x, beta=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        beta = tuple(beta) if beta is not None else (0,) * x.shape[1]
        out = np.zeros(x.shape[0])
        for alpha, c in self.terms.items():
            if any(b > a for a, b in zip(alpha, beta)):
                continue
            coef = c * math.prod(math.factorial(a) // math.factorial(a - b) for a, b in zip(alpha, beta))
            out += coef * np.prod(x ** np.array([a - b for a, b in zip(alpha, beta)]), axis=1)
        return out


# -- error norms ----------------------------------------------------------


@dataclass
class ErrorNorms:
    """Errors keyed by ``(q, beta)`` with ``q`` in ``{"2", "inf"}``."""

    errors: dict
    skipped: dict
    lambda_min: float
    lebesgue_max: dict
    n_shifted: int = 0


def error_norms(
    points: PointSet,
    data,
    reference,
    cfg: MLSConfig,
    h: float,
    betas,
    l2_rule: QuadratureRule | None = None,
    probe_nodes: np.ndarray | None = None,
    threads: int = 1,
) -> ErrorNorms:
    """Discrete L2 (quadrature) and L-infinity (probe mesh) errors of ``D^beta s``.

    Nodes where the reference derivative is NaN are skipped and counted.
    Stability diagnostics are collected from the same shape evaluations.
    """
    data = np.asarray(data, dtype=float)
    betas = [tuple(b) for b in betas]
    errors, skipped = {}, {}
    lam_min = np.inf
    leb = {b: 0.0 for b in betas}
    n_shifted = 0
    for q, nodes, wts in (
        ("2", None if l2_rule is None else l2_rule.nodes, None if l2_rule is None else l2_rule.weights),
        ("inf", probe_nodes, None),
    ):
        if nodes is None:
            continue
        acc = {b: [] for b in betas}
        skip = {b: 0 for b in betas}
        for sl, res in _batches(points, nodes, cfg, h, betas, threads, want_lambda_min=True):
            lam_min = min(lam_min, float(res.lambda_min.min()))
            n_shifted += int(res.shifted.sum())
            for b in betas:
                leb[b] = max(leb[b], float(res.lebesgue(b).max()))
                diff = res.apply(data, b) - reference(nodes[sl], b)
                bad = np.isnan(diff)
                skip[b] += int(bad.sum())
                diff = np.where(bad, 0.0, diff)
                if q == "2":
                    acc[b].append(float(np.dot(wts[sl], diff * diff)))
                else:
                    acc[b].append(float(np.abs(diff).max()))
        for b in betas:
            # fixed-order reduction keeps serial and threaded runs identical
            errors[(q, b)] = math.sqrt(math.fsum(acc[b])) if q == "2" else max(acc[b])
            skipped[(q, b)] = skip[b]
    return ErrorNorms(errors, skipped, lam_min, leb, n_shifted)


# -- convergence study ----------------------------------------------------


def theory_order(lam: float, m: int, d: int, beta, q: str) -> float:
    """Predicted rate for ``||x||**lam`` measured in ``W_q^{|beta|}`` from ``W_2`` smoothness."""
    smooth = min(m + 1.0, lam + d / 2.0)
    return smooth - sum(beta) - (d / 2.0 if q == "inf" else 0.0)


@dataclass
class StudyConfig:
    lam: float
    m: int
    h_chain: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    n_quad_per_axis: int = 200
    probe_spacing: float = 0.005
    weight_kind: str = WeightKind.WENDLAND_C4.value
    delta_factor: float | None = None
    betas: list | None = None
    lower: float = -0.5
    upper: float = 0.5
    dim: int = 2
    probe_resolution: int = 400

    def __post_init__(self):
        self.h_chain = [float(h) for h in self.h_chain]
        if not self.h_chain:
            raise StudyConfigError("h_chain must be non-empty")
        if any(h <= 0 for h in self.h_chain):
            raise StudyConfigError("h_chain entries must be positive")
        for a, b in zip(self.h_chain, self.h_chain[1:]):
            if abs(a / b - 2.0) > 1e-9:
                raise StudyConfigError("h_chain must halve")
        if self.m < 0:
            raise StudyConfigError("m must be >= 0")
        try:
            WeightKind(self.weight_kind)
        except ValueError:
            raise StudyConfigError(f"unknown weight kind {self.weight_kind!r}") from None
        if self.betas is None:
            # |beta| <= 1 when second derivatives of the target are not bounded
            top = 2 if self.lam > 2 else 1
            self.betas = [tuple(i if k == 0 else 0 for k in range(self.dim)) for i in range(top + 1)]
        self.betas = [tuple(int(v) for v in b) for b in self.betas]
        if any(len(b) != self.dim or sum(b) > 2 for b in self.betas):
            raise StudyConfigError("betas must be d-dimensional with |beta| <= 2")
        if self.n_quad_per_axis < 1 or self.probe_spacing <= 0:
            raise StudyConfigError("quadrature size and probe spacing must be positive")

    @property
    def box(self) -> DomainBox:
        return DomainBox.cube(self.lower, self.upper, self.dim)

    def support_factor(self) -> float:
        return self.delta_factor if self.delta_factor is not None else 2.0 * self.m


@dataclass
class LevelRow:
    h: float
    scale: float
    delta: float
    n_points: int
    fill_distance_probe: float
    errors: dict
    skipped: dict
    lambda_min: float
    lebesgue_max: dict
    n_shifted: int
    seconds: float


def _key(q: str, beta) -> str:
    return f"L{q}_a{''.join(str(b) for b in beta)}"


@dataclass
class ConvergenceReport:
    config: dict
    rows: list
    columns: list
    exact_tol: float = 1e-10

    def error_table(self) -> list[dict]:
        return [{"h": r.h, **{_key(q, b): r.errors[(q, b)] for q, b in self.columns}} for r in self.rows]

    def orders(self) -> list[dict]:
        """``log2`` ratios between consecutive rows; ``None`` on the first row, "exact" at rounding level."""
        out = []
        for i, row in enumerate(self.rows):
            rec = {"h": row.h}
            for q, b in self.columns:
                k = _key(q, b)
                if i == 0:
                    rec[k] = None
                    continue
                e0, e1 = self.rows[i - 1].errors[(q, b)], row.errors[(q, b)]
                if max(e0, e1) <= self.exact_tol:
                    rec[k] = "exact"
                else:
                    rec[k] = math.log2(e0 / e1)
            out.append(rec)
        return out

    def order(self, q: str, beta, row: int) -> float | str | None:
        return self.orders()[row][_key(q, tuple(beta))]

    def theory(self) -> dict:
        cfg = self.config
        return {_key(q, b): theory_order(cfg["lam"], cfg["m"], cfg["dim"], b, q) for q, b in self.columns}

    def orders_csv(self) -> str:
        buf = io.StringIO()
        keys = [_key(q, b) for q, b in self.columns]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", *keys])
        for rec in self.orders():
            w.writerow([repr(rec["h"]), *[_fmt_order(rec[k]) for k in keys]])
        th = self.theory()
        w.writerow(["theory", *[f"{th[k]:.2f}" for k in keys]])
        return buf.getvalue()

    def errors_csv(self) -> str:
        buf = io.StringIO()
        keys = [_key(q, b) for q, b in self.columns]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", *keys])
        for rec in self.error_table():
            w.writerow([repr(rec["h"]), *[f"{rec[k]:.17g}" for k in keys]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            d.pop("seconds")  # keeps reports byte-identical across runs
            d["errors"] = {_key(q, b): v for (q, b), v in r.errors.items()}
            d["skipped"] = {_key(q, b): v for (q, b), v in r.skipped.items()}
            d["lebesgue_max"] = {"".join(map(str, b)): v for b, v in r.lebesgue_max.items()}
            rows.append(d)
        return {
            "config": self.config,
            "columns": [[q, list(b)] for q, b in self.columns],
            "rows": rows,
            "orders": self.orders(),
            "theory": self.theory(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> ConvergenceReport:
        columns = [(q, tuple(b)) for q, b in doc["columns"]]
        rows = []
        for d in doc["rows"]:
            d = dict(d, seconds=0.0)
            d["errors"] = {(q, b): d["errors"][_key(q, b)] for q, b in columns}
            d["skipped"] = {(q, b): d["skipped"][_key(q, b)] for q, b in columns}
            d["lebesgue_max"] = {tuple(int(c) for c in k): v for k, v in d["lebesgue_max"].items()}
            rows.append(LevelRow(**d))
        return cls(doc["config"], rows, columns)


def _fmt_order(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{v:.2f}"


def run_convergence_study(cfg: StudyConfig, threads: int = 1) -> ConvergenceReport:
    """Grid sequence study for ``u = ||x||**lam`` with ``delta = 2 m h`` by default.

    ``h`` in the chain is the grid spacing; the MLS basis scale is the
    lattice fill distance ``h * sqrt(d) / 2``.
    """
    box = cfg.box
    ref = RadialPower(cfg.lam)
    rule = gauss_legendre_box(box, cfg.n_quad_per_axis)
    n_probe = int(round((cfg.upper - cfg.lower) / cfg.probe_spacing))
    probes = probe_lattice(box, n_probe)
    columns = [(q, b) for q in ("2", "inf") for b in cfg.betas]
    rows = []
    for h in cfg.h_chain:
        t0 = time.perf_counter()
        pts = generate_regular_grid(box, h)
        scale = h * math.sqrt(cfg.dim) / 2.0
        delta = cfg.support_factor() * h
        mls = MLSConfig(cfg.m, WeightKind(cfg.weight_kind), delta=delta)
        data = sample_data(pts, ref)
        norms = error_norms(pts, data, ref, mls, scale, cfg.betas, rule, probes, threads=threads)
        fd = fill_distance(pts, box, cfg.probe_resolution)
        row = LevelRow(
            h=h,
            scale=scale,
            delta=delta,
            n_points=len(pts),
            fill_distance_probe=fd,
            errors=norms.errors,
            skipped=norms.skipped,
            lambda_min=norms.lambda_min,
            lebesgue_max=norms.lebesgue_max,
            n_shifted=norms.n_shifted,
            seconds=time.perf_counter() - t0,
        )
        log.info("h=%g N=%d errors=%s (%.1fs)", h, len(pts), {_key(*k): v for k, v in row.errors.items()}, row.seconds)
        rows.append(row)
    meta = asdict(cfg)
    meta["betas"] = [list(b) for b in cfg.betas]
    return ConvergenceReport(meta, rows, columns)


def default_betas(order: int, d: int) -> list[tuple[int, ...]]:
    return multi_indices(order, d)
