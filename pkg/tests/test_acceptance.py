"""Acceptance criteria 1-9, each at its stated tolerance with one PASS/FAIL line."""

import math
import time

import numpy as np
from conftest import record_acceptance
from oracles import fd_shape_derivative, random_config, wls_shape_values

from mlsapprox.approximation import Polynomial, evaluate_batch, sample_data
from mlsapprox.basis import multi_indices
from mlsapprox.geometry import (
    DomainBox,
    PointSet,
    generate_regular_grid,
    neighbors_in_ball,
    probe_lattice,
    separation_distance,
)
from mlsapprox.mls import BasisMode, MLSConfig, shape_functions, stability_report
from mlsapprox.quadrature import gauss_legendre

SQUARE = DomainBox.cube(-0.5, 0.5, 2)
CHAIN = [0.1, 0.05, 0.025, 0.0125]


def fmt(orders):
    return "/".join(f"{o:.2f}" for o in orders)


def column(rep, q, beta):
    return [rep.order(q, beta, i) for i in range(1, len(rep.rows))]


def check_bands(rep, bands):
    ok, parts = True, []
    for (q, beta), (lo, hi) in bands.items():
        orders = column(rep, q, beta)
        good = all(lo <= o <= hi for o in orders)
        ok &= good
        parts.append(f"L{q}{beta}={fmt(orders)} in [{lo},{hi}]")
    return ok, parts


def test_ac1_radial15_orders(radial15_report):
    rep = radial15_report
    ok, parts = check_bands(
        rep,
        {
            ("2", (0, 0)): (2.35, 2.75),
            ("2", (1, 0)): (1.35, 1.65),
            ("inf", (0, 0)): (1.35, 1.65),
            ("inf", (1, 0)): (0.35, 0.75),
        },
    )
    seconds = sum(r.seconds for r in rep.rows)
    ok &= seconds <= 600
    record_acceptance("AC1", ok, "; ".join(parts) + f"; {seconds:.0f}s")
    assert ok


def test_ac2_radial3_orders(radial3_report):
    rep = radial3_report
    ok, parts = check_bands(
        rep,
        {
            ("2", (0, 0)): (3.6, 4.1),
            ("2", (1, 0)): (2.8, 3.2),
            ("2", (2, 0)): (1.8, 2.2),
            ("inf", (0, 0)): (2.8, 3.2),
            ("inf", (1, 0)): (1.8, 2.2),
            ("inf", (2, 0)): (0.85, 1.15),
        },
    )
    seconds = sum(r.seconds for r in rep.rows)
    ok &= seconds <= 900
    record_acceptance("AC2", ok, "; ".join(parts) + f"; {seconds:.0f}s")
    assert ok


def test_ac3_polynomial_reproduction():
    rng = np.random.default_rng(2024)
    worst_val, worst_der = 0.0, 0.0
    t0 = time.perf_counter()
    for d in (1, 2):
        box = DomainBox.cube(-0.5, 0.5, d)
        spacing = 0.05 if d == 1 else 0.1
        pts = generate_regular_grid(box, spacing)
        h = spacing * math.sqrt(d) / 2
        x = rng.uniform(-0.5, 0.5, (200, d))
        for m in (0, 1, 2, 3):
            cfg = MLSConfig(m, delta=max(2 * m, 1.5) * spacing)
            betas = multi_indices(min(m, 2), d)
            for alpha in multi_indices(m, d):
                u = Polynomial({alpha: 1.0})
                got = evaluate_batch(pts, sample_data(pts, u), x, cfg, h, betas)
                for beta in betas:
                    err = np.abs(got[beta] - u(x, beta)).max()
                    if sum(beta) == 0:
                        worst_val = max(worst_val, err)
                    else:
                        worst_der = max(worst_der, err / (1e-8 * h ** -sum(beta)))
    ok = worst_val <= 1e-10 and worst_der <= 1.0
    record_acceptance(
        "AC3", ok, f"max value error {worst_val:.2e} (<=1e-10); max derivative error / (1e-8 h^-|b|) {worst_der:.2e} (<=1); {time.perf_counter() - t0:.1f}s"
    )
    assert ok


def test_ac4_derivative_engine_vs_finite_differences():
    rng = np.random.default_rng(4)
    worst = {1: 0.0, 2: 0.0}
    for k in range(50):
        pts = random_config(rng, 80)
        m = 1 + k % 3
        h = 0.1
        cfg = MLSConfig(m, delta=0.45)
        x = rng.uniform(0.3, 0.7, 2)
        bundle = shape_functions(pts, x, cfg, h, deriv_order=2)
        for beta in [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]:
            order = sum(beta)
            step = (1e-5 if order == 1 else 1e-4) * h
            exact = bundle.dense(len(pts), beta)
            fd = fd_shape_derivative(pts, x, cfg, h, beta, step)
            worst[order] = max(worst[order], np.abs(exact - fd).max() / np.abs(exact).max())
    ok = worst[1] <= 5e-6 and worst[2] <= 5e-4
    record_acceptance("AC4", ok, f"|b|=1 rel {worst[1]:.2e} (<=5e-6); |b|=2 rel {worst[2]:.2e} (<=5e-4)")
    assert ok


def test_ac5_shape_functions_vs_weighted_least_squares():
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(20):
        m = k % 4
        pts = random_config(rng, 50)
        delta = 0.45
        x = rng.uniform(0.3, 0.7, 2)
        got = shape_functions(pts, x, MLSConfig(m, delta=delta), 0.1).dense(len(pts))
        worst = max(worst, np.abs(got - wls_shape_values(pts.points, x, m, delta)).max())
    ok = worst <= 1e-9
    record_acceptance("AC5", ok, f"max |a_j - oracle| {worst:.2e} (<=1e-9)")
    assert ok


def _stability_series(mode, deriv_order):
    sample = probe_lattice(SQUARE, 40)
    out = []
    for s in CHAIN:
        pts = generate_regular_grid(SQUARE, s)
        cfg = MLSConfig(2, delta=4 * s, basis_mode=mode)
        out.append((s, stability_report(pts, cfg, s * math.sqrt(2) / 2, sample, deriv_order=deriv_order)))
    return out


def test_ac6_lambda_min_stability():
    shifted = [r.min_lambda_min for _, r in _stability_series(BasisMode.SHIFTED_SCALED, 0)]
    raw = [r.min_lambda_min for _, r in _stability_series(BasisMode.UNSCALED_GLOBAL, 0)]
    spread = max(shifted) / min(shifted)
    decreasing = all(a > b for a, b in zip(raw, raw[1:]))
    ok = spread <= 4 and decreasing
    record_acceptance(
        "AC6", ok, f"shifted spread {spread:.3f} (<=4); unscaled {', '.join(f'{v:.2e}' for v in raw)} strictly decreasing={decreasing}"
    )
    assert ok


def test_ac7_lebesgue_scaling():
    series = _stability_series(BasisMode.SHIFTED_SCALED, 2)
    ok, parts = True, []
    for beta, factor in (((0, 0), 1.25), ((1, 0), 1.5), ((2, 0), 2.0)):
        vals = [r.max_lebesgue(beta) * s ** sum(beta) for s, r in series]
        spread = max(vals) / min(vals)
        ok &= spread <= factor
        parts.append(f"L{beta}*h^{sum(beta)} spread {spread:.3f} (<={factor})")
    record_acceptance("AC7", ok, "; ".join(parts))
    assert ok


def test_ac8_galerkin(galerkin_report):
    rep = galerkin_report
    orders = rep.orders("h1_error")
    last = orders[-1]
    residual = max(r.residual for r in rep.rows)
    symmetry = max(r.symmetry for r in rep.rows)
    ok = 1.7 <= last <= 2.3 and residual <= 1e-10 and symmetry <= 1e-12
    record_acceptance(
        "AC8",
        ok,
        f"W21 orders {fmt(orders[1:])}, last {last:.2f} in [1.7,2.3]; residual {residual:.1e} (<=1e-10); symmetry {symmetry:.1e} (<=1e-12)",
    )
    assert ok


def test_ac9_geometry_oracles():
    rng = np.random.default_rng(9)
    sep_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 150))
        pts = rng.uniform(-0.5, 0.5, (n, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d[np.diag_indices(n)] = np.inf
        sep_ok &= separation_distance(PointSet(pts, SQUARE)) == 0.5 * d.min()
    nb_ok = True
    for _ in range(100):
        pts = PointSet(rng.uniform(-0.5, 0.5, (int(rng.integers(5, 200)), 2)), SQUARE)
        x = rng.uniform(-0.6, 0.6, 2)
        r = rng.uniform(0.01, 0.5)
        brute = np.flatnonzero(np.linalg.norm(pts.points - x, axis=1) <= r)
        nb_ok &= neighbors_in_ball(pts, x, r).tolist() == brute.tolist()
    xq, wq = gauss_legendre(5)
    coeffs = rng.normal(size=10)
    p = np.polynomial.Polynomial(coeffs)
    exact = p.integ()(1.0) - p.integ()(-1.0)
    rel = abs(wq @ p(xq) - exact) / abs(exact)
    ok = sep_ok and nb_ok and rel <= 1e-13
    record_acceptance("AC9", ok, f"separation==brute {sep_ok}; neighbors==brute {nb_ok}; GL5 degree-9 rel {rel:.1e} (<=1e-13)")
    assert ok
