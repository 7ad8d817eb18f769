"""Command-line entry point: ``mlsapprox {converge,stability,galerkin,geom}``.

Exit codes: 0 success, 2 configuration error, 3 numerical or coverage failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .approximation import (
    StudyConfig,
    StudyConfigError,
    evaluate_batch,
    run_convergence_study,
)
from .galerkin import (
    GalerkinStudy,
    ProblemError,
    SolverError,
    galerkin_convergence_study,
)
from .geometry import (
    DomainBox,
    GeometryError,
    PointSet,
    generate_regular_grid,
    probe_lattice,
    quality_metrics,
)
from .mls import BasisMode, MLSConfig, MLSError, stability_report
from .weights import WeightKind

log = logging.getLogger("mlsapprox")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    """Read a TOML or JSON study config; bare names fall back to the bundled configs."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("mlsapprox") / "configs" / path
        if not bundled.is_file():
            raise ConfigError(f"config file not found: {path}")
        text, suffix = bundled.read_text(), Path(path).suffix
    else:
        text, suffix = p.read_text(), p.suffix
    try:
        if suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _take(doc: dict, allowed: dict) -> dict:
    """Rename config keys to field names, rejecting unknown keys."""
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {allowed[k]: v for k, v in doc.items()}


# -- converge -------------------------------------------------------------

CONVERGE_KEYS = {
    "lambda": "lam",
    "m": "m",
    "h_chain": "h_chain",
    "n_quad_per_axis": "n_quad_per_axis",
    "probe_spacing": "probe_spacing",
    "weight_kind": "weight_kind",
    "delta_factor": "delta_factor",
    "betas": "betas",
    "lower": "lower",
    "upper": "upper",
}


def cmd_converge(doc: dict, args) -> int:
    kwargs = _take(doc, CONVERGE_KEYS)
    if "lam" not in kwargs or "m" not in kwargs:
        raise ConfigError("converge config needs 'lambda' and 'm'")
    study = StudyConfig(**kwargs, probe_resolution=args.probe_resolution)
    report = run_convergence_study(study, threads=args.threads)
    prefix = args.out
    if args.format == "csv":
        _write(f"{prefix}_orders.csv", report.orders_csv())
        _write(f"{prefix}_errors.csv", report.errors_csv())
        _write(f"{prefix}_diagnostics.json", report.to_json())
    else:
        _write(f"{prefix}_report.json", report.to_json())
    sys.stdout.write(report.orders_csv())
    return EXIT_OK


# -- stability ------------------------------------------------------------

STABILITY_KEYS = {
    "m": "m",
    "h_chain": "h_chain",
    "weight_kind": "weight_kind",
    "delta_factor": "delta_factor",
    "sample_resolution": "sample_resolution",
    "deriv_order": "deriv_order",
    "lower": "lower",
    "upper": "upper",
}


@dataclasses.dataclass
class StabilityStudy:
    m: int = 2
    h_chain: list = dataclasses.field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    weight_kind: str = "wendland_c4"
    delta_factor: float | None = None
    sample_resolution: int = 40
    deriv_order: int = 2
    lower: float = -0.5
    upper: float = 0.5

    def __post_init__(self):
        StudyConfig(lam=3.0, m=self.m, h_chain=self.h_chain, weight_kind=self.weight_kind)
        if self.deriv_order not in (0, 1, 2):
            raise StudyConfigError("deriv_order must be 0, 1 or 2")


def run_stability(study: StabilityStudy) -> list[dict]:
    """lambda_min and Lebesgue sums over the h chain in both basis modes."""
    box = DomainBox.cube(study.lower, study.upper, 2)
    sample = probe_lattice(box, study.sample_resolution)
    factor = study.delta_factor if study.delta_factor is not None else 2.0 * study.m
    betas = [(0, 0), (1, 0), (2, 0)][: study.deriv_order + 1]
    out = []
    for mode in BasisMode:
        order = study.deriv_order if mode is BasisMode.SHIFTED_SCALED else 0
        for h in study.h_chain:
            pts = generate_regular_grid(box, h)
            cfg = MLSConfig(study.m, WeightKind(study.weight_kind), delta=factor * h, basis_mode=mode)
            rep = stability_report(pts, cfg, h * math.sqrt(2) / 2, sample, deriv_order=order)
            rec = {"mode": mode.value, "h": h, "lambda_min": rep.min_lambda_min, "n_shifted": rep.n_shifted}
            for b in betas[: order + 1]:
                key = "".join(map(str, b))
                rec[f"L_{key}"] = rep.max_lebesgue(b)
                rec[f"L_{key}_scaled"] = rep.max_lebesgue(b) * h ** sum(b)
            out.append(rec)
    return out


def cmd_stability(doc: dict, args) -> int:
    study = StabilityStudy(**_take(doc, STABILITY_KEYS))
    records = run_stability(study)
    if args.format == "csv":
        keys = list(dict.fromkeys(k for r in records for k in r))
        lines = [",".join(keys)]
        for r in records:
            lines.append(",".join(_num(r.get(k, "")) for k in keys))
        _write(f"{args.out}_stability.csv", "\n".join(lines) + "\n")
    _write(f"{args.out}_stability.json", json.dumps({"config": dataclasses.asdict(study), "levels": records}, indent=2))
    for r in records:
        print(r["mode"], r["h"], f"lambda_min={r['lambda_min']:.6g}")
    return EXIT_OK


# -- galerkin -------------------------------------------------------------

GALERKIN_KEYS = {
    "m": "m",
    "h_chain": "h_chain",
    "quad_per_cell": "quad_per_cell",
    "weight_kind": "weight_kind",
    "delta_factor": "delta_factor",
    "problem": "problem",
    "solver": "solver",
    "rtol": "rtol",
    "lower": "lower",
    "upper": "upper",
    "field_resolution": "field_resolution",
}
PROBLEM_KEYS = {"exact", "K", "c", "b", "kappa", "c_value", "b_value"}


def cmd_galerkin(doc: dict, args) -> int:
    kwargs = _take(doc, GALERKIN_KEYS)
    field_res = int(kwargs.pop("field_resolution", 20))
    problem = kwargs.get("problem", {})
    bad = sorted(set(problem) - PROBLEM_KEYS)
    if bad:
        raise ConfigError(f"unknown problem keys: {', '.join(bad)}")
    if "problem" in kwargs:
        kwargs["problem"] = {**GalerkinStudy().problem, **problem}
    study = GalerkinStudy(**kwargs)
    report = galerkin_convergence_study(study)
    doc_out = report.to_dict()
    if args.format == "csv":
        cols = ["h", "n_points", "l2_error", "h1_error", "order_l2", "order_h1", "residual", "symmetry", "ritz_min", "iterations"]
        lines = [",".join(cols)]
        for r, o1, o0 in zip(report.rows, report.orders("h1_error"), report.orders("l2_error")):
            rec = dataclasses.asdict(r) | {"order_h1": o1, "order_l2": o0}
            lines.append(",".join(_num(rec[c]) for c in cols))
        _write(f"{args.out}_galerkin.csv", "\n".join(lines) + "\n")
    _write(f"{args.out}_galerkin.json", json.dumps(doc_out, indent=2))
    # finest level: coefficients and the sampled field
    system, exact = report.finest
    box = DomainBox.cube(study.lower, study.upper, 2)
    coef_rows = np.column_stack([system.points.points, system.coefficients])
    _write_rows(f"{args.out}_coefficients.csv", ["x", "y", "coefficient"], coef_rows)
    probes = probe_lattice(box, field_res)
    vals = evaluate_batch(system.points, system.coefficients, probes, system.cfg, system.h, [(0, 0)])[(0, 0)]
    _write_rows(f"{args.out}_field.csv", ["x", "y", "u_N", "u_exact"], np.column_stack([probes, vals, exact.u(probes)]))
    for r, o in zip(report.rows, report.orders()):
        print(f"h={r.h} N={r.n_points} W21={r.h1_error:.6e} order={'-' if o is None else f'{o:.2f}'}")
    return EXIT_OK


# -- geom -----------------------------------------------------------------

GEOM_KEYS = {"lower": "lower", "upper": "upper", "dim": "dim", "spacing": "spacing", "points_file": "points_file"}


def cmd_geom(doc: dict, args) -> int:
    kw = _take(doc, GEOM_KEYS)
    dim = int(kw.get("dim", 2))
    box = DomainBox.cube(kw.get("lower", -0.5), kw.get("upper", 0.5), dim)
    if "points_file" in kw:
        pts = PointSet.load(kw["points_file"], box)
    elif "spacing" in kw:
        pts = generate_regular_grid(box, float(kw["spacing"]))
    else:
        raise ConfigError("geom config needs 'spacing' or 'points_file'")
    metrics = quality_metrics(pts, args.probe_resolution)
    suffix = ".json" if args.format == "json" else ".csv"
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pts.save(f"{args.out}_points{suffix}")
    _write(f"{args.out}_metrics.json", json.dumps(dataclasses.asdict(metrics) | {"n_points": len(pts)}, indent=2))
    print(json.dumps(dataclasses.asdict(metrics)))
    return EXIT_OK


# -- plumbing -------------------------------------------------------------


def _num(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return repr(v)  # shortest round-trip form
    return str(v)


def _write(path: str, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _write_rows(path: str, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" for v in row])


COMMANDS = {"converge": cmd_converge, "stability": cmd_stability, "galerkin": cmd_galerkin, "geom": cmd_geom}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlsapprox", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="TOML or JSON study config (or a bundled name such as radial15.toml)")
    ap.add_argument("--out", default="out/run", help="output path prefix")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for node evaluation")
    ap.add_argument("--probe-resolution", type=int, default=400, help="probe lattice size for fill distance")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 1 or args.probe_resolution < 1:
            raise ConfigError("--threads and --probe-resolution must be positive")
        doc = load_config(args.config)
        return COMMANDS[args.command](doc, args)
    except (ConfigError, StudyConfigError, ProblemError, GeometryError, TypeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MLSError, SolverError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
