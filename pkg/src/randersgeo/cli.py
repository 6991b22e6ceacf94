"""Command-line front end: problem files in, reports and traces out.

Problem files are strict JSON with the expression sub-language embedded as
strings; reports go to stdout as JSON, diagnostics to stderr.  Exit codes:
0 for a determinate verdict, 2 when a check is refuted, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import gallery
from .equivalence import (
    Tolerances,
    average_form,
    flatness_check,
    global_verdict,
    support_set,
)
from .geodesic import integrate, write_trace_csv
from .geometry import ChartDomain, ExcludedBall, ExcludedRay, Grid, MetricField, OneFormField
from .randers import Diffeomorphism, RandersMetric, homothety_check, pullback_form_value

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REFUTED = 2

DEFAULT_GRID = 33
DEFAULT_SEED = 42


@dataclass
class Problem:
    name: str
    domain: ChartDomain
    F: RandersMetric
    F_bar: RandersMetric | None
    grid_resolution: int
    tolerances: Tolerances
    seed: int

    def grid(self) -> Grid:
        return Grid.build(self.domain, self.grid_resolution)


# ---------------------------------------------------------------------------
# Problem (de)serialization


def domain_from_dict(spec: dict) -> ChartDomain:
    balls = tuple(
        ExcludedBall(tuple(float(c) for c in b["center"]), float(b["radius"]))
        for b in spec.get("excluded_balls", [])
    )
    rays = tuple(
        ExcludedRay(
            axis=int(r["axis"]) - 1,
            value=float(r["value"]),
            half_axis=int(r["half_axis"]) - 1,
            bound=float(r["bound"]),
            side=r.get("side", "below"),
        )
        for r in spec.get("excluded_rays", [])
    )
    return ChartDomain.box(
        [(float(a), float(b)) for a, b in spec["box"]],
        balls=balls,
        rays=rays,
        margin=spec.get("margin"),
    )


def domain_to_dict(domain: ChartDomain) -> dict:
    out = {"box": [[a, b] for a, b in zip(domain.lower, domain.upper)]}
    if domain.balls:
        out["excluded_balls"] = [
            {"center": list(b.center), "radius": b.radius} for b in domain.balls
        ]
    if domain.rays:
        out["excluded_rays"] = [
            {
                "axis": r.axis + 1,
                "value": r.value,
                "half_axis": r.half_axis + 1,
                "bound": r.bound,
                "side": r.side,
            }
            for r in domain.rays
        ]
    if domain.margin is not None:
        out["margin"] = domain.margin
    return out


def problem_from_dict(spec: dict) -> Problem:
    n = int(spec["dimension"])
    domain = domain_from_dict(spec["domain"])
    if domain.dimension != n:
        raise ValueError("domain box does not match the declared dimension")
    grid_resolution = int(spec.get("grid", DEFAULT_GRID))
    tol_overrides = spec.get("tolerances", {})
    tolerances = Tolerances(**tol_overrides)
    validity_res = min(grid_resolution, 64)

    def metric_pair(g_key, w_key, label):
        g = MetricField(spec[g_key], dimension=n)
        omega = OneFormField(spec[w_key], dimension=n)
        return RandersMetric(
            g, omega, domain, name=label, validity_resolution=validity_res
        )

    name = spec.get("name", "problem")
    f = metric_pair("g", "omega", name)
    f_bar = None
    if "g_bar" in spec or "omega_bar" in spec:
        if not ("g_bar" in spec and "omega_bar" in spec):
            raise ValueError("g_bar and omega_bar must be given together")
        f_bar = metric_pair("g_bar", "omega_bar", f"{name}-bar")
    return Problem(
        name=name,
        domain=domain,
        F=f,
        F_bar=f_bar,
        grid_resolution=grid_resolution,
        tolerances=tolerances,
        seed=int(spec.get("seed", DEFAULT_SEED)),
    )


def problem_to_dict(
    name: str,
    f: RandersMetric,
    f_bar: RandersMetric | None = None,
    grid_resolution: int = DEFAULT_GRID,
    seed: int = DEFAULT_SEED,
) -> dict:
    out = {
        "name": name,
        "dimension": f.domain.dimension,
        "domain": domain_to_dict(f.domain),
        "g": f.g.sources(),
        "omega": f.omega.sources(),
        "grid": grid_resolution,
        "seed": seed,
    }
    if f_bar is not None:
        out["g_bar"] = f_bar.g.sources()
        out["omega_bar"] = f_bar.omega.sources()
    return out


def load_problem(path: str) -> Problem:
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path} is not valid JSON: {exc}") from None
    return problem_from_dict(spec)


def _emit(report: dict, stream=None):
    stream = stream or sys.stdout
    json.dump(report, stream, indent=2, sort_keys=True)
    stream.write("\n")


def _parse_vector(text: str, n: int) -> np.ndarray:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return np.array(parts)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_check(args) -> int:
    problem = load_problem(args.problem)
    if problem.F_bar is None:
        raise ValueError("check needs a second metric (g_bar / omega_bar)")
    grid = problem.grid()
    verdict = global_verdict(
        problem.F,
        problem.F_bar,
        grid,
        mode=args.mode,
        tols=problem.tolerances,
        seed=problem.seed,
    )
    report = verdict.to_dict()
    report["problem"] = problem.name
    report["grid"] = problem.grid_resolution
    report["seed"] = problem.seed
    _emit(report)
    return EXIT_REFUTED if verdict.outcome == "refuted" else EXIT_OK


def cmd_trace(args) -> int:
    problem = load_problem(args.problem)
    n = problem.domain.dimension
    p0 = _parse_vector(getattr(args, "from"), n)
    v0 = _parse_vector(args.dir, n)
    orientation = {"fwd": "forward", "bwd": "backward"}[args.orientation]
    curve = integrate(problem.F, p0, v0, orientation, T=args.T, h=args.h)
    if curve.truncated:
        print(
            f"note: trace left the admissible set after {len(curve) - 1} steps",
            file=sys.stderr,
        )
    if args.out == "-":
        write_trace_csv(curve, problem.F, sys.stdout)
    else:
        write_trace_csv(curve, problem.F, args.out)
        print(f"wrote {len(curve)} samples to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_flat(args) -> int:
    problem = load_problem(args.problem)
    rng = np.random.default_rng(problem.seed)
    report = flatness_check(
        problem.F, problem.grid(), tols=problem.tolerances, rng=rng
    ).to_dict()
    report["problem"] = problem.name
    report["grid"] = problem.grid_resolution
    report["seed"] = problem.seed
    _emit(report)
    return EXIT_OK


def cmd_support(args) -> int:
    problem = load_problem(args.problem)
    ss = support_set(problem.F.omega, problem.grid(), tols=problem.tolerances)
    report = {
        "problem": problem.name,
        "grid": problem.grid_resolution,
        "component_count": ss.count,
        "components": [
            {
                "id": c.id,
                "sample_count": c.sample_count,
                "centroid": c.centroid.tolist(),
            }
            for c in ss.components
        ],
        "tol_zero": ss.tol_zero,
        "field_scale": ss.field_scale,
    }
    _emit(report)
    return EXIT_OK


def cmd_pullback(args) -> int:
    problem = load_problem(args.problem)
    n = problem.domain.dimension
    sources = [s.strip() for s in args.map.split(";")]
    phi = Diffeomorphism.from_sources(sources, n)
    grid = problem.grid()
    samples = [
        p
        for p in grid.admissible_points
        if problem.domain.is_admissible(phi(p))
    ]
    if len(samples) < 2:
        raise ValueError("the map sends nearly every grid point outside the domain")
    is_homothety, const = homothety_check(
        problem.F, phi, samples, tol=problem.tolerances.tol_alg
    )
    report = {
        "problem": problem.name,
        "map": sources,
        "samples": len(samples),
        "is_homothety": bool(is_homothety),
        "const": None if np.isnan(const) else const,
    }
    _emit(report)
    return EXIT_OK


def cmd_average(args) -> int:
    problem = load_problem(args.problem)
    n = problem.domain.dimension
    group = []
    for path in args.group:
        with open(path) as fh:
            sources = json.load(fh)
        group.append(Diffeomorphism.from_sources(sources, n))
    grid = problem.grid()
    averaged, residual = average_form(problem.F.omega, group, grid)
    # invariance of omega - lambda-hat = omega-hat under every group element
    invariance = 0.0
    for phi in group:
        for p in grid.admissible_points:
            defect = np.max(
                np.abs(
                    pullback_form_value_of_avg(averaged, phi, p) - averaged.at(p)
                )
            )
            invariance = max(invariance, float(defect))
    report = {
        "problem": problem.name,
        "group_order": len(group),
        "closedness_residual": residual,
        "invariance_defect": invariance,
        "grid": problem.grid_resolution,
    }
    _emit(report)
    return EXIT_OK


def pullback_form_value_of_avg(averaged, phi, p):
    """phi* omega-hat at p, with omega-hat given by its finite-sum definition."""
    j = phi.jacobian(p)
    return j.T @ averaged.at(phi(p))


def cmd_gallery(args) -> int:
    if args.export is None:
        for gid in gallery.ids():
            print(gid)
        return EXIT_OK
    inst = gallery.build(args.export)
    spec = problem_to_dict(
        inst.id, inst.F, inst.F_bar, grid_resolution=inst.grid_resolution
    )
    _emit(spec)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="randersgeo",
        description="Randers metrics: geodesic traces and projective-equivalence checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="decide projective equivalence of a metric pair")
    p.add_argument("problem")
    p.add_argument("--mode", choices=["oriented", "unoriented"], default="oriented")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("trace", help="integrate a geodesic and emit CSV")
    p.add_argument("problem")
    p.add_argument("--from", required=True, help="start point, comma separated")
    p.add_argument("--dir", required=True, help="initial direction, comma separated")
    p.add_argument("--orientation", choices=["fwd", "bwd"], default="fwd")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--out", default="-", help="output CSV path, '-' for stdout")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("flat", help="projective flatness report")
    p.add_argument("problem")
    p.set_defaults(func=cmd_flat)

    p = sub.add_parser("support", help="connected components where d omega != 0")
    p.add_argument("problem")
    p.set_defaults(func=cmd_support)

    p = sub.add_parser("pullback", help="homothety check of a chart self-map")
    p.add_argument("problem")
    p.add_argument(
        "--map",
        required=True,
        help="semicolon-separated component expressions, e.g. '2*x1; 2*x2'",
    )
    p.set_defaults(func=cmd_pullback)

    p = sub.add_parser("average", help="average the 1-form over a finite group")
    p.add_argument("problem")
    p.add_argument(
        "--group",
        nargs="+",
        required=True,
        help="JSON files, each holding a list of component expressions",
    )
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("gallery", help="list built-in instances or export one")
    p.add_argument("--export", default=None, metavar="ID")
    p.set_defaults(func=cmd_gallery)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return EXIT_ERROR
    except (OSError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
