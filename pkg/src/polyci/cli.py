"""Command-line interface.

Subcommands
-----------
``chibar quantile``   mixture quantile to stdout
``calibrate``         threshold calibration, JSON to stdout
``region box``        per-coordinate intervals, JSON to stdout
``region contains``   membership; exit code 0 inside / 1 outside
``region area``       polar-quadrature area, decimal to stdout
``region boundary``   boundary polyline CSV
``reduce tfm``        reduced problem spec as JSON
``reduce box``        box-constraint reduction as JSON
``coverage run``      coverage experiment, report JSON

Exit codes: 0 success, 1 membership "outside", 2 invalid config/input,
3 coverage run flagged (solver-failure budget exceeded), 4 empty region.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

EXIT_OK = 0
EXIT_OUTSIDE = 1
EXIT_BAD_CONFIG = 2
EXIT_FLAGGED = 3
EXIT_EMPTY = 4


def _load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _load_vector(path: str) -> np.ndarray:
    obj = _load_json(path)
    if isinstance(obj, dict):
        obj = obj.get("data", obj.get("y"))
    return np.asarray(obj, dtype=float)


def _load_spec(path: str):
    from .problems import ProblemSpec

    return ProblemSpec.from_json(_load_json(path))


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.split(",") if tok.strip() != ""])


def _stat(code: str):
    from .statistics import TestStatistic

    return TestStatistic(code)


def cmd_chibar_quantile(args) -> int:
    from .distributions import ChiBarMixture, chibar_quantile

    weights = _parse_floats(args.weights)
    mix = ChiBarMixture(tuple(weights))
    print(f"{chibar_quantile(mix, args.level):.10g}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibration import global_threshold

    spec = _load_spec(args.spec)
    rule = global_threshold(spec, _stat(args.stat), args.alpha, args.method,
                            budget=args.budget, n_samples=args.samples,
                            seed=args.seed, workers=args.workers)
    out = {
        "delta": rule.delta,
        "provenance": rule.provenance.value,
        "stderr": rule.stderr,
        "n_samples": rule.n_samples,
    }
    if rule.budget_exceeded:
        out["budget_exceeded"] = True
    print(json.dumps(out))
    return EXIT_OK


def _region_from_args(args):
    from .calibration import GlobalConstant, Provenance
    from .regions import RegionSpec

    spec = _load_spec(args.spec)
    y = _load_vector(args.y)
    rule = GlobalConstant(args.delta, Provenance.USER_SUPPLIED)
    return RegionSpec(spec=spec, stat=_stat(args.stat), threshold=rule, y=y)


def cmd_region_box(args) -> int:
    from .regions import EmptyRegionError, bounding_box

    region = _region_from_args(args)
    try:
        box = bounding_box(region)
    except EmptyRegionError:
        print(json.dumps({"empty": True}))
        return EXIT_EMPTY

    def enc(v):
        return [None if not np.isfinite(x) else float(x) for x in v]

    print(json.dumps({"lo": enc(box.lo), "hi": enc(box.hi)}))
    return EXIT_OK


def cmd_region_contains(args) -> int:
    from .regions import contains

    region = _region_from_args(args)
    mu = _parse_floats(args.mu)
    inside = contains(region, mu)
    print(json.dumps({"mu": [float(v) for v in mu], "contains": bool(inside)}))
    return EXIT_OK if inside else EXIT_OUTSIDE


def cmd_region_area(args) -> int:
    from .regions import EmptyRegionError, region_area

    region = _region_from_args(args)
    try:
        area = region_area(region, n_angles=args.n_angles, r_tol=args.r_tol)
    except EmptyRegionError:
        print("0")
        return EXIT_EMPTY
    print(f"{area:.10g}")
    return EXIT_OK


def cmd_region_boundary(args) -> int:
    from .harness import boundary_csv, emit_boundary
    from .regions import EmptyRegionError

    region = _region_from_args(args)
    try:
        rows = emit_boundary(region, n_angles=args.n_angles, r_tol=args.r_tol)
        text = boundary_csv(rows)
    except EmptyRegionError:
        text = "theta,r,mu1,mu2\n"
        _write_text(args.out, text)
        return EXIT_EMPTY
    _write_text(args.out, text)
    return EXIT_OK


def _write_text(path, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_reduce_tfm(args) -> int:
    from .linalg import matrix_to_json
    from .reductions import NotApplicableError, tfm_reduce

    spec = _load_spec(args.spec)
    try:
        red = tfm_reduce(spec.forward, spec.functionals)
    except NotApplicableError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_BAD_CONFIG
    from .problems import ProblemSpec

    whitened = _whitened_reduced_spec(red.sigma, red.tilde_k, red.tilde_h, red.constraints)
    out = {
        "schema_version": 1,
        "spec": whitened["spec"].to_json(),
        "sigma": matrix_to_json(red.sigma),
        "y_map": matrix_to_json(whitened["whitener"] @ red.y_map),
        "row_order": list(red.row_order),
        "row_signs": list(red.row_signs),
        "singular_sigma": whitened["singular"],
    }
    if args.y:
        y = _load_vector(args.y)
        out["y"] = [float(v) for v in whitened["whitener"] @ red.y_map @ y]
    print(json.dumps(out))
    return EXIT_OK


def _whitened_reduced_spec(sigma, tilde_k, tilde_h, constraints):
    from .problems import ProblemSpec
    from .reductions import _pseudo_whitener

    w, singular = _pseudo_whitener(sigma)
    spec = ProblemSpec(forward=w @ tilde_k, functionals=np.atleast_2d(tilde_h),
                       constraints=constraints)
    return {"spec": spec, "whitener": w, "singular": singular}


def cmd_reduce_box(args) -> int:
    from .linalg import matrix_to_json
    from .reductions import NotApplicableError, box_normalize, box_reduce_k1

    spec = _load_spec(args.spec)
    lo = _parse_floats(args.lo.replace("inf", "1e400"))
    up = _parse_floats(args.up.replace("inf", "1e400"))
    if spec.n_func != 1:
        print(json.dumps({"error": "box reduction handles a single functional"}),
              file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        transform = box_normalize(spec.forward, lo, up)
        red = box_reduce_k1(transform, spec.functionals[0])
    except (NotApplicableError, ValueError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_BAD_CONFIG
    whitened = _whitened_reduced_spec(red.sigma, red.k_tilde, red.h_tilde, red.constraints)
    out = {
        "schema_version": 1,
        "spec": whitened["spec"].to_json(),
        "sigma": matrix_to_json(red.sigma),
        "y_map": matrix_to_json(whitened["whitener"] @ red.y_map),
        "y_shift": [float(v) for v in red.y_shift],
        "m_plus": red.m_plus,
        "m_minus": red.m_minus,
        "functional_offset": red.functional_offset,
        "candidates": [[float(v) for v in c] for c in red.candidates],
        "singular_sigma": whitened["singular"],
    }
    if args.y:
        y = _load_vector(args.y)
        out["y"] = [float(v)
                    for v in whitened["whitener"] @ red.y_map @ (y + red.y_shift)]
    print(json.dumps(out))
    return EXIT_OK


def cmd_coverage_run(args) -> int:
    from .harness import ExperimentConfig, InvalidConfigError, UnknownMethodError, run_coverage

    try:
        config = ExperimentConfig.from_json(_load_json(args.config))
    except (InvalidConfigError, UnknownMethodError, KeyError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_BAD_CONFIG
    report = run_coverage(config)
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True)
    out_path = args.out or config.output_path
    _write_text(out_path, payload + "\n")
    if args.csv:
        lines = ["method,trial,area"]
        for label in sorted(report.areas):
            for t, a in enumerate(report.areas[label]):
                lines.append(f"{label},{t},{a:.12g}")
        with open(args.csv, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_FLAGGED if report.flagged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyci",
                                     description="Confidence regions for constrained "
                                                 "linear inverse problems")
    sub = parser.add_subparsers(dest="command", required=True)

    chibar = sub.add_parser("chibar", help="chi-bar-squared utilities")
    chibar_sub = chibar.add_subparsers(dest="subcommand", required=True)
    cq = chibar_sub.add_parser("quantile", help="mixture quantile")
    cq.add_argument("--weights", required=True,
                    help="comma-separated weights w0,w1,... indexed by df")
    cq.add_argument("--level", type=float, required=True)
    cq.set_defaults(func=cmd_chibar_quantile)

    cal = sub.add_parser("calibrate", help="global threshold calibration")
    cal.add_argument("--spec", required=True)
    cal.add_argument("--stat", choices=["l1", "l2u", "l2c"], required=True)
    cal.add_argument("--alpha", type=float, required=True)
    cal.add_argument("--method", choices=["origin", "vertices", "chisq-n", "chisq-rank"],
                     required=True)
    cal.add_argument("--samples", type=int, default=100_000)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--budget", type=int, default=100_000)
    cal.add_argument("--workers", type=int, default=None)
    cal.set_defaults(func=cmd_calibrate)

    region = sub.add_parser("region", help="region queries")
    region_sub = region.add_subparsers(dest="subcommand", required=True)

    def region_common(p):
        p.add_argument("--spec", required=True)
        p.add_argument("--y", required=True)
        p.add_argument("--stat", choices=["l1", "l2u", "l2c"], default="l1")
        p.add_argument("--delta", type=float, required=True)

    rb = region_sub.add_parser("box", help="per-coordinate intervals")
    region_common(rb)
    rb.set_defaults(func=cmd_region_box)

    rc = region_sub.add_parser("contains", help="membership test")
    region_common(rc)
    rc.add_argument("--mu", required=True, help="comma-separated coordinates")
    rc.set_defaults(func=cmd_region_contains)

    ra = region_sub.add_parser("area", help="polar-quadrature area (k=2)")
    region_common(ra)
    ra.add_argument("--n-angles", type=int, default=720)
    ra.add_argument("--r-tol", type=float, default=1e-6)
    ra.set_defaults(func=cmd_region_area)

    rbound = region_sub.add_parser("boundary", help="boundary polyline CSV (k=2)")
    region_common(rbound)
    rbound.add_argument("--n-angles", type=int, default=360)
    rbound.add_argument("--r-tol", type=float, default=1e-6)
    rbound.add_argument("--out", default="-")
    rbound.set_defaults(func=cmd_region_boundary)

    reduce_p = sub.add_parser("reduce", help="dimension reductions")
    reduce_sub = reduce_p.add_subparsers(dest="subcommand", required=True)
    rt = reduce_sub.add_parser("tfm", help="row-space sign-split reduction")
    rt.add_argument("--spec", required=True)
    rt.add_argument("--y", default=None)
    rt.set_defaults(func=cmd_reduce_tfm)
    rx = reduce_sub.add_parser("box", help="box-constraint reduction (k=1)")
    rx.add_argument("--spec", required=True)
    rx.add_argument("--lo", required=True, help="comma-separated lower bounds (inf allowed)")
    rx.add_argument("--up", required=True, help="comma-separated upper bounds (inf allowed)")
    rx.add_argument("--y", default=None)
    rx.set_defaults(func=cmd_reduce_box)

    cov = sub.add_parser("coverage", help="coverage experiments")
    cov_sub = cov.add_subparsers(dest="subcommand", required=True)
    cr = cov_sub.add_parser("run", help="run a coverage campaign")
    cr.add_argument("--config", required=True)
    cr.add_argument("--out", default=None)
    cr.add_argument("--csv", default=None)
    cr.set_defaults(func=cmd_coverage_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
