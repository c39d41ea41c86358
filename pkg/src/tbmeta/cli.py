"""Command-line interface: ``tbmeta {net,r0,simulate,endemic,sweep}``.

Exit codes: 0 on success, 2 on invalid input, 3 on numerical failure.
Outputs are written with fixed formatting and key order, so equal inputs and
seeds give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import endemic, ngm
from .dynamics import IncidenceKind, Params
from .errors import NumericalError, ValidationError
from .integrate import initial_condition, integrate
from .netgen import (build_truncated_power_law, calibrate_power_law, network_from_dict,
                     network_to_dict, random_correlated_network, uncorrelated_kernel,
                     validate_consistency)
from .sweeps import Axis, SweepSpec, sweep_migration, sweep_r0_phase

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {what} file {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} file {path!r} is not valid JSON: {exc}") from None


def _params(args) -> Params:
    p = Params.from_dict(_load_json(args.params, "params")) if args.params else Params()
    if getattr(args, "beta", None) is not None:
        p = Params.from_dict({"beta": args.beta}, base=p)
    return p


def _network(args):
    if args.network:
        return network_from_dict(_load_json(args.network, "network"))
    dist = build_truncated_power_law(3.0, 3, 100)
    return dist, uncorrelated_kernel(dist)


def _fmt(x) -> str:
    return "%.17g" % x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(args, text: str):
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_text(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- subcommands -------------------------------------------------------------

def cmd_net(args):
    info = {}
    if args.network:
        dist, kernel = _network(args)
    elif args.correlated:
        rng = np.random.default_rng(args.seed)
        degrees = np.arange(args.k_min, args.k_max + 1)
        dist, kernel = random_correlated_network(degrees, rng, args.concentration)
    elif args.target_mean is not None:
        dist, info = calibrate_power_law(args.target_mean, args.exponent, args.k_min, args.k_max)
        kernel = uncorrelated_kernel(dist)
    else:
        dist = build_truncated_power_law(args.exponent, args.k_min, args.k_max)
        kernel = uncorrelated_kernel(dist)
    violations = validate_consistency(dist, kernel)
    if args.format == "csv":
        rows = [[int(k), _fmt(p)] for k, p in zip(dist.degrees, dist.probs)]
        text = _csv_text(["k", "p"], rows)
    else:
        doc = network_to_dict(dist, kernel)
        doc.update(mean_degree=dist.mean_degree, violations=violations, calibration=info)
        text = _json_text(doc)
    _emit(args, text)
    return EXIT_VALIDATION if violations else EXIT_OK


def cmd_r0(args):
    p = _params(args)
    dist, _ = _network(args)
    kind = IncidenceKind.parse(args.kind)
    numeric = ngm.r0_numeric(p, dist, kind)
    if args.format is None:
        _emit(args, _fmt(numeric.value) + "\n")
        return EXIT_OK
    doc = {"kind": kind.value, "numeric": numeric.value}
    if kind is IncidenceKind.STANDARD:
        doc["closed_form_exact"] = ngm.r0_closed_form_freq(p, source="exact").value
        try:
            doc["closed_form_printed"] = ngm.r0_closed_form_freq(p, source="printed").value
        except NumericalError as exc:
            doc["closed_form_printed"] = None
            doc["closed_form_printed_error"] = str(exc)
        doc["discrepancy"] = ngm.compare_closed_form(p, dist).as_dict()
    else:
        rep = ngm.mass_action_report(p, dist)
        doc["structured"] = rep.value
        doc["bounds"] = list(rep.bounds)
        doc["certificates"] = {k: {"holds": c.holds, "margin": c.margin}
                               for k, c in rep.certificates.items()}
    if args.format == "json":
        _emit(args, _json_text(doc))
    else:
        flat = [[k, _fmt(v) if isinstance(v, float) else v] for k, v in doc.items()
                if isinstance(v, (int, float, str)) or v is None]
        _emit(args, _csv_text(["quantity", "value"], flat))
    return EXIT_OK


def cmd_simulate(args):
    p = _params(args)
    dist, kernel = _network(args)
    if args.fraction == 0:
        x0 = ngm.dfe(p, dist, kernel).values
    else:
        rng = np.random.default_rng(args.seed) if args.seed is not None else None
        x0 = initial_condition(p, dist, args.fraction, rng, kernel)
    traj = integrate(args.kind, x0, p, dist, args.t_end, kernel=kernel, rtol=args.tol,
                     sample_dt=args.dt)
    if args.format == "json":
        doc = traj.to_dict()
        _emit(args, _json_text(doc))
    else:
        _emit(args, _csv_text(["t", "k", "S", "E", "I", "R"], traj.to_rows()))
    return EXIT_OK


def cmd_endemic(args):
    p = _params(args)
    dist, _ = _network(args)
    doc = {"r0": ngm.r0_numeric(p, dist, IncidenceKind.MASS_ACTION).value,
           "h_limit_zero": endemic.h_limit_zero(p, dist)}
    if args.h_curve:
        ax = Axis.parse("beta:" + args.h_curve)  # reuse the range parser
        rows = endemic.h_curve(p, dist, ax.values())
        if args.format == "csv":
            _emit(args, _csv_text(["c", "H"], [[_fmt(c), _fmt(h)] for c, h in rows]))
            return EXIT_OK
        doc["h_curve"] = [[c, h] for c, h in rows]
    sols = endemic.multi_start_scan(p, dist, starts=args.starts, seed=args.seed or 0,
                                    tol=args.tol)
    if args.format == "csv":
        rows = []
        for j, s in enumerate(sols):
            for i, k in enumerate(dist.degrees):
                rows.append([j, int(k), _fmt(s.z_star[i]), *(_fmt(v) for v in s.state()[:, i])])
        _emit(args, _csv_text(["solution", "k", "z", "S", "E", "I", "R"], rows))
    else:
        doc["solutions"] = [s.to_dict() for s in sols]
        _emit(args, _json_text(doc))
    return EXIT_OK


def cmd_sweep(args):
    p = _params(args)
    if args.mode == "phase":
        if not args.axis:
            raise ValidationError("phase sweep needs at least one --axis")
        net = {"exponent": args.exponent, "k_min": args.k_min, "k_max": args.k_max}
        spec = SweepSpec([Axis.parse(a) for a in args.axis], kind=args.kind, network=net)
        grid = sweep_r0_phase(spec, p, seed=args.seed or 0)
        if args.format == "json":
            _emit(args, _json_text(grid.to_dict()))
        else:
            buf = io.StringIO()
            grid.write_csv(buf)
            _emit(args, buf.getvalue())
    else:
        dist, _ = _network(args)
        table = sweep_migration(args.D or [1.0, 2.0], p, dist, kind=args.kind, seed=args.seed,
                                t_settle=args.t_settle, workers=args.workers)
        if args.format == "json":
            _emit(args, _json_text(table.to_dict()))
        else:
            buf = io.StringIO()
            table.write_csv(buf)
            _emit(args, buf.getvalue())
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="JSON object of model parameters")
    common.add_argument("--network", help="JSON network document")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--tol", type=float, default=None, help="relative tolerance")

    parser = argparse.ArgumentParser(prog="tbmeta", parents=[common],
                                     description="TB metapopulation model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    net = sub.add_parser("net", parents=[common], help="build or validate a network")
    net.add_argument("--exponent", type=float, default=3.0)
    net.add_argument("--k-min", type=int, default=3)
    net.add_argument("--k-max", type=int, default=100)
    net.add_argument("--target-mean", type=float, default=None,
                     help="calibrate a power law to this mean degree (k_max is the upper limit)")
    net.add_argument("--correlated", action="store_true",
                     help="draw a random correlated kernel over k_min..k_max")
    net.add_argument("--concentration", type=float, default=1.0)
    net.set_defaults(func=cmd_net)

    r0 = sub.add_parser("r0", parents=[common], help="basic reproduction number")
    r0.add_argument("--beta", type=float, default=None)
    r0.add_argument("--kind", default="standard")
    r0.set_defaults(func=cmd_r0)

    sim = sub.add_parser("simulate", parents=[common], help="integrate a trajectory")
    sim.add_argument("--beta", type=float, default=None)
    sim.add_argument("--kind", default="standard")
    sim.add_argument("--t-end", type=float, default=100.0)
    sim.add_argument("--dt", type=float, default=None, help="sampling interval")
    sim.add_argument("--fraction", type=float, default=0.01,
                     help="share of each class moved from S to I at t=0 (0 starts at the DFE)")
    sim.set_defaults(func=cmd_simulate)

    end = sub.add_parser("endemic", parents=[common], help="mass-action endemic equilibria")
    end.add_argument("--beta", type=float, default=None)
    end.add_argument("--starts", type=int, default=10)
    end.add_argument("--h-curve", default=None, metavar="MIN:MAX:STEPS[:log]",
                     help="scan H(c 1) instead of solving")
    end.set_defaults(func=cmd_endemic)

    sw = sub.add_parser("sweep", parents=[common], help="phase or migration sweeps")
    sw.add_argument("mode", choices=("phase", "migration"))
    sw.add_argument("--beta", type=float, default=None)
    sw.add_argument("--axis", action="append", metavar="NAME:MIN:MAX:STEPS[:log]")
    sw.add_argument("--kind", default=None)
    sw.add_argument("--exponent", type=float, default=3.0)
    sw.add_argument("--k-min", type=int, default=3)
    sw.add_argument("--k-max", type=int, default=100)
    sw.add_argument("--D", type=float, nargs="+", default=None)
    sw.add_argument("--t-settle", type=float, default=2000.0)
    sw.add_argument("--workers", type=int, default=None,
                    help="process pool size for migration runs (default: serial)")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    if args.tol is None:
        args.tol = 1e-8 if args.command == "simulate" else 1e-10
    if args.command == "sweep" and args.kind is None:
        args.kind = "standard" if args.mode == "phase" else "mass"
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
