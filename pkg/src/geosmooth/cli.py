"""Command-line entry point: ``geosmooth run|bench|verify|mesh``.

Exit codes: 0 success, 2 non-convergence, 3 configuration error.
"""
from __future__ import annotations

import argparse
import inspect
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import caseio, drivers, verify
from .caseio import export_fields, write_curve
from .errors import ConfigurationError, GeosmoothError, SolverError
from .mesh import write_mesh
from .solver import RunLog

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 2, 3
BENCHMARKS = ("cylinder", "biaxial", "footing", "tunnel", "slope")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


class Runner:
    """Runs one case and writes its curve, fields, log and summary."""

    def __init__(self, case, out_dir, quiet=False):
        self.case = case
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.quiet = quiet
        self.runlog = RunLog(None)

    def say(self, msg):
        if not self.quiet:
            print(msg, flush=True)

    def fields(self, model, state, stem):
        for fmt in self.case.output.formats:
            suffix = ".vtk" if fmt == "vtk" else ".csv"
            export_fields(model, state, self.out / (stem + suffix), fmt)

    def finish(self, result, summary, converged=True):
        header, rows = result.curve()
        write_curve(self.out / "curve.csv", header, rows)
        if self.case.output.log:
            self.runlog.write(self.out / self.case.output.log)
        summary = {"driver": self.case.driver, "converged": converged, **summary}
        (self.out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
        for k, v in summary.items():
            self.say(f"{k}: {v}")
        return EXIT_OK if converged else EXIT_NONCONVERGED

    # drivers -----------------------------------------------------------
    def generic(self):
        case = self.case
        every = case.output.every_increment
        count = [0]

        def on_inc(model, name, res):
            count[0] += 1
            self.say(f"{name}: load factor {res.load_factor:.4g}, {res.iterations} iterations")
            if every:
                self.fields(model, res.state, f"increment_{count[0]:04d}")

        res = drivers.run_analysis(case, runlog=self.runlog, on_increment=on_inc)
        self.fields(res.model, res.final_state, "final")
        curve = _Curve(["increment", "step", "load_factor", "converged", "iterations", "monitor"],
                       [(r.increment, r.step, r.load_factor, int(r.converged), r.iterations,
                         "" if r.monitor is None else r.monitor) for r in res.records])
        return self.finish(curve, {"increments": len(res.records)}, res.converged)

    def cylinder(self):
        def on_mesh(h, res):
            self.say(f"h = {h}: {res.model.mesh.n_elements} elements")
            self.fields(res.model, res.final_state, f"h_{h:g}")
        r = drivers.run_cylinder_convergence(case=self.case, on_mesh=on_mesh)
        return self.finish(r, r.summary())

    def biaxial(self):
        r = drivers.run_biaxial(self.case)
        self.fields(r.analysis.model, r.analysis.final_state, "final")
        return self.finish(r, r.summary(), r.analysis.converged)

    def footing(self):
        r = drivers.run_footing(self.case)
        self.fields(r.analysis.model, r.analysis.final_state, "limit")
        return self.finish(r, r.summary())

    def tunnel(self):
        r = drivers.run_excavation(self.case)
        for k, st in enumerate(r.analysis.step_states, start=1):
            self.fields(r.analysis.model, st, f"stage_{k}")
        return self.finish(r, r.summary())

    def slope(self):
        r = drivers.run_slope_stability(
            self.case, on_factor=lambda F, ok, u: self.say(f"F_r = {F:.3f}: {'converged' if ok else 'failed'}"))
        if r.failure_state is not None:
            self.fields(r.model, r.failure_state, "failure")
        return self.finish(r, r.summary())

    def run(self):
        return getattr(self, self.case.driver)()


class _Curve:
    def __init__(self, header, rows):
        self.header, self.rows = header, rows

    def curve(self):
        return self.header, self.rows


def cmd_run(args):
    case = caseio.parse_case(args.case)
    if args.kernel:
        case = replace(case, solver=replace(case.solver, kernel=args.kernel))
    out = args.output or case.output.directory
    if not Path(out).is_absolute() and args.output is None and case.base_dir:
        out = Path(case.base_dir) / out
    return Runner(case, out, args.quiet).run()


def cmd_bench(args):
    case = caseio.shipped_case(args.name)
    if args.kernel:
        case = replace(case, solver=replace(case.solver, kernel=args.kernel))
    out = args.output or f"results/{args.name}"
    return Runner(case, out, args.quiet).run()


def cmd_verify(args):
    checks = verify.run_all(quick=args.quick)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else 1


def _coerce(text):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def cmd_mesh(args):
    gen = caseio.GENERATORS.get(args.generator)
    if gen is None:
        raise ConfigurationError(f"unknown generator {args.generator!r}; known: {', '.join(caseio.GENERATORS)}")
    params = inspect.signature(gen).parameters
    kwargs = {}
    for item in args.arg or []:
        if "=" not in item:
            raise ConfigurationError(f"generator argument {item!r} is not key=value")
        k, v = item.split("=", 1)
        if k not in params:
            raise ConfigurationError(f"generator {args.generator!r} has no argument {k!r}")
        v = _coerce(v)
        if isinstance(params[k].default, float) and isinstance(v, int):
            v = float(v)
        kwargs[k] = v
    mesh = gen(**kwargs)
    write_mesh(mesh, args.output)
    print(f"{args.output}: {mesh.n_nodes} nodes, {mesh.n_elements} elements")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="geosmooth", description="Smoothed finite element analysis of elastic-plastic soils.")
    p.add_argument("-v", "--verbose", action="store_true", help="log increment failures and bisections")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a case file")
    r.add_argument("case")
    r.add_argument("-o", "--output", help="output directory (default from the case)")
    r.add_argument("--kernel", choices=caseio.KERNELS)
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a shipped benchmark")
    b.add_argument("name", choices=BENCHMARKS)
    b.add_argument("-o", "--output")
    b.add_argument("--kernel", choices=caseio.KERNELS)
    b.add_argument("-q", "--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run the built-in invariant and oracle checks")
    v.add_argument("--quick", action="store_true")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("mesh", help="write a generated mesh file")
    m.add_argument("generator", choices=sorted(caseio.GENERATORS))
    m.add_argument("arg", nargs="*", help="generator arguments as key=value")
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_mesh)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except GeosmoothError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
