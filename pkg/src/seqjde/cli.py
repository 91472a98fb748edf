"""Command-line front end: design, simulate, baseline-sprt, regions, verify.

Exit status: 0 on success, 1 when `verify` finds a failing check, 2 on
usage or config errors.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys

from .coeffopt import Constraints, DesignOptions, design
from .grid import build
from .persist import (
    export_regions_csv,
    load_artifact,
    model_from_block,
    save_artifact,
    spec_from_block,
)
from .simulate import monte_carlo, sprt_design, sprt_monte_carlo
from .verify import run_invariant_suite

__all__ = ["main", "ConfigError", "load_config"]


class ConfigError(ValueError):
    """Config file violates the documented schema."""


_MODEL_FIELDS = {
    "shift_in_mean": ("sigma2", "gamma_shape", "gamma_scale", "p0"),
    "shift_in_variance": ("u_lo", "u_hi", "s2_min", "gamma_shape", "gamma_scale", "p0"),
}


def _expect(block, key, kinds, ctx):
    if key not in block:
        raise ConfigError(f"missing field {ctx}.{key}")
    val = block[key]
    if kinds is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"field {ctx}.{key} must be a number")
        return float(val)
    if kinds is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"field {ctx}.{key} must be an integer")
        return val
    if kinds is dict and not isinstance(val, dict):
        raise ConfigError(f"field {ctx}.{key} must be an object")
    return val


def _axis_block(block, name):
    sub = _expect(block, name, dict, "grid")
    return {
        "lo": _expect(sub, "lo", float, f"grid.{name}"),
        "hi": _expect(sub, "hi", float, f"grid.{name}"),
        "n": _expect(sub, "n", int, f"grid.{name}"),
    }


def load_config(path):
    """Parse and validate a run config; raises ConfigError naming fields."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")

    mblock = _expect(doc, "model", dict, "config")
    mtype = mblock.get("type")
    if mtype not in _MODEL_FIELDS:
        raise ConfigError(
            f"field model.type must be one of {sorted(_MODEL_FIELDS)}, got {mtype!r}"
        )
    parsed_model = {"type": mtype}
    for key in _MODEL_FIELDS[mtype]:
        parsed_model[key] = _expect(mblock, key, float, "model")

    gblock = _expect(doc, "grid", dict, "config")
    parsed_grid = {
        "x": _axis_block(gblock, "x"),
        "theta": _axis_block(gblock, "theta"),
        "t": _axis_block(gblock, "t"),
        "horizon": _expect(gblock, "horizon", int, "grid"),
    }

    cblock = _expect(doc, "constraints", dict, "config")
    kappa = _expect(cblock, "kappa", list, "constraints")
    if not (isinstance(kappa, list) and len(kappa) == 4):
        raise ConfigError("field constraints.kappa must be a list of four numbers")
    kappa = [float(v) for v in kappa]
    solver = cblock.get("solver", "lp")
    if solver not in ("lp", "dual_ascent"):
        raise ConfigError("field constraints.solver must be 'lp' or 'dual_ascent'")

    try:
        model = model_from_block(parsed_model)
        spec = spec_from_block(parsed_grid)
        constraints = Constraints(*kappa)
        lp_horizon = cblock.get("lp_horizon")
        options = DesignOptions(
            epsilon=cblock.get("epsilon"),
            solver=solver,
            tol=float(cblock.get("tol", 1e-8)),
            max_iter=int(cblock.get("max_iter", 500)),
            leakage_tol=float(cblock.get("leakage_tol", 1e-3)),
            lp_horizon=int(lp_horizon) if lp_horizon is not None else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return {
        "model": model,
        "spec": spec,
        "constraints": constraints,
        "options": options,
        "seed": int(doc.get("seed", 0)),
        "runs": int(doc.get("runs", 100_000)),
    }


def _thread_limit(args):
    n = args.threads
    if n is None:
        env = os.environ.get("SEQJDE_THREADS")
        n = int(env) if env else None
    if n is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:
        print("warning: threadpoolctl unavailable, --threads ignored", file=sys.stderr)
        return contextlib.nullcontext()


def _cmd_design(args):
    cfg = load_config(args.config)
    with _thread_limit(args):
        test = design(cfg["model"], cfg["spec"], cfg["constraints"], cfg["options"])
    save_artifact(test, args.out)
    c = test.coefficients.as_array()
    print(f"coefficients: [{c[0]:.6g}, {c[1]:.6g}, {c[2]:.6g}, {c[3]:.6g}]")
    print(f"dual objective (expected run-length): {test.dual_objective:.6f}")
    print(f"artifact written to {args.out}")
    return 0


def _cmd_simulate(args):
    if args.runs < 1:
        raise ConfigError("--runs must be at least 1")
    test = load_artifact(args.test)
    with _thread_limit(args):
        report = monte_carlo(test, args.runs, args.seed)
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def _cmd_baseline(args):
    if args.runs < 1:
        raise ConfigError("--runs must be at least 1")
    cfg = load_config(args.config)
    with _thread_limit(args):
        dm, _, _ = build(cfg["model"], cfg["spec"], leakage_tol=cfg["options"].leakage_tol)
        policy = sprt_design(dm, cfg["constraints"])
        report = sprt_monte_carlo(policy, cfg["model"], args.runs, args.seed)
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def _cmd_regions(args):
    test = load_artifact(args.test)
    export_regions_csv(test, args.out)
    print(f"regions written to {args.out}")
    return 0


def _cmd_verify(args):
    test = load_artifact(args.test)
    with _thread_limit(args):
        results = run_invariant_suite(test)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.detail}")
        failed += not res.passed
    return 1 if failed else 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="seqjde",
        description="Optimal truncated sequential joint detection-estimation tests",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="design a test from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="artifact output path")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_design)

    p = sub.add_parser("simulate", help="Monte Carlo validation of an artifact")
    p.add_argument("--test", required=True, help="artifact path")
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report JSON output path")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("baseline-sprt", help="truncated SPRT + MMSE baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("regions", help="export region labels as CSV")
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_regions)

    p = sub.add_parser("verify", help="run the invariant suite on an artifact")
    p.add_argument("--test", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
