"""Command-line interface.

Exit codes: 0 success, 2 infeasible or aborted run, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .approx import FitConfig, fit, sample_dataset
from .cbf import ClassKappaE, SetCbf
from .errors import ConfigurationError, EmptySetError, InfeasibleError, ResourceError, SetCbfError
from .harness import Scenario, builtin_scenario, builtin_scenarios, compute_safe_set, load_scenario, run
from .invariance import InvarianceProblem, verify_invariance
from .sets import Box, load_set, save_set

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3


def _scenario(arg: str) -> Scenario:
    """Load a scenario file, or a builtin given as ``builtin:<name>`` or a bare name."""
    if arg.startswith("builtin:"):
        return builtin_scenario(arg.split(":", 1)[1])
    if not os.path.exists(arg) and arg in {s.name for s in builtin_scenarios()}:
        return builtin_scenario(arg)
    return load_scenario(arg)


def _apply_overrides(s: Scenario, args) -> Scenario:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        changes["steps"] = args.steps
    if getattr(args, "alpha_s", None) is not None:
        changes["alpha"] = ClassKappaE(s.alpha.kind, args.alpha_s, s.alpha.scale)
    if getattr(args, "rho", None) is not None:
        changes["rho"] = args.rho
    if getattr(args, "h_mode", None) is not None:
        changes["h_mode"] = args.h_mode
    if getattr(args, "fallback", False):
        changes["fallback"] = True
    return s.replace(**changes) if changes else s


def _parse_point(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.replace(";", ",").replace(" ", ",").split(",") if v]
    except ValueError as e:
        raise ConfigurationError(f"cannot parse point {text!r}") from e
    return np.array(vals)


def cmd_compute_invariant_set(args) -> int:
    s = _apply_overrides(_scenario(args.scenario), args)
    info = compute_safe_set(s, use_cache=False)
    if info.omega is None:
        raise ConfigurationError("predictive scenarios define an implicit set; nothing to write")
    save_set(info.omega, args.output)
    bb = info.omega.bounding_box()
    lines = [
        f"scenario: {s.name}",
        f"set: {type(info.omega).__name__} written to {args.output}",
        f"rows: {getattr(info.omega, 'n_rows', 'n/a')}",
        f"iterations: {info.iterations}",
        f"nu: {info.nu:.6g}",
        f"bounding box lo: {np.round(bb.lo, 6).tolist()}",
        f"bounding box hi: {np.round(bb.hi, 6).tolist()}",
    ]
    print("\n".join(lines))
    return EXIT_OK


def cmd_eval_cbf(args) -> int:
    omega = load_set(args.set)
    alpha = ClassKappaE(args.alpha_kind, args.alpha_s if args.alpha_s is not None else 1.0)
    cbf = SetCbf(omega, alpha)
    x = _parse_point(args.x)
    g = cbf.gamma(x)
    h = 1.0 - g
    print(json.dumps({"gamma": g, "h": h, "delta_h": cbf.delta_h(h), "inside": h >= 0}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = _apply_overrides(_scenario(args.scenario), args)
    traj = run(s)
    traj.write_csv(args.output, timing=not args.no_timing)
    summary = {
        "scenario": s.name,
        "steps": len(traj),
        "min_h": min(traj.h) if traj.h else None,
        "interventions": int(sum(traj.intervened)),
        "aborted": traj.aborted,
    }
    if traj.aborted:
        summary["error"] = traj.error["message"]
        summary["error_step"] = traj.error["step"]
    print(json.dumps(summary))
    return EXIT_INFEASIBLE if traj.aborted else EXIT_OK


def cmd_train_approx(args) -> int:
    s = _apply_overrides(_scenario(args.scenario), args)
    info = compute_safe_set(s)
    if info.omega is None:
        cbf = info.predictive
        bb = info.predictive.safe_set.X_stages[0].bounding_box()
    else:
        cbf = SetCbf(info.omega, s.alpha)
        bb = info.omega.bounding_box()
    mid, half = 0.5 * (bb.lo + bb.hi), 0.5 * (bb.hi - bb.lo)
    domain = Box(mid - args.domain_scale * half, mid + args.domain_scale * half)
    seed = args.seed if args.seed is not None else s.seed
    data = sample_dataset(cbf, domain, args.samples, seed=seed)
    cfg = FitConfig(model=args.model, degree=args.degree, seed=seed,
                    hidden=tuple(int(h) for h in args.hidden.split(",")))
    model = fit(data, cfg)
    model.save(args.output)
    print(json.dumps({"output": args.output, "epsilon": model.epsilon,
                      "max_validation_error": model.metadata["max_validation_error"]}))
    return EXIT_OK


def cmd_verify(args) -> int:
    omega = load_set(args.set)
    s = _scenario(args.scenario)
    report = verify_invariance(omega, InvarianceProblem(s.model, s.X, s.U, s.W if args.robust else None),
                               samples=args.samples, seed=args.seed if args.seed is not None else 0)
    print(report.summary())
    for x, v in report.violations[:10]:
        print(f"  witness {np.asarray(x).tolist()} violation {v:.3e}")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="setcbf", description="Set-based control barrier function toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp, run_flags: bool = True):
        sp.add_argument("--seed", type=int)
        if run_flags:
            sp.add_argument("--steps", type=int)
            sp.add_argument("--rho", type=float)
            sp.add_argument("--h-mode", choices=("exact", "carryover"))
            sp.add_argument("--fallback", action="store_true", help="apply the invariance-only step when infeasible")
        sp.add_argument("--alpha-s", type=float, help="slope s of the class-K function")

    sp = sub.add_parser("compute-invariant-set", help="compute the safe set of a scenario")
    sp.add_argument("scenario", help="scenario JSON file or builtin:<name>")
    sp.add_argument("-o", "--output", required=True)
    overrides(sp, run_flags=False)
    sp.set_defaults(func=cmd_compute_invariant_set)

    sp = sub.add_parser("eval-cbf", help="evaluate gamma, h and the decrease bound at a state")
    sp.add_argument("set")
    sp.add_argument("--x", required=True, help="comma-separated state")
    sp.add_argument("--alpha-s", type=float)
    sp.add_argument("--alpha-kind", choices=("linear", "cubic", "tanh"), default="linear")
    sp.set_defaults(func=cmd_eval_cbf)

    sp = sub.add_parser("simulate", help="closed-loop rollout, trajectory written as CSV")
    sp.add_argument("scenario")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--no-timing", action="store_true", help="write 0 for solve times (byte-reproducible output)")
    overrides(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train-approx", help="fit a learned barrier for a scenario's safe set")
    sp.add_argument("scenario")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--samples", type=int, default=20000)
    sp.add_argument("--model", choices=("network", "polynomial"), default="network")
    sp.add_argument("--hidden", default="64,64")
    sp.add_argument("--degree", type=int, default=3)
    sp.add_argument("--domain-scale", type=float, default=2.0, help="sampling box relative to the set's bounding box")
    overrides(sp, run_flags=False)
    sp.set_defaults(func=cmd_train_approx)

    sp = sub.add_parser("verify", help="check (robust) control invariance of a set for a scenario")
    sp.add_argument("set")
    sp.add_argument("scenario")
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--robust", action="store_true", help="check against the scenario's W")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    level = os.environ.get("SETCBF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ResourceError, OSError, json.JSONDecodeError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleError, EmptySetError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SetCbfError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
