"""Command line front end.

Exit codes: 0 ok, 1 assumption check failed, 2 unreadable or invalid
problem file, 3 Picard iteration did not converge, 4 value field does not
belong to the problem file.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from importlib import metadata

from .dynamics import HybridPath, write_events_csv
from .fieldio import load_field, parse_slice, save_field, write_convergence_csv, write_slice_csv
from .policy import NotConvergedError, evaluate_policy, extract_policy, _start_state
from .problem import SpecError, load_problem
from .rewards import validate_assumptions
from .simulate import SimSetup, simulate_batch
from .solver import GridSpec, GridStabilityError, solve

EXIT_OK, EXIT_ASSUMPTION, EXIT_SPEC, EXIT_NOT_CONVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4
N_EVENT_LOGS = 5


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _manifest(out, spec_hash, seeds, started, outputs, command):
    path = os.path.join(out, f"manifest_{command}.json")
    _dump({"command": command, "spec_hash": spec_hash, "version": _version(), "seeds": seeds,
           "timing_seconds": round(time.perf_counter() - started, 6),
           "outputs": sorted(os.path.basename(p) for p in outputs)}, path)
    return path


def _grid(problem, cfg):
    return GridSpec(problem.T, cfg.n_t, cfg.nu_steps, cfg.z_steps)


def cmd_validate(args):
    problem, cfg = load_problem(args.spec)
    report = validate_assumptions(problem, _grid(problem, cfg))
    report["spec_hash"] = problem.spec_hash()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "validation.json")
    _dump(report, path)
    for key in ("i", "ii_a", "ii_b", "iii", "iv"):
        if not report[key]["passed"]:
            print(f"assumption ({key}) failed: {json.dumps(report[key].get('witness'), sort_keys=True)}",
                  file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_ASSUMPTION


def cmd_solve(args):
    started = time.perf_counter()
    problem, cfg = load_problem(args.spec)
    tol = args.tol if args.tol is not None else cfg.tol
    k_max = args.kmax if args.kmax is not None else cfg.k_max
    grid = _grid(problem, cfg)
    os.makedirs(args.out, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        field = solve(problem, grid, tol=tol, k_max=k_max)
    outputs = list(save_field(field, os.path.join(args.out, "field")))
    conv = os.path.join(args.out, "convergence.csv")
    write_convergence_csv(field, conv)
    outputs.append(conv)
    if args.slice:
        axes, a, b = parse_slice(args.slice, problem.n)
        a = a or problem.start_a
        b = b or problem.start_b
        anchor = {"x": problem.x0}
        anchor.update({f"nu{i}": v for i, v in enumerate(problem.start_nu)})
        anchor.update({f"w{i}": max(0.0, -v) for i, v in enumerate(problem.start_z)})
        path = os.path.join(args.out, "slice.csv")
        write_slice_csv(field, path, axes, a, b, anchor)
        outputs.append(path)
    summary = {"root_value": field.root_value(problem), "converged": field.converged,
               "iterations": len(field.deltas), "final_delta": field.deltas[-1] if field.deltas else None}
    path = os.path.join(args.out, "solve_summary.json")
    _dump(summary, path)
    outputs.append(path)
    _manifest(args.out, problem.spec_hash(), [cfg.seed], started, outputs, "solve")
    print(json.dumps(summary, sort_keys=True))
    if not field.converged:
        print(f"not converged after {len(field.deltas)} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_evaluate(args):
    started = time.perf_counter()
    problem, cfg = load_problem(args.spec)
    field_path = args.field or os.path.join(args.out, "field.json")
    try:
        field = load_field(field_path)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot use value field {field_path}: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    if field.spec_hash != problem.spec_hash():
        print(f"value field {field_path} was computed for a different problem file", file=sys.stderr)
        return EXIT_MISMATCH
    try:
        policy = extract_policy(field, problem.costs, cfg.delta_switch)
    except NotConvergedError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NOT_CONVERGED
    seed = args.seed if args.seed is not None else cfg.seed
    n_paths = args.paths if args.paths is not None else cfg.n_paths
    record = min(N_EVENT_LOGS, n_paths)
    report, res = evaluate_policy(problem, policy, None, n_paths, seed, args.threads, record)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    path = os.path.join(args.out, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    outputs.append(path)
    path = os.path.join(args.out, "policy_regions.json")
    _dump({"delta_switch": policy.delta_switch, "regions": policy.regions(stride=args.region_stride)}, path)
    outputs.append(path)
    if n_paths > 0:
        for j, ev in enumerate(res.events):
            path = os.path.join(args.out, f"events_{j}.csv")
            write_events_csv(path, [HybridPath(ev)])
            outputs.append(path)
    _manifest(args.out, problem.spec_hash(), [seed], started, outputs, "evaluate")
    print(report.to_json(), end="")
    return EXIT_OK


def cmd_simulate(args):
    started = time.perf_counter()
    problem, cfg = load_problem(args.spec)
    seed = args.seed if args.seed is not None else cfg.seed
    n_paths = args.paths if args.paths is not None else cfg.n_paths
    setup = SimSetup.from_problem(problem, cfg.n_t)
    res = simulate_batch(setup, _start_state(problem, None), n_paths, seed=seed,
                         record=min(N_EVENT_LOGS, n_paths), threads=args.threads)
    mean, se = res.mean_se()
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    summary = {"n_paths": n_paths, "seed": seed, "payoff_mean": mean, "payoff_stderr": se,
               "final_mode_counts": _mode_counts(res.final_a)}
    path = os.path.join(args.out, "simulation.json")
    _dump(summary, path)
    outputs.append(path)
    if res.events:
        path = os.path.join(args.out, "paths.csv")
        write_events_csv(path, [HybridPath(ev) for ev in res.events])
        outputs.append(path)
    _manifest(args.out, problem.spec_hash(), [seed], started, outputs, "simulate")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _mode_counts(a):
    counts = {}
    for row in a.tolist():
        key = ",".join(str(v) for v in row)
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def build_parser():
    parser = argparse.ArgumentParser(prog="optswitch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, paths=False):
        p.add_argument("--spec", required=True, help="problem file (JSON)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="maximum parallel simulation chunks")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if paths:
            p.add_argument("--paths", type=int, default=None, help="number of simulated paths")

    common(sub.add_parser("validate", help="check the standing assumptions"))
    p = sub.add_parser("solve", help="compute the value field")
    common(p, seed=True)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument("--slice", default=None,
                   help="export a value surface, e.g. 't,w0;a=1;b=1' or 't,nu0;a=0;b=1'")
    p = sub.add_parser("evaluate", help="extract the policy and evaluate it by simulation")
    common(p, seed=True, paths=True)
    p.add_argument("--field", default=None, help="field sidecar (default OUT/field.json)")
    p.add_argument("--region-stride", type=int, default=10, help="time-index stride of the region export")
    p = sub.add_parser("simulate", help="sample uncontrolled paths")
    common(p, seed=True, paths=True)
    return parser


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "evaluate": cmd_evaluate,
            "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "paths", None) is not None and args.paths < 0:
        parser.error("--paths must be non-negative")
    try:
        return COMMANDS[args.command](args)
    except SpecError as exc:
        print(f"{args.spec}: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except GridStabilityError as exc:
        print(f"grid: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
