"""Command-line front end: ``qsc run|converge|check <scenario.json>``.

Exit codes: 0 all assertions pass, 1 tolerance failure, 2 parse error,
3 validation error.
"""
import argparse
import os
import sys

from .fock import CapExceededError
from .scenario import ScenarioError, ValidationError, load_scenario, run_scenario


def _n_list(text):
    try:
        ns = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid cell list {text!r}") from None
    if len(ns) < 2 or any(n < 1 for n in ns):
        raise argparse.ArgumentTypeError("need at least two positive cell counts")
    return ns


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="qsc", description="Run discretized QS calculus scenarios.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file")
    common.add_argument("--out", help="output directory (overrides the scenario)")
    common.add_argument("--seed", type=_u64, help="PRNG seed (overrides the scenario)")
    common.add_argument("--cap", type=int, help="dense size cap in bits (overrides grid.cap_bits)")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run every task")
    c = sub.add_parser("converge", parents=[common], help="run the convergence tasks")
    c.add_argument("--n", type=_n_list, default=None, help="comma-separated cell counts, e.g. 4,8,16")
    k = sub.add_parser("check", parents=[common], help="run a single task")
    k.add_argument("--task", required=True, help="task name")
    return p


def _converge_only(sc, n_list):
    from .scenario import TASK_DEFAULTS, _COMMON_DEFAULTS, Task
    tasks = [t for t in sc.tasks if t.type == "converge"]
    if not tasks:
        p = dict(_COMMON_DEFAULTS, **TASK_DEFAULTS["converge"])
        p["n_list"] = list(n_list) if n_list else list(p["n_list"])
        tasks = [Task("converge", "converge", len(sc.tasks), p, {})]
    sc.tasks = tasks
    return sc


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        print(f"qsc: cannot read {args.scenario}: {e.strerror}", file=sys.stderr)
        return 2
    try:
        sc = load_scenario(text, seed=args.seed, cap_bits=args.cap, output=args.out,
                           n_list=getattr(args, "n", None))
        if args.command == "converge":
            sc = _converge_only(sc, args.n)
        results = run_scenario(sc, only=args.task if args.command == "check" else None)
    except CapExceededError as e:
        print(f"qsc: {args.scenario}: validation error: grid.cap_bits: {e}", file=sys.stderr)
        return 3
    except ScenarioError as e:
        kind = "validation error" if isinstance(e, ValidationError) else "parse error"
        print(f"qsc: {args.scenario}: {kind}: {e}", file=sys.stderr)
        return e.exit_code
    os.makedirs(sc.output, exist_ok=True)
    failures = []
    for r in results:
        path = os.path.join(sc.output, f"{r.task.name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(r.to_csv())
        status = "FAIL" if r.failures else "ok"
        print(f"{status:4s} {r.task.name} -> {path}")
        failures.extend(r.failures)
    for f in failures:
        print(f"qsc: tolerance failure: {f}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
