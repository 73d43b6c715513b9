"""Command-line front end: ``mmlq solve | simulate | verify``.

Exit codes: 0 success, 1 a verification check failed, 2 usage or parse
error, 3 the scenario or strategy failed validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .controllers import CustomLinear, StrategyError, best_linear, optimal, state_feedback
from .estimators import FilterDegeneracyError, llms_schedule
from .model import ScenarioError, load_scenario, validate_scenario
from .riccati import RiccatiError, gain_schedule
from .simulation import evaluate
from .splitting import SplitError
from .verification import SUITES, run_suite

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_NUMERICAL = 4


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write(path: str | None, text: str) -> None:
    """Write ``text`` to ``path`` (overwriting), or to stdout when no path is given."""
    if path is None or path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text if text.endswith("\n") else text + "\n")


def _load(path: str):
    """Load and validate a scenario; raises ``ScenarioError`` on any problem."""
    s = load_scenario(path)
    report = validate_scenario(s)
    if not report.ok:
        raise ScenarioError(str(report), report)
    return s


def make_strategy(s, name: str):
    """Strategy from its command-line name."""
    if name == "optimal":
        return optimal(s)
    if name == "best-linear":
        return best_linear(s)
    if name == "state-feedback":
        return state_feedback(s)
    if name.startswith("custom:"):
        return CustomLinear.load(name[len("custom:"):]).bind(s)
    raise argparse.ArgumentTypeError(f"unknown strategy {name!r}")


def _strategy_arg(value: str) -> str:
    if value in ("optimal", "best-linear", "state-feedback") or (value.startswith("custom:") and len(value) > 7):
        return value
    raise argparse.ArgumentTypeError(
        f"invalid strategy {value!r}: choose optimal, best-linear, state-feedback or custom:<path>"
    )


def _nonneg_int(value: str) -> int:
    v = int(value)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a nonnegative integer")
    return v


def _pos_int(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def cmd_solve(scenario_path: str, out_path: str | None) -> int:
    s = _load(scenario_path)
    sched = gain_schedule(s)
    filters = [llms_schedule(s, i) for i in range(1, s.n + 1)]
    doc = {
        "horizon": s.T,
        "gains": sched.to_dict(),
        "llms": [{"agent": i, **f.to_dict()} for i, f in enumerate(filters, start=1)],
    }
    _write(out_path, json.dumps(doc, indent=2))
    min_eig = lambda arrs: float(min(np.linalg.eigvalsh(a).min() for a in arrs))  # noqa: E731
    summary = {
        "horizon": s.T,
        "n": s.n,
        "nx": s.topology.nx,
        "nu": s.topology.nu,
        "ny": s.topology.ny,
        "min_eig_S": min_eig(sched.Scom),
        "min_eig_Delta": min_eig(sched.DeltaCom),
        "min_eig_S_loc": [min_eig(S) for S in sched.Sloc],
        "min_eig_Delta_loc": [min_eig(D) for D in sched.DeltaLoc],
    }
    print(json.dumps(summary), file=sys.stderr if out_path in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_simulate(
    scenario_path: str,
    strategy: str,
    N: int,
    seed: int,
    out_path: str | None,
    csv_path: str | None = None,
    decompose: bool = False,
    parallel: bool = False,
) -> int:
    s = _load(scenario_path)
    strat = make_strategy(s, strategy)
    report = evaluate(s, strat, N, seed, parallel=parallel, decompose=decompose)
    _write(out_path, json.dumps(report.summary(), indent=2))
    if csv_path:
        Path(csv_path).write_text(report.to_csv())
    return EXIT_OK


def cmd_verify(
    scenario_path: str,
    suite: str,
    N: int,
    seed: int,
    out_path: str | None = None,
    strategy: str = "optimal",
    parallel: bool = False,
) -> int:
    s = _load(scenario_path)
    strat = make_strategy(s, strategy)
    results = run_suite(s, strat, suite, N, seed, parallel=parallel)
    doc = {
        "suite": suite,
        "strategy": strategy,
        "N": N,
        "seed": seed,
        "mode": "parallel" if parallel else "sequential",
        "pass": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
    _write(out_path, json.dumps(doc, indent=2))
    return EXIT_OK if doc["pass"] else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmlq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="compute gain and filter schedules")
    sp.add_argument("scenario")
    sp.add_argument("--out", help="output JSON path (default: stdout)")

    sm = sub.add_parser("simulate", help="Monte Carlo cost of a strategy")
    sm.add_argument("scenario")
    sm.add_argument("--strategy", type=_strategy_arg, default="optimal")
    sm.add_argument("--trials", type=_pos_int, default=10_000)
    sm.add_argument("--seed", type=_nonneg_int, default=0)
    sm.add_argument("--decompose", action="store_true", help="add the common/local/stochastic cost terms")
    sm.add_argument("--csv", help="per-trial cost CSV path")
    sm.add_argument("--parallel", action="store_true")
    sm.add_argument("--out", help="report JSON path (default: stdout)")

    vf = sub.add_parser("verify", help="run verification suites")
    vf.add_argument("scenario")
    vf.add_argument("--suite", choices=SUITES, default="all")
    vf.add_argument("--strategy", type=_strategy_arg, default="optimal")
    vf.add_argument("--trials", type=_pos_int, default=100_000)
    vf.add_argument("--seed", type=_nonneg_int, default=0)
    vf.add_argument("--parallel", action="store_true")
    vf.add_argument("--out", help="report JSON path (default: stdout)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args.scenario, args.out)
        if args.command == "simulate":
            return cmd_simulate(
                args.scenario, args.strategy, args.trials, args.seed, args.out, args.csv, args.decompose, args.parallel
            )
        return cmd_verify(args.scenario, args.suite, args.trials, args.seed, args.out, args.strategy, args.parallel)
    except json.JSONDecodeError as exc:
        _err(f"parse error: {exc.msg} at line {exc.lineno}, column {exc.colno}")
        return EXIT_USAGE
    except OSError as exc:
        _err(f"cannot read input: {exc}")
        return EXIT_USAGE
    except (ScenarioError, StrategyError) as exc:
        _err(f"validation failed:\n{exc}")
        return EXIT_INVALID
    except (RiccatiError, FilterDegeneracyError, SplitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
