"""Command-line interface.

Subcommands: ``sweep`` (steady-state curves), ``setpoint`` (critical feed
flow for a solvent flow), ``simulate`` (one scenario), ``tune-pid`` and
``compare`` (three-controller suite for a named case). Exit codes: 0 on
success, 1 for configuration errors, 2 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cascade import write_trajectory_csv
from .errors import BracketError, ConfigError, ConvergenceError, \
    DivergenceError, ScenarioError, UxCascadeError
from .flowsheet import load_flowsheet, reference_config_path
from .harness import compare, make_case, run_from_manifest, run_scenario, \
    write_manifest
from .pid import PidGains, tune_pid
from .steady_state import critical_setpoint, steady_state, sweep_feed, \
    write_sweep_csv


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None,
                        help="flowsheet JSON (default: packaged reference)")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (default: ./out)")


def _load_fs(args):
    return load_flowsheet(args.config or reference_config_path())


def _scenario_overrides(args):
    over = {}
    if args.horizon is not None:
        over["mpc_horizon"] = args.horizon
    if args.ts is not None:
        over["T_s"] = args.ts
    if args.hsub is not None:
        over["h_sub"] = args.hsub
    return over


def _load_gains(path):
    data = json.loads(Path(path).read_text())
    if "scenario" in data:   # a run manifest
        data = data["scenario"]["pid_gains"]
    return PidGains(K_P=data["K_P"], K_I=data["K_I"], K_D=data["K_D"])


def cmd_sweep(args):
    fs = _load_fs(args)
    p = args.oe if args.oe is not None else fs.O_E_nominal
    lo, hi, step = args.grid
    grid = np.arange(lo, hi + 1e-9, step)
    points = sweep_feed(grid, p, fs)
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / f"sweep_oe{p:g}.csv"
    write_sweep_csv(points, out, full_state=args.full_state)
    print(f"wrote {out} ({len(points)} points)")
    return 0


def cmd_setpoint(args):
    fs = _load_fs(args)
    p = args.oe if args.oe is not None else fs.O_E_nominal
    sp = critical_setpoint(p, fs, margin=args.margin)
    y_set = sp.loaded_U(fs.n_stages)
    print(f"O_E = {p:g} L/h -> A_F* = {sp.u_set:.6g} L/h, "
          f"loaded solvent target = {y_set:.6g} mol/L")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        out = args.out / f"setpoint_oe{p:g}.json"
        out.write_text(json.dumps(
            {"p": p, "u_set": sp.u_set, "y_set": y_set,
             "x_set": list(sp.x_set)}, indent=2) + "\n")
        print(f"wrote {out}")
    return 0


def cmd_simulate(args):
    if args.manifest is not None:
        result = run_from_manifest(args.manifest)
    else:
        fs = _load_fs(args)
        gains = _load_gains(args.gains) if args.gains else None
        sc = make_case(args.case, fs, args.controller, pid_gains=gains,
                       **_scenario_overrides(args))
        result = run_scenario(sc)
    args.out.mkdir(parents=True, exist_ok=True)
    name = result.scenario.name
    write_trajectory_csv(result.trajectory, args.out / f"{name}.csv",
                         result.scenario.fs)
    write_manifest(result, args.out / f"{name}_manifest.json")
    print(f"{name}: R = {result.R:.4f} mol, settling = "
          f"{result.settling_time_h:.2f} h, violation integral = "
          f"{result.violation_integral:.6g}")
    print(f"wrote {args.out / (name + '.csv')} and manifest")
    return 0


def cmd_tune_pid(args):
    fs = _load_fs(args)
    sp = critical_setpoint(fs.O_E_nominal, fs)
    import dataclasses as _dc
    x0 = steady_state(sp.u_set, fs.O_E_nominal,
                      _dc.replace(fs, U_feed=0.0)).x_ss
    res = tune_pid(fs, x0, sp,
                   p_trace=np.full(args.steps + 1, fs.O_E_nominal),
                   n_steps=args.steps)
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / "pid_gains.json"
    out.write_text(json.dumps(
        {"K_P": res.gains.K_P, "K_I": res.gains.K_I, "K_D": res.gains.K_D,
         "objective": res.objective,
         "baseline_objective": res.baseline_objective}, indent=2) + "\n")
    print(f"tuned gains K_P={res.gains.K_P:.4g} K_I={res.gains.K_I:.4g} "
          f"K_D={res.gains.K_D:.4g} (objective {res.objective:.6g}, "
          f"baseline {res.baseline_objective:.6g})")
    print(f"wrote {out}")
    return 0


def cmd_compare(args):
    fs = _load_fs(args)
    gains = _load_gains(args.gains) if args.gains else None
    results = []
    for controller in ("nmpc", "pid", "openloop"):
        sc = make_case(args.case, fs, controller, pid_gains=gains,
                       **_scenario_overrides(args))
        result = run_scenario(sc)
        results.append(result)
        if controller == "pid" and gains is None:
            gains = result.gains   # reuse the tuned gains downstream
        args.out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(result.trajectory,
                             args.out / f"{sc.name}.csv", fs)
        write_manifest(result, args.out / f"{sc.name}_manifest.json")
    table = compare(results)
    args.out.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out / f"compare_case_{args.case.lower()}.csv")
    print(table.to_text())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="uxcascade",
        description="Simulate and control a countercurrent uranium "
                    "extraction-scrubbing cascade.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="steady-state feed-flow sweep")
    _add_common(p)
    p.add_argument("--oe", type=float, default=None,
                   help="solvent flow (default: nominal)")
    p.add_argument("--grid", type=float, nargs=3, default=(10.0, 80.0, 2.0),
                   metavar=("LO", "HI", "STEP"))
    p.add_argument("--full-state", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("setpoint", help="critical saturation set point")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--oe", type=float, default=None)
    p.add_argument("--margin", type=float, default=0.98)
    p.set_defaults(func=cmd_setpoint)

    p = sub.add_parser("simulate", help="run one scenario")
    _add_common(p)
    p.add_argument("--case", choices=("A", "B", "C"), default="A")
    p.add_argument("--controller", choices=("openloop", "pid", "nmpc"),
                   default="nmpc")
    p.add_argument("--manifest", type=Path, default=None,
                   help="re-run a persisted manifest instead")
    p.add_argument("--gains", type=Path, default=None,
                   help="PID gains JSON (from tune-pid or a manifest)")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--ts", type=float, default=None)
    p.add_argument("--hsub", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune-pid", help="offline PID gain tuning")
    _add_common(p)
    p.add_argument("--steps", type=int, default=30)
    p.set_defaults(func=cmd_tune_pid)

    p = sub.add_parser("compare", help="three-controller suite for a case")
    _add_common(p)
    p.add_argument("--case", choices=("A", "B", "C"), default="A")
    p.add_argument("--gains", type=Path, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--ts", type=float, default=None)
    p.add_argument("--hsub", type=float, default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, DivergenceError, BracketError) as exc:
        detail = ""
        if isinstance(exc, DivergenceError) and exc.step_index is not None:
            detail = f" (step {exc.step_index})"
        print(f"numerical failure{detail}: {exc}", file=sys.stderr)
        return 2
    except UxCascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
