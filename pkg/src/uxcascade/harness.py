"""Scenario orchestration: case studies, controllers against the simulated
plant, metrics and persistence.

Three canonical cases mirror the intended operating studies:

* Case A - nominal startup: the plant begins at the uranium-free steady
  state (feed uranium switched on at t=0) and each controller drives the
  loaded solvent to the saturation set point.
* Case B - disturbance rejection: Case A continued with three solvent-flow
  steps (+50%, -50%, back to nominal); the set point is recomputed after
  every step.
* Case C - constraint recovery: the plant starts at an over-saturated
  steady state violating the raffinate tolerance.

Every run is reproducible from its JSON manifest, which pins the resolved
configuration, the tuned PID gains and the set points used.
"""
from __future__ import annotations

import dataclasses
import json
import time as _time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade import Inputs, StateLayout, Trajectory, step
from .errors import ScenarioError
from .flowsheet import FlowSheet, flowsheet_from_dict, flowsheet_to_dict
from .nmpc import MpcWeights, NmpcController, OcpOptions
from .pid import PidGains, PidState, clamp_input, pid_step, tune_pid
from .steady_state import SetPoint, critical_setpoint, steady_state

__all__ = ["Scenario", "RunResult", "make_case", "run_scenario",
           "extracted_uranium", "compare", "ComparisonTable",
           "write_manifest", "run_from_manifest", "settling_time"]

CONTROLLERS = ("openloop", "pid", "nmpc")


@dataclass
class Scenario:
    """A fully resolved simulation request."""

    name: str
    controller: str
    fs: FlowSheet
    duration_h: float
    p_schedule: list                 # [(time_h, O_E)], first entry at t=0
    initial_kind: str = "uranium_free"   # uranium_free | steady | explicit
    initial_u: float | None = None       # feed flow of the initial steady state
    initial_state: list | None = None    # for initial_kind == explicit
    T_s: float = 0.5
    h_sub: float = 1e-3
    setpoint_margin: float = 0.98
    oversaturation: float = 1.2          # initial_u = oversaturation * u_set
    pid_gains: PidGains | None = None
    mpc_horizon: int = 10
    mpc_max_iter: int = 200
    mpc_kkt_tol: float = 1e-6
    mpc_rho: float | None = None
    mpc_h_sub_pred: float | None = None
    pid_tune_steps: int = 30

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ScenarioError(f"unknown controller {self.controller!r}; "
                                f"expected one of {CONTROLLERS}")
        if self.duration_h <= 0 or self.T_s <= 0:
            raise ScenarioError("duration_h and T_s must be positive")
        sched = [(float(t), float(p)) for t, p in self.p_schedule]
        if not sched or sched[0][0] != 0.0:
            raise ScenarioError("p_schedule must start at t=0")
        times = [t for t, _ in sched]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ScenarioError("p_schedule times must be strictly increasing")
        if times[-1] >= self.duration_h:
            raise ScenarioError("p_schedule times must lie within the duration")
        for t, p in sched:
            if p <= 0:
                raise ScenarioError(f"scheduled O_E must be positive, got {p!r}")
            steps = t / self.T_s
            if abs(steps - round(steps)) > 1e-9:
                raise ScenarioError(
                    f"schedule time {t!r} h is not a multiple of T_s={self.T_s!r}")
        self.p_schedule = sched

    @property
    def n_steps(self) -> int:
        steps = self.duration_h / self.T_s
        n = int(round(steps))
        if abs(steps - n) > 1e-9:
            raise ScenarioError("duration_h must be a multiple of T_s")
        return n

    def p_at(self, t: float) -> float:
        value = self.p_schedule[0][1]
        for ts, p in self.p_schedule:
            if t >= ts - 1e-12:
                value = p
        return value


def make_case(case: str, fs: FlowSheet, controller: str,
              pid_gains: PidGains | None = None, **overrides) -> Scenario:
    """Build one of the canonical scenarios A, B or C."""
    case = case.upper()
    O0 = fs.O_E_nominal
    if case == "A":
        base = dict(name=f"case_a_{controller}", controller=controller, fs=fs,
                    duration_h=30.0, p_schedule=[(0.0, O0)],
                    initial_kind="uranium_free", pid_gains=pid_gains)
    elif case == "B":
        base = dict(name=f"case_b_{controller}", controller=controller, fs=fs,
                    duration_h=120.0,
                    p_schedule=[(0.0, O0), (30.0, 0.5 * O0),
                                (60.0, 1.5 * O0), (90.0, O0)],
                    initial_kind="uranium_free", pid_gains=pid_gains)
    elif case == "C":
        base = dict(name=f"case_c_{controller}", controller=controller, fs=fs,
                    duration_h=30.0, p_schedule=[(0.0, O0)],
                    initial_kind="steady", initial_u=None,  # oversaturated
                    pid_gains=pid_gains)
    else:
        raise ScenarioError(f"unknown case {case!r}; expected A, B or C")
    base.update(overrides)
    return Scenario(**base)


@dataclass
class RunResult:
    """Closed-loop run outputs; metrics are recomputable from the trajectory."""

    scenario: Scenario
    trajectory: Trajectory
    setpoints: list                 # [{"step", "t", "p", "u_set", "y_set"}]
    R: float
    settling_time_h: float
    violation_integral: float
    max_abs_du: float
    gains: PidGains | None
    setpoint_recomputations: int
    diagnostics: dict


def settling_time(t: np.ndarray, y: np.ndarray, band: float = 0.02,
                  y_final: float | None = None) -> float:
    """First time after which y stays within band*|y_final| of y_final."""
    y = np.asarray(y, dtype=float)
    if y_final is None:
        y_final = float(y[-1])
    tolerance = band * abs(y_final)
    outside = np.abs(y - y_final) > tolerance
    if not outside.any():
        return float(t[0])
    last_out = int(np.nonzero(outside)[0][-1])
    if last_out + 1 >= len(t):
        return float("nan")
    return float(t[last_out + 1])


def extracted_uranium(traj: Trajectory, k_f: int) -> float:
    """Extracted uranium metric: T_s * sum_{k=0..k_f} O_E(k) * loaded(k)."""
    if k_f > traj.n_steps:
        raise ValueError(f"k_f={k_f} exceeds trajectory length {traj.n_steps}")
    loaded = traj.loaded_solvent()[:k_f + 1]
    p = traj.p[:k_f + 1]
    return float(traj.T_s * np.sum(p * loaded))


def _uranium_free_variant(fs: FlowSheet) -> FlowSheet:
    return dataclasses.replace(fs, U_feed=0.0)


def _initial_state(sc: Scenario, setpoint: SetPoint):
    """Resolve the initial-state rule; returns (x0, u_initial)."""
    fs = sc.fs
    p0 = sc.p_schedule[0][1]
    if sc.initial_kind == "uranium_free":
        u0 = sc.initial_u if sc.initial_u is not None else setpoint.u_set
        pt = steady_state(u0, p0, _uranium_free_variant(fs))
        return pt.x_ss.copy(), float(u0)
    if sc.initial_kind == "steady":
        u0 = sc.initial_u if sc.initial_u is not None \
            else sc.oversaturation * setpoint.u_set
        pt = steady_state(u0, p0, fs)
        return pt.x_ss.copy(), float(u0)
    if sc.initial_kind == "explicit":
        if sc.initial_state is None or sc.initial_u is None:
            raise ScenarioError("explicit initial state requires initial_state "
                                "and initial_u")
        return np.asarray(sc.initial_state, dtype=float), float(sc.initial_u)
    raise ScenarioError(f"unknown initial_kind {sc.initial_kind!r}")


def run_scenario(sc: Scenario) -> RunResult:
    """Simulate one scenario at the control rate.

    The set point is recomputed via the critical-saturation search before
    the first step and after every scheduled solvent-flow change; the
    open-loop policy walks to the current set-point feed flow under the
    rate bounds, PID and NMPC close the loop on the plant state.
    """
    fs = sc.fs
    lay = StateLayout(fs.n_stages)
    K = sc.n_steps
    bounds = (fs.u_min, fs.u_max, fs.du_min, fs.du_max)

    p0 = sc.p_schedule[0][1]
    setpoint = critical_setpoint(p0, fs, margin=sc.setpoint_margin)
    recomputations = 1
    setpoints = [{"step": 0, "t": 0.0, "p": p0, "u_set": setpoint.u_set,
                  "y_set": setpoint.loaded_U(fs.n_stages)}]

    x0, u_init = _initial_state(sc, setpoint)
    gains = sc.pid_gains
    if sc.controller == "pid" and gains is None:
        tune = tune_pid(fs, x0, setpoint,
                        p_trace=np.full(sc.pid_tune_steps + 1, p0),
                        T_s=sc.T_s, h_sub=sc.h_sub, n_steps=sc.pid_tune_steps)
        gains = tune.gains

    mpc = None
    if sc.controller == "nmpc":
        mpc = NmpcController(fs, MpcWeights(),
                             OcpOptions(N_p=sc.mpc_horizon, T_s=sc.T_s,
                                        h_sub=sc.h_sub,
                                        h_sub_pred=sc.mpc_h_sub_pred,
                                        kkt_tol=sc.mpc_kkt_tol,
                                        max_iter=sc.mpc_max_iter,
                                        rho=sc.mpc_rho))
    pid_state = PidState(u_prev=u_init, T=sc.T_s)
    y_set = setpoint.loaded_U(fs.n_stages)

    x = x0.copy()
    states = np.empty((K + 1, lay.n_states))
    states[0] = x
    u_seq = np.empty(K)
    p_rows = np.empty(K + 1)
    clamp = np.zeros(K)
    u_prev = u_init
    p_prev = None
    solve_times = []
    mpc_iters = []
    mpc_kkt = []
    mpc_statuses = []

    for k in range(K):
        t_k = k * sc.T_s
        p_k = sc.p_at(t_k)
        p_rows[k] = p_k
        if p_prev is not None and p_k != p_prev:
            setpoint = critical_setpoint(p_k, fs, margin=sc.setpoint_margin)
            y_set = setpoint.loaded_U(fs.n_stages)
            recomputations += 1
            setpoints.append({"step": k, "t": t_k, "p": p_k,
                              "u_set": setpoint.u_set, "y_set": y_set})
        p_prev = p_k

        if sc.controller == "openloop":
            u_k = clamp_input(setpoint.u_set, u_prev, *bounds)
        elif sc.controller == "pid":
            y = float(x[lay.loaded_index])
            u_k, pid_state = pid_step(pid_state, gains, y, y_set,
                                      setpoint.u_set, bounds)
        else:
            t0 = _time.perf_counter()
            u_k, sol = mpc.step(x, u_prev, setpoint, p_k)
            solve_times.append(_time.perf_counter() - t0)
            mpc_iters.append(sol.diagnostics.iterations)
            mpc_kkt.append(sol.diagnostics.kkt_residual)
            mpc_statuses.append(sol.diagnostics.status)

        res = step(x, Inputs(u=u_k, p=p_k), fs, sc.T_s, sc.h_sub)
        x = res.state
        states[k + 1] = x
        u_seq[k] = u_k
        clamp[k] = res.clamp
        u_prev = u_k
    p_rows[K] = sc.p_at(K * sc.T_s)

    traj = Trajectory(t=np.arange(K + 1) * sc.T_s, states=states, u=u_seq,
                      p=p_rows, clamp=clamp, T_s=sc.T_s, h_sub=sc.h_sub,
                      n_stages=fs.n_stages)
    raff = traj.raffinate()
    violation = float(sc.T_s * np.sum(np.maximum(0.0, raff - fs.raffinate_tol)))
    moves = np.diff(np.concatenate(([u_init], u_seq)))
    diagnostics = {}
    if sc.controller == "nmpc":
        diagnostics = {
            "mean_solve_s": float(np.mean(solve_times)),
            "max_solve_s": float(np.max(solve_times)),
            "total_solve_s": float(np.sum(solve_times)),
            "mean_iterations": float(np.mean(mpc_iters)),
            "statuses": {s: mpc_statuses.count(s) for s in set(mpc_statuses)},
            "max_kkt_residual": float(np.max(mpc_kkt)),
        }
    return RunResult(scenario=sc, trajectory=traj, setpoints=setpoints,
                     R=extracted_uranium(traj, K),
                     settling_time_h=settling_time(traj.t, traj.loaded_solvent()),
                     violation_integral=violation,
                     max_abs_du=float(np.abs(moves).max()) if K else 0.0,
                     gains=gains, setpoint_recomputations=recomputations,
                     diagnostics=diagnostics)


@dataclass
class ComparisonTable:
    rows: list

    def to_text(self) -> str:
        header = f"{'controller':<10} {'R_mol':>12} {'settle_h':>9} " \
                 f"{'violation':>12} {'max|du|':>8}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(f"{r['controller']:<10} {r['R']:>12.4f} "
                         f"{r['settling_time_h']:>9.2f} "
                         f"{r['violation_integral']:>12.6g} "
                         f"{r['max_abs_du']:>8.3f}")
        return "\n".join(lines)

    def to_csv(self, path):
        import csv as _csv
        with Path(path).open("w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["controller", "R", "settling_time_h",
                             "violation_integral", "max_abs_du"])
            for r in self.rows:
                writer.writerow([r["controller"]] +
                                ["%.17g" % r[k] for k in
                                 ("R", "settling_time_h",
                                  "violation_integral", "max_abs_du")])


_ORDER = {"nmpc": 0, "pid": 1, "openloop": 2}


def compare(results: list[RunResult]) -> ComparisonTable:
    """Metric table over runs sharing scenario geometry."""
    if not results:
        return ComparisonTable(rows=[])
    ref = results[0].scenario
    for r in results[1:]:
        if (r.scenario.duration_h != ref.duration_h
                or r.scenario.T_s != ref.T_s):
            raise ScenarioError(
                f"cannot compare runs with different geometry: "
                f"{r.scenario.name} vs {ref.name}")
    ordered = sorted(results, key=lambda r: _ORDER.get(r.scenario.controller, 9))
    rows = [{"controller": r.scenario.controller, "R": r.R,
             "settling_time_h": r.settling_time_h,
             "violation_integral": r.violation_integral,
             "max_abs_du": r.max_abs_du} for r in ordered]
    return ComparisonTable(rows=rows)


# -- manifest persistence -----------------------------------------------------

def _scenario_to_dict(sc: Scenario) -> dict:
    d = {
        "name": sc.name, "controller": sc.controller,
        "duration_h": sc.duration_h,
        "p_schedule": [[t, p] for t, p in sc.p_schedule],
        "initial_kind": sc.initial_kind, "initial_u": sc.initial_u,
        "initial_state": sc.initial_state,
        "T_s": sc.T_s, "h_sub": sc.h_sub,
        "setpoint_margin": sc.setpoint_margin,
        "oversaturation": sc.oversaturation,
        "mpc_horizon": sc.mpc_horizon, "mpc_max_iter": sc.mpc_max_iter,
        "mpc_kkt_tol": sc.mpc_kkt_tol, "mpc_rho": sc.mpc_rho,
        "mpc_h_sub_pred": sc.mpc_h_sub_pred,
        "pid_tune_steps": sc.pid_tune_steps,
    }
    if sc.pid_gains is not None:
        d["pid_gains"] = {"K_P": sc.pid_gains.K_P, "K_I": sc.pid_gains.K_I,
                          "K_D": sc.pid_gains.K_D}
    else:
        d["pid_gains"] = None
    return d


def write_manifest(result: RunResult, path):
    """Persist the resolved configuration, gains, set points and metrics."""
    sc_dict = _scenario_to_dict(result.scenario)
    if result.gains is not None:
        sc_dict["pid_gains"] = {"K_P": result.gains.K_P,
                                "K_I": result.gains.K_I,
                                "K_D": result.gains.K_D}
    manifest = {
        "flowsheet": flowsheet_to_dict(result.scenario.fs),
        "scenario": sc_dict,
        "setpoints": result.setpoints,
        "metrics": {
            "R": result.R,
            "settling_time_h": result.settling_time_h,
            "violation_integral": result.violation_integral,
            "max_abs_du": result.max_abs_du,
            "setpoint_recomputations": result.setpoint_recomputations,
        },
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_from_manifest(path) -> RunResult:
    """Re-run a persisted scenario; tuned gains are reused, not retuned."""
    manifest = json.loads(Path(path).read_text())
    fs = flowsheet_from_dict(manifest["flowsheet"])
    sd = dict(manifest["scenario"])
    gains = sd.pop("pid_gains", None)
    sc = Scenario(fs=fs,
                  pid_gains=PidGains(**gains) if gains else None,
                  **sd)
    return run_scenario(sc)
