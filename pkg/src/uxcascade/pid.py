"""Discrete PID baseline on the loaded-solvent concentration, plus its
offline simulation-based gain tuner.

The controller output is the set-point feed flow plus PID correction with
a trapezoidal integral and backward-difference derivative. Saturation is
applied in two sequential clamps: first to the feed-flow box, then to the
rate limits relative to the previously applied input. The rate clamp
anchors on the applied (already clamped) input, which doubles as a crude
anti-windup.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .cascade import Inputs, StateLayout, step
from .errors import ConvergenceError
from .flowsheet import FlowSheet
from .steady_state import SetPoint

__all__ = ["PidGains", "PidState", "pid_step", "clamp_input", "tune_pid",
           "TuneResult"]


@dataclass(frozen=True)
class PidGains:
    """Scalar gains mapping mol/L error to L/h output; signs unrestricted."""

    K_P: float
    K_I: float
    K_D: float

    def __post_init__(self):
        for name in ("K_P", "K_I", "K_D"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class PidState:
    """Controller memory: previous error, integral, applied input, sampling T."""

    e_prev: float = 0.0
    e_I: float = 0.0
    u_prev: float = 0.0
    T: float = 0.5

    def __post_init__(self):
        if self.T <= 0.0:
            raise ValueError(f"sampling interval T must be positive, got {self.T!r}")


def clamp_input(u_raw: float, u_prev: float, u_min: float, u_max: float,
                du_min: float, du_max: float) -> float:
    """Box clamp followed by rate clamp, in that order. Idempotent."""
    u = min(max(u_raw, u_min), u_max)
    u = min(max(u, u_prev + du_min), u_prev + du_max)
    return u


def pid_step(st: PidState, gains: PidGains, y: float, y_set: float,
             u_set: float, bounds) -> tuple[float, PidState]:
    """One controller update; returns the applied input and the new state.

    ``bounds`` is (u_min, u_max, du_min, du_max). The integral includes
    the current error (trapezoid), the derivative is a backward
    difference, and the state stores the clamped applied input.
    """
    u_min, u_max, du_min, du_max = bounds
    e = y_set - y
    e_I = 0.5 * st.T * (e + st.e_prev) + st.e_I
    e_D = (e - st.e_prev) / st.T
    u_raw = u_set + gains.K_P * e + gains.K_I * e_I + gains.K_D * e_D
    u = clamp_input(u_raw, st.u_prev, u_min, u_max, du_min, du_max)
    return u, PidState(e_prev=e, e_I=e_I, u_prev=u, T=st.T)


def _closed_loop_objective(gains: PidGains, fs: FlowSheet, x0: np.ndarray,
                           setpoint: SetPoint, p_trace: np.ndarray,
                           T_s: float, h_sub: float, r: float, s: float,
                           n_steps: int) -> float:
    """Tuning cost over a closed-loop run: tracking error, input deviation
    and input moves, summed over n_steps (inputs run one step further so
    the final move is defined)."""
    lay = StateLayout(fs.n_stages)
    y_set = float(setpoint.x_set[lay.loaded_index])
    u_set = setpoint.u_set
    bounds = (fs.u_min, fs.u_max, fs.du_min, fs.du_max)
    st = PidState(u_prev=u_set, T=T_s)
    x = np.array(x0, dtype=float)
    cost = 0.0
    u_hist = []
    e_hist = []
    for k in range(n_steps + 1):
        y = float(x[lay.loaded_index])
        e_hist.append(y_set - y)
        u, st = pid_step(st, gains, y, y_set, u_set, bounds)
        u_hist.append(u)
        if k < n_steps:
            x = step(x, Inputs(u=u, p=float(p_trace[k])), fs, T_s, h_sub).state
    for k in range(n_steps):
        du = u_hist[k + 1] - u_hist[k]
        cost += (e_hist[k] ** 2 + r * (u_hist[k] - u_set) ** 2 + s * du ** 2)
    return cost


@dataclass
class TuneResult:
    gains: PidGains
    objective: float
    baseline_objective: float   # zero-gain (open loop at u_set) cost
    start_objectives: list      # (initial, final) cost per multistart run
    n_evaluations: int


def tune_pid(fs: FlowSheet, x0: np.ndarray, setpoint: SetPoint,
             p_trace, T_s: float = 0.5, h_sub: float = 1e-3,
             r: float | None = None, s: float | None = None,
             n_steps: int = 30,
             initial_gains: PidGains | None = None,
             extra_starts: int = 5,
             maxiter: int = 150) -> TuneResult:
    """Tune gains by Nelder-Mead multistart on the closed-loop cost.

    The clamps make the objective nonsmooth, hence the derivative-free
    local searches from several deterministic starts scaled to the
    process gain u_set/y_set. Raises ConvergenceError if no start improves
    on the zero-gain baseline.
    """
    p_trace = np.asarray(p_trace, dtype=float)
    if len(p_trace) < n_steps:
        raise ValueError(f"p_trace must cover {n_steps} steps, got {len(p_trace)}")
    if r is None:
        r = 1.0 / setpoint.u_set ** 2
    if s is None:
        s = 1.0 / setpoint.u_set ** 2
    lay = StateLayout(fs.n_stages)
    y_set = float(setpoint.x_set[lay.loaded_index])
    scale = setpoint.u_set / max(abs(y_set), 1e-6)

    evals = [0]

    def objective(theta):
        evals[0] += 1
        return _closed_loop_objective(PidGains(*theta), fs, x0, setpoint,
                                      p_trace, T_s, h_sub, r, s, n_steps)

    starts = [np.array([0.0, 0.0, 0.0])]
    if initial_gains is not None:
        starts.append(np.array([initial_gains.K_P, initial_gains.K_I,
                                initial_gains.K_D]))
    base_starts = [np.array([0.5, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]),
                   np.array([1.0, 0.25, 0.0]), np.array([1.0, 0.25, 0.1]),
                   np.array([2.0, 0.5, 0.0]), np.array([0.25, 0.1, 0.0])]
    starts.extend(scale * g for g in base_starts[:max(extra_starts, 4)])

    baseline = objective(np.zeros(3))
    best_theta, best_obj = np.zeros(3), baseline
    start_objs = []
    for theta0 in starts:
        initial = objective(theta0)
        res = minimize(objective, theta0, method="Nelder-Mead",
                       options={"maxiter": maxiter, "xatol": 1e-3 * max(scale, 1.0),
                                "fatol": 1e-10 * max(baseline, 1.0)})
        final = min(float(res.fun), initial)   # NM never reports worse, kept explicit
        start_objs.append((initial, final))
        if res.fun < best_obj:
            best_obj, best_theta = float(res.fun), np.asarray(res.x)
    if initial_gains is not None:
        init_obj = objective(np.array([initial_gains.K_P, initial_gains.K_I,
                                       initial_gains.K_D]))
        if init_obj < best_obj:
            best_obj, best_theta = init_obj, np.array(
                [initial_gains.K_P, initial_gains.K_I, initial_gains.K_D])
    if best_obj > baseline:
        raise ConvergenceError(
            f"no tuner start improved on the zero-gain baseline "
            f"({best_obj:.6g} > {baseline:.6g})", best_residual=best_obj)
    return TuneResult(gains=PidGains(*best_theta), objective=best_obj,
                      baseline_objective=baseline, start_objectives=start_objs,
                      n_evaluations=evals[0])
