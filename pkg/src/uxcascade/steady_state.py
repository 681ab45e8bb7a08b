"""Steady states, feed-flow sweeps and the critical saturation set point.

The cascade admits a sharp saturation knee: below a critical feed flow the
raffinate uranium is orders of magnitude under tolerance, above it the
solvent capacity is exhausted and raffinate losses grow steeply while the
loaded solvent concentration plateaus. The set point used for tracking is
the raffinate-tolerance crossing found by bisection, shrunk by a safety
margin.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade import Inputs, StateLayout, rhs, jacobian_x, step
from .errors import BracketError, ConvergenceError
from .flowsheet import FlowSheet, stage_flows

__all__ = ["SteadyPoint", "SetPoint", "steady_state", "sweep_feed",
           "critical_setpoint", "write_sweep_csv"]

NEWTON_TOL = 1e-9          # mol/L/h, infinity norm of the right-hand side
_SEED_HOURS = 200.0
_FALLBACK_HOURS = 1000.0
_MAX_NEWTON_ITER = 120
_MAX_BACKTRACK = 30
_DT0 = 1.0                 # initial pseudo-time step, h
_DT_MAX = 1e12


@dataclass(frozen=True)
class SteadyPoint:
    """A converged steady state at fixed (u, p)."""

    u: float
    p: float
    x_ss: np.ndarray
    raffinate_U: float
    loaded_U: float
    residual: float
    newton_iterations: int

    def __post_init__(self):
        self.x_ss.setflags(write=False)


@dataclass(frozen=True)
class SetPoint:
    """Tracking target: critical feed flow and its steady state at solvent flow p."""

    u_set: float
    x_set: np.ndarray
    p: float

    def __post_init__(self):
        self.x_set.setflags(write=False)

    def loaded_U(self, n_stages: int) -> float:
        return float(self.x_set[StateLayout(n_stages).loaded_index])


def _integrate(x, u, p, fs, hours, h_sub=1e-3):
    inp = Inputs(u=u, p=p)
    # chunked so the divergence guard reports early
    remaining = hours
    y = np.array(x, dtype=float)
    while remaining > 1e-12:
        chunk = min(10.0, remaining)
        y = step(y, inp, fs, chunk, h_sub).state
        remaining -= chunk
    return y


def _residual(x, inp, fs, flows):
    r = rhs(x, inp, fs, flows)
    m = float(np.abs(r).max())
    return r, (m if np.isfinite(m) else np.inf)


def _newton_watchdog(x, inp, fs, flows, tol, max_iter=30):
    """Undamped projected Newton, tolerating transient residual growth.

    Near the saturation knee the residual surface is a flat valley along
    the loading-front mode: monotone line searches crawl, while full
    Newton steps overshoot for two or three iterations and then contract
    quadratically. Divergence past 1e6x the entry residual, non-finite
    values or a long streak without a new best iterate end the run.
    """
    r, res = _residual(x, inp, fs, flows)
    best_x, best_res = x, res
    since_best = 0
    iters = 0
    for _ in range(max_iter):
        if res < tol:
            break
        J = jacobian_x(x, inp, fs, flows)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        # project onto the physical orthant; trace concentrations may
        # legitimately sit at zero
        x = np.maximum(x + dx, 0.0)
        r, res = _residual(x, inp, fs, flows)
        iters += 1
        if res < best_res:
            best_x, best_res = x, res
            since_best = 0
        else:
            since_best += 1
        if not np.isfinite(res) or res > 1e6 * max(best_res, 1.0) or since_best >= 8:
            break
    return best_x, best_res, iters


def _pseudo_transient(x, inp, fs, flows, tol, max_iter=_MAX_NEWTON_ITER):
    """Damped fallback: implicit pseudo-time stepping with adaptive growth."""
    eye = np.eye(len(x))
    r, res = _residual(x, inp, fs, flows)
    dt = _DT0
    iters = 0
    for _ in range(max_iter):
        if res < tol:
            break
        J = jacobian_x(x, inp, fs, flows)
        accepted = False
        for _ in range(_MAX_BACKTRACK):
            try:
                dx = np.linalg.solve(eye / dt - J, r)
            except np.linalg.LinAlgError:
                dt *= 0.25
                continue
            x_new = np.maximum(x + dx, 0.0)
            r_new, res_new = _residual(x_new, inp, fs, flows)
            if res_new < res:
                dt = min(dt * max(res / max(res_new, 1e-300), 1.2), _DT_MAX)
                x, r, res = x_new, r_new, res_new
                accepted = True
                break
            dt *= 0.25
        iters += 1
        if not accepted:
            break
    return x, res, iters


def steady_state(u: float, p: float, fs: FlowSheet,
                 x_guess: np.ndarray | None = None,
                 tol: float = NEWTON_TOL) -> SteadyPoint:
    """Solve rhs(x; u, p) = 0 with an analytic-Jacobian Newton method.

    Seeded by ``x_guess`` or by a 200 h integration from empty. Undamped
    watchdog Newton runs first (fast through the knee's flat residual
    valley); if it fails, damped pseudo-transient stepping is tried, and
    finally a long-horizon integration (up to 1000 h) reseeds one retry.
    Raises ConvergenceError carrying the best residual on failure.
    """
    inp = Inputs(u=float(u), p=float(p))
    flows = stage_flows(fs, inp.u, inp.p)
    lay = StateLayout(fs.n_stages)
    if x_guess is not None:
        x = np.array(x_guess, dtype=float)
    else:
        x = _integrate(lay.zeros(), inp.u, inp.p, fs, _SEED_HOURS)
    total_iters = 0
    best_x, best_res = x, np.inf

    for attempt in range(2):
        x, res, iters = _newton_watchdog(x, inp, fs, flows, tol)
        total_iters += iters
        if res < best_res:
            best_x, best_res = x, res
        if res >= tol:
            x, res, iters = _pseudo_transient(x, inp, fs, flows, tol)
            total_iters += iters
            if res < best_res:
                best_x, best_res = x, res
        if res < tol:
            return SteadyPoint(u=inp.u, p=inp.p, x_ss=x,
                               raffinate_U=float(x[lay.raffinate_index]),
                               loaded_U=float(x[lay.loaded_index]),
                               residual=res, newton_iterations=total_iters)
        if attempt == 0:
            x = _integrate(best_x, inp.u, inp.p, fs, _FALLBACK_HOURS)
    raise ConvergenceError(
        f"steady state at (u={u!r}, p={p!r}) did not converge: "
        f"best residual {best_res:.3e} mol/L/h", best_residual=best_res)


def sweep_feed(u_grid, p: float, fs: FlowSheet) -> list[SteadyPoint]:
    """Steady states over an ascending feed-flow grid, with continuation.

    Each solve is seeded by the previous solution, which roughly halves
    Newton work compared to cold starts.
    """
    u_grid = np.asarray(u_grid, dtype=float)
    if len(u_grid) and (np.diff(u_grid) <= 0).any():
        raise ValueError("u_grid must be sorted strictly ascending")
    points: list[SteadyPoint] = []
    guess = None
    for u in u_grid:
        try:
            pt = steady_state(float(u), p, fs, x_guess=guess)
        except ConvergenceError as exc:
            raise ConvergenceError(f"sweep failed at u={u!r}: {exc}",
                                   best_residual=exc.best_residual) from exc
        points.append(pt)
        guess = pt.x_ss
    return points


def critical_setpoint(p: float, fs: FlowSheet,
                      u_lo: float | None = None,
                      u_hi: float | None = None,
                      margin: float = 0.98,
                      rel_width: float = 1e-3) -> SetPoint:
    """Largest feed flow keeping the steady raffinate within tolerance.

    Bisects the steady raffinate against ``fs.raffinate_tol`` over
    [u_lo, u_hi] (defaulting to the flowsheet input bounds) down to the
    requested relative interval width, then applies the safety margin and
    recomputes the steady state at the shrunk feed flow.
    """
    if not (0.0 < margin <= 1.0):
        raise ValueError(f"margin must lie in (0, 1], got {margin!r}")
    lo = fs.u_min if u_lo is None else float(u_lo)
    hi = fs.u_max if u_hi is None else float(u_hi)
    if not (0.0 <= lo < hi):
        raise ValueError(f"need 0 <= u_lo < u_hi, got [{lo!r}, {hi!r}]")
    tol = fs.raffinate_tol
    pt_lo = steady_state(lo, p, fs)
    if pt_lo.raffinate_U > tol:
        raise BracketError(
            f"raffinate at u_lo={lo!r} is {pt_lo.raffinate_U:.3e} > tolerance "
            f"{tol:.3e}; knee lies below the search interval")
    guess = pt_lo.x_ss
    pt_hi = steady_state(hi, p, fs, x_guess=guess)
    if pt_hi.raffinate_U <= tol:
        # no knee binds inside the interval
        u_set = margin * hi
        x_set = steady_state(u_set, p, fs, x_guess=pt_hi.x_ss).x_ss
        return SetPoint(u_set=u_set, x_set=x_set, p=float(p))
    width0 = hi - lo
    while (hi - lo) > rel_width * width0:
        mid = 0.5 * (lo + hi)
        pt_mid = steady_state(mid, p, fs, x_guess=guess)
        if pt_mid.raffinate_U <= tol:
            lo, guess = mid, pt_mid.x_ss
        else:
            hi = mid
    u_set = margin * lo
    x_set = steady_state(u_set, p, fs, x_guess=guess).x_ss
    return SetPoint(u_set=u_set, x_set=x_set, p=float(p))


def write_sweep_csv(points: list[SteadyPoint], path, full_state: bool = False):
    """Export a sweep as CSV with columns u, p, raffinate_U, loaded_U
    (optionally followed by the full steady state)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["u", "p", "raffinate_U", "loaded_U"]
        if full_state and points:
            header += StateLayout(len(points[0].x_ss) // 6).column_names()
        writer.writerow(header)
        for pt in points:
            row = [pt.u, pt.p, pt.raffinate_U, pt.loaded_U]
            if full_state:
                row += list(pt.x_ss)
            writer.writerow(["%.17g" % v for v in row])
