"""Reduced cascade dynamics, Euler discretization and trajectory simulation.

The state vector stacks six blocks of n_stages concentrations (mol/L):
mixer aqueous U, settler aqueous U, settler organic U, then the same three
blocks for H. With 16 stages this is the 96-state reduced model in which
the mixer organic phase is always at chemical equilibrium with the mixer
aqueous phase, so the mixer balance carries the combined aqueous/organic
throughput terms and the settlers relax toward the mixer values.

Entry ``n_stages`` of the flat vector (0-based, first entry of the second
block) is the raffinate concentration constrained during control.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .equilibrium import organic_star, organic_star_partials
from .errors import DivergenceError
from .flowsheet import FlowSheet, StageFlows, stage_flows

__all__ = ["StateLayout", "Inputs", "StepResult", "Trajectory", "BalanceReport",
           "rhs", "jacobian_x", "jacobian_u", "step", "simulate",
           "validate_state", "holdup", "write_trajectory_csv",
           "DIVERGENCE_GUARD"]

DIVERGENCE_GUARD = 1e6  # mol/L; any state beyond this aborts the integration


class StateLayout:
    """Index bookkeeping for the six-block flat state vector."""

    def __init__(self, n_stages: int):
        n = n_stages
        self.n_stages = n
        self.n_states = 6 * n
        self.u_aq_m = slice(0, n)
        self.u_aq_d = slice(n, 2 * n)
        self.u_og_d = slice(2 * n, 3 * n)
        self.h_aq_m = slice(3 * n, 4 * n)
        self.h_aq_d = slice(4 * n, 5 * n)
        self.h_og_d = slice(5 * n, 6 * n)
        self.raffinate_index = n            # stage-1 settler aqueous U
        self.loaded_index = 3 * n - 1       # stage-n settler organic U
        self.block_names = ("u_aq_m", "u_aq_d", "u_og_d",
                            "h_aq_m", "h_aq_d", "h_og_d")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_states)

    def column_names(self):
        names = []
        for block in self.block_names:
            names.extend(f"{block}_{i + 1}" for i in range(self.n_stages))
        return names


@dataclass(frozen=True)
class Inputs:
    """Manipulated feed flow u = A_F and measured solvent flow p = O_E, L/h."""

    u: float
    p: float

    def __post_init__(self):
        if self.u < 0.0:
            raise ValueError(f"feed flow u must be nonnegative, got {self.u!r}")
        if self.p <= 0.0:
            raise ValueError(f"solvent flow p must be strictly positive, got {self.p!r}")


def validate_state(x: np.ndarray, n_stages: int):
    x = np.asarray(x, dtype=float)
    if x.shape != (6 * n_stages,):
        raise ValueError(f"state must have shape ({6 * n_stages},), got {x.shape}")
    if (x < 0.0).any():
        bad = int(np.argmin(x))
        raise ValueError(f"state must be nonnegative, entry {bad} is {x[bad]!r}")
    return x


def rhs(x: np.ndarray, inp: Inputs, fs: FlowSheet,
        flows: StageFlows | None = None) -> np.ndarray:
    """Time derivative of the reduced cascade model, mol/L/h.

    Mixer aqueous balances carry the countercurrent inflows, the outflows
    and the equilibrium organic export; settler balances relax toward the
    mixer aqueous and equilibrium organic concentrations.
    """
    n = fs.n_stages
    lay = StateLayout(n)
    x = np.asarray(x, dtype=float)
    if flows is None:
        flows = stage_flows(fs, inp.u, inp.p)
    A, A_in, VM = flows.A, flows.A_in, flows.VM
    p = inp.p
    U = x[lay.u_aq_m]
    H = x[lay.h_aq_m]
    _, Uog, Hog = organic_star(U, H, fs.TBP_total, fs.K_U, fs.K_H)
    uin = np.empty(n)
    uin[:-1] = x[lay.u_aq_d][1:]
    uin[-1] = 0.0  # scrub carries no uranium
    hin = np.empty(n)
    hin[:-1] = x[lay.h_aq_d][1:]
    hin[-1] = fs.H_scrub
    fu = A_in * uin
    fh = A_in * hin
    fu[fs.feed_stage - 1] += inp.u * fs.U_feed
    fh[fs.feed_stage - 1] += inp.u * fs.H_feed
    ogu = np.empty(n)
    ogu[1:] = x[lay.u_og_d][:-1]
    ogu[0] = fs.U_solvent_in
    ogh = np.empty(n)
    ogh[1:] = x[lay.h_og_d][:-1]
    ogh[0] = fs.H_solvent_in
    out = np.empty(6 * n)
    out[lay.u_aq_m] = (fu - A * U + p * ogu - p * Uog) / VM
    out[lay.h_aq_m] = (fh - A * H + p * ogh - p * Hog) / VM
    out[lay.u_aq_d] = A * (U - x[lay.u_aq_d]) / fs.V_settler_aq
    out[lay.h_aq_d] = A * (H - x[lay.h_aq_d]) / fs.V_settler_aq
    out[lay.u_og_d] = p * (Uog - x[lay.u_og_d]) / fs.V_settler_og
    out[lay.h_og_d] = p * (Hog - x[lay.h_og_d]) / fs.V_settler_og
    return out


def jacobian_x(x: np.ndarray, inp: Inputs, fs: FlowSheet,
               flows: StageFlows | None = None) -> np.ndarray:
    """Dense analytic Jacobian of rhs with respect to the state."""
    n = fs.n_stages
    lay = StateLayout(n)
    x = np.asarray(x, dtype=float)
    if flows is None:
        flows = stage_flows(fs, inp.u, inp.p)
    A, A_in, VM = flows.A, flows.A_in, flows.VM
    p = inp.p
    VD, WD = fs.V_settler_aq, fs.V_settler_og
    U = x[lay.u_aq_m]
    H = x[lay.h_aq_m]
    dUdU, dUdH, dHdU, dHdH = organic_star_partials(U, H, fs.TBP_total, fs.K_U, fs.K_H)
    J = np.zeros((6 * n, 6 * n))
    i = np.arange(n)
    um, ud, uod = i, n + i, 2 * n + i
    hm, hd, hod = 3 * n + i, 4 * n + i, 5 * n + i
    # mixer aqueous rows
    J[um, um] = (-A - p * dUdU) / VM
    J[um, hm] = -p * dUdH / VM
    J[hm, hm] = (-A - p * dHdH) / VM
    J[hm, um] = -p * dHdU / VM
    J[um[:-1], ud[1:]] = A_in[:-1] / VM[:-1]
    J[hm[:-1], hd[1:]] = A_in[:-1] / VM[:-1]
    J[um[1:], uod[:-1]] = p / VM[1:]
    J[hm[1:], hod[:-1]] = p / VM[1:]
    # settler aqueous rows
    J[ud, um] = A / VD
    J[ud, ud] = -A / VD
    J[hd, hm] = A / VD
    J[hd, hd] = -A / VD
    # settler organic rows
    J[uod, um] = p * dUdU / WD
    J[uod, hm] = p * dUdH / WD
    J[uod, uod] = -p / WD
    J[hod, um] = p * dHdU / WD
    J[hod, hm] = p * dHdH / WD
    J[hod, hod] = -p / WD
    return J


def jacobian_u(x: np.ndarray, inp: Inputs, fs: FlowSheet,
               flows: StageFlows | None = None) -> np.ndarray:
    """Analytic derivative of rhs with respect to the feed flow u."""
    n = fs.n_stages
    lay = StateLayout(n)
    x = np.asarray(x, dtype=float)
    if flows is None:
        flows = stage_flows(fs, inp.u, inp.p)
    A, A_in, VM = flows.A, flows.A_in, flows.VM
    p = inp.p
    feed0 = fs.feed_stage - 1
    dA = (np.arange(1, n + 1) <= fs.feed_stage).astype(float)
    dA_in = np.empty(n)
    dA_in[:-1] = dA[1:]
    dA_in[-1] = 0.0
    dVM = fs.V_mixer_total * p / (A + p) ** 2 * dA
    U = x[lay.u_aq_m]
    H = x[lay.h_aq_m]
    f = rhs(x, inp, fs, flows)
    uin = np.empty(n)
    uin[:-1] = x[lay.u_aq_d][1:]
    uin[-1] = 0.0
    hin = np.empty(n)
    hin[:-1] = x[lay.h_aq_d][1:]
    hin[-1] = 0.0
    din_u = dA_in * uin
    din_h = dA_in * hin
    din_u[feed0] += fs.U_feed
    din_h[feed0] += fs.H_feed
    out = np.zeros(6 * n)
    out[lay.u_aq_m] = (din_u - dA * U) / VM - f[lay.u_aq_m] * dVM / VM
    out[lay.h_aq_m] = (din_h - dA * H) / VM - f[lay.h_aq_m] * dVM / VM
    out[lay.u_aq_d] = dA * (U - x[lay.u_aq_d]) / fs.V_settler_aq
    out[lay.h_aq_d] = dA * (H - x[lay.h_aq_d]) / fs.V_settler_aq
    return out


@dataclass
class StepResult:
    """State after one control interval plus integration bookkeeping."""

    state: np.ndarray
    clamp: float          # total magnitude clamped away from negative values
    out_U: float          # integral of uranium outflow over the interval, mol
    out_H: float          # integral of acid outflow over the interval, mol


def _kernel_args(fs: FlowSheet, inp: Inputs, flows: StageFlows):
    return (flows.A, flows.A_in, flows.VM, inp.p, fs.V_settler_aq,
            fs.V_settler_og, fs.TBP_total, fs.K_U, fs.K_H, inp.u,
            fs.U_feed, fs.H_feed, fs.H_scrub, fs.U_solvent_in,
            fs.H_solvent_in, fs.feed_stage - 1, fs.n_stages)


def _substeps(T_s: float, h_sub: float) -> int:
    n_sub = T_s / h_sub
    n_int = int(round(n_sub))
    if n_int < 1 or abs(n_sub - n_int) > 1e-9 * max(1.0, n_int):
        raise ValueError(f"T_s/h_sub must be a positive integer, got {n_sub!r}")
    return n_int


def step(x: np.ndarray, inp: Inputs, fs: FlowSheet, T_s: float,
         h_sub: float) -> StepResult:
    """Advance one control interval with N_s = T_s/h_sub explicit-Euler substeps.

    Inputs are held constant over the interval. Negative entries produced
    by discretization error are clamped to zero with the clamped magnitude
    recorded; a state exceeding the divergence guard raises DivergenceError.
    """
    n_sub = _substeps(T_s, h_sub)
    y = np.array(x, dtype=float)
    flows = stage_flows(fs, inp.u, inp.p)
    acc = np.zeros(3)
    bad = _kernels.euler_plain(y, n_sub, h_sub, *_kernel_args(fs, inp, flows),
                               DIVERGENCE_GUARD, acc)
    if bad:
        raise DivergenceError(
            f"state exceeded {DIVERGENCE_GUARD:g} mol/L at substep {bad - 1}; "
            f"reduce h_sub", step_index=bad - 1)
    return StepResult(state=y, clamp=float(acc[0]),
                      out_U=float(acc[1]), out_H=float(acc[2]))


@dataclass
class BalanceReport:
    """Species inventory audit over a simulated window.

    ``drift`` compares the change of the model-transported holdup (mixer
    aqueous + settler aqueous + settler organic) against the integrated
    inlet/outlet flows; the reduced dynamics conserve this quantity exactly,
    so drift measures integrator and routing errors only. ``drift_total``
    additionally counts the mixer organic inventory evaluated from the
    equilibrium closure, whose rate of change the model reduction drops.
    """

    inflow: float
    outflow: float
    holdup_start: float
    holdup_end: float
    holdup_total_start: float
    holdup_total_end: float

    @property
    def drift(self) -> float:
        return (self.holdup_end - self.holdup_start) - (self.inflow - self.outflow)

    @property
    def drift_total(self) -> float:
        return (self.holdup_total_end - self.holdup_total_start) - (self.inflow - self.outflow)

    def relative_drift(self) -> float:
        return abs(self.drift) / max(self.inflow, 1e-300)

    def relative_drift_total(self) -> float:
        return abs(self.drift_total) / max(self.inflow, 1e-300)


def holdup(x: np.ndarray, fs: FlowSheet, u: float, p: float):
    """(transported, total) uranium and acid inventories for one state, mol.

    Returns ((U_transported, U_total), (H_transported, H_total)) where the
    transported inventory excludes the equilibrium organic content of the
    mixers and the total includes it.
    """
    lay = StateLayout(fs.n_stages)
    flows = stage_flows(fs, u, p)
    x = np.asarray(x, dtype=float)
    _, Uog, Hog = organic_star(x[lay.u_aq_m], x[lay.h_aq_m],
                               fs.TBP_total, fs.K_U, fs.K_H)
    u_carried = (flows.VM @ x[lay.u_aq_m]
                 + fs.V_settler_aq * x[lay.u_aq_d].sum()
                 + fs.V_settler_og * x[lay.u_og_d].sum())
    h_carried = (flows.VM @ x[lay.h_aq_m]
                 + fs.V_settler_aq * x[lay.h_aq_d].sum()
                 + fs.V_settler_og * x[lay.h_og_d].sum())
    u_total = u_carried + flows.WM @ Uog
    h_total = h_carried + flows.WM @ Hog
    return (u_carried, u_total), (h_carried, h_total)


@dataclass
class Trajectory:
    """Closed- or open-loop trajectory sampled on the control grid.

    ``states`` has one more row than ``u``; ``p`` is stored per state row
    (the value governing the interval that starts there, repeated on the
    final row). Clamp magnitudes are recorded per control step.
    """

    t: np.ndarray                  # (K+1,) hours
    states: np.ndarray             # (K+1, 6n)
    u: np.ndarray                  # (K,)
    p: np.ndarray                  # (K+1,)
    clamp: np.ndarray              # (K,)
    T_s: float
    h_sub: float
    n_stages: int
    balance_U: BalanceReport | None = None
    balance_H: BalanceReport | None = None

    @property
    def n_steps(self) -> int:
        return len(self.u)

    def loaded_solvent(self) -> np.ndarray:
        lay = StateLayout(self.n_stages)
        return self.states[:, lay.loaded_index]

    def raffinate(self) -> np.ndarray:
        lay = StateLayout(self.n_stages)
        return self.states[:, lay.raffinate_index]


def simulate(x0: np.ndarray, u_seq, p_seq, fs: FlowSheet, T_s: float,
             h_sub: float) -> Trajectory:
    """Integrate a piecewise-constant input sequence from x0.

    ``u_seq`` and ``p_seq`` must have equal length K; the result holds K+1
    states. Species inflow/outflow integrals are accumulated at substep
    resolution and attached as balance reports.
    """
    u_seq = np.asarray(u_seq, dtype=float)
    p_seq = np.asarray(p_seq, dtype=float)
    if u_seq.shape != p_seq.shape or u_seq.ndim != 1:
        raise ValueError("u_seq and p_seq must be 1-D arrays of equal length")
    K = len(u_seq)
    lay = StateLayout(fs.n_stages)
    x0 = validate_state(x0, fs.n_stages)
    states = np.empty((K + 1, lay.n_states))
    states[0] = x0
    clamp = np.zeros(K)
    in_U = in_H = out_U = out_H = 0.0
    h0 = holdup(x0, fs, u_seq[0] if K else fs.A_F_nominal,
                p_seq[0] if K else fs.O_E_nominal)
    x = x0
    for k in range(K):
        inp = Inputs(u=float(u_seq[k]), p=float(p_seq[k]))
        try:
            res = step(x, inp, fs, T_s, h_sub)
        except DivergenceError as exc:
            raise DivergenceError(f"divergence during control step {k}: {exc}",
                                  step_index=k) from exc
        x = res.state
        states[k + 1] = x
        clamp[k] = res.clamp
        in_U += T_s * (inp.u * fs.U_feed + inp.p * fs.U_solvent_in)
        in_H += T_s * (inp.u * fs.H_feed + fs.A_E * fs.H_scrub
                       + inp.p * fs.H_solvent_in)
        out_U += res.out_U
        out_H += res.out_H
    h1 = holdup(x, fs, u_seq[-1] if K else fs.A_F_nominal,
                p_seq[-1] if K else fs.O_E_nominal)
    t = np.arange(K + 1) * T_s
    p_rows = np.empty(K + 1)
    p_rows[:K] = p_seq
    p_rows[K] = p_seq[-1] if K else fs.O_E_nominal
    bal_U = BalanceReport(inflow=in_U, outflow=out_U,
                          holdup_start=h0[0][0], holdup_end=h1[0][0],
                          holdup_total_start=h0[0][1], holdup_total_end=h1[0][1])
    bal_H = BalanceReport(inflow=in_H, outflow=out_H,
                          holdup_start=h0[1][0], holdup_end=h1[1][0],
                          holdup_total_start=h0[1][1], holdup_total_end=h1[1][1])
    return Trajectory(t=t, states=states, u=u_seq.copy(), p=p_rows,
                      clamp=clamp, T_s=T_s, h_sub=h_sub, n_stages=fs.n_stages,
                      balance_U=bal_U, balance_H=bal_H)


def write_trajectory_csv(traj: Trajectory, path, fs: FlowSheet):
    """Export a trajectory: t, u, p, all states in block order, then the
    equilibrium organic mixer concentration of the last stage."""
    lay = StateLayout(traj.n_stages)
    path = Path(path)
    last = lay.u_aq_m.stop - 1
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "u", "p"] + lay.column_names()
                        + [f"u_og_m_eq_{traj.n_stages}"])
        for k in range(len(traj.t)):
            x = traj.states[k]
            _, Uog, _ = organic_star(x[last], x[3 * traj.n_stages + last],
                                     fs.TBP_total, fs.K_U, fs.K_H)
            u_k = traj.u[min(k, traj.n_steps - 1)] if traj.n_steps else 0.0
            row = [traj.t[k], u_k, traj.p[k]] + list(x) + [float(Uog)]
            writer.writerow(["%.17g" % v for v in row])
