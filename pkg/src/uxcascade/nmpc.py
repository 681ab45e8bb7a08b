"""Receding-horizon tracking controller by single shooting.

Decision variables are the horizon's feed-flow moves plus one nonnegative
slack per predicted state for the raffinate tolerance; predicted states
are generated by the same discrete Euler map as the plant, with the
solvent flow held at its measured value over the horizon. Objective
gradients and constraint Jacobians are exact: the shooting map propagates
analytic state sensitivities alongside the states.

The raffinate constraint is softened with an L1 slack so the problem is
feasible from over-saturated initial states; the penalty weight is large
enough to act as an exact penalty (slacks vanish whenever the hard
constraint is attainable). State nonnegativity is not imposed on the NLP:
the discrete model clamps, which keeps predictions physical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, nnls

from . import _kernels
from .cascade import DIVERGENCE_GUARD, StateLayout, validate_state
from .errors import DivergenceError
from .flowsheet import FlowSheet, stage_flows
from .steady_state import SetPoint

__all__ = ["MpcWeights", "OcpOptions", "OcpSpec", "OcpSolution",
           "SolverDiagnostics", "Ocp", "build_ocp", "solve_ocp", "mpc_step",
           "NmpcController", "gradient_error"]


def _check_weight(name, W, n):
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        if W <= 0:
            raise ValueError(f"{name} must be positive, got {float(W)!r}")
        return float(W)
    if W.ndim == 1:
        if W.shape != (n,):
            raise ValueError(f"diagonal {name} must have length {n}, got {W.shape}")
        if (W <= 0).any():
            raise ValueError(f"all diagonal entries of {name} must be positive")
        return W
    if W.ndim == 2:
        if W.shape != (n, n):
            raise ValueError(f"{name} must be {n}x{n}, got {W.shape}")
        if not np.allclose(W, W.T, rtol=1e-10, atol=1e-12):
            raise ValueError(f"{name} must be symmetric")
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"{name} must be positive definite") from exc
        return W
    raise ValueError(f"{name} must be a scalar, vector or matrix")


def _wdot(W, v):
    """W @ v for scalar / diagonal / full weight representations."""
    if isinstance(W, float):
        return W * v
    if W.ndim == 1:
        return W * v
    return W @ v


@dataclass
class MpcWeights:
    """Quadratic weights: Q (stage states), P (terminal), R, S (input) scalars.

    Q and P accept a positive scalar (multiple of identity), a positive
    diagonal vector or a full symmetric positive definite matrix. R and S
    default to 1/u_set when left as None.
    """

    Q: object = 1.0
    P: object = 1.0
    R: float | None = None
    S: float | None = None

    def validated(self, n_states: int) -> "MpcWeights":
        Q = _check_weight("Q", self.Q, n_states)
        P = _check_weight("P", self.P, n_states)
        for name, val in (("R", self.R), ("S", self.S)):
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive, got {val!r}")
        return MpcWeights(Q=Q, P=P, R=self.R, S=self.S)

    def max_q(self) -> float:
        Q = self.Q
        if isinstance(Q, float):
            return Q
        Q = np.asarray(Q)
        return float(np.abs(Q).max())


@dataclass
class OcpOptions:
    """Solver and transcription knobs for one optimal control problem."""

    N_p: int = 10
    T_s: float = 0.5
    h_sub: float = 1e-3
    h_sub_pred: float | None = None   # coarser prediction substep, optional
    kkt_tol: float = 1e-6
    max_iter: int = 200
    rho: float | None = None          # slack penalty; default 1e6 * max(Q)


@dataclass
class OcpSpec:
    """Data of one horizon problem: initial state, previous applied input,
    tracking set point, held parameter, horizon, weights, bounds and the
    raffinate tolerance."""

    x_k: np.ndarray
    u_prev: float
    setpoint: SetPoint
    p_hat: float
    N_p: int
    T_s: float
    weights: MpcWeights
    u_min: float
    u_max: float
    du_min: float
    du_max: float
    raffinate_tol: float
    rho: float
    h_sub: float

    def __post_init__(self):
        if self.N_p < 1:
            raise ValueError(f"N_p must be >= 1, got {self.N_p!r}")
        if not (self.u_min < self.u_max) or not (self.du_min < 0.0 < self.du_max):
            raise ValueError("inconsistent input bounds")


@dataclass
class SolverDiagnostics:
    iterations: int
    kkt_residual: float
    status: str
    message: str
    n_evaluations: int
    max_constraint_violation: float
    note: str = "state nonnegativity enforced by the clamped discrete model, not as NLP constraints"


@dataclass
class OcpSolution:
    u_star: np.ndarray
    slacks: np.ndarray
    predicted_states: np.ndarray
    objective: float
    diagnostics: SolverDiagnostics


class _Record:
    __slots__ = ("states", "sens")

    def __init__(self, states, sens):
        self.states = states
        self.sens = sens


class Ocp:
    """A built horizon problem: shooting map, objective, constraints."""

    def __init__(self, spec: OcpSpec, fs: FlowSheet,
                 max_iter: int = 200, kkt_tol: float = 1e-6):
        self.spec = spec
        self.fs = fs
        self.max_iter = max_iter
        self.kkt_tol = kkt_tol
        self.lay = StateLayout(fs.n_stages)
        self.x_k = validate_state(spec.x_k, fs.n_stages)
        self.weights = spec.weights.validated(self.lay.n_states)
        if self.weights.R is None:
            self.weights.R = 1.0 / spec.setpoint.u_set
        if self.weights.S is None:
            self.weights.S = 1.0 / spec.setpoint.u_set
        n_sub = spec.T_s / spec.h_sub
        self.n_sub = int(round(n_sub))
        if self.n_sub < 1 or abs(n_sub - self.n_sub) > 1e-9 * max(1.0, self.n_sub):
            raise ValueError("T_s/h_sub must be a positive integer")
        self._cache: dict[bytes, _Record] = {}
        self.n_evaluations = 0
        # per-stage arrays reused across evaluations are u-dependent, so
        # they are rebuilt inside the kernels' argument helper
        m = spec.N_p
        D = np.eye(m) - np.eye(m, k=-1)
        self._D = D
        self._e0 = np.zeros(m)
        self._e0[0] = 1.0
        # per-row normalization of the stacked inequalities (raffinate rows
        # in units of the tolerance, rate rows in L/h)
        self._c_scale = np.concatenate((np.full(m, spec.raffinate_tol),
                                        np.ones(2 * m)))

    # -- shooting -----------------------------------------------------------

    def _kernel_args(self, u, flows):
        fs, spec = self.fs, self.spec
        return (flows.A, flows.A_in, flows.VM, spec.p_hat, fs.V_settler_aq,
                fs.V_settler_og, fs.TBP_total, fs.K_U, fs.K_H, u,
                fs.U_feed, fs.H_feed, fs.H_scrub, fs.U_solvent_in,
                fs.H_solvent_in, fs.feed_stage - 1, fs.n_stages)

    def _du_arrays(self, flows):
        fs = self.fs
        n = fs.n_stages
        dA = (np.arange(1, n + 1) <= fs.feed_stage).astype(float)
        dA_in = np.empty(n)
        dA_in[:-1] = dA[1:]
        dA_in[-1] = 0.0
        dVM = fs.V_mixer_total * self.spec.p_hat / (flows.A + self.spec.p_hat) ** 2 * dA
        return dA, dA_in, dVM

    def _shoot(self, u_seq: np.ndarray, need_sens: bool) -> _Record:
        key = u_seq.tobytes()
        rec = self._cache.get(key)
        if rec is not None and (rec.sens is not None or not need_sens):
            return rec
        spec = self.spec
        h = spec.h_sub
        m = spec.N_p
        y = self.x_k.copy()
        states = np.empty((m + 1, self.lay.n_states))
        states[0] = y
        self.n_evaluations += 1
        if need_sens:
            S = np.zeros((self.lay.n_states, m))
            sens = np.empty((m, self.lay.n_states, m))
            for i in range(m):
                flows = stage_flows(self.fs, float(u_seq[i]), spec.p_hat)
                dA, dA_in, dVM = self._du_arrays(flows)
                bad = _kernels.euler_sens(
                    y, S, self.n_sub, h,
                    *self._kernel_args(float(u_seq[i]), flows),
                    DIVERGENCE_GUARD, i, dA, dA_in, dVM)
                if bad:
                    raise DivergenceError(
                        f"prediction diverged in horizon step {i}", step_index=i)
                states[i + 1] = y
                sens[i] = S
            rec = _Record(states, sens)
        else:
            acc = np.zeros(3)
            for i in range(m):
                flows = stage_flows(self.fs, float(u_seq[i]), spec.p_hat)
                bad = _kernels.euler_plain(
                    y, self.n_sub, h,
                    *self._kernel_args(float(u_seq[i]), flows),
                    DIVERGENCE_GUARD, acc)
                if bad:
                    raise DivergenceError(
                        f"prediction diverged in horizon step {i}", step_index=i)
                states[i + 1] = y
            rec = _Record(states, None)
        if len(self._cache) > 256:
            self._cache.clear()
        self._cache[key] = rec
        return rec

    # -- objective and constraints -------------------------------------------

    def split(self, z):
        m = self.spec.N_p
        return np.asarray(z[:m], dtype=float), np.asarray(z[m:], dtype=float)

    def objective(self, z) -> float:
        u, s = self.split(z)
        spec, w = self.spec, self.weights
        rec = self._shoot(u, need_sens=False)
        x_set = spec.setpoint.x_set
        J = 0.0
        for i in range(spec.N_p):           # stage state cost on x(0..N_p-1)
            dx = rec.states[i] - x_set
            J += float(dx @ _wdot(w.Q, dx))
        dxN = rec.states[spec.N_p] - x_set   # terminal state
        J += float(dxN @ _wdot(w.P, dxN))
        du_t = u - spec.setpoint.u_set
        J += w.R * float(du_t @ du_t)
        moves = np.diff(np.concatenate(([spec.u_prev], u)))
        J += w.S * float(moves @ moves)
        J += spec.rho * float(s.sum())
        return J

    def gradient(self, z) -> np.ndarray:
        u, s = self.split(z)
        spec, w = self.spec, self.weights
        m = spec.N_p
        rec = self._shoot(u, need_sens=True)
        x_set = spec.setpoint.x_set
        g_u = np.zeros(m)
        for i in range(1, m):               # x(i), i=1..N_p-1 under Q
            dx = rec.states[i] - x_set
            g_u += 2.0 * (_wdot(w.Q, dx) @ rec.sens[i - 1])
        dxN = rec.states[m] - x_set
        g_u += 2.0 * (_wdot(w.P, dxN) @ rec.sens[m - 1])
        g_u += 2.0 * w.R * (u - spec.setpoint.u_set)
        moves = np.diff(np.concatenate(([spec.u_prev], u)))
        g_u += 2.0 * w.S * (self._D.T @ moves)
        return np.concatenate((g_u, np.full(m, spec.rho)))

    def constraints(self, z) -> np.ndarray:
        """All inequality constraints stacked as c(z) >= 0: raffinate
        tolerance with slack, then rate upper, then rate lower."""
        u, s = self.split(z)
        spec = self.spec
        rec = self._shoot(u, need_sens=False)
        raff = rec.states[1:, self.lay.raffinate_index]
        c_raff = spec.raffinate_tol + s - raff
        moves = self._D @ u - spec.u_prev * self._e0
        c_up = spec.du_max - moves
        c_lo = moves - spec.du_min
        return np.concatenate((c_raff, c_up, c_lo))

    def constraints_jac(self, z) -> np.ndarray:
        u, s = self.split(z)
        spec = self.spec
        m = spec.N_p
        rec = self._shoot(u, need_sens=True)
        Jc = np.zeros((3 * m, 2 * m))
        for i in range(m):
            Jc[i, :m] = -rec.sens[i][self.lay.raffinate_index]
            Jc[i, m + i] = 1.0
        Jc[m:2 * m, :m] = -self._D
        Jc[2 * m:, :m] = self._D
        return Jc

    def predicted_states(self, u_seq) -> np.ndarray:
        return self._shoot(np.asarray(u_seq, dtype=float), need_sens=False).states

    # -- internally scaled mirror for the NLP solver ---------------------------
    #
    # The slack gradient rho ~ 1e6 dwarfs the input gradients and stalls
    # SLSQP's scaling heuristics, so the solver works on sigma = rho*s
    # (slack in cost units, unit gradient) with the raffinate constraint
    # normalized by the tolerance. Objective values are identical.

    def _z_from_scaled(self, zs):
        u = zs[:self.spec.N_p]
        s = zs[self.spec.N_p:] / self.spec.rho
        return np.concatenate((u, s))

    def _z_to_scaled(self, z):
        u = z[:self.spec.N_p]
        sigma = z[self.spec.N_p:] * self.spec.rho
        return np.concatenate((u, sigma))

    def _objective_scaled(self, zs):
        return self.objective(self._z_from_scaled(zs))

    def _gradient_scaled(self, zs):
        g = self.gradient(self._z_from_scaled(zs))
        g[self.spec.N_p:] = 1.0
        return g

    def _constraints_scaled(self, zs):
        return self.constraints(self._z_from_scaled(zs)) / self._c_scale

    def _constraints_jac_scaled(self, zs):
        Jc = self.constraints_jac(self._z_from_scaled(zs)).copy()
        m = self.spec.N_p
        Jc[:, m:] /= self.spec.rho
        return Jc / self._c_scale[:, None]

    # -- initial guess -------------------------------------------------------

    def feasible_guess(self, warm_start=None) -> np.ndarray:
        """Bound- and rate-feasible start; slacks set to the exact violation
        of the predicted raffinate, which is their optimum for fixed inputs."""
        spec = self.spec
        m = spec.N_p
        if warm_start is not None:
            u = np.asarray(warm_start, dtype=float).copy()
            if u.shape != (m,):
                raise ValueError(f"warm start must have length {m}")
        else:
            u = np.full(m, spec.setpoint.u_set)
        prev = spec.u_prev
        for i in range(m):
            lo = max(spec.u_min, prev + spec.du_min)
            hi = min(spec.u_max, prev + spec.du_max)
            u[i] = min(max(u[i], lo), hi)
            prev = u[i]
        raff = self._shoot(u, need_sens=False).states[1:, self.lay.raffinate_index]
        s = np.maximum(0.0, raff - spec.raffinate_tol)
        return np.concatenate((u, s))


def build_ocp(spec: OcpSpec, fs: FlowSheet, max_iter: int = 200,
              kkt_tol: float = 1e-6) -> Ocp:
    """Assemble the horizon problem; construction always succeeds for a
    valid spec."""
    return Ocp(spec, fs, max_iter=max_iter, kkt_tol=kkt_tol)


def _kkt_residual(ocp: Ocp, z: np.ndarray, act_tol: float = 1e-7):
    """Scaled KKT stationarity residual and worst feasibility violation.

    Multipliers for the active set are recovered by nonnegative least
    squares; the stationarity residual is normalized per component by
    1 + |gradient|.
    """
    g = ocp.gradient(z)
    c = ocp.constraints(z)
    Jc = ocp.constraints_jac(z)
    spec = ocp.spec
    m = spec.N_p
    cols = [Jc[k] for k in range(len(c)) if c[k] <= act_tol]
    u, s = ocp.split(z)
    for i in range(m):
        if u[i] - spec.u_min <= act_tol:
            e = np.zeros(2 * m)
            e[i] = 1.0
            cols.append(e)
        if spec.u_max - u[i] <= act_tol:
            e = np.zeros(2 * m)
            e[i] = -1.0
            cols.append(e)
        if s[i] <= act_tol:
            e = np.zeros(2 * m)
            e[m + i] = 1.0
            cols.append(e)
    if cols:
        M = np.column_stack(cols)
        lam, _ = nnls(M, g)
        r = g - M @ lam
    else:
        r = g
    stationarity = float(np.max(np.abs(r) / (1.0 + np.abs(g))))
    feas = float(max(0.0, -c.min())) if len(c) else 0.0
    feas = max(feas,
               float(max(0.0, (spec.u_min - u).max())),
               float(max(0.0, (u - spec.u_max).max())),
               float(max(0.0, (-s).max())))
    return stationarity, feas


def solve_ocp(problem: Ocp, warm_start: np.ndarray | None = None) -> OcpSolution:
    """Solve the horizon NLP to first-order optimality.

    Warm starts are clipped into the feasible box/rate region. The result
    status is 'optimal' only if the recovered KKT residual meets the
    tolerance and all hard constraints hold.
    """
    spec = problem.spec
    m = spec.N_p
    z0 = problem.feasible_guess(warm_start)
    bounds = [(spec.u_min, spec.u_max)] * m + [(0.0, None)] * m
    res = minimize(problem._objective_scaled, problem._z_to_scaled(z0),
                   jac=problem._gradient_scaled,
                   method="SLSQP", bounds=bounds,
                   constraints=[{"type": "ineq",
                                 "fun": problem._constraints_scaled,
                                 "jac": problem._constraints_jac_scaled}],
                   options={"maxiter": problem.max_iter, "ftol": 1e-12})
    z = problem._z_from_scaled(np.asarray(res.x, dtype=float))
    u, s = problem.split(z)
    # defensive hard-constraint polish; a no-op when the solver converged
    u = np.clip(u, spec.u_min, spec.u_max)
    prev = spec.u_prev
    for i in range(m):
        lo = max(spec.u_min, prev + spec.du_min)
        hi = min(spec.u_max, prev + spec.du_max)
        u[i] = min(max(u[i], lo), hi)
        prev = u[i]
    s = np.maximum(s, 0.0)
    z = np.concatenate((u, s))
    kkt, feas = _kkt_residual(problem, z)
    obj = problem.objective(z)
    states = problem.predicted_states(u)
    if kkt <= problem.kkt_tol and feas <= 1e-8 and res.status in (0, 9):
        status = "optimal"
    elif res.nit >= problem.max_iter:
        status = "max_iterations"
    else:
        status = "stalled"
    diag = SolverDiagnostics(iterations=int(res.nit), kkt_residual=kkt,
                             status=status, message=str(res.message),
                             n_evaluations=problem.n_evaluations,
                             max_constraint_violation=feas)
    return OcpSolution(u_star=u, slacks=s, predicted_states=states,
                       objective=float(obj), diagnostics=diag)


def mpc_step(x_k, u_prev: float, setpoint: SetPoint, p_now: float,
             fs: FlowSheet, weights: MpcWeights | None = None,
             options: OcpOptions | None = None,
             warm_start: np.ndarray | None = None):
    """One receding-horizon step: build, solve, return the first input.

    The returned input is defensively clamped to the box and rate bounds;
    solver trouble is reported through the solution diagnostics rather
    than raised, so a bound-feasible input is always available.
    """
    opts = options or OcpOptions()
    weights = weights or MpcWeights()
    rho = opts.rho if opts.rho is not None else 1e6 * weights.max_q()
    spec = OcpSpec(x_k=np.asarray(x_k, dtype=float), u_prev=float(u_prev),
                   setpoint=setpoint, p_hat=float(p_now), N_p=opts.N_p,
                   T_s=opts.T_s, weights=weights,
                   u_min=fs.u_min, u_max=fs.u_max,
                   du_min=fs.du_min, du_max=fs.du_max,
                   raffinate_tol=fs.raffinate_tol, rho=rho,
                   h_sub=opts.h_sub_pred or opts.h_sub)
    problem = build_ocp(spec, fs, max_iter=opts.max_iter, kkt_tol=opts.kkt_tol)
    solution = solve_ocp(problem, warm_start=warm_start)
    u0 = float(solution.u_star[0])
    u0 = min(max(u0, fs.u_min), fs.u_max)
    u0 = min(max(u0, u_prev + fs.du_min), u_prev + fs.du_max)
    return u0, solution


class NmpcController:
    """Closed-loop wrapper threading shifted warm starts between steps."""

    def __init__(self, fs: FlowSheet, weights: MpcWeights | None = None,
                 options: OcpOptions | None = None):
        self.fs = fs
        self.weights = weights or MpcWeights()
        self.options = options or OcpOptions()
        self._last_u = None

    def reset(self):
        self._last_u = None

    def step(self, x_k, u_prev: float, setpoint: SetPoint, p_now: float):
        warm = None
        if self._last_u is not None:
            warm = np.concatenate((self._last_u[1:], self._last_u[-1:]))
        u, sol = mpc_step(x_k, u_prev, setpoint, p_now, self.fs,
                          self.weights, self.options, warm_start=warm)
        self._last_u = sol.u_star
        return u, sol


def gradient_error(problem: Ocp, z: np.ndarray, fd_step: float) -> float:
    """Worst-case mismatch between the analytic objective gradient and a
    central finite difference over the input components, relative to
    max(1, |FD value|)."""
    g = problem.gradient(z)
    m = problem.spec.N_p
    worst = 0.0
    for j in range(m):
        zp = z.copy()
        zp[j] += fd_step
        zm = z.copy()
        zm[j] -= fd_step
        fd = (problem.objective(zp) - problem.objective(zm)) / (2.0 * fd_step)
        worst = max(worst, abs(g[j] - fd) / max(1.0, abs(fd)))
    return worst
