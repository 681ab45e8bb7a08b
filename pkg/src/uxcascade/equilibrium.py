"""Closed-form chemical equilibrium closure for the mixer organic phase.

Uranium and nitric acid compete for the free extractant. Substituting the
two mass-action laws

    U_og* = K_U * U_aq * NO3^2 * T^2
    H_og* = K_H * H_aq * NO3  * T

into the extractant balance  T + 2*U_og* + H_og* = TBP_total  yields a
scalar quadratic  a*T^2 + b*T - TBP_total = 0  for the free extractant T,
with a = 2*K_U*U_aq*NO3^2 and b = 1 + K_H*H_aq*NO3. Both coefficients are
nonnegative, so the quadratic has exactly one nonnegative root.

All functions accept scalars or numpy arrays and are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AqueousPoint", "EquilibriumResult", "nitrate", "free_tbp",
           "organic_star", "organic_star_partials", "solve_equilibrium"]

# Below this fraction of b^2/TBP_total the quadratic coefficient is treated
# as zero and the linear branch T = TBP_total/b is used, avoiding 0/0.
_LINEAR_BRANCH_RTOL = 1e-14


@dataclass(frozen=True)
class AqueousPoint:
    """Mixer aqueous concentrations, mol/L."""

    U_aq: float
    H_aq: float

    def __post_init__(self):
        if self.U_aq < 0.0 or self.H_aq < 0.0:
            raise ValueError(
                f"aqueous concentrations must be nonnegative, "
                f"got U_aq={self.U_aq!r}, H_aq={self.H_aq!r}")


@dataclass(frozen=True)
class EquilibriumResult:
    """Equilibrium state of the organic phase for one aqueous point."""

    NO3: float
    TBP_free: float
    U_og_star: float
    H_og_star: float


def nitrate(U_aq, H_aq):
    """Total aqueous nitrate concentration 2*U_aq + H_aq."""
    return 2.0 * np.asarray(U_aq, dtype=float) + np.asarray(H_aq, dtype=float)


def free_tbp(U_aq, H_aq, TBP_total, K_U, K_H):
    """Free extractant concentration, the nonnegative quadratic root.

    Uses the cancellation-free form T = 2*C / (b + sqrt(b^2 + 4*a*C)) and
    switches to the linear solution T = C/b when the quadratic coefficient
    underflows relative to b^2/C.
    """
    U = np.asarray(U_aq, dtype=float)
    H = np.asarray(H_aq, dtype=float)
    no3 = 2.0 * U + H
    a = 2.0 * K_U * U * no3 * no3
    b = 1.0 + K_H * H * no3
    linear = a < _LINEAR_BRANCH_RTOL * (b * b / TBP_total)
    root = 2.0 * TBP_total / (b + np.sqrt(b * b + 4.0 * a * TBP_total))
    return np.where(linear, TBP_total / b, root)


def organic_star(U_aq, H_aq, TBP_total, K_U, K_H):
    """Equilibrium organic concentrations (TBP_free, U_og*, H_og*)."""
    U = np.asarray(U_aq, dtype=float)
    H = np.asarray(H_aq, dtype=float)
    no3 = 2.0 * U + H
    T = free_tbp(U, H, TBP_total, K_U, K_H)
    U_og = K_U * U * no3 * no3 * T * T
    H_og = K_H * H * no3 * T
    return T, U_og, H_og


def organic_star_partials(U_aq, H_aq, TBP_total, K_U, K_H):
    """Partial derivatives of the equilibrium organic concentrations.

    Returns (dU_og/dU_aq, dU_og/dH_aq, dH_og/dU_aq, dH_og/dH_aq), obtained
    by implicit differentiation of the quadratic closure. The implicit
    denominator 2*a*T + b is bounded below by 1, so the expressions are
    valid on both quadratic and linear branches.
    """
    U = np.asarray(U_aq, dtype=float)
    H = np.asarray(H_aq, dtype=float)
    no3 = 2.0 * U + H
    T = free_tbp(U, H, TBP_total, K_U, K_H)
    a = 2.0 * K_U * U * no3 * no3
    b = 1.0 + K_H * H * no3
    da_dU = 2.0 * K_U * no3 * (no3 + 4.0 * U)
    da_dH = 4.0 * K_U * U * no3
    db_dU = 2.0 * K_H * H
    db_dH = K_H * (no3 + H)
    denom = 2.0 * a * T + b
    dT_dU = -(T * T * da_dU + T * db_dU) / denom
    dT_dH = -(T * T * da_dH + T * db_dH) / denom
    dUog_dU = K_U * T * (T * (no3 * no3 + 4.0 * U * no3) + 2.0 * U * no3 * no3 * dT_dU)
    dUog_dH = 2.0 * K_U * U * no3 * T * (T + no3 * dT_dH)
    dHog_dU = K_H * H * (2.0 * T + no3 * dT_dU)
    dHog_dH = K_H * ((no3 + H) * T + H * no3 * dT_dH)
    return dUog_dU, dUog_dH, dHog_dU, dHog_dH


def solve_equilibrium(pt: AqueousPoint, TBP_total: float, K_U: float,
                      K_H: float) -> EquilibriumResult:
    """Solve the equilibrium closure for a single aqueous point.

    The returned quantities satisfy the extractant balance
    TBP_free + 2*U_og_star + H_og_star = TBP_total to machine precision.
    """
    if TBP_total <= 0.0:
        raise ValueError(f"TBP_total must be strictly positive, got {TBP_total!r}")
    if K_U <= 0.0 or K_H <= 0.0:
        raise ValueError(f"equilibrium constants must be strictly positive, "
                         f"got K_U={K_U!r}, K_H={K_H!r}")
    T, U_og, H_og = organic_star(pt.U_aq, pt.H_aq, TBP_total, K_U, K_H)
    return EquilibriumResult(NO3=float(nitrate(pt.U_aq, pt.H_aq)),
                             TBP_free=float(T),
                             U_og_star=float(U_og),
                             H_og_star=float(H_og))
