"""Hot inner loops of the fixed-step integrator.

The explicit-Euler substep loop dominates every simulation, steady-state
seed and horizon evaluation, so it is JIT-compiled with numba when
available; otherwise vectorized numpy fallbacks with identical semantics
are used. Both paths operate on the flat state vector with block layout

    [0:n)    U aqueous, mixers        [3n:4n)  H aqueous, mixers
    [n:2n)   U aqueous, settlers      [4n:5n)  H aqueous, settlers
    [2n:3n)  U organic, settlers      [5n:6n)  H organic, settlers

and clamp any negative entry produced by discretization error to zero,
accumulating the clamped magnitude. A nonzero return value k+1 flags
divergence (some state exceeded ``guard``) at substep k.

The sensitivity kernel additionally propagates S = d(state)/d(inputs)
through the same discrete map, using the analytic Jacobian of the
right-hand side; column ``j_col`` receives the direct input sensitivity
of the feed flow applied during this control interval.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False


def _euler_plain_loop(y, nsub, h, A, A_in, VM, p, VD, WD, TBP, KU, KH,
                      u, U_F, H_F, H_scrub, U_solv, H_solv, feed0, n,
                      guard, acc):
    f = np.empty(6 * n)
    for k in range(nsub):
        acc[1] += h * (A[0] * y[n] + p * y[3 * n - 1])
        acc[2] += h * (A[0] * y[4 * n] + p * y[6 * n - 1])
        for i in range(n):
            U = y[i]
            H = y[3 * n + i]
            no3 = 2.0 * U + H
            a = 2.0 * KU * U * no3 * no3
            b = 1.0 + KH * H * no3
            if a * TBP < 1e-14 * b * b:
                T = TBP / b
            else:
                T = 2.0 * TBP / (b + np.sqrt(b * b + 4.0 * a * TBP))
            Uog = KU * U * no3 * no3 * T * T
            Hog = (b - 1.0) * T
            if i == n - 1:
                fu = A_in[i] * 0.0
                fh = A_in[i] * H_scrub
            else:
                fu = A_in[i] * y[n + i + 1]
                fh = A_in[i] * y[4 * n + i + 1]
            if i == feed0:
                fu += u * U_F
                fh += u * H_F
            if i == 0:
                ogu = U_solv
                ogh = H_solv
            else:
                ogu = y[2 * n + i - 1]
                ogh = y[5 * n + i - 1]
            f[i] = (fu - A[i] * U + p * ogu - p * Uog) / VM[i]
            f[3 * n + i] = (fh - A[i] * H + p * ogh - p * Hog) / VM[i]
            f[n + i] = A[i] * (U - y[n + i]) / VD
            f[4 * n + i] = A[i] * (H - y[4 * n + i]) / VD
            f[2 * n + i] = p * (Uog - y[2 * n + i]) / WD
            f[5 * n + i] = p * (Hog - y[5 * n + i]) / WD
        for j in range(6 * n):
            y[j] += h * f[j]
            if y[j] < 0.0:
                acc[0] -= y[j]
                y[j] = 0.0
            elif y[j] > guard:
                return k + 1
    return 0


def _euler_sens_loop(y, S, nsub, h, A, A_in, VM, p, VD, WD, TBP, KU, KH,
                     u, U_F, H_F, H_scrub, U_solv, H_solv, feed0, n,
                     guard, j_col, dA, dA_in, dVM):
    m = S.shape[1]
    f = np.empty(6 * n)
    dS = np.empty((6 * n, m))
    for k in range(nsub):
        for i in range(n):
            U = y[i]
            H = y[3 * n + i]
            no3 = 2.0 * U + H
            a = 2.0 * KU * U * no3 * no3
            b = 1.0 + KH * H * no3
            if a * TBP < 1e-14 * b * b:
                T = TBP / b
            else:
                T = 2.0 * TBP / (b + np.sqrt(b * b + 4.0 * a * TBP))
            Uog = KU * U * no3 * no3 * T * T
            Hog = (b - 1.0) * T
            da_dU = 2.0 * KU * no3 * (no3 + 4.0 * U)
            da_dH = 4.0 * KU * U * no3
            db_dU = 2.0 * KH * H
            db_dH = KH * (no3 + H)
            denom = 2.0 * a * T + b
            dT_dU = -(T * T * da_dU + T * db_dU) / denom
            dT_dH = -(T * T * da_dH + T * db_dH) / denom
            dUdU = KU * T * (T * (no3 * no3 + 4.0 * U * no3)
                             + 2.0 * U * no3 * no3 * dT_dU)
            dUdH = 2.0 * KU * U * no3 * T * (T + no3 * dT_dH)
            dHdU = KH * H * (2.0 * T + no3 * dT_dU)
            dHdH = KH * ((no3 + H) * T + H * no3 * dT_dH)
            if i == n - 1:
                fu = 0.0
                fh = A_in[i] * H_scrub
            else:
                fu = A_in[i] * y[n + i + 1]
                fh = A_in[i] * y[4 * n + i + 1]
            if i == feed0:
                fu += u * U_F
                fh += u * H_F
            if i == 0:
                ogu = U_solv
                ogh = H_solv
            else:
                ogu = y[2 * n + i - 1]
                ogh = y[5 * n + i - 1]
            f_um = (fu - A[i] * U + p * ogu - p * Uog) / VM[i]
            f_hm = (fh - A[i] * H + p * ogh - p * Hog) / VM[i]
            f[i] = f_um
            f[3 * n + i] = f_hm
            f[n + i] = A[i] * (U - y[n + i]) / VD
            f[4 * n + i] = A[i] * (H - y[4 * n + i]) / VD
            f[2 * n + i] = p * (Uog - y[2 * n + i]) / WD
            f[5 * n + i] = p * (Hog - y[5 * n + i]) / WD
            for c in range(m):
                s_um = S[i, c]
                s_hm = S[3 * n + i, c]
                if i == n - 1:
                    s_ud_up = 0.0
                    s_hd_up = 0.0
                else:
                    s_ud_up = S[n + i + 1, c]
                    s_hd_up = S[4 * n + i + 1, c]
                if i == 0:
                    s_uod_lo = 0.0
                    s_hod_lo = 0.0
                else:
                    s_uod_lo = S[2 * n + i - 1, c]
                    s_hod_lo = S[5 * n + i - 1, c]
                dS[i, c] = (A_in[i] * s_ud_up + p * s_uod_lo - A[i] * s_um
                            - p * (dUdU * s_um + dUdH * s_hm)) / VM[i]
                dS[3 * n + i, c] = (A_in[i] * s_hd_up + p * s_hod_lo
                                    - A[i] * s_hm
                                    - p * (dHdU * s_um + dHdH * s_hm)) / VM[i]
                dS[n + i, c] = A[i] * (s_um - S[n + i, c]) / VD
                dS[4 * n + i, c] = A[i] * (s_hm - S[4 * n + i, c]) / VD
                dS[2 * n + i, c] = p * (dUdU * s_um + dUdH * s_hm
                                        - S[2 * n + i, c]) / WD
                dS[5 * n + i, c] = p * (dHdU * s_um + dHdH * s_hm
                                        - S[5 * n + i, c]) / WD
            # direct dependence of the right-hand side on this interval's u
            if j_col >= 0:
                if i == n - 1:
                    din_u = 0.0
                    din_h = 0.0
                else:
                    din_u = dA_in[i] * y[n + i + 1]
                    din_h = dA_in[i] * y[4 * n + i + 1]
                if i == feed0:
                    din_u += U_F
                    din_h += H_F
                dS[i, j_col] += ((din_u - dA[i] * U) / VM[i]
                                 - f_um * dVM[i] / VM[i])
                dS[3 * n + i, j_col] += ((din_h - dA[i] * H) / VM[i]
                                         - f_hm * dVM[i] / VM[i])
                dS[n + i, j_col] += dA[i] * (U - y[n + i]) / VD
                dS[4 * n + i, j_col] += dA[i] * (H - y[4 * n + i]) / VD
        for j in range(6 * n):
            y[j] += h * f[j]
            for c in range(m):
                S[j, c] += h * dS[j, c]
            if y[j] < 0.0:
                y[j] = 0.0
                for c in range(m):
                    S[j, c] = 0.0
            elif y[j] > guard:
                return k + 1
    return 0


def _euler_plain_numpy(y, nsub, h, A, A_in, VM, p, VD, WD, TBP, KU, KH,
                       u, U_F, H_F, H_scrub, U_solv, H_solv, feed0, n,
                       guard, acc):
    f = np.empty(6 * n)
    uin = np.empty(n)
    hin = np.empty(n)
    ogu = np.empty(n)
    ogh = np.empty(n)
    clamp = 0.0
    for k in range(nsub):
        acc[1] += h * (A[0] * y[n] + p * y[3 * n - 1])
        acc[2] += h * (A[0] * y[4 * n] + p * y[6 * n - 1])
        U = y[0:n]
        H = y[3 * n:4 * n]
        no3 = 2.0 * U + H
        a = 2.0 * KU * U * no3 * no3
        b = 1.0 + KH * H * no3
        T = np.where(a * TBP < 1e-14 * b * b, TBP / b,
                     2.0 * TBP / (b + np.sqrt(b * b + 4.0 * a * TBP)))
        Uog = KU * U * no3 * no3 * T * T
        Hog = (b - 1.0) * T
        uin[:-1] = y[n + 1:2 * n]
        uin[-1] = 0.0
        hin[:-1] = y[4 * n + 1:5 * n]
        hin[-1] = H_scrub
        fu = A_in * uin
        fh = A_in * hin
        fu[feed0] += u * U_F
        fh[feed0] += u * H_F
        ogu[1:] = y[2 * n:3 * n - 1]
        ogu[0] = U_solv
        ogh[1:] = y[5 * n:6 * n - 1]
        ogh[0] = H_solv
        f[0:n] = (fu - A * U + p * ogu - p * Uog) / VM
        f[3 * n:4 * n] = (fh - A * H + p * ogh - p * Hog) / VM
        f[n:2 * n] = A * (U - y[n:2 * n]) / VD
        f[4 * n:5 * n] = A * (H - y[4 * n:5 * n]) / VD
        f[2 * n:3 * n] = p * (Uog - y[2 * n:3 * n]) / WD
        f[5 * n:6 * n] = p * (Hog - y[5 * n:6 * n]) / WD
        y += h * f
        neg = y < 0.0
        if neg.any():
            clamp -= y[neg].sum()
            y[neg] = 0.0
        if (y > guard).any():
            acc[0] += clamp
            return k + 1
    acc[0] += clamp
    return 0


def _euler_sens_numpy(y, S, nsub, h, A, A_in, VM, p, VD, WD, TBP, KU, KH,
                      u, U_F, H_F, H_scrub, U_solv, H_solv, feed0, n,
                      guard, j_col, dA, dA_in, dVM):
    from .equilibrium import organic_star, organic_star_partials

    f = np.empty(6 * n)
    dS = np.empty_like(S)
    uin = np.empty(n)
    hin = np.empty(n)
    ogu = np.empty(n)
    ogh = np.empty(n)
    z = np.zeros((1, S.shape[1]))
    for k in range(nsub):
        U = y[0:n]
        H = y[3 * n:4 * n]
        T, Uog, Hog = organic_star(U, H, TBP, KU, KH)
        dUdU, dUdH, dHdU, dHdH = organic_star_partials(U, H, TBP, KU, KH)
        uin[:-1] = y[n + 1:2 * n]
        uin[-1] = 0.0
        hin[:-1] = y[4 * n + 1:5 * n]
        hin[-1] = H_scrub
        fu = A_in * uin
        fh = A_in * hin
        fu[feed0] += u * U_F
        fh[feed0] += u * H_F
        ogu[1:] = y[2 * n:3 * n - 1]
        ogu[0] = U_solv
        ogh[1:] = y[5 * n:6 * n - 1]
        ogh[0] = H_solv
        f_um = (fu - A * U + p * ogu - p * Uog) / VM
        f_hm = (fh - A * H + p * ogh - p * Hog) / VM
        f[0:n] = f_um
        f[3 * n:4 * n] = f_hm
        f[n:2 * n] = A * (U - y[n:2 * n]) / VD
        f[4 * n:5 * n] = A * (H - y[4 * n:5 * n]) / VD
        f[2 * n:3 * n] = p * (Uog - y[2 * n:3 * n]) / WD
        f[5 * n:6 * n] = p * (Hog - y[5 * n:6 * n]) / WD

        s_um = S[0:n]
        s_hm = S[3 * n:4 * n]
        s_ud_up = np.vstack((S[n + 1:2 * n], z))
        s_hd_up = np.vstack((S[4 * n + 1:5 * n], z))
        s_uod_lo = np.vstack((z, S[2 * n:3 * n - 1]))
        s_hod_lo = np.vstack((z, S[5 * n:6 * n - 1]))
        col = lambda v: v[:, None]
        dS[0:n] = (col(A_in) * s_ud_up + p * s_uod_lo - col(A) * s_um
                   - p * (col(dUdU) * s_um + col(dUdH) * s_hm)) / col(VM)
        dS[3 * n:4 * n] = (col(A_in) * s_hd_up + p * s_hod_lo
                           - col(A) * s_hm
                           - p * (col(dHdU) * s_um + col(dHdH) * s_hm)) / col(VM)
        dS[n:2 * n] = col(A) * (s_um - S[n:2 * n]) / VD
        dS[4 * n:5 * n] = col(A) * (s_hm - S[4 * n:5 * n]) / VD
        dS[2 * n:3 * n] = p * (col(dUdU) * s_um + col(dUdH) * s_hm
                               - S[2 * n:3 * n]) / WD
        dS[5 * n:6 * n] = p * (col(dHdU) * s_um + col(dHdH) * s_hm
                               - S[5 * n:6 * n]) / WD
        if j_col >= 0:
            din_u = dA_in * uin
            din_h = dA_in * hin
            din_u[-1] = 0.0
            din_h[-1] = 0.0
            din_u[feed0] += U_F
            din_h[feed0] += H_F
            dS[0:n, j_col] += (din_u - dA * U) / VM - f_um * dVM / VM
            dS[3 * n:4 * n, j_col] += (din_h - dA * H) / VM - f_hm * dVM / VM
            dS[n:2 * n, j_col] += dA * (U - y[n:2 * n]) / VD
            dS[4 * n:5 * n, j_col] += dA * (H - y[4 * n:5 * n]) / VD
        y += h * f
        S += h * dS
        neg = y < 0.0
        if neg.any():
            y[neg] = 0.0
            S[neg] = 0.0
        if (y > guard).any():
            return k + 1
    return 0


if NUMBA_AVAILABLE:
    euler_plain = njit(cache=True)(_euler_plain_loop)
    euler_sens = njit(cache=True)(_euler_sens_loop)
else:  # pragma: no cover
    euler_plain = _euler_plain_numpy
    euler_sens = _euler_sens_numpy
