import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uxcascade.pid import (PidGains, PidState, clamp_input, pid_step,
                           tune_pid)

BOUNDS = (5.0, 80.0, -5.0, 5.0)


def test_zero_error_returns_setpoint_input():
    st0 = PidState(u_prev=30.0, T=0.5)
    u, st1 = pid_step(st0, PidGains(50.0, 10.0, 5.0), y=0.3, y_set=0.3,
                      u_set=30.0, bounds=BOUNDS)
    assert u == 30.0
    assert st1.e_prev == 0.0
    assert st1.e_I == 0.0


def test_zero_gains_recover_open_loop():
    st0 = PidState(u_prev=30.0, T=0.5)
    gains = PidGains(0.0, 0.0, 0.0)
    for y in (0.0, 0.1, 0.5, 2.0):
        u, st0 = pid_step(st0, gains, y=y, y_set=0.3, u_set=30.0,
                          bounds=BOUNDS)
        assert u == 30.0


def test_trapezoidal_integral_accumulation():
    # constant error, K_I=1 only, T=0.5: integral grows by 0.5*e per step
    # after the first half-step
    gains = PidGains(0.0, 1.0, 0.0)
    st0 = PidState(u_prev=30.0, T=0.5)
    e = 0.2
    u1, st1 = pid_step(st0, gains, y=0.3 - e, y_set=0.3, u_set=30.0,
                       bounds=(0.0, 100.0, -50.0, 50.0))
    assert u1 - 30.0 == pytest.approx(0.5 * 0.5 * e)       # trapezoid with e_prev=0
    u2, st2 = pid_step(st1, gains, y=0.3 - e, y_set=0.3, u_set=30.0,
                       bounds=(0.0, 100.0, -50.0, 50.0))
    assert u2 - u1 == pytest.approx(0.5 * e)


def test_derivative_is_backward_difference():
    gains = PidGains(0.0, 0.0, 2.0)
    st0 = PidState(u_prev=30.0, T=0.5)
    u1, st1 = pid_step(st0, gains, y=0.3 - 0.1, y_set=0.3, u_set=30.0,
                       bounds=(0.0, 100.0, -50.0, 50.0))
    assert u1 - 30.0 == pytest.approx(2.0 * 0.1 / 0.5)


def test_clamp_box_before_rate():
    # raw output above box: clamp to u_max first, then rate-limit towards it
    u = clamp_input(500.0, 30.0, *BOUNDS)
    assert u == 35.0            # min(80, 500)=80, then 30+5
    u = clamp_input(-500.0, 30.0, *BOUNDS)
    assert u == 25.0


@given(raw=st.floats(-1e4, 1e4), prev=st.floats(5.0, 80.0))
@settings(max_examples=200, deadline=None)
def test_clamp_idempotent_and_bounded(raw, prev):
    u1 = clamp_input(raw, prev, *BOUNDS)
    assert clamp_input(u1, prev, *BOUNDS) == u1
    assert prev - 5.0 - 1e-12 <= u1 <= prev + 5.0 + 1e-12
    assert 5.0 - 5.0 <= u1 <= 80.0 + 5.0


def test_rate_bound_audit_over_trajectory():
    rng = np.random.default_rng(5)
    st0 = PidState(u_prev=30.0, T=0.5)
    gains = PidGains(500.0, 200.0, 50.0)   # absurd gains, clamps must hold
    prev = st0.u_prev
    for _ in range(100):
        y = rng.uniform(0.0, 0.6)
        u, st0 = pid_step(st0, gains, y=y, y_set=0.3, u_set=30.0,
                          bounds=BOUNDS)
        assert -5.0 - 1e-12 <= u - prev <= 5.0 + 1e-12
        assert 5.0 <= u <= 80.0
        prev = u


def test_exact_tracking_is_bitwise_open_loop():
    """y identically equal to y_set from t=0 with zero initial state gives
    the open-loop input sequence bitwise, whatever the gains."""
    gains = PidGains(312.5, 47.0, 9.25)
    st0 = PidState(u_prev=30.0, T=0.5)
    applied = []
    for _ in range(50):
        u, st0 = pid_step(st0, gains, y=0.31, y_set=0.31, u_set=30.0,
                          bounds=BOUNDS)
        applied.append(u)
    assert applied == [30.0] * 50


def test_state_stores_applied_input():
    st0 = PidState(u_prev=30.0, T=0.5)
    u, st1 = pid_step(st0, PidGains(1e4, 0.0, 0.0), y=0.0, y_set=0.3,
                      u_set=30.0, bounds=BOUNDS)
    assert st1.u_prev == u == 35.0


def test_pid_state_validation():
    with pytest.raises(ValueError):
        PidState(T=0.0)
    with pytest.raises(ValueError):
        PidGains(np.inf, 0.0, 0.0)


@pytest.fixture(scope="module")
def tune_setup(fs, nominal_setpoint, uranium_free_steady):
    p_trace = np.full(31, fs.O_E_nominal)
    return dict(fs=fs, x0=uranium_free_steady, setpoint=nominal_setpoint,
                p_trace=p_trace)


def test_tuner_improves_on_baseline(tune_setup):
    res = tune_pid(**tune_setup, n_steps=30, maxiter=60)
    assert res.objective <= res.baseline_objective
    assert res.n_evaluations > 0
    assert np.isfinite([res.gains.K_P, res.gains.K_I, res.gains.K_D]).all()


def test_tuner_respects_initial_gains(tune_setup):
    seeded = tune_pid(**tune_setup, n_steps=30, maxiter=40,
                      initial_gains=PidGains(100.0, 20.0, 0.0))
    # returned gains never do worse than the provided starting gains
    from uxcascade.pid import _closed_loop_objective
    init_obj = _closed_loop_objective(
        PidGains(100.0, 20.0, 0.0), tune_setup["fs"], tune_setup["x0"],
        tune_setup["setpoint"], tune_setup["p_trace"], 0.5, 1e-3,
        1.0 / tune_setup["setpoint"].u_set ** 2,
        1.0 / tune_setup["setpoint"].u_set ** 2, 30)
    assert seeded.objective <= init_obj + 1e-12


def test_tuner_requires_covering_trace(tune_setup):
    with pytest.raises(ValueError, match="p_trace"):
        tune_pid(tune_setup["fs"], tune_setup["x0"], tune_setup["setpoint"],
                 p_trace=np.full(5, 100.0), n_steps=30)
