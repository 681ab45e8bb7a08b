"""Shared fixtures. Expensive artifacts (set points, tuned gains, case runs)
are session-scoped so the suite computes them once."""
import dataclasses

import pytest

from uxcascade.flowsheet import FlowSheet, reference_flowsheet
from uxcascade.steady_state import critical_setpoint, steady_state


@pytest.fixture(scope="session")
def fs():
    return reference_flowsheet()


@pytest.fixture(scope="session")
def mini_fs():
    """Small 4-stage cascade for fast unit-level checks."""
    return FlowSheet(n_stages=4, feed_stage=2, A_E=20.0, O_E_nominal=100.0,
                     A_F_nominal=30.0, U_feed=1.0, H_feed=3.0, H_scrub=1.0,
                     U_solvent_in=0.0, H_solvent_in=0.0, TBP_total=1.1,
                     K_U=10.0, K_H=0.2, V_mixer_total=30.0,
                     V_settler_aq=20.0, V_settler_og=12.0,
                     u_min=5.0, u_max=80.0, du_min=-5.0, du_max=5.0,
                     raffinate_tol=1e-3)


@pytest.fixture(scope="session")
def nominal_setpoint(fs):
    return critical_setpoint(fs.O_E_nominal, fs)


@pytest.fixture(scope="session")
def uranium_free_steady(fs, nominal_setpoint):
    """Case A initial state: steady state with the uranium feed off."""
    fs_u0 = dataclasses.replace(fs, U_feed=0.0)
    return steady_state(nominal_setpoint.u_set, fs.O_E_nominal, fs_u0).x_ss


@pytest.fixture(scope="session")
def nominal_steady(fs):
    return steady_state(fs.A_F_nominal, fs.O_E_nominal, fs)
