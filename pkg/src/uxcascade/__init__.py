"""Simulation and control toolkit for a countercurrent uranium
extraction-scrubbing cascade of mixer-settlers."""

from .cascade import (Inputs, StateLayout, Trajectory, rhs, simulate, step,
                      write_trajectory_csv)
from .equilibrium import (AqueousPoint, EquilibriumResult, nitrate,
                          solve_equilibrium)
from .errors import (BracketError, ConfigError, ConvergenceError,
                     DivergenceError, ScenarioError, UxCascadeError)
from .flowsheet import (FlowSheet, StageFlows, load_flowsheet,
                        reference_flowsheet, stage_flows)
from .harness import (RunResult, Scenario, compare, extracted_uranium,
                      make_case, run_from_manifest, run_scenario,
                      write_manifest)
from .nmpc import (MpcWeights, NmpcController, OcpOptions, OcpSolution,
                   OcpSpec, build_ocp, mpc_step, solve_ocp)
from .pid import PidGains, PidState, pid_step, tune_pid
from .steady_state import (SetPoint, SteadyPoint, critical_setpoint,
                           steady_state, sweep_feed)

__version__ = "0.1.0"
