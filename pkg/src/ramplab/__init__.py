"""Ramp metering at a motorway bottleneck with an online critical-density estimator.

Modules:

* :mod:`ramplab.fd` flow-density laws
* :mod:`ramplab.metanet` second-order METANET simulator
* :mod:`ramplab.alinea` ALINEA ramp metering
* :mod:`ramplab.estimator` adaptive critical-point estimator
* :mod:`ramplab.scenarios` scenario suite and metrics
* :mod:`ramplab.cli` command line front end
"""

from .alinea import AlineaState, alinea_step, applied_ramp_inflow
from .estimator import EstimatorState, estimator_step, init_estimator, lsq_batch_oracle
from .fd import FD1, FD2, MetanetFDParams, ParabolicFD
from .metanet import NetworkState, SimulationError, step_network, uniform_stretch
from .scenarios import (
    ConfigError,
    RunResult,
    ScenarioConfig,
    run_scenario,
    run_suite,
    scenario_config,
    sensitivity_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AlineaState",
    "alinea_step",
    "applied_ramp_inflow",
    "EstimatorState",
    "estimator_step",
    "init_estimator",
    "lsq_batch_oracle",
    "FD1",
    "FD2",
    "MetanetFDParams",
    "ParabolicFD",
    "NetworkState",
    "SimulationError",
    "step_network",
    "uniform_stretch",
    "ConfigError",
    "RunResult",
    "ScenarioConfig",
    "run_scenario",
    "run_suite",
    "scenario_config",
    "sensitivity_sweep",
]
